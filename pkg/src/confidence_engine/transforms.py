"""Natural/working-scale transforms, priors, and binomial evidence summaries.

Every population parameter lives on a *natural* scale (a probability, a
difference of probabilities, or an unrestricted real) and on a Gaussian
*working* scale reached through a monotone transform:

    probability   p in (0, 1)   <->  log(p / (1 - p))
    difference    d in (-1, 1)  <->  log((1 + d) / (1 - d)),  inverse tanh(theta / 2)
    real          x             <->  x
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .special import digamma, trigamma

# Inputs this close to a domain boundary are rejected instead of clamped.
BOUNDARY_EPS = 1e-12

JEFFREYS_VARIANCE = math.pi**2

# Continuity constants for arms with a zero cell. ``None`` means "refuse".
HALF_CELL = 0.5


class Scale(enum.Enum):
    PROBABILITY = "probability"
    DIFFERENCE = "difference"
    REAL = "real"

    def __str__(self) -> str:
        return self.value


def _finite(x: float, what: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{what} must be finite, got {x!r}")
    return x


def to_working(scale: Scale, x: float) -> float:
    """Map a natural-scale value onto the Gaussian working scale."""
    x = _finite(x, "natural value")
    if scale is Scale.PROBABILITY:
        if not BOUNDARY_EPS < x < 1.0 - BOUNDARY_EPS:
            raise DomainError(f"probability {x!r} is not strictly inside (0, 1)")
        return math.log(x) - math.log1p(-x)
    if scale is Scale.DIFFERENCE:
        if not -1.0 + BOUNDARY_EPS < x < 1.0 - BOUNDARY_EPS:
            raise DomainError(f"difference {x!r} is not strictly inside (-1, 1)")
        return math.log1p(x) - math.log1p(-x)
    return x


def _expit(theta: float) -> float:
    if theta >= 0:
        return 1.0 / (1.0 + math.exp(-theta))
    e = math.exp(theta)
    return e / (1.0 + e)


def from_working(scale: Scale, theta: float) -> float:
    """Inverse of :func:`to_working`. Results stay strictly inside the domain."""
    theta = _finite(theta, "working value")
    if scale is Scale.PROBABILITY:
        p = _expit(theta)
        return min(max(p, math.ulp(0.0)), math.nextafter(1.0, 0.0))
    if scale is Scale.DIFFERENCE:
        d = math.tanh(theta / 2.0)
        return min(max(d, math.nextafter(-1.0, 0.0)), math.nextafter(1.0, 0.0))
    return theta


def natural_slope(scale: Scale, theta: float) -> float:
    """d(natural)/d(working) at working value ``theta``."""
    theta = _finite(theta, "working value")
    if scale is Scale.PROBABILITY:
        return _expit(theta) * _expit(-theta)
    if scale is Scale.DIFFERENCE:
        d = math.tanh(theta / 2.0)
        return (1.0 - d) * (1.0 + d) / 2.0
    return 1.0


def slope_at_natural(scale: Scale, x: float) -> float:
    """Same derivative as :func:`natural_slope`, expressed at the natural value."""
    if scale is Scale.PROBABILITY:
        return x * (1.0 - x)
    if scale is Scale.DIFFERENCE:
        return (1.0 - x) * (1.0 + x) / 2.0
    return 1.0


def from_working_array(scale: Scale, theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`from_working` without the domain checks."""
    theta = np.asarray(theta, dtype=float)
    if scale is Scale.PROBABILITY:
        out = np.empty_like(theta)
        pos = theta >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
        e = np.exp(theta[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if scale is Scale.DIFFERENCE:
        return np.tanh(theta / 2.0)
    return theta.copy()


@dataclass(frozen=True)
class PriorSpec:
    """Prior on the working scale: Jeffreys (N(0, pi^2)) or an explicit normal."""

    kind: str = "jeffreys"
    mean: float = 0.0
    variance: float = JEFFREYS_VARIANCE

    @classmethod
    def jeffreys(cls) -> PriorSpec:
        return cls("jeffreys", 0.0, JEFFREYS_VARIANCE)

    @classmethod
    def normal(cls, mean: float, variance: float) -> PriorSpec:
        return cls("normal", float(mean), float(variance))

    def __post_init__(self):
        if self.kind not in ("jeffreys", "normal"):
            raise DomainError(f"unknown prior kind {self.kind!r}")


def prior_to_node(prior: PriorSpec) -> tuple[float, float]:
    """Return the (mean, variance) pair a prior contributes to a root node."""
    if prior.kind == "jeffreys":
        return 0.0, JEFFREYS_VARIANCE
    mean = _finite(prior.mean, "prior mean")
    var = _finite(prior.variance, "prior variance")
    if var < 0:
        raise DomainError(f"prior variance must be nonnegative, got {var!r}")
    return mean, var


@dataclass(frozen=True)
class StudyArm:
    """One trial arm: ``successes`` out of ``trials``, observing ``target``."""

    successes: int
    trials: int
    target: object = None

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.successes <= self.trials:
            raise DomainError(
                f"successes must lie in [0, trials], got {self.successes} of {self.trials}"
            )


@dataclass(frozen=True)
class StudySummary:
    observed: float
    variance: float


def rct_summary(arm: StudyArm, zero_cell: float | None = HALF_CELL) -> StudySummary:
    """Reduce a binomial arm to a Gaussian observation of its log-odds.

    The observed value is psi(s) - psi(n - s) and the variance is
    psi'(s) + psi'(n - s): the mean and variance of the logit of a
    Beta(s, n - s) variate. When either cell is empty, ``zero_cell`` is added
    to both cells; ``None`` refuses such arms.
    """
    s = float(arm.successes)
    f = float(arm.trials - arm.successes)
    if s == 0.0 or f == 0.0:
        if zero_cell is None:
            raise DomainError(
                f"arm {arm.successes}/{arm.trials} has an empty cell and the "
                "zero-cell policy is 'error'"
            )
        if not (math.isfinite(zero_cell) and zero_cell > 0):
            raise DomainError(f"zero-cell constant must be positive, got {zero_cell!r}")
        s += zero_cell
        f += zero_cell
    return StudySummary(digamma(s) - digamma(f), trigamma(s) + trigamma(f))
