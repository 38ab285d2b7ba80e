"""Digamma and trigamma for positive real arguments.

Both use upward recurrence until the argument exceeds 10 and then the
asymptotic (Stirling-type) series, which at that point is accurate to well
below 1e-15.
"""

import math

from .errors import DomainError

_SHIFT = 10.0

# Bernoulli-number coefficients B_2k / (2k) for the digamma series.
_PSI_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# Bernoulli numbers B_2k for the trigamma series.
_TRI_COEFFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _check(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"{name} requires a finite positive argument, got {x!r}")
    return x


def digamma(x: float) -> float:
    """Logarithmic derivative of the gamma function, psi(x), for x > 0."""
    x = _check(x, "digamma")
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _PSI_COEFFS:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """psi'(x) = sum_k 1/(x+k)^2, i.e. the Hurwitz zeta value zeta(x, 2)."""
    x = _check(x, "trigamma")
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for c in _TRI_COEFFS:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series
