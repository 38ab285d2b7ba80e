"""Monte Carlo cross-checks for the linearized solver.

``exact_bayes_mc`` keeps the binomial likelihoods and the nonlinear functions
exactly and estimates posterior moments by self-normalized importance
sampling. ``gaussian_mc_check`` samples a linear-Gaussian diagram forward and
weights by Gaussian evidence densities, validating exact conditioning
independently of the transforms.

Random numbers come from PCG64. Draws are produced in fixed-size chunks, each
seeded from ``SeedSequence(seed, spawn_key=(chunk,))``, so results depend only
on (seed, samples, chunk_size) and never on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateWeightsError, ValidationError
from .gaussian import Diagram, VariableId, topological_order, validate
from .solver import Chain, CompiledModel, Difference, Linear
from .transforms import Scale, from_working_array, prior_to_node

MIN_ESS = 100.0
DEFAULT_CHUNK = 1 << 16
JACKKNIFE_GROUPS = 200


@dataclass(frozen=True)
class VariableEstimate:
    mean: float
    sd: float
    mean_se: float
    sd_se: float


@dataclass(frozen=True)
class OracleEstimate:
    estimates: dict[str, VariableEstimate]
    ess: float
    samples: int
    seed: int
    scale: str  # "natural" or "working"

    def __getitem__(self, name: str) -> VariableEstimate:
        return self.estimates[name]


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _run_chunks(
    draw: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]],
    samples: int,
    seed: int,
    chunk_size: int,
    workers: int,
) -> tuple[np.ndarray, np.ndarray]:
    sizes = [min(chunk_size, samples - start) for start in range(0, samples, chunk_size)]
    jobs = [(k, n) for k, n in enumerate(sizes)]

    def one(job):
        k, n = job
        return draw(_chunk_rng(seed, k), n)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    values = np.concatenate([p[0] for p in parts], axis=0)
    logw = np.concatenate([p[1] for p in parts])
    return values, logw


def weighted_moments(
    values: np.ndarray, logw: np.ndarray, names: Sequence[str], groups: int = JACKKNIFE_GROUPS
) -> tuple[dict[str, VariableEstimate], float]:
    """Self-normalized means and sds with delete-a-group jackknife errors."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any():
        raise DegenerateWeightsError(0.0, len(logw))
    w = np.where(finite, np.exp(logw - logw[finite].max()), 0.0)
    ess = float(w.sum() ** 2 / (w**2).sum())
    if ess < MIN_ESS:
        raise DegenerateWeightsError(ess, len(logw))

    values = np.asarray(values, dtype=float).reshape(len(w), -1)
    groups = max(2, min(groups, len(w)))
    bounds = np.linspace(0, len(w), groups + 1).astype(int)
    W = np.add.reduceat(w, bounds[:-1])
    total = W.sum()
    mean = (w @ values) / total
    centered = values - mean
    A = np.add.reduceat(w[:, None] * centered, bounds[:-1], axis=0)
    B = np.add.reduceat(w[:, None] * centered**2, bounds[:-1], axis=0)
    var = B.sum(axis=0) / total

    W_loo = total - W
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = (A.sum(axis=0) - A) / W_loo[:, None]
        var_loo = (B.sum(axis=0) - B) / W_loo[:, None] - shift**2
    mean_loo = mean + shift
    sd_loo = np.sqrt(np.maximum(var_loo, 0.0))
    ok = W_loo > 0
    g = int(ok.sum())

    def jack(stat: np.ndarray) -> np.ndarray:
        stat = stat[ok]
        return np.sqrt((g - 1) / g * ((stat - stat.mean(axis=0)) ** 2).sum(axis=0))

    mean_se = jack(mean_loo)
    sd_se = jack(sd_loo)
    sd = np.sqrt(np.maximum(var, 0.0))
    out = {
        name: VariableEstimate(float(mean[i]), float(sd[i]), float(mean_se[i]), float(sd_se[i]))
        for i, name in enumerate(names)
    }
    return out, ess


# --------------------------------------------------------------------------
# Exact-likelihood route


def _log_sigmoid(theta: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -theta)


class _GridPosterior:
    """Sampler for a working-scale normal prior times binomial likelihoods.

    The log density is tabulated on a fine grid covering everything within
    50 log-units of the mode; draws are piecewise uniform over grid cells and
    carry the exact log-ratio target/proposal as a weight correction.
    """

    CELLS = 1 << 14

    def __init__(self, mean: float, var: float, arms: Sequence[tuple[int, int]]):
        self.mean, self.var = mean, var
        self.arms = [(float(s), float(n - s)) for s, n in arms]
        sd = math.sqrt(var)
        coarse = np.linspace(mean - 40 * sd, mean + 40 * sd, 40001)
        lf = self.logf(coarse)
        keep = np.nonzero(lf > lf.max() - 50.0)[0]
        step = coarse[1] - coarse[0]
        lo = coarse[keep[0]] - step
        hi = coarse[keep[-1]] + step
        self.h = (hi - lo) / self.CELLS
        self.lo = lo
        centers = lo + self.h * (np.arange(self.CELLS) + 0.5)
        self.center_logf = self.logf(centers)
        p = np.exp(self.center_logf - self.center_logf.max())
        self.cdf = np.cumsum(p / p.sum())
        self.cdf[-1] = 1.0

    def logf(self, theta: np.ndarray) -> np.ndarray:
        out = -((theta - self.mean) ** 2) / (2.0 * self.var)
        if self.arms:
            ls_pos = _log_sigmoid(theta)
            ls_neg = _log_sigmoid(-theta)
            for s, f in self.arms:
                out = out + s * ls_pos + f * ls_neg
        return out

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        cell = np.searchsorted(self.cdf, rng.random(n), side="right")
        cell = np.minimum(cell, self.CELLS - 1)
        theta = self.lo + self.h * (cell + rng.random(n))
        return theta, self.logf(theta) - self.center_logf[cell]


def _eval_natural(f, args: list[np.ndarray]) -> np.ndarray:
    if isinstance(f, Chain):
        m_r, p, m_nr = args
        return m_r * p + m_nr * (1.0 - p)
    if isinstance(f, Difference):
        return args[0] - args[1]
    if isinstance(f, Linear):
        return f.offset + sum(c * a for c, a in zip(f.coeffs, args))
    raise TypeError(f"unsupported function {f!r}")


def _natural_to_working(scale: Scale, x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        if scale is Scale.PROBABILITY:
            return np.log(x) - np.log1p(-x)
        if scale is Scale.DIFFERENCE:
            return np.log1p(x) - np.log1p(-x)
    return x


def _binomial_loglik(p: np.ndarray, s: int, n: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.zeros_like(p)
        if s:
            out = out + s * np.log(p)
        if n - s:
            out = out + (n - s) * np.log1p(-p)
    return np.where(np.isnan(out), -np.inf, out)


def exact_bayes_mc(
    model: CompiledModel,
    samples: int = 10**6,
    seed: int = 0,
    proposal: str = "local",
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> OracleEstimate:
    """Posterior natural-scale moments under exact binomial likelihoods.

    ``proposal="prior"`` is plain likelihood weighting: roots are drawn from
    their priors and every study arm enters the weights. ``proposal="local"``
    (default) draws each root from its prior times the arms that observe it
    directly, tabulated by 1-D numerical integration; only arms on function
    nodes (and Gaussian observations) remain in the weights. Both target the
    same posterior.
    """
    if samples < 10**4:
        raise ValueError("exact_bayes_mc needs at least 10^4 samples")
    if proposal not in ("local", "prior"):
        raise ValueError(f"unknown proposal {proposal!r}")

    order = model.evaluation_order()
    roots = {v.id for v in model.variables if v.prior is not None}
    direct: dict[VariableId, list[tuple[int, int]]] = {r: [] for r in roots}
    weighted = []
    for ev in model.evidence:
        if proposal == "local" and ev.arm is not None and ev.target in roots:
            direct[ev.target].append((ev.arm.successes, ev.arm.trials))
        else:
            weighted.append(ev)

    samplers = {}
    for v in model.variables:
        if v.prior is None:
            continue
        mean, var = prior_to_node(v.prior)
        if var > 0 and proposal == "local":
            samplers[v.id] = _GridPosterior(mean, var, direct[v.id])
        else:
            samplers[v.id] = (mean, var)

    names = [v.id.name for v in model.variables]
    col = {v.id: i for i, v in enumerate(model.variables)}

    def draw(rng: np.random.Generator, n: int):
        nat = np.empty((n, len(names)))
        logw = np.zeros(n)
        for v in order:
            if v.prior is not None:
                s = samplers[v.id]
                if isinstance(s, _GridPosterior):
                    theta, corr = s.draw(rng, n)
                    logw += corr
                else:
                    theta = s[0] + math.sqrt(s[1]) * rng.standard_normal(n)
                nat[:, col[v.id]] = from_working_array(v.scale, theta)
            else:
                args = [nat[:, col[a]] for a in v.function.args]
                nat[:, col[v.id]] = _eval_natural(v.function, args)
        for ev in weighted:
            x = nat[:, col[ev.target]]
            if ev.arm is not None:
                logw += _binomial_loglik(x, ev.arm.successes, ev.arm.trials)
            else:
                theta = _natural_to_working(model.variable(ev.target).scale, x)
                resid = ev.summary.observed - theta
                logw += -0.5 * resid**2 / ev.summary.variance
        return nat, logw

    values, logw = _run_chunks(draw, samples, seed, chunk_size, workers)
    estimates, ess = weighted_moments(values, logw, names)
    return OracleEstimate(estimates, ess, samples, seed, "natural")


# --------------------------------------------------------------------------
# Linear-Gaussian route


def gaussian_mc_check(
    d: Diagram,
    evidence: Sequence[tuple[VariableId | str, float]],
    samples: int = 10**5,
    seed: int = 0,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> OracleEstimate:
    """Working-scale posterior moments of ``d`` given ``evidence`` by likelihood weighting.

    Evidence nodes are clamped to their observed values; each contributes the
    log density of its value given its parents.
    """
    diags = validate(d)
    if diags:
        raise ValidationError(diags)
    observed: dict[VariableId, float] = {}
    for key, value in evidence:
        node = d.node(key)
        if not node.cond_var > 0:
            raise ValueError(f"evidence node {node.id.name!r} must have positive variance")
        observed[node.id] = float(value)

    order = [d.node(v) for v in topological_order(d)]
    pos = {v: i for i, v in enumerate(d.ids)}
    hidden = [v for v in d.ids if v not in observed]

    def draw(rng: np.random.Generator, n: int):
        z = rng.standard_normal((n, len(d.ids)))
        x = np.empty((n, len(d.ids)))
        logw = np.zeros(n)
        for node in order:
            j = pos[node.id]
            m = np.full(n, node.cond_mean)
            for p, b in zip(node.parents, node.coeffs):
                m += b * (x[:, pos[p]] - d.node(p).cond_mean)
            if node.id in observed:
                y = observed[node.id]
                logw += -0.5 * (y - m) ** 2 / node.cond_var
                x[:, j] = y
            elif node.cond_var > 0:
                x[:, j] = m + math.sqrt(node.cond_var) * z[:, j]
            else:
                x[:, j] = m
        return x[:, [pos[v] for v in hidden]], logw

    values, logw = _run_chunks(draw, samples, seed, chunk_size, workers)
    estimates, ess = weighted_moments(values, logw, [v.name for v in hidden])
    return OracleEstimate(estimates, ess, samples, seed, "working")
