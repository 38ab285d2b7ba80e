"""Linearized evidence synthesis over a normal influence diagram.

Nonlinear relationships between parameters (the reperfusion chaining rule and
the difference of two probabilities) are replaced by first-order Taylor
expansions on the working scale. The expansion starts at the prior means and
is moved to the posterior means after every pass until the posterior stops
changing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import DomainError, SingularEvidenceError, SingularLinearizationError
from .gaussian import (
    Diagram,
    GaussNode,
    JointGaussian,
    VariableId,
    condition,
    marginal,
    to_joint,
    topological_order,
)
from .transforms import (
    PriorSpec,
    Scale,
    StudyArm,
    StudySummary,
    from_working,
    from_working_array,
    natural_slope,
    prior_to_node,
    slope_at_natural,
    to_working,
)


@dataclass(frozen=True)
class Chain:
    """P(M) = P(M | R) * P(R) + P(M | not R) * (1 - P(R))."""

    m_rep: VariableId
    p_rep: VariableId
    m_norep: VariableId

    @property
    def args(self) -> tuple[VariableId, ...]:
        return (self.m_rep, self.p_rep, self.m_norep)

    arg_scales = (Scale.PROBABILITY,) * 3
    out_scale = Scale.PROBABILITY


@dataclass(frozen=True)
class Difference:
    """Difference of two probabilities, carried on the difference scale."""

    minuend: VariableId
    subtrahend: VariableId

    @property
    def args(self) -> tuple[VariableId, ...]:
        return (self.minuend, self.subtrahend)

    arg_scales = (Scale.PROBABILITY, Scale.PROBABILITY)
    out_scale = Scale.DIFFERENCE


@dataclass(frozen=True)
class Linear:
    """offset + sum(coeffs * args) on the real scale (exactly linear)."""

    args: tuple[VariableId, ...]
    coeffs: tuple[float, ...]
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.args) != len(self.coeffs):
            raise ValueError("Linear needs one coefficient per argument")

    @property
    def arg_scales(self) -> tuple[Scale, ...]:
        return (Scale.REAL,) * len(self.args)

    out_scale = Scale.REAL


FunctionKind = Union[Chain, Difference, Linear]


def _check_args(f: FunctionKind, args: Sequence[float], strict: bool) -> tuple[float, ...]:
    args = tuple(float(a) for a in args)
    if len(args) != len(f.args):
        raise DomainError(f"{type(f).__name__} takes {len(f.args)} arguments, got {len(args)}")
    for a, scale in zip(args, f.arg_scales):
        if not math.isfinite(a):
            raise DomainError(f"argument {a!r} is not finite")
        lo, hi = {
            Scale.PROBABILITY: (0.0, 1.0),
            Scale.DIFFERENCE: (-1.0, 1.0),
            Scale.REAL: (-math.inf, math.inf),
        }[scale]
        inside = lo < a < hi if strict else lo <= a <= hi
        if not inside:
            raise DomainError(f"argument {a!r} is outside the {scale} domain")
    return args


def eval_function(f: FunctionKind, args: Sequence[float]) -> float:
    """Evaluate ``f`` on natural-scale arguments."""
    args = _check_args(f, args, strict=False)
    if isinstance(f, Chain):
        m_r, p, m_nr = args
        return m_r * p + m_nr * (1.0 - p)
    if isinstance(f, Difference):
        return args[0] - args[1]
    return f.offset + sum(c * a for c, a in zip(f.coeffs, args))


def _natural_partials(f: FunctionKind, args: tuple[float, ...]) -> tuple[float, ...]:
    if isinstance(f, Chain):
        m_r, p, m_nr = args
        return (p, m_r - m_nr, 1.0 - p)
    if isinstance(f, Difference):
        return (1.0, -1.0)
    return f.coeffs


def gradient(f: FunctionKind, args: Sequence[float]) -> tuple[float, ...]:
    """Working-scale partials d(theta_out)/d(theta_k) at natural-scale ``args``."""
    args = _check_args(f, args, strict=True)
    out = eval_function(f, args)
    out_slope = slope_at_natural(f.out_scale, out)
    if not out_slope > 0.0:
        raise SingularLinearizationError(
            f"{type(f).__name__} output {out!r} sits where its transform has zero slope"
        )
    return tuple(
        df * slope_at_natural(scale, a) / out_slope
        for df, a, scale in zip(_natural_partials(f, args), args, f.arg_scales)
    )


def linearize(
    f: FunctionKind,
    node: VariableId,
    expansion: Sequence[float],
    parent_means: Sequence[float] | None = None,
) -> GaussNode:
    """Deterministic Gaussian node approximating ``f`` around ``expansion``.

    ``expansion`` holds working-scale values of the arguments. The function
    value and its gradient are taken at their inverse transforms. When
    ``parent_means`` differ from the expansion point, the node mean is shifted
    along the gradient so that ``to_joint`` reproduces the Taylor expansion
    rather than the function value at the expansion point.
    """
    expansion = [float(e) for e in expansion]
    if not all(math.isfinite(e) for e in expansion):
        raise DomainError("expansion point must be finite")
    natural = [from_working(s, e) for s, e in zip(f.arg_scales, expansion)]
    value = to_working(f.out_scale, eval_function(f, natural))
    grad = gradient(f, natural)
    if parent_means is not None:
        value += sum(g * (m - e) for g, m, e in zip(grad, parent_means, expansion))
    return GaussNode(node, tuple(f.args), value, 0.0, grad)


@dataclass(frozen=True)
class CompiledVariable:
    id: VariableId
    scale: Scale
    prior: PriorSpec | None = None
    function: FunctionKind | None = None

    def __post_init__(self):
        if (self.prior is None) == (self.function is None):
            raise ValueError(f"variable {self.id.name!r} needs exactly one of prior/function")


@dataclass(frozen=True)
class Evidence:
    """A Gaussian observation Y = target + eps, eps ~ N(0, summary.variance)."""

    name: str
    target: VariableId
    summary: StudySummary
    arm: StudyArm | None = None


@dataclass(frozen=True)
class CompiledModel:
    variables: tuple[CompiledVariable, ...]
    evidence: tuple[Evidence, ...] = ()
    zero_cell: float | None = 0.5
    report: tuple[VariableId, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "evidence", tuple(self.evidence))
        object.__setattr__(self, "report", tuple(self.report))

    @property
    def ids(self) -> tuple[VariableId, ...]:
        return tuple(v.id for v in self.variables)

    def variable(self, key: VariableId | str) -> CompiledVariable:
        for v in self.variables:
            if v.id == key or v.id.name == key:
                return v
        raise KeyError(key)

    def report_targets(self) -> tuple[VariableId, ...]:
        return self.report or self.ids

    def evaluation_order(self) -> list[CompiledVariable]:
        """Variables with every function argument ahead of its output."""
        skeleton = Diagram(
            tuple(
                GaussNode(v.id, v.function.args if v.function else (), 0.0, 0.0,
                          (0.0,) * (len(v.function.args) if v.function else 0))
                for v in self.variables
            )
        )
        return [self.variable(i) for i in topological_order(skeleton)]


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 50
    tol: float = 1e-9
    trace: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    working_means: dict[str, float]
    natural_means: dict[str, float]
    max_change: float


@dataclass(frozen=True)
class FinalEstimate:
    working_mean: float
    working_var: float
    natural_mean_delta: float
    natural_sd_delta: float
    natural_mean_quad: float
    natural_sd_quad: float


@dataclass(frozen=True)
class SolveReport:
    iterations: list[IterationRecord]
    final: dict[str, FinalEstimate]
    joint: JointGaussian
    converged: bool
    iters_used: int
    diagram: Diagram = field(repr=False)
    observations: tuple[tuple[VariableId, float], ...] = field(repr=False, default=())

    @property
    def iterations_to_converge(self) -> int | None:
        """Linearizations needed before the means stopped moving.

        The pass that detects convergence only confirms the previous one, so
        it is not counted: a linear model converges in 1 even though a second
        pass is run to see that nothing changed. ``None`` if not converged.
        """
        if not self.converged:
            return None
        return max(1, self.iters_used - 1)


def natural_report(
    working_mean: float, working_var: float, scale: Scale, method: str = "delta"
) -> tuple[float, float]:
    """Natural-scale mean and sd of a working-scale normal.

    ``delta`` linearizes the inverse transform at the mean; ``quadrature``
    integrates it against N(mean, var) with 40 Gauss-Hermite nodes.
    """
    var = max(float(working_var), 0.0)
    if method == "delta":
        return (
            from_working(scale, working_mean),
            abs(natural_slope(scale, working_mean)) * math.sqrt(var),
        )
    if method == "quadrature":
        x, w = _GH
        vals = from_working_array(scale, working_mean + math.sqrt(var) * x)
        mean = float(w @ vals)
        second = float(w @ (vals - mean) ** 2)
        return mean, math.sqrt(max(second, 0.0))
    raise ValueError(f"unknown reporting method {method!r}")


def _gh_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(n)
    return x, w / w.sum()


_GH = _gh_rule(40)


def initial_expansion(model: CompiledModel) -> dict[VariableId, float]:
    """Prior means for roots; function outputs propagated through the exact functions."""
    point: dict[VariableId, float] = {}
    for var in model.evaluation_order():
        if var.prior is not None:
            point[var.id] = prior_to_node(var.prior)[0]
        else:
            f = var.function
            nat = [from_working(s, point[a]) for s, a in zip(f.arg_scales, f.args)]
            point[var.id] = to_working(f.out_scale, eval_function(f, nat))
    return point


def build_diagram(
    model: CompiledModel, expansion: dict[VariableId, float]
) -> tuple[Diagram, list[tuple[VariableId, float]]]:
    """Linearized diagram plus one evidence node per observation.

    Returns the diagram and the (evidence node, observed value) list.
    """
    means: dict[VariableId, float] = {}
    nodes: dict[VariableId, GaussNode] = {}
    for var in model.evaluation_order():
        if var.prior is not None:
            mu, v = prior_to_node(var.prior)
            nodes[var.id] = GaussNode(var.id, (), mu, v, ())
        else:
            f = var.function
            nodes[var.id] = linearize(
                f, var.id, [expansion[a] for a in f.args], [means[a] for a in f.args]
            )
        means[var.id] = nodes[var.id].cond_mean
    ordered = [nodes[v.id] for v in model.variables]
    obs: list[tuple[VariableId, float]] = []
    base = len(model.variables)
    for k, ev in enumerate(model.evidence):
        eid = VariableId(base + k, ev.name)
        ordered.append(GaussNode(eid, (ev.target,), means[ev.target], ev.summary.variance, (1.0,)))
        obs.append((eid, ev.summary.observed))
    return Diagram(tuple(ordered)), obs


def _posterior(model: CompiledModel, expansion: dict[VariableId, float]):
    diagram, obs = build_diagram(model, expansion)
    joint = to_joint(diagram)
    for (eid, value), ev in zip(obs, model.evidence):
        try:
            joint = condition(joint, eid, value)
        except SingularEvidenceError as err:
            raise SingularEvidenceError(f"study {ev.name!r}: {err}", study=ev.name) from err
    return diagram, obs, joint


def solve(
    model: CompiledModel,
    opts: SolveOptions | None = None,
    expansion: dict[VariableId, float] | None = None,
) -> SolveReport:
    """Iterate linearize -> condition -> re-expand until the means settle.

    Non-convergence is reported through ``converged=False``.
    """
    opts = opts or SolveOptions()
    point = dict(expansion) if expansion is not None else initial_expansion(model)
    report_ids = model.report_targets()
    records: list[IterationRecord] = []
    converged = False
    for it in range(1, opts.max_iters + 1):
        diagram, obs, joint = _posterior(model, point)
        new_point = {v: marginal(joint, v)[0] for v in model.ids}
        change = max((abs(new_point[v] - point[v]) for v in model.ids), default=0.0)
        records.append(
            IterationRecord(
                it,
                {v.name: new_point[v] for v in model.ids},
                {
                    v.name: from_working(model.variable(v).scale, new_point[v])
                    for v in report_ids
                },
                change,
            )
        )
        point = new_point
        if change < opts.tol:
            converged = True
            break

    final: dict[str, FinalEstimate] = {}
    for var in model.variables:
        m, v = marginal(joint, var.id)
        v = max(v, 0.0)
        md, sd = natural_report(m, v, var.scale, "delta")
        mq, sq = natural_report(m, v, var.scale, "quadrature")
        final[var.id.name] = FinalEstimate(m, v, md, sd, mq, sq)
    return SolveReport(
        iterations=records if opts.trace else records[-1:],
        final=final,
        joint=joint,
        converged=converged,
        iters_used=len(records),
        diagram=diagram,
        observations=tuple(obs),
    )
