"""Normal-form influence diagrams.

Each node X_j is a linear function of its parents plus independent noise::

    X_j = mu_j + sum_k b_kj * (X_k - mu_k) + eps_j,     eps_j ~ N(0, v_j)

so ``mu_j`` is the mean of X_j when every parent sits at its own ``mu_k``.
Nodes with ``v_j == 0`` are deterministic and produce singular joints, which
are legal everywhere except as conditioning targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleError, ReversalError, SingularEvidenceError, ValidationError

PIVOT_RTOL = 1e-12


@dataclass(frozen=True, order=True)
class VariableId:
    index: int
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class GaussNode:
    id: VariableId
    parents: tuple[VariableId, ...] = ()
    cond_mean: float = 0.0
    cond_var: float = 0.0
    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "cond_mean", float(self.cond_mean))
        object.__setattr__(self, "cond_var", float(self.cond_var))
        if len(self.parents) != len(self.coeffs):
            raise ValueError(
                f"node {self.id.name!r} has {len(self.parents)} parents "
                f"but {len(self.coeffs)} coefficients"
            )

    def coeff(self, parent: VariableId) -> float:
        """Coefficient on ``parent``; 0.0 when it is not a parent."""
        for p, b in zip(self.parents, self.coeffs):
            if p == parent:
                return b
        return 0.0


@dataclass(frozen=True)
class Diagram:
    nodes: tuple[GaussNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def ids(self) -> tuple[VariableId, ...]:
        return tuple(n.id for n in self.nodes)

    def node(self, key: VariableId | str) -> GaussNode:
        for n in self.nodes:
            if n.id == key or n.id.name == key:
                return n
        raise KeyError(key)

    def replace(self, *updated: GaussNode) -> Diagram:
        by_id = {n.id: n for n in updated}
        return Diagram(tuple(by_id.get(n.id, n) for n in self.nodes))


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # negative-variance | cycle | dangling-parent | duplicate-name | duplicate-index
    message: str
    node: VariableId | None = None


@dataclass(frozen=True, eq=False)
class JointGaussian:
    """Dense mean vector and covariance matrix over ``ids``."""

    ids: tuple[VariableId, ...]
    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(len(mean), len(mean))
        if len(self.ids) != len(mean):
            raise ValueError("ids, mean and cov dimensions disagree")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def position(self, key: VariableId | str) -> int:
        for i, v in enumerate(self.ids):
            if v == key or v.name == key:
                return i
        raise KeyError(f"unknown variable {key!s}")


def validate(d: Diagram) -> list[Diagnostic]:
    """List every invariant violation in ``d``; an empty list means valid."""
    out: list[Diagnostic] = []
    seen_names: set[str] = set()
    seen_index: set[int] = set()
    ids = set(d.ids)
    for n in d.nodes:
        if n.id.name in seen_names:
            out.append(Diagnostic("duplicate-name", f"duplicate name {n.id.name!r}", n.id))
        seen_names.add(n.id.name)
        if n.id.index in seen_index:
            out.append(Diagnostic("duplicate-index", f"duplicate index {n.id.index}", n.id))
        seen_index.add(n.id.index)
        if not n.cond_var >= 0.0:
            out.append(
                Diagnostic(
                    "negative-variance",
                    f"node {n.id.name!r} has negative conditional variance {n.cond_var!r}",
                    n.id,
                )
            )
        for p in n.parents:
            if p not in ids:
                out.append(
                    Diagnostic(
                        "dangling-parent",
                        f"node {n.id.name!r} lists unknown parent {p.name!r}",
                        n.id,
                    )
                )
    try:
        topological_order(d)
    except CycleError as err:
        out.append(Diagnostic("cycle", str(err), None))
    return out


def topological_order(d: Diagram) -> list[VariableId]:
    """Parents before children; ties broken by insertion order.

    Unknown parents are ignored here (``validate`` reports them).
    """
    present = set(d.ids)
    pending = {n.id: {p for p in n.parents if p in present} for n in d.nodes}
    order: list[VariableId] = []
    placed: set[VariableId] = set()
    while len(order) < len(d.nodes):
        for n in d.nodes:
            if n.id not in placed and pending[n.id] <= placed:
                order.append(n.id)
                placed.add(n.id)
                break
        else:
            stuck = next(n.id for n in d.nodes if n.id not in placed)
            raise CycleError(_cycle_member(d, stuck, placed).name)
    return order


def _cycle_member(d: Diagram, start: VariableId, placed: set[VariableId]) -> VariableId:
    # Walk unplaced parents until a node repeats; that node is on a cycle.
    by_id = {n.id: n for n in d.nodes}
    seen: list[VariableId] = []
    cur = start
    while cur not in seen:
        seen.append(cur)
        cur = next(p for p in by_id[cur].parents if p in by_id and p not in placed)
    return cur


def _require_valid(d: Diagram) -> None:
    diags = validate(d)
    if diags:
        raise ValidationError(diags)


def to_joint(d: Diagram) -> JointGaussian:
    """Convert a diagram to its mean vector and covariance matrix.

    The covariance is filled row by row in topological order, which keeps it
    positive semi-definite even for deterministic nodes.
    """
    _require_valid(d)
    ids = d.ids
    pos = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    mean = np.zeros(n)
    cov = np.zeros((n, n))
    done: list[int] = []
    for v in topological_order(d):
        node = d.node(v)
        j = pos[v]
        m = node.cond_mean
        row = np.zeros(n)
        parents = [(pos[p], b) for p, b in zip(node.parents, node.coeffs)]
        for (k, b), p in zip(parents, node.parents):
            m += b * (mean[k] - d.node(p).cond_mean)
            row += b * cov[k]
        mean[j] = m
        if done:
            cov[j, done] = row[done]
            cov[done, j] = row[done]
        cov[j, j] = sum(b * row[k] for k, b in parents) + node.cond_var
        done.append(j)
    return JointGaussian(ids, mean, cov)


def condition(j: JointGaussian, target: VariableId | str, observed: float) -> JointGaussian:
    """Condition on ``target == observed`` and drop ``target`` from the joint."""
    t = j.position(target)
    cov = j.cov
    pivot = cov[t, t]
    tol = PIVOT_RTOL * float(np.trace(cov))
    if not pivot > tol:
        raise SingularEvidenceError(
            f"cannot condition on {j.ids[t].name!r}: variance {pivot:.3g} is at or "
            f"below the pivot tolerance {tol:.3g}"
        )
    keep = [i for i in range(len(j.ids)) if i != t]
    c = cov[keep, t]
    mean = j.mean[keep] + c * (float(observed) - j.mean[t]) / pivot
    new_cov = cov[np.ix_(keep, keep)] - np.outer(c, c) / pivot
    new_cov = 0.5 * (new_cov + new_cov.T)
    return JointGaussian(tuple(j.ids[i] for i in keep), mean, new_cov)


def condition_all(
    j: JointGaussian, evidence: Iterable[tuple[VariableId | str, float]]
) -> JointGaussian:
    for target, value in evidence:
        j = condition(j, target, value)
    return j


def marginal(j: JointGaussian, v: VariableId | str) -> tuple[float, float]:
    i = j.position(v)
    return float(j.mean[i]), float(j.cov[i, i])


def _has_path(d: Diagram, src: VariableId, dst: VariableId, skip_direct: bool) -> bool:
    children: dict[VariableId, list[VariableId]] = {v: [] for v in d.ids}
    for n in d.nodes:
        for p in n.parents:
            if p in children:
                children[p].append(n.id)
    stack = [c for c in children[src] if not (skip_direct and c == dst)]
    seen: set[VariableId] = set()
    while stack:
        cur = stack.pop()
        if cur == dst:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(children[cur])
    return False


def _union(*groups: Sequence[VariableId], exclude: Sequence[VariableId] = ()) -> tuple:
    out: list[VariableId] = []
    for g in groups:
        for v in g:
            if v not in out and v not in exclude:
                out.append(v)
    return tuple(out)


def reverse_arc(d: Diagram, i: VariableId | str, j: VariableId | str) -> Diagram:
    """Turn the arc i -> j into j -> i without changing the joint distribution.

    Both nodes end up conditioned on the union of their former parents.
    """
    _require_valid(d)
    ni, nj = d.node(i), d.node(j)
    if ni.id not in nj.parents:
        raise ReversalError(f"there is no arc {ni.id.name} -> {nj.id.name}")
    if _has_path(d, ni.id, nj.id, skip_direct=True):
        raise ReversalError(
            f"cannot reverse {ni.id.name} -> {nj.id.name}: another directed path connects them"
        )
    others = _union(ni.parents, nj.parents, exclude=(ni.id, nj.id))
    b = nj.coeff(ni.id)
    vi, vj = ni.cond_var, nj.cond_var

    # j after absorbing i: coefficients c_k + b * a_k, variance v_j + b^2 v_i.
    new_j_coeffs = tuple(nj.coeff(k) + b * ni.coeff(k) for k in others)
    new_vj = vj + b * b * vi

    if new_vj > 0.0:
        beta = b * vi / new_vj
        new_vi = vi * vj / new_vj
    else:
        beta = 0.0
        new_vi = vi
    new_i_coeffs = (beta,) + tuple(
        ni.coeff(k) - beta * c for k, c in zip(others, new_j_coeffs)
    )

    new_j = GaussNode(nj.id, others, nj.cond_mean, max(new_vj, 0.0), new_j_coeffs)
    new_i = GaussNode(ni.id, (nj.id,) + others, ni.cond_mean, max(new_vi, 0.0), new_i_coeffs)
    return d.replace(new_i, new_j)
