"""Exact enumeration inference: posteriors, data-completed marginals, objectives.

Evidence cells carry one of two marks.  OBSERVED cells are measurements;
CLAMPED cells are the conditions under which the measurement was made.
Posterior and completion queries condition on both identically -- the
marks only matter to the conditional objective and the conditional
fitting regimes.

Per graph, queries share a lazily built dense joint table and memoize
per distinct evidence pattern, since datasets here repeat few patterns.
All functions are pure; concurrent calls on immutable inputs are safe.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ImpossibleEvidence, ZeroModelProbability
from .model import (
    ChainFactorGraph,
    _conditional_table,
    _project,
    joint_table,
)


class Mark(enum.Enum):
    OBSERVED = "observed"
    CLAMPED = "clamped"


@dataclass(frozen=True)
class Evidence:
    """Partial assignment of variables to states, each entry marked."""

    items: tuple[tuple[int, int, Mark], ...]

    def __post_init__(self):
        items = tuple(sorted(self.items))
        seen = set()
        for v, _, _ in items:
            if v in seen:
                raise ValueError(f"variable {v} assigned more than once")
            seen.add(v)
        object.__setattr__(self, "items", items)

    @classmethod
    def of(
        cls,
        observed: Mapping[int, int] | None = None,
        clamped: Mapping[int, int] | None = None,
    ) -> "Evidence":
        items = [(v, s, Mark.OBSERVED) for v, s in (observed or {}).items()]
        items += [(v, s, Mark.CLAMPED) for v, s in (clamped or {}).items()]
        return cls(tuple(items))

    def assigned(self) -> dict[int, int]:
        return {v: s for v, s, _ in self.items}

    def assigned_items(self) -> tuple[tuple[int, int], ...]:
        return tuple((v, s) for v, s, _ in self.items)

    def observed_items(self) -> tuple[tuple[int, int], ...]:
        return tuple((v, s) for v, s, m in self.items if m is Mark.OBSERVED)

    def clamped_items(self) -> tuple[tuple[int, int], ...]:
        return tuple((v, s) for v, s, m in self.items if m is Mark.CLAMPED)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Record:
    evidence: Evidence
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight > 0.0):
            raise ValueError(f"record weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class Dataset:
    """Weighted records; the effective sample size is the total weight."""

    records: tuple[Record, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def total_weight(self) -> float:
        return float(sum(r.weight for r in self.records))

    def is_complete(self, n_vars: int) -> bool:
        return all(len(r.evidence) == n_vars for r in self.records)

    def check(self, graph: ChainFactorGraph) -> None:
        dims = graph.space.dims
        for i, rec in enumerate(self.records):
            for v, s, _ in rec.evidence.items:
                if not (0 <= v < len(dims)):
                    raise ValueError(f"record {i}: unknown variable index {v}")
                if not (0 <= s < dims[v]):
                    raise ValueError(
                        f"record {i}: state {s} out of range for variable {v}"
                    )


@dataclass(frozen=True, eq=False)
class MarginalTable:
    """Dense probability table over a cluster; entries sum to one."""

    variables: tuple[int, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        arr = np.array(self.probabilities, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "probabilities", arr)


def complete_dataset(
    space_size: int, rows: Iterable[Sequence[int]], weights: Sequence[float] | None = None
) -> Dataset:
    """Dataset of fully observed rows given as state-index sequences."""
    records = []
    for i, row in enumerate(rows):
        if len(row) != space_size:
            raise ValueError(f"row {i} has {len(row)} cells for {space_size} variables")
        w = 1.0 if weights is None else float(weights[i])
        records.append(Record(Evidence.of(observed=dict(enumerate(row))), w))
    return Dataset(tuple(records))


# ---------------------------------------------------------------------------
# Enumeration engine
# ---------------------------------------------------------------------------

Key = tuple[tuple[int, int], ...]


class _Evaluator:
    """Enumeration context bound to one graph.

    Caches the dense joint table, per-component conditional tables, and
    results per evidence pattern.  Fully assigned patterns never touch the
    joint table: their probability is a product of component lookups, and
    their posterior is an indicator.
    """

    def __init__(self, graph: ChainFactorGraph):
        self.graph = graph
        self.dims = graph.space.dims
        self.n = len(graph.space)
        self._joint: np.ndarray | None = None
        self._cond: list | None = None
        self._mass: dict[Key, float] = {}

    def joint(self) -> np.ndarray:
        if self._joint is None:
            self._joint = joint_table(self.graph)
        return self._joint

    def _cond_tables(self):
        if self._cond is None:
            self._cond = [
                (comp, _conditional_table(self.graph, comp))
                for comp in self.graph.components
            ]
        return self._cond

    def _slicer(self, assigned: Mapping[int, int]):
        return np.ix_(
            *[
                [assigned[v]] if v in assigned else list(range(d))
                for v, d in enumerate(self.dims)
            ]
        )

    def evidence_mass(self, key: Key) -> float:
        if key not in self._mass:
            assigned = dict(key)
            if len(assigned) == self.n:
                p = 1.0
                for comp, table in self._cond_tables():
                    p *= float(table[tuple(assigned[v] for v in comp.all_vars)])
            elif not assigned:
                p = float(self.joint().sum())
            else:
                p = float(self.joint()[self._slicer(assigned)].sum())
            self._mass[key] = p
        return self._mass[key]

    def posterior(self, key: Key, target: tuple[int, ...], check_mass: bool = False) -> np.ndarray:
        assigned = dict(key)
        if len(assigned) == self.n:
            if check_mass and self.evidence_mass(key) <= 0.0:
                raise ImpossibleEvidence("evidence has probability zero under the model")
            out = np.zeros(tuple(self.dims[v] for v in target))
            out[tuple(assigned[v] for v in target)] = 1.0
            return out
        sub = self.joint()[self._slicer(assigned)] if assigned else self.joint()
        mass = float(sub.sum())
        if mass <= 0.0:
            raise ImpossibleEvidence("evidence has probability zero under the model")
        tset = set(target)
        srt = tuple(sorted(tset))
        drop = tuple(v for v in range(self.n) if v not in tset)
        proj = sub.sum(axis=drop) if drop else sub
        proj = proj / mass
        full = np.zeros(tuple(self.dims[v] for v in srt))
        sl = tuple(
            slice(assigned[v], assigned[v] + 1) if v in assigned else slice(None)
            for v in srt
        )
        full[sl] = proj
        perm = [srt.index(v) for v in target]
        if perm != list(range(len(srt))):
            full = np.transpose(full, perm)
        return full


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def posterior_marginal(
    graph: ChainFactorGraph, evidence: Evidence, target: Sequence[int]
) -> MarginalTable:
    """Exact conditional distribution of the target cluster given the evidence.

    Both marks condition.  Variables assigned by the evidence come back as
    point masses inside the table.
    """
    target = tuple(target)
    ev = _Evaluator(graph)
    return MarginalTable(
        target, ev.posterior(evidence.assigned_items(), target, check_mass=True)
    )


def completed_marginals(
    graph: ChainFactorGraph, dataset: Dataset, targets: Sequence[Sequence[int]]
) -> list[MarginalTable]:
    """Data-completed marginals on several clusters sharing one enumeration pass.

    Each record contributes its posterior on the target (hidden variables
    filled in by the current model, assigned ones as indicators), averaged
    under the record weights.  Fully assigned records are indicators and
    are never checked against the model mass.
    """
    ev = _Evaluator(graph)
    targets = [tuple(t) for t in targets]
    out = []
    total = dataset.total_weight
    for target in targets:
        acc = np.zeros(tuple(graph.space.dims[v] for v in target))
        memo: dict[Key, np.ndarray] = {}
        for i, rec in enumerate(dataset.records):
            key = rec.evidence.assigned_items()
            if key not in memo:
                try:
                    memo[key] = ev.posterior(key, target)
                except ImpossibleEvidence as e:
                    raise ImpossibleEvidence(f"record {i}: {e}", record_index=i) from None
            acc = acc + rec.weight * memo[key]
        out.append(MarginalTable(target, acc / total))
    return out


def completed_marginal(
    graph: ChainFactorGraph, dataset: Dataset, target: Sequence[int]
) -> MarginalTable:
    """Data-completed marginal on one cluster; see :func:`completed_marginals`."""
    return completed_marginals(graph, dataset, [target])[0]


def log_likelihood(graph: ChainFactorGraph, dataset: Dataset) -> float:
    """Weight-averaged log probability of each record's assigned cells.

    Unassigned variables are summed out.  A record whose evidence has zero
    probability raises :class:`ImpossibleEvidence` rather than returning
    ``-inf``, so optimizers must face zero-mass data explicitly.
    """
    dataset.check(graph)
    ev = _Evaluator(graph)
    total = 0.0
    for i, rec in enumerate(dataset.records):
        p = ev.evidence_mass(rec.evidence.assigned_items())
        if p <= 0.0:
            raise ImpossibleEvidence(
                f"record {i} has probability zero under the model", record_index=i
            )
        total += rec.weight * math.log(p)
    return total / dataset.total_weight


def conditional_log_likelihood(graph: ChainFactorGraph, dataset: Dataset) -> float:
    """Weight-averaged log probability of observed cells given clamped cells.

    Per record this is ``log P(observed, clamped) - log P(clamped)``;
    records with nothing clamped contribute their plain log likelihood.
    Every record must observe at least one variable.
    """
    dataset.check(graph)
    ev = _Evaluator(graph)
    total = 0.0
    for i, rec in enumerate(dataset.records):
        if not rec.evidence.observed_items():
            raise ValueError(f"record {i} observes no variables")
        p_all = ev.evidence_mass(rec.evidence.assigned_items())
        if p_all <= 0.0:
            raise ImpossibleEvidence(
                f"record {i}: observed+clamped cells have probability zero",
                record_index=i,
            )
        value = math.log(p_all)
        clamped = rec.evidence.clamped_items()
        if clamped:
            p_clamp = ev.evidence_mass(clamped)
            if p_clamp <= 0.0:
                raise ImpossibleEvidence(
                    f"record {i}: clamped cells have probability zero", record_index=i
                )
            value -= math.log(p_clamp)
        total += rec.weight * value
    return total / dataset.total_weight


def divergence_to_target(
    graph: ChainFactorGraph,
    target: np.ndarray,
    context_vars: Sequence[int],
    response_vars: Sequence[int],
) -> float:
    """Sum over contexts of the relative entropy from the model conditional.

    ``target`` has axes ``(*context_vars, *response_vars)`` and each context
    row sums to one.  Contexts enter the sum unweighted.  Zero target
    entries contribute zero; a zero model conditional under a positive
    target entry raises :class:`ZeroModelProbability`.
    """
    ctx = tuple(context_vars)
    resp = tuple(response_vars)
    dims = graph.space.dims
    q = np.asarray(target, dtype=float)
    expected = tuple(dims[v] for v in ctx + resp)
    if q.shape != expected:
        raise ValueError(f"target shape {q.shape} does not match {expected}")
    resp_axes = tuple(range(len(ctx), len(ctx) + len(resp)))
    rows = q.sum(axis=resp_axes)
    if not np.allclose(rows, 1.0, atol=1e-8):
        raise ValueError("target rows must sum to one over the response variables")

    marg = _project(joint_table(graph), tuple(range(len(dims))), ctx + resp)
    mass = marg.sum(axis=resp_axes, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(mass > 0, marg / np.where(mass > 0, mass, 1.0), 0.0)
    pos = q > 0
    if np.any(pos & (p <= 0)):
        raise ZeroModelProbability(
            "model conditional is zero where the target is positive"
        )
    return float(np.sum(q[pos] * (np.log(q[pos]) - np.log(p[pos]))))
