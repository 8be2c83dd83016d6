"""Maximum conditional likelihood by proportional fitting.

Two regimes are supported, decided per model/dataset pair:

* **clamped parents** -- every component's parent variables are clamped in
  every record (trivially true for parentless components, hence for any
  undirected model).  The normalizers cancel from the conditional
  objective and each table update is a single closed-form ratio, exactly
  like the unconditional fit but with a conditional companion table built
  per record from the clamp slices.

* **joint parents** -- every member cluster contains its component's full
  parent set (directed networks qualify; two-layer pairwise networks do
  not).  Normalizers are constrained to one, which costs nothing in
  expressiveness, and each table update solves a scalar multiplier per
  parent configuration by bisection so the constraint survives the update.

Mixed cases are rejected.  Components whose variables are clamped in every
record carry no conditional-likelihood signal and are left untouched.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BracketFailure,
    ChainFitError,
    NonConvergence,
    NonPositiveDenominator,
    UnsupportedRegime,
    ZeroDenominator,
    ZeroNormalizer,
)
from .inference import (
    Dataset,
    MarginalTable,
    completed_marginal,
    conditional_log_likelihood,
)
from .ipf import CycleRecord, FitConfig, FitTrace, _max_log_delta, _rescale_unit_max, fit_ml
from .model import (
    ChainFactorGraph,
    ComponentSet,
    PotentialTable,
    _expand_to,
    _member_product,
    _normalizer_table,
    _project,
    require_valid,
)


class Regime(enum.Enum):
    CLAMPED_PARENTS = "clamped_parents"
    JOINT_PARENTS = "joint_parents"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class RegimeClassification:
    """Per-component regime tags and the whole-fit mode."""

    tags: Mapping[str, Regime]
    clamped_ok: Mapping[str, bool]
    joint_ok: Mapping[str, bool]
    mode: Regime

    def qualifies(self, regime: Regime) -> bool:
        if regime is Regime.CLAMPED_PARENTS:
            return all(self.clamped_ok.values())
        if regime is Regime.JOINT_PARENTS:
            return all(self.joint_ok.values())
        return False


@dataclass(frozen=True)
class LagrangeState:
    """Solved multiplier for one parent configuration."""

    value: float
    bracket: tuple[float, float]
    residual: float


def classify_regime(graph: ChainFactorGraph, dataset: Dataset) -> RegimeClassification:
    """Tag each component and pick the whole-fit regime.

    A component is clamped-parents eligible when its parents are clamped
    in every record, and joint-parents eligible when each of its member
    clusters contains all its parents.  The fit mode is clamped-parents if
    every component qualifies, else joint-parents if every component
    qualifies, else unsupported.
    """
    clamp_sets = [
        {v for v, _ in rec.evidence.clamped_items()} for rec in dataset.records
    ]
    tags: dict[str, Regime] = {}
    clamped_ok: dict[str, bool] = {}
    joint_ok: dict[str, bool] = {}
    for comp in graph.components:
        parents = set(comp.parent_vars)
        clamped_ok[comp.id] = all(parents <= cs for cs in clamp_sets)
        joint_ok[comp.id] = all(
            parents <= set(graph.potentials[cid].variables) for cid in comp.member_ids
        )
        if clamped_ok[comp.id]:
            tags[comp.id] = Regime.CLAMPED_PARENTS
        elif joint_ok[comp.id]:
            tags[comp.id] = Regime.JOINT_PARENTS
        else:
            tags[comp.id] = Regime.UNSUPPORTED

    if all(clamped_ok.values()):
        mode = Regime.CLAMPED_PARENTS
    elif all(joint_ok.values()):
        mode = Regime.JOINT_PARENTS
    else:
        mode = Regime.UNSUPPORTED
    return RegimeClassification(tags, clamped_ok, joint_ok, mode)


# ---------------------------------------------------------------------------
# Conditional companion table
# ---------------------------------------------------------------------------


def g_alpha_conditional(
    graph: ChainFactorGraph, dataset: Dataset, cluster_id: str
) -> np.ndarray:
    """Weighted per-record average companion table for conditional updates.

    For each record, the product of every potential *except* the updated
    one is restricted to the record's clamp slice; the restriction summed
    down to the cluster, divided by the full-product mass of the same
    slice, is the record's contribution.  Contributions are averaged with
    the record weights (same normalization as the completed marginals, so
    the closed-form ratio update is consistent).
    """
    dims = graph.space.dims
    n = len(dims)
    table = graph.potentials[cluster_id]
    everything = tuple(range(n))

    rest = np.ones(dims)
    for comp in graph.components:
        for cid in comp.member_ids:
            if cid == cluster_id:
                continue
            t = graph.potentials[cid]
            rest = rest * _expand_to(t.values, t.variables, everything, dims)
    own = rest * _expand_to(table.values, table.variables, everything, dims)

    tvars = table.variables
    tset = set(tvars)
    srt = tuple(sorted(tset))
    acc = np.zeros(tuple(dims[v] for v in srt))
    memo: dict[tuple, tuple[np.ndarray, float]] = {}
    total = dataset.total_weight

    for i, rec in enumerate(dataset.records):
        key = rec.evidence.clamped_items()
        if key not in memo:
            clamped = dict(key)
            if clamped:
                slicer = np.ix_(
                    *[
                        [clamped[v]] if v in clamped else list(range(d))
                        for v, d in enumerate(dims)
                    ]
                )
                sub_rest = rest[slicer]
                den = float(own[slicer].sum())
            else:
                sub_rest = rest
                den = float(own.sum())
            drop = tuple(v for v in range(n) if v not in tset)
            num_small = sub_rest.sum(axis=drop) if drop else sub_rest
            num = np.zeros(tuple(dims[v] for v in srt))
            sl = tuple(
                slice(clamped[v], clamped[v] + 1) if v in clamped else slice(None)
                for v in srt
            )
            num[sl] = num_small
            memo[key] = (num, den)
        num, den = memo[key]
        if den <= 0.0:
            raise ZeroDenominator(
                f"record {i}: clamp slice carries zero unnormalized mass"
            )
        acc = acc + rec.weight * (num / den)

    acc = acc / total
    perm = [srt.index(v) for v in tvars]
    if perm != list(range(len(srt))):
        acc = np.transpose(acc, perm)
    return acc


def update_clamped_parents(
    graph: ChainFactorGraph, dataset: Dataset, cluster_id: str, floor: float = 0.0
) -> PotentialTable:
    """Closed-form conditional update of one table in the clamped-parents regime."""
    table = graph.potentials[cluster_id]
    p_hat = completed_marginal(graph, dataset, table.variables)
    g_c = g_alpha_conditional(graph, dataset, cluster_id)
    p = p_hat.probabilities
    if np.any((p > 0) & (g_c <= 0)):
        raise ZeroDenominator(
            f"cluster {cluster_id!r}: conditional companion table vanishes where "
            "the completed marginal is positive"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(p > 0, p / np.where(g_c > 0, g_c, 1.0), floor)
    return PotentialTable(cluster_id, table.variables, values)


# ---------------------------------------------------------------------------
# Joint-parents machinery
# ---------------------------------------------------------------------------


def h_alpha(graph: ChainFactorGraph, cluster_id: str) -> np.ndarray:
    """Other-member product summed down to the cluster (all ones for a
    single-member component)."""
    comp = graph.owner_of(cluster_id)
    table = graph.potentials[cluster_id]
    rest = _member_product(graph, comp, skip=cluster_id)
    return _project(rest, comp.all_vars, table.variables)


def normalize_joint_parents(graph: ChainFactorGraph) -> ChainFactorGraph:
    """Absorb every component normalizer into its first member cluster.

    Requires the joint-parents shape (each member contains the parents).
    Afterwards every normalizer is identically one; the distribution is
    unchanged.  The absorbing member is the lexicographically first
    cluster id of each component, so the operation is deterministic.
    """
    for comp in graph.components:
        z = _normalizer_table(graph, comp)
        if np.any(z <= 0):
            raise ZeroNormalizer(
                f"component {comp.id!r} has a zero normalizer; cannot normalize"
            )
        if np.allclose(z, 1.0, rtol=0.0, atol=1e-15):
            continue
        target = sorted(comp.member_ids)[0]
        t = graph.potentials[target]
        if not set(comp.parents_sorted) <= set(t.variables):
            raise UnsupportedRegime(
                f"cluster {target!r} does not contain the parents of {comp.id!r}"
            )
        ze = _expand_to(z, comp.parents_sorted, t.variables, graph.space.dims)
        graph = graph.with_potential(
            target, PotentialTable(t.cluster_id, t.variables, t.values / ze)
        )
    return graph


def constraint_value(
    p: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, floor: float = 0.0
) -> float:
    """Normalizer the shifted update would produce at one parent configuration.

    Arguments are the completed marginal, conditional companion, and
    other-member-sum tables restricted to a single parent configuration
    (flattened over the cluster's chain entries).  Returns ``+inf`` when
    the shift makes a needed denominator non-positive, which bisection
    treats as "multiplier too small".  Strictly decreasing in ``lam``
    wherever finite.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    denom = g + lam * h
    pos = p > 0
    if np.any(pos & (denom <= 0)):
        return float("inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * h / np.where(pos, denom, 1.0), floor * h)
    return float(terms.sum())


def lambda_bracket(
    p: np.ndarray, g: np.ndarray, h: np.ndarray, floor: float = 0.0
) -> tuple[float, float]:
    """Initial multiplier bracket for one parent configuration.

    The lower end ``max((p*h - g)/h)`` over positive-marginal entries makes
    the constraint value at least one by direct substitution; the upper
    end ``sum(p)`` makes it at most one.  If roundoff breaks either
    inequality the end is pushed outward geometrically (doubling steps,
    at most 200 of them) before giving up.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    pos = p > 0
    if not np.any(pos):
        raise ValueError("no positive completed mass at this parent configuration")
    lo = float(np.max((p[pos] * h[pos] - g[pos]) / h[pos]))
    hi = float(np.sum(p[pos]))

    span = max(hi - lo, 1.0)
    for _ in range(200):
        if constraint_value(p, g, h, lo, floor) >= 1.0 - 1e-12:
            break
        lo -= span
        span *= 2.0
    else:
        raise BracketFailure("could not push the lower bracket end high enough")
    span = max(hi - lo, 1.0)
    for _ in range(200):
        if constraint_value(p, g, h, hi, floor) <= 1.0 + 1e-12:
            break
        hi += span
        span *= 2.0
    else:
        raise BracketFailure("could not push the upper bracket end low enough")
    return lo, hi


def solve_lambda(
    p: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    epsilon: float = 1e-10,
    floor: float = 0.0,
) -> LagrangeState:
    """Bisect the multiplier until the constraint value is within ``epsilon`` of one.

    The input tables are fixed during the search; only the scalar shift
    moves.  The constraint value is monotone decreasing, so plain
    bisection on the bracket suffices.
    """
    lo, hi = lambda_bracket(p, g, h, floor)
    z_lo = constraint_value(p, g, h, lo, floor)
    z_hi = constraint_value(p, g, h, hi, floor)
    for lam, z in ((lo, z_lo), (hi, z_hi)):
        if abs(z - 1.0) < epsilon:
            return LagrangeState(lam, (lo, hi), abs(z - 1.0))
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        z = constraint_value(p, g, h, mid, floor)
        if abs(z - 1.0) < epsilon:
            return LagrangeState(mid, (lo, hi), abs(z - 1.0))
        if z > 1.0:
            a = mid
        else:
            b = mid
    raise NonConvergence(
        f"bisection did not reach |constraint - 1| < {epsilon} in 200 steps"
    )


def psi_lambda(
    graph: ChainFactorGraph,
    cluster_id: str,
    p_hat: MarginalTable,
    g_c: np.ndarray,
    h: np.ndarray,
    lam: np.ndarray | float,
    floor: float = 0.0,
) -> PotentialTable:
    """Shifted closed-form table: completed marginal over companion plus
    multiplier times other-member sum.

    ``lam`` holds one multiplier per parent configuration (a scalar when
    the component has no parents) and is broadcast through the parent
    coordinates of the cluster.
    """
    comp = graph.owner_of(cluster_id)
    table = graph.potentials[cluster_id]
    if tuple(p_hat.variables) != table.variables:
        raise ValueError("marginal variables do not match the cluster")
    pi = comp.parents_sorted
    lam_arr = np.asarray(lam, dtype=float)
    lam_e = _expand_to(lam_arr, pi, table.variables, graph.space.dims)
    p = p_hat.probabilities
    denom = np.asarray(g_c, float) + lam_e * np.asarray(h, float)
    if np.any((p > 0) & (denom <= 0)):
        raise NonPositiveDenominator(
            f"cluster {cluster_id!r}: shifted denominator is non-positive where "
            "the completed marginal is positive"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(p > 0, p / np.where(denom > 0, denom, 1.0), floor)
    return PotentialTable(cluster_id, table.variables, values)


def _pi_chain_matrix(
    arr: np.ndarray, table_vars: tuple[int, ...], pi: tuple[int, ...]
) -> np.ndarray:
    """Reshape a cluster table to (parent configurations, chain entries)."""
    order = tuple(pi) + tuple(v for v in table_vars if v not in pi)
    perm = [table_vars.index(v) for v in order]
    moved = np.transpose(arr, perm) if perm != list(range(len(table_vars))) else arr
    n_pi = int(np.prod(moved.shape[: len(pi)])) if pi else 1
    return moved.reshape(n_pi, -1)


def update_joint_parents(
    graph: ChainFactorGraph,
    dataset: Dataset,
    cluster_id: str,
    epsilon: float = 1e-10,
    floor: float = 0.0,
) -> tuple[PotentialTable, dict[tuple[int, ...], LagrangeState | None]]:
    """Constraint-preserving conditional update of one table.

    Solves one multiplier per parent configuration and installs the
    shifted closed-form table.  Parent configurations with zero completed
    mass carry no objective signal; their rows keep the current values
    (already normalized).  Returns the new table and the solved states.
    """
    comp = graph.owner_of(cluster_id)
    table = graph.potentials[cluster_id]
    pi = comp.parents_sorted
    if not set(pi) <= set(table.variables):
        raise UnsupportedRegime(
            f"cluster {cluster_id!r} does not contain the parents of {comp.id!r}"
        )
    p_hat = completed_marginal(graph, dataset, table.variables)
    g_c = g_alpha_conditional(graph, dataset, cluster_id)
    h = h_alpha(graph, cluster_id)

    P = _pi_chain_matrix(p_hat.probabilities, table.variables, pi)
    G = _pi_chain_matrix(g_c, table.variables, pi)
    H = _pi_chain_matrix(h, table.variables, pi)
    OLD = _pi_chain_matrix(table.values, table.variables, pi)

    pi_dims = tuple(graph.space.dims[v] for v in pi)
    configs = list(np.ndindex(*pi_dims)) if pi else [()]
    new_rows = np.empty_like(OLD)
    lam = np.zeros(len(configs))
    states: dict[tuple[int, ...], LagrangeState | None] = {}
    for k, cfg in enumerate(configs):
        if not np.any(P[k] > 0):
            new_rows[k] = OLD[k]
            states[cfg] = None
            continue
        st = solve_lambda(P[k], G[k], H[k], epsilon=epsilon, floor=floor)
        lam[k] = st.value
        denom = G[k] + st.value * H[k]
        new_rows[k] = np.where(P[k] > 0, P[k] / np.where(denom > 0, denom, 1.0), floor)
        states[cfg] = st

    # Back to the cluster's own axis order.
    order = tuple(pi) + tuple(v for v in table.variables if v not in pi)
    shape = tuple(graph.space.dims[v] for v in order)
    values = new_rows.reshape(shape)
    perm = [order.index(v) for v in table.variables]
    if perm != list(range(len(order))):
        values = np.transpose(values, perm)
    return PotentialTable(cluster_id, table.variables, values), states


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------


def _always_clamped_components(graph: ChainFactorGraph, dataset: Dataset) -> set[str]:
    clamp_sets = [
        {v for v, _ in rec.evidence.clamped_items()} for rec in dataset.records
    ]
    skipped = set()
    for comp in graph.components:
        if all(set(comp.all_vars) <= cs for cs in clamp_sets):
            skipped.add(comp.id)
    return skipped


def fit_cml(
    graph: ChainFactorGraph,
    dataset: Dataset,
    config: FitConfig | None = None,
    force_regime: Regime | None = None,
) -> FitTrace:
    """Coordinate-ascent conditional likelihood fit.

    The regime is classified automatically; ``force_regime`` overrides it
    but is rejected when the model/dataset pair does not qualify.  In the
    joint-parents regime the potentials are normalized on entry (gauge
    move) and every update re-solves the multipliers so all normalizers
    stay at one; per-cycle rescaling is disabled there since it would
    break the constraint.  The trace records the average conditional log
    likelihood once per sweep, plus the initial value.
    """
    config = config or FitConfig()
    require_valid(graph)
    dataset.check(graph)

    classification = classify_regime(graph, dataset)
    if force_regime is not None:
        if not classification.qualifies(force_regime):
            raise UnsupportedRegime(
                f"requested regime {force_regime.value} is inconsistent with the "
                f"model/dataset classification ({classification.mode.value})"
            )
        mode = force_regime
    else:
        mode = classification.mode
    if mode is Regime.UNSUPPORTED:
        raise UnsupportedRegime(
            "no supported regime: some component has unclamped parents and a "
            "member cluster that does not contain its parents"
        )

    if mode is Regime.JOINT_PARENTS:
        graph = normalize_joint_parents(graph)

    skipped = _always_clamped_components(graph, dataset)
    schedule = [
        cid
        for comp in graph.components
        if comp.id not in skipped
        for cid in comp.member_ids
    ]

    start = time.perf_counter()
    records = [CycleRecord(0, conditional_log_likelihood(graph, dataset), 0.0)]
    termination = "max_cycles"

    for cycle in range(1, config.max_cycles + 1):
        delta = 0.0
        for cid in schedule:
            old = graph.potentials[cid]
            try:
                if mode is Regime.CLAMPED_PARENTS:
                    new = update_clamped_parents(
                        graph, dataset, cid, floor=config.potential_floor
                    )
                else:
                    new, _ = update_joint_parents(
                        graph,
                        dataset,
                        cid,
                        epsilon=config.constraint_epsilon,
                        floor=config.potential_floor,
                    )
            except ChainFitError as e:
                raise type(e)(f"cycle {cycle}, cluster {cid!r}: {e}") from e
            delta = max(delta, _max_log_delta(old.values, new.values))
            graph = graph.with_potential(cid, new)
        if config.rescale_each_cycle and mode is Regime.CLAMPED_PARENTS:
            for cid in schedule:
                graph = _rescale_unit_max(graph, cid)
        wall_ms = (time.perf_counter() - start) * 1e3
        records.append(
            CycleRecord(cycle, conditional_log_likelihood(graph, dataset), wall_ms)
        )
        if delta < config.tol:
            termination = "converged"
            break

    return FitTrace(tuple(records), graph, termination)
