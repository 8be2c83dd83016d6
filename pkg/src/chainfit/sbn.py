"""Two-layer sigmoid networks: transforms, exact gradients, CG/SD baselines.

Units are binary with the +/-1 coding.  A bottom unit ``i`` with parents in
the top layer turns on with probability ``sigma(2 * (h_i + sum_j w_ij x_j))``
where ``sigma`` is the logistic function.  Such a network is a chain factor
graph whose bottom components factor into pairwise child-parent potentials
``exp(x_i * (w_ij x_j + h_i / k_i))`` with the bias split evenly over the
``k_i`` parents; the inverse transform recovers unique weights and biases
from any strictly positive pairwise tables (pure parent factors and
constants are gauge and drop out of the conditionals).

The gradient-based baselines optimize the same average log likelihood in
weight space: one cycle computes the full gradient and then runs a line
minimization along the (conjugate) direction, so cycles are comparable to
the proportional-fitting sweeps.  Top-layer marginals are fixed parameters
throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
from scipy.special import expit

from .errors import LineSearchFailure, NonSigmoidShape
from .inference import Dataset, Evidence, Record
from .ipf import CycleRecord, FitTrace
from .model import (
    ChainFactorGraph,
    ComponentSet,
    PotentialTable,
    Variable,
    VariableSpace,
)

_STATES = ("-1", "+1")
_SIGN = np.array([-1.0, 1.0])


@dataclass(frozen=True, eq=False)
class SigmoidNet:
    """Weights, biases, and fixed top-layer marginals of a two-layer network."""

    top_names: tuple[str, ...]
    bottom_names: tuple[str, ...]
    weights: np.ndarray  # (n_bottom, n_top)
    biases: np.ndarray  # (n_bottom,)
    top_prob_one: np.ndarray  # (n_top,)

    def __post_init__(self):
        object.__setattr__(self, "top_names", tuple(self.top_names))
        object.__setattr__(self, "bottom_names", tuple(self.bottom_names))
        w = np.array(self.weights, dtype=float).reshape(
            len(self.bottom_names), len(self.top_names)
        )
        b = np.array(self.biases, dtype=float).reshape(len(self.bottom_names))
        p = np.array(self.top_prob_one, dtype=float).reshape(len(self.top_names))
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("weights and biases must be finite")
        for arr in (w, b, p):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "top_prob_one", p)

    @classmethod
    def zeros(cls, n_top: int, n_bottom: int) -> "SigmoidNet":
        return cls(
            tuple(f"x{j + 1}" for j in range(n_top)),
            tuple(f"y{i + 1}" for i in range(n_bottom)),
            np.zeros((n_bottom, n_top)),
            np.zeros(n_bottom),
            np.full(n_top, 0.5),
        )

    @property
    def n_top(self) -> int:
        return len(self.top_names)

    @property
    def n_bottom(self) -> int:
        return len(self.bottom_names)

    @property
    def n_params(self) -> int:
        return self.weights.size + self.biases.size

    @cached_property
    def space(self) -> VariableSpace:
        return VariableSpace(
            tuple(Variable(n, _STATES) for n in self.top_names + self.bottom_names)
        )

    def with_params(self, weights: np.ndarray, biases: np.ndarray) -> "SigmoidNet":
        return SigmoidNet(
            self.top_names, self.bottom_names, weights, biases, self.top_prob_one
        )


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


# ---------------------------------------------------------------------------
# Weight <-> potential transforms
# ---------------------------------------------------------------------------


def weights_to_graph(net: SigmoidNet) -> ChainFactorGraph:
    """Chain factor graph whose conditionals equal the network's sigmoids.

    Top units become parentless singleton components carrying the fixed
    marginals.  A bottom unit with ``k`` parents becomes one component with
    ``k`` pairwise members; with no parents it keeps a singleton bias
    cluster ``exp(x * h)``.
    """
    space = net.space
    components = []
    potentials = {}
    for j, name in enumerate(net.top_names):
        cid = f"top_{name}"
        p = float(net.top_prob_one[j])
        components.append(ComponentSet(name, (j,), (), (cid,)))
        potentials[cid] = PotentialTable(cid, (j,), np.array([1.0 - p, p]))
    for i, name in enumerate(net.bottom_names):
        child = net.n_top + i
        k = net.n_top
        if k == 0:
            cid = f"bias_{name}"
            components.append(ComponentSet(name, (child,), (), (cid,)))
            potentials[cid] = PotentialTable(
                cid, (child,), np.exp(_SIGN * net.biases[i])
            )
            continue
        member_ids = []
        for j, pname in enumerate(net.top_names):
            cid = f"pair_{name}_{pname}"
            member_ids.append(cid)
            vals = np.exp(
                np.outer(_SIGN, net.weights[i, j] * _SIGN)
                + _SIGN[:, None] * (net.biases[i] / k)
            )
            potentials[cid] = PotentialTable(cid, (child, j), vals)
        components.append(
            ComponentSet(name, (child,), tuple(range(net.n_top)), tuple(member_ids))
        )
    return ChainFactorGraph(space, tuple(components), potentials)


def graph_to_weights(graph: ChainFactorGraph) -> SigmoidNet:
    """Read weights and biases back out of a two-layer pairwise graph.

    Requires binary +/-1 variables, single-variable chain components, and
    strictly positive member tables that are singletons or child-parent
    pairs.  Parentless components are read as top units; pure parent
    factors and constants inside pair tables are dropped (gauge), so the
    recovered network reproduces the graph's conditionals, not its tables.
    """
    space = graph.space
    for v in space.variables:
        if v.states != _STATES:
            raise NonSigmoidShape(
                f"variable {v.name!r} is not binary with states {_STATES}"
            )
    tops: list[int] = []
    bottoms: list[tuple[int, dict[int, float], float]] = []
    top_p: dict[int, float] = {}
    for comp in graph.components:
        if len(comp.chain_vars) != 1:
            raise NonSigmoidShape(f"component {comp.id!r} has a multi-variable chain")
        child = comp.chain_vars[0]
        if not comp.parent_vars:
            if len(comp.member_ids) != 1:
                raise NonSigmoidShape(
                    f"parentless component {comp.id!r} must have one singleton member"
                )
            t = graph.potentials[comp.member_ids[0]]
            if t.variables != (child,):
                raise NonSigmoidShape(f"cluster {t.cluster_id!r} is not a singleton")
            if np.any(t.values <= 0):
                raise NonSigmoidShape(f"cluster {t.cluster_id!r} is not strictly positive")
            tops.append(child)
            top_p[child] = float(t.values[1] / t.values.sum())
            continue
        w: dict[int, float] = {}
        bias = 0.0
        for cid in comp.member_ids:
            t = graph.potentials[cid]
            if np.any(t.values <= 0):
                raise NonSigmoidShape(f"cluster {cid!r} is not strictly positive")
            if set(t.variables) == {child} and len(t.variables) == 1:
                logv = np.log(t.values)
                bias += float(logv[1] - logv[0]) / 2.0
                continue
            if len(t.variables) != 2 or child not in t.variables:
                raise NonSigmoidShape(f"cluster {cid!r} is not a child-parent pair")
            parent = t.variables[0] if t.variables[1] == child else t.variables[1]
            if parent not in set(comp.parent_vars):
                raise NonSigmoidShape(
                    f"cluster {cid!r} pairs {child} with a non-parent variable"
                )
            logv = np.log(t.values)
            if t.variables == (parent, child):
                logv = logv.T  # child axis first
            w[parent] = w.get(parent, 0.0) + float(
                (logv[1, 1] + logv[0, 0] - logv[0, 1] - logv[1, 0]) / 4.0
            )
            bias += float(
                (logv[1, 1] + logv[1, 0] - logv[0, 1] - logv[0, 0]) / 4.0
            )
        bottoms.append((child, w, bias))

    top_set = set(tops)
    for child, w, _ in bottoms:
        if not set(w) <= top_set:
            raise NonSigmoidShape(
                f"unit {space.variables[child].name!r} has a non-top parent"
            )
    top_index = {v: j for j, v in enumerate(tops)}
    weights = np.zeros((len(bottoms), len(tops)))
    biases = np.zeros(len(bottoms))
    for i, (child, w, bias) in enumerate(bottoms):
        biases[i] = bias
        for parent, wij in w.items():
            weights[i, top_index[parent]] = wij
    return SigmoidNet(
        tuple(space.variables[v].name for v in tops),
        tuple(space.variables[child].name for child, _, _ in bottoms),
        weights,
        biases,
        np.array([top_p[v] for v in tops]),
    )


def pair_cluster_ids(net: SigmoidNet) -> list[str]:
    """Schedule of the learnable pairwise clusters (top marginals stay fixed)."""
    return [
        f"pair_{name}_{pname}"
        for name in net.bottom_names
        for pname in net.top_names
    ]


# ---------------------------------------------------------------------------
# Patterns and exact weight-space objective
# ---------------------------------------------------------------------------


def generate_patterns(n_top: int, n_bottom: int, count: int, seed: int) -> Dataset:
    """Complete uniform random +/-1 records, reproducible per seed.

    Draws come from the 64-bit PCG64 generator, one 0/1 integer per cell,
    row by row, so a given ``(n_top, n_bottom, count, seed)`` always yields
    the same dataset on any platform.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    states = rng.integers(0, 2, size=(count, n_top + n_bottom))
    records = tuple(
        Record(Evidence.of(observed=dict(enumerate(map(int, row)))))
        for row in states
    )
    return Dataset(records)


def _patterns(net: SigmoidNet, dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dataset as +/-1 matrices (top, bottom) plus record weights."""
    n = net.n_top + net.n_bottom
    rows = np.empty((len(dataset), n))
    wts = np.empty(len(dataset))
    for r, rec in enumerate(dataset.records):
        assigned = rec.evidence.assigned()
        if len(assigned) != n:
            raise ValueError(f"record {r} is not complete over the network variables")
        for v in range(n):
            rows[r, v] = _SIGN[assigned[v]]
        wts[r] = rec.weight
    return rows[:, : net.n_top], rows[:, net.n_top :], wts


def sbn_log_likelihood(net: SigmoidNet, dataset: Dataset) -> float:
    """Average joint log likelihood of complete patterns, in weight space.

    Includes the fixed top-layer term, so values are directly comparable
    with the enumeration-based likelihood of the transformed graph.
    """
    X, Y, wts = _patterns(net, dataset)
    T = X @ net.weights.T + net.biases
    cond = _log_sigmoid(2.0 * Y * T).sum(axis=1)
    p = net.top_prob_one
    top = np.log(np.where(X > 0, p, 1.0 - p)).sum(axis=1)
    return float(((cond + top) * wts).sum() / wts.sum())


def sbn_gradient(net: SigmoidNet, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of the average log likelihood in (weights, biases).

    Per record the residual is the observed child value minus its
    conditional mean ``tanh(h_i + sum_j w_ij x_j)``; the weight gradient
    correlates residuals with parent values and the bias gradient averages
    them.  Matches central finite differences of the enumerated likelihood.
    """
    X, Y, wts = _patterns(net, dataset)
    T = X @ net.weights.T + net.biases
    R = (Y - np.tanh(T)) * wts[:, None]
    total = wts.sum()
    return R.T @ X / total, R.sum(axis=0) / total


# ---------------------------------------------------------------------------
# Line-search gradient ascent (conjugate and steepest)
# ---------------------------------------------------------------------------


def _line_maximize(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    d: np.ndarray,
    f0: float,
    tol: float,
    max_evals: int,
) -> tuple[float, float, bool]:
    """Step length along ``d`` maximizing ``f``; monotone by construction.

    Brackets a minimum of ``-f`` from zero and refines it with Brent's
    parabolic/golden-section search at relative tolerance ``tol``, spending
    at most ``max_evals`` evaluations.  On any failure, or when the
    polished point does not improve on ``f0``, falls back to step halving;
    the flag reports that fallback.  Returns ``(t, f(x + t*d), fell_back)``.
    """
    evals = 0

    def phi(t: float) -> float:
        nonlocal evals
        evals += 1
        if evals > max_evals:
            raise LineSearchFailure(f"line search exceeded {max_evals} evaluations")
        return -f(x + t * d)

    t_best = 0.0
    f_best = f0
    failed = False
    try:
        step = 1.0 / (1.0 + float(np.linalg.norm(d)))
        xa, xb, xc, fa, fb, fc, _ = scipy.optimize.bracket(phi, xa=0.0, xb=step)
        t, fneg, _, _ = scipy.optimize.brent(
            phi, brack=(xa, xb, xc), tol=tol, full_output=True
        )
        if -fneg > f_best:
            t_best, f_best = float(t), float(-fneg)
    except (LineSearchFailure, RuntimeError, ValueError):
        failed = True

    if t_best == 0.0:
        failed = True
        t = 1.0
        for _ in range(60):
            val = f(x + t * d)
            if val > f0:
                return t, float(val), failed
            t *= 0.5
        return 0.0, f0, failed
    return t_best, f_best, failed


def line_search_ascent(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    max_cycles: int,
    conjugate: bool = True,
    line_tol: float = 1e-8,
    max_evals: int = 100,
) -> tuple[np.ndarray, list[CycleRecord], list[str], str]:
    """Generic maximizer: per cycle, one gradient plus one line minimization.

    Conjugate mode uses Polak-Ribiere direction updates (nonnegative beta)
    with a restart to steepest ascent every ``len(x0)`` cycles or whenever
    the proposed direction is not an ascent direction.
    """
    x = np.array(x0, dtype=float)
    fx = float(f(x))
    records = [CycleRecord(0, fx, 0.0)]
    notes: list[str] = []
    g_prev: np.ndarray | None = None
    d_prev: np.ndarray | None = None
    since_restart = 0
    n = x.size
    start = time.perf_counter()
    termination = "max_cycles"

    for cycle in range(1, max_cycles + 1):
        g = np.asarray(grad(x), dtype=float)
        if float(np.max(np.abs(g))) < 1e-13:
            records.append(
                CycleRecord(cycle, fx, (time.perf_counter() - start) * 1e3)
            )
            termination = "converged"
            break
        beta = 0.0
        if conjugate and g_prev is not None and since_restart < n:
            denom = float(g_prev @ g_prev)
            if denom > 0:
                beta = max(0.0, float(g @ (g - g_prev)) / denom)
        d = g + beta * d_prev if beta > 0.0 else g.copy()
        if float(d @ g) <= 0.0:
            d = g.copy()
            since_restart = 0
        t, f_new, fell_back = _line_maximize(f, x, d, fx, line_tol, max_evals)
        if fell_back:
            notes.append(f"cycle {cycle}: line search fell back to step halving")
        x = x + t * d
        fx = f_new
        records.append(CycleRecord(cycle, fx, (time.perf_counter() - start) * 1e3))
        g_prev = g
        d_prev = d
        since_restart = 0 if beta == 0.0 else since_restart + 1

    return x, records, notes, termination


def _pack(net: SigmoidNet) -> np.ndarray:
    return np.concatenate([net.weights.ravel(), net.biases])


def _unpack(net: SigmoidNet, theta: np.ndarray) -> SigmoidNet:
    nw = net.weights.size
    return net.with_params(
        theta[:nw].reshape(net.weights.shape), theta[nw:].copy()
    )


def _fit_gradient(
    net: SigmoidNet, dataset: Dataset, max_cycles: int, conjugate: bool,
    line_tol: float, max_evals: int,
) -> FitTrace:
    def f(theta: np.ndarray) -> float:
        return sbn_log_likelihood(_unpack(net, theta), dataset)

    def grad(theta: np.ndarray) -> np.ndarray:
        dw, dh = sbn_gradient(_unpack(net, theta), dataset)
        return np.concatenate([dw.ravel(), dh])

    theta, records, notes, termination = line_search_ascent(
        f, grad, _pack(net), max_cycles, conjugate=conjugate,
        line_tol=line_tol, max_evals=max_evals,
    )
    return FitTrace(tuple(records), _unpack(net, theta), termination, tuple(notes))


def fit_cg(
    net: SigmoidNet,
    dataset: Dataset,
    max_cycles: int = 200,
    line_tol: float = 1e-8,
    max_evals: int = 100,
) -> FitTrace:
    """Polak-Ribiere conjugate gradient ascent on the weight-space likelihood."""
    return _fit_gradient(net, dataset, max_cycles, True, line_tol, max_evals)


def fit_sd(
    net: SigmoidNet,
    dataset: Dataset,
    max_cycles: int = 200,
    line_tol: float = 1e-8,
    max_evals: int = 100,
) -> FitTrace:
    """Steepest ascent with line minimization on the weight-space likelihood."""
    return _fit_gradient(net, dataset, max_cycles, False, line_tol, max_evals)
