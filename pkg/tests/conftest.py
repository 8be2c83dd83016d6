"""Shared builders and independent oracles for the test suite.

The oracle functions recompute probabilities with plain Python loops over
configurations, touching only the raw tables, so they share no code with
the package's dense-table algebra.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from chainfit import (
    ChainFactorGraph,
    ComponentSet,
    Dataset,
    Evidence,
    PotentialTable,
    Record,
    VariableSpace,
    bayes_net,
    undirected_model,
)


# ---------------------------------------------------------------------------
# Independent enumeration oracles
# ---------------------------------------------------------------------------


def oracle_joint(graph: ChainFactorGraph) -> np.ndarray:
    """Dense joint table by brute-force loops (no shared table algebra)."""
    dims = graph.space.dims
    n = len(dims)
    out = np.zeros(dims)
    for cfg in itertools.product(*(range(d) for d in dims)):
        assign = dict(enumerate(cfg))
        p = 1.0
        for comp in graph.components:
            num = 1.0
            for cid in comp.member_ids:
                t = graph.potentials[cid]
                num *= t.values[tuple(assign[v] for v in t.variables)]
            z = 0.0
            chain = list(comp.chain_vars)
            for sub in itertools.product(*(range(dims[v]) for v in chain)):
                a2 = dict(assign)
                a2.update(zip(chain, sub))
                term = 1.0
                for cid in comp.member_ids:
                    t = graph.potentials[cid]
                    term *= t.values[tuple(a2[v] for v in t.variables)]
                z += term
            p *= num / z if z > 0 else 0.0
        out[cfg] = p
    return out


def oracle_marginal(joint: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    """Marginal of a dense joint by explicit accumulation."""
    dims = joint.shape
    out = np.zeros(tuple(dims[v] for v in keep))
    for cfg in itertools.product(*(range(d) for d in dims)):
        out[tuple(cfg[v] for v in keep)] += joint[cfg]
    return out


def oracle_condition(joint: np.ndarray, assigned: dict[int, int]) -> np.ndarray:
    """Joint restricted to evidence and renormalized, zero elsewhere."""
    out = np.zeros_like(joint)
    mass = 0.0
    for cfg in itertools.product(*(range(d) for d in joint.shape)):
        if all(cfg[v] == s for v, s in assigned.items()):
            out[cfg] = joint[cfg]
            mass += joint[cfg]
    if mass <= 0:
        raise ZeroDivisionError("evidence has zero mass")
    return out / mass


# ---------------------------------------------------------------------------
# Random model builders
# ---------------------------------------------------------------------------


def random_space(rng: np.random.Generator, n_vars: int, max_card: int = 3) -> VariableSpace:
    cards = rng.integers(2, max_card + 1, size=n_vars)
    return VariableSpace.of(
        *((f"v{i}", tuple(str(s) for s in range(c))) for i, c in enumerate(cards))
    )


def random_bayes_net(
    rng: np.random.Generator, n_vars: int = 4, max_card: int = 3, max_parents: int = 2
) -> ChainFactorGraph:
    space = random_space(rng, n_vars, max_card)
    parents: dict[str, tuple[str, ...]] = {}
    for i in range(n_vars):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        pa = rng.choice(i, size=k, replace=False) if k else []
        parents[f"v{i}"] = tuple(f"v{int(j)}" for j in pa)
    cpts = {}
    for name, pa in parents.items():
        shape = tuple(space.dims[space.index(p)] for p in pa) + (
            space.dims[space.index(name)],
        )
        cpts[name] = rng.uniform(0.2, 2.0, size=shape)
    return bayes_net(space, parents, cpts)


def random_undirected(
    rng: np.random.Generator, n_vars: int = 4, max_card: int = 3
) -> ChainFactorGraph:
    space = random_space(rng, n_vars, max_card)
    names = list(space.names)
    clusters: list[tuple[str, ...]] = []
    covered: set[str] = set()
    while covered != set(names) or len(clusters) < 2:
        size = int(rng.integers(1, min(3, n_vars) + 1))
        pick = tuple(str(x) for x in rng.choice(names, size=size, replace=False))
        clusters.append(pick)
        covered |= set(pick)
        if len(clusters) > 8:
            break
    tables = [
        rng.uniform(0.2, 2.0, size=tuple(space.dims[space.index(n)] for n in c))
        for c in clusters
    ]
    return undirected_model(space, clusters, tables)


def random_chain_graph(rng: np.random.Generator, n_vars: int = 4) -> ChainFactorGraph:
    """Mixed model: blocks of variables with parents in earlier blocks and
    random covering member clusters (some multi-member)."""
    space = random_space(rng, n_vars, 2)
    order = list(range(n_vars))
    blocks: list[list[int]] = []
    i = 0
    while i < n_vars:
        size = int(rng.integers(1, min(2, n_vars - i) + 1))
        blocks.append(order[i : i + size])
        i += size
    components = []
    potentials = {}
    earlier: list[int] = []
    for b, chain in enumerate(blocks):
        n_par = int(rng.integers(0, min(len(earlier), 2) + 1))
        pa = sorted(int(x) for x in rng.choice(earlier, size=n_par, replace=False)) if n_par else []
        avars = sorted(set(chain) | set(pa))
        members = []
        # one cluster covering everything, sometimes plus a smaller one
        extra = [avars[:1]] if len(avars) > 1 and rng.random() < 0.5 else []
        for k, cvars in enumerate([avars] + extra):
            cid = f"c{b}_{k}"
            members.append(cid)
            shape = tuple(space.dims[v] for v in cvars)
            potentials[cid] = PotentialTable(cid, tuple(cvars), rng.uniform(0.3, 1.8, shape))
        components.append(ComponentSet(f"B{b}", tuple(chain), tuple(pa), tuple(members)))
        earlier.extend(chain)
    return ChainFactorGraph(space, tuple(components), potentials)


# ---------------------------------------------------------------------------
# Random datasets
# ---------------------------------------------------------------------------


def random_complete_rows(
    rng: np.random.Generator, space: VariableSpace, count: int
) -> list[tuple[int, ...]]:
    return [tuple(int(rng.integers(0, d)) for d in space.dims) for _ in range(count)]


def random_complete_dataset(
    rng: np.random.Generator, space: VariableSpace, count: int
) -> Dataset:
    rows = random_complete_rows(rng, space, count)
    return Dataset(
        tuple(Record(Evidence.of(observed=dict(enumerate(r)))) for r in rows)
    )


def random_partial_dataset(
    rng: np.random.Generator, space: VariableSpace, count: int, p_observe: float = 0.7
) -> Dataset:
    records = []
    for _ in range(count):
        observed = {
            v: int(rng.integers(0, d))
            for v, d in enumerate(space.dims)
            if rng.random() < p_observe
        }
        records.append(Record(Evidence.of(observed=observed)))
    return Dataset(tuple(records))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
