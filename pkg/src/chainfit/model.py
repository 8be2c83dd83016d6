"""Chain factor graphs over finite categorical variables.

A model is a product of locally normalized blocks.  Each block (a
:class:`ComponentSet`) owns a set of *chain* variables that are jointly
normalized given the block's *parent* variables, and the unnormalized
mass of a block is a product of nonnegative member potentials over
clusters of its variables.  Directed networks, undirected factor graphs,
and two-layer sigmoid networks are all instances.

Conventions used throughout the package:

* variables are addressed by their integer index in a :class:`VariableSpace`;
* a cluster is an ordered tuple of variable indices;
* dense tables are ``numpy`` arrays with one axis per cluster variable, in
  cluster order, so the flattened (C-order) layout has the *last* listed
  variable varying fastest;
* everything is immutable -- operations that "modify" a graph return a new
  one sharing unchanged pieces.

Probabilities are computed in linear space by exact enumeration.  Graphs
whose joint state space exceeds ``MAX_JOINT_CONFIGS`` configurations are
rejected by validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NonPositiveFactor, ValidationError, ZeroNormalizer

MAX_JOINT_CONFIGS = 1 << 22


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variable:
    """A named categorical variable; its cardinality is the number of states."""

    name: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def cardinality(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class VariableSpace:
    """Ordered collection of variables; the rest of the API uses indices into it."""

    variables: tuple[Variable, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))

    @classmethod
    def of(cls, *specs: tuple[str, Sequence[str]]) -> "VariableSpace":
        """Build a space from ``(name, states)`` pairs."""
        return cls(tuple(Variable(name, tuple(states)) for name, states in specs))

    @classmethod
    def binary(cls, *names: str, states: Sequence[str] = ("0", "1")) -> "VariableSpace":
        return cls.of(*((name, states) for name in names))

    def __len__(self) -> int:
        return len(self.variables)

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.cardinality for v in self.variables)

    @cached_property
    def _by_name(self) -> dict[str, int]:
        return {v.name: i for i, v in enumerate(self.variables)}

    def index(self, name: str) -> int:
        return self._by_name[name]

    def indices(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(self._by_name[n] for n in names)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def n_configs(self) -> int:
        return int(np.prod(self.dims, dtype=object)) if self.variables else 1


@dataclass(frozen=True, eq=False)
class PotentialTable:
    """Dense nonnegative table over a cluster of variables.

    ``values`` has one axis per entry of ``variables``, in order.  Tables
    are copied and frozen at construction.
    """

    cluster_id: str
    variables: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        arr = np.array(self.values, dtype=float)
        if arr.ndim != len(self.variables):
            raise ValueError(
                f"cluster {self.cluster_id!r}: table has {arr.ndim} axes "
                f"for {len(self.variables)} variables"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_flat(
        cls,
        cluster_id: str,
        variables: Sequence[int],
        flat: Sequence[float],
        space: VariableSpace,
    ) -> "PotentialTable":
        """Reshape a flat list (last listed variable fastest) into a table."""
        variables = tuple(variables)
        shape = tuple(space.dims[v] for v in variables)
        arr = np.asarray(flat, dtype=float)
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise ValueError(
                f"cluster {cluster_id!r}: {arr.size} values for shape {shape}"
            )
        return cls(cluster_id, variables, arr.reshape(shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PotentialTable):
            return NotImplemented
        return (
            self.cluster_id == other.cluster_id
            and self.variables == other.variables
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self) -> int:
        return hash((self.cluster_id, self.variables, self.values.tobytes()))


@dataclass(frozen=True)
class ComponentSet:
    """A locally normalized block: chain variables, parents, and member clusters."""

    id: str
    chain_vars: tuple[int, ...]
    parent_vars: tuple[int, ...] = ()
    member_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "chain_vars", tuple(self.chain_vars))
        object.__setattr__(self, "parent_vars", tuple(self.parent_vars))
        object.__setattr__(self, "member_ids", tuple(self.member_ids))

    @cached_property
    def all_vars(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.chain_vars) | set(self.parent_vars)))

    @cached_property
    def parents_sorted(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.parent_vars)))

    @cached_property
    def chain_sorted(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.chain_vars)))


@dataclass(frozen=True, eq=False)
class ChainFactorGraph:
    """A variable space, an ordered list of components, and their potentials."""

    space: VariableSpace
    components: tuple[ComponentSet, ...]
    potentials: Mapping[str, PotentialTable]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "potentials", dict(self.potentials))

    def component(self, component_id: str) -> ComponentSet:
        for comp in self.components:
            if comp.id == component_id:
                return comp
        raise KeyError(component_id)

    @cached_property
    def _owners(self) -> dict[str, ComponentSet]:
        owners: dict[str, ComponentSet] = {}
        for comp in self.components:
            for cid in comp.member_ids:
                owners.setdefault(cid, comp)
        return owners

    def owner_of(self, cluster_id: str) -> ComponentSet:
        return self._owners[cluster_id]

    def cluster_schedule(self) -> list[str]:
        """All cluster ids in declaration order (component order, members within)."""
        return [cid for comp in self.components for cid in comp.member_ids]

    def with_potential(self, cluster_id: str, table: PotentialTable) -> "ChainFactorGraph":
        """A new graph with one potential replaced; cluster identity must match."""
        old = self.potentials[cluster_id]
        if table.cluster_id != cluster_id or table.variables != old.variables:
            raise ValueError(f"replacement table does not match cluster {cluster_id!r}")
        pots = dict(self.potentials)
        pots[cluster_id] = table
        return ChainFactorGraph(self.space, self.components, pots)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChainFactorGraph):
            return NotImplemented
        return (
            self.space == other.space
            and self.components == other.components
            and dict(self.potentials) == dict(other.potentials)
        )


# ---------------------------------------------------------------------------
# Dense-table plumbing shared across modules
# ---------------------------------------------------------------------------


def _expand_to(
    values: np.ndarray,
    src: Sequence[int],
    dst: Sequence[int],
    dims: Sequence[int],
) -> np.ndarray:
    """Rearrange a table over ``src`` variables so it broadcasts over ``dst`` axes."""
    src = tuple(src)
    dst = tuple(dst)
    if not set(src) <= set(dst):
        raise ValueError(f"cannot expand {src} onto {dst}")
    order = [v for v in dst if v in src]
    perm = [src.index(v) for v in order]
    arr = np.transpose(values, perm) if perm != list(range(len(src))) else values
    pos = {v: i for i, v in enumerate(order)}
    shape = tuple(arr.shape[pos[v]] if v in pos else 1 for v in dst)
    return arr.reshape(shape)


def _project(values: np.ndarray, src: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Sum out the ``src`` axes not in ``keep``; result axes follow ``keep`` order."""
    src = tuple(src)
    keep = tuple(keep)
    if not set(keep) <= set(src):
        raise ValueError(f"cannot project {src} onto {keep}")
    drop = tuple(i for i, v in enumerate(src) if v not in keep)
    out = values.sum(axis=drop) if drop else values
    rem = [v for v in src if v in keep]
    perm = [rem.index(v) for v in keep]
    if perm != list(range(len(rem))):
        out = np.transpose(out, perm)
    return out


def _member_product(
    graph: ChainFactorGraph, comp: ComponentSet, skip: str | None = None
) -> np.ndarray:
    """Product of member potentials over the component's variables (sorted order)."""
    dims = graph.space.dims
    avars = comp.all_vars
    ids = [cid for cid in comp.member_ids if cid != skip]
    if len(ids) == 1:
        t = graph.potentials[ids[0]]
        if t.variables == avars:
            return t.values  # read-only; callers only read or derive new arrays
    out = np.ones(tuple(dims[v] for v in avars))
    for cid in ids:
        t = graph.potentials[cid]
        out *= _expand_to(t.values, t.variables, avars, dims)
    return out


def _normalizer_table(
    graph: ChainFactorGraph, comp: ComponentSet, member_product: np.ndarray | None = None
) -> np.ndarray:
    """Normalizer of a component as a table over its sorted parent variables."""
    prod = _member_product(graph, comp) if member_product is None else member_product
    return _project(prod, comp.all_vars, comp.parents_sorted)


def _conditional_table(graph: ChainFactorGraph, comp: ComponentSet) -> np.ndarray:
    """Conditional block table over the component's variables.

    Parent slices whose normalizer is zero get probability zero; point
    queries on such slices raise instead (see :func:`component_conditional`).
    """
    prod = _member_product(graph, comp)
    z = _project(prod, comp.all_vars, comp.parents_sorted)
    ze = _expand_to(z, comp.parents_sorted, comp.all_vars, graph.space.dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ze > 0, prod / np.where(ze > 0, ze, 1.0), 0.0)


# ---------------------------------------------------------------------------
# Probability operations
# ---------------------------------------------------------------------------


def component_normalizer(
    graph: ChainFactorGraph, component_id: str, parent_config: Mapping[int, int]
) -> float:
    """Sum of the component's member-potential product over its chain variables.

    ``parent_config`` must assign every parent variable of the component.
    """
    comp = graph.component(component_id)
    z = _normalizer_table(graph, comp)
    try:
        idx = tuple(parent_config[v] for v in comp.parents_sorted)
    except KeyError as e:
        raise ValueError(f"parent configuration missing variable {e.args[0]}") from None
    val = float(z[idx])
    if val <= 0.0:
        raise ZeroNormalizer(
            f"component {component_id!r} has zero normalizer at parents {idx}"
        )
    return val


def component_conditional(
    graph: ChainFactorGraph, component_id: str, config: Mapping[int, int]
) -> float:
    """Probability of the component's chain variables given its parents.

    ``config`` must assign all of the component's variables.
    """
    comp = graph.component(component_id)
    z = component_normalizer(graph, component_id, config)
    num = 1.0
    for cid in comp.member_ids:
        t = graph.potentials[cid]
        num *= float(t.values[tuple(config[v] for v in t.variables)])
    return num / z


def joint_probability(graph: ChainFactorGraph, config: Mapping[int, int]) -> float:
    """Probability of one full configuration: product of component conditionals."""
    p = 1.0
    for comp in graph.components:
        p *= component_conditional(graph, comp.id, config)
    return p


def joint_table(graph: ChainFactorGraph) -> np.ndarray:
    """Dense joint distribution over the whole space, one axis per variable."""
    if graph.space.n_configs() > MAX_JOINT_CONFIGS:
        raise ValueError(
            f"joint state space exceeds {MAX_JOINT_CONFIGS} configurations"
        )
    dims = graph.space.dims
    everything = tuple(range(len(dims)))
    out = np.ones(dims)
    for comp in graph.components:
        cond = _conditional_table(graph, comp)
        out = out * _expand_to(cond, comp.all_vars, everything, dims)
    return out


def rescale_potential(
    graph: ChainFactorGraph, cluster_id: str, factor: float
) -> ChainFactorGraph:
    """Multiply one potential entrywise by a positive constant.

    The represented distribution is unchanged: the component normalizer
    absorbs the constant.
    """
    if not (math.isfinite(factor) and factor > 0.0):
        raise NonPositiveFactor(f"rescale factor must be positive and finite, got {factor}")
    t = graph.potentials[cluster_id]
    return graph.with_potential(
        cluster_id, PotentialTable(t.cluster_id, t.variables, t.values * factor)
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    severity: str = "error"  # "error" or "warning"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def errors(self) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity == "error")

    @property
    def warnings(self) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity == "warning")

    @property
    def ok(self) -> bool:
        """True when no error-severity violations were found (warnings allowed)."""
        return not self.errors

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def validate_graph(graph: ChainFactorGraph) -> ValidationReport:
    """Check every structural invariant; violations are returned, not raised.

    Cardinality-1 variables are legal but reported as warnings.  A graph is
    usable by the probability and fitting operations iff ``report.ok``.
    """
    out: list[Violation] = []
    add = out.append
    space = graph.space
    n = len(space)

    seen_names: set[str] = set()
    for i, v in enumerate(space.variables):
        if v.name in seen_names:
            add(Violation("duplicate-variable", f"variable name {v.name!r} repeats"))
        seen_names.add(v.name)
        if v.cardinality == 0:
            add(Violation("empty-variable", f"variable {v.name!r} has no states"))
        elif v.cardinality == 1:
            add(
                Violation(
                    "degenerate-variable",
                    f"variable {v.name!r} has a single state",
                    severity="warning",
                )
            )

    if space.n_configs() > MAX_JOINT_CONFIGS:
        add(
            Violation(
                "state-space-too-large",
                f"{space.n_configs()} joint configurations exceed the "
                f"{MAX_JOINT_CONFIGS} enumeration cap",
            )
        )

    def check_cluster(what: str, vars_: tuple[int, ...], allow_empty: bool = False):
        if not vars_ and not allow_empty:
            add(Violation("empty-cluster", f"{what} is empty"))
        if len(set(vars_)) != len(vars_):
            add(Violation("duplicate-in-cluster", f"{what} repeats a variable"))
        for v in vars_:
            if not (0 <= v < n):
                add(Violation("unknown-variable", f"{what} references variable {v}"))

    covered: set[int] = set()
    member_owner: dict[str, str] = {}
    for comp in graph.components:
        check_cluster(f"chain of component {comp.id!r}", comp.chain_vars)
        check_cluster(f"parents of component {comp.id!r}", comp.parent_vars, allow_empty=True)
        chain = set(comp.chain_vars)
        parents = set(comp.parent_vars)
        if chain & parents:
            add(
                Violation(
                    "chain-parent-overlap",
                    f"component {comp.id!r}: chain and parent sets intersect",
                )
            )
        if chain & covered:
            add(
                Violation(
                    "components-not-disjoint",
                    f"component {comp.id!r}: chain variables already owned by an "
                    "earlier component",
                )
            )
        covered |= chain

        union: set[int] = set()
        for cid in comp.member_ids:
            if cid in member_owner:
                add(
                    Violation(
                        "shared-member-cluster",
                        f"cluster {cid!r} is a member of both {member_owner[cid]!r} "
                        f"and {comp.id!r}",
                    )
                )
            member_owner[cid] = comp.id
            t = graph.potentials.get(cid)
            if t is None:
                add(Violation("missing-potential", f"no table for member cluster {cid!r}"))
                continue
            check_cluster(f"member cluster {cid!r}", t.variables)
            if not set(t.variables) <= (chain | parents):
                add(
                    Violation(
                        "member-outside-component",
                        f"cluster {cid!r} uses variables outside component {comp.id!r}",
                    )
                )
            union |= set(t.variables)
            expected = tuple(space.dims[v] for v in t.variables if 0 <= v < n)
            if len(expected) == len(t.variables) and t.values.shape != expected:
                add(
                    Violation(
                        "table-shape-mismatch",
                        f"cluster {cid!r}: table shape {t.values.shape} does not "
                        f"match variable cardinalities {expected}",
                    )
                )
            if np.any(t.values < 0):
                add(Violation("negative-potential", f"cluster {cid!r} has negative entries"))
            if not np.any(t.values > 0):
                add(Violation("all-zero-potential", f"cluster {cid!r} has no positive entry"))
        if union != (chain | parents):
            add(
                Violation(
                    "members-do-not-cover",
                    f"component {comp.id!r}: member clusters do not cover exactly "
                    "its variables",
                )
            )

    if covered != set(range(n)):
        missing = sorted(set(range(n)) - covered)
        if missing:
            add(
                Violation(
                    "variables-uncovered",
                    f"variables {missing} belong to no chain component",
                )
            )

    for cid in graph.potentials:
        if cid not in member_owner:
            add(Violation("orphan-potential", f"table {cid!r} is not a member of any component"))

    # The stored order must already witness the parent-containment rule ...
    seen_chain: set[int] = set()
    ordered = True
    for comp in graph.components:
        if not set(comp.parent_vars) <= seen_chain:
            ordered = False
            add(
                Violation(
                    "order-violation",
                    f"component {comp.id!r}: parents not contained in preceding "
                    "chain components",
                )
            )
        seen_chain |= set(comp.chain_vars)

    # ... and if it does not, report whether any reordering could.
    if not ordered:
        placed: set[int] = set()
        remaining = list(graph.components)
        progress = True
        while remaining and progress:
            progress = False
            for comp in list(remaining):
                if set(comp.parent_vars) <= placed:
                    placed |= set(comp.chain_vars)
                    remaining.remove(comp)
                    progress = True
        if remaining:
            add(
                Violation(
                    "no-topological-order",
                    "no component ordering satisfies parent containment "
                    f"(stuck at {[c.id for c in remaining]})",
                )
            )

    return ValidationReport(tuple(out))


def require_valid(graph: ChainFactorGraph) -> None:
    """Raise :class:`ValidationError` when a graph has error-severity violations."""
    report = validate_graph(graph)
    if not report.ok:
        details = "; ".join(v.message for v in report.errors)
        raise ValidationError(f"invalid graph: {details}", report=report)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def bayes_net(
    space: VariableSpace,
    parents: Mapping[str, Sequence[str]],
    cpts: Mapping[str, np.ndarray] | None = None,
) -> ChainFactorGraph:
    """Directed network: one single-member component per variable.

    ``parents`` maps every variable name to its parent names.  A node's
    table has axes ``(*parents, node)``; the default is all-ones, i.e. a
    uniform conditional.  Components are emitted in a topological order
    (stable with respect to the order of ``parents``).
    """
    names = list(parents)
    if set(names) != set(space.names):
        raise ValueError("parents mapping must cover exactly the space variables")

    order: list[str] = []
    placed: set[str] = set()
    while len(order) < len(names):
        progress = False
        for name in names:
            if name in placed:
                continue
            if set(parents[name]) <= placed:
                order.append(name)
                placed.add(name)
                progress = True
        if not progress:
            raise ValueError("parent mapping is cyclic")

    components = []
    potentials = {}
    cpts = cpts or {}
    for name in order:
        child = space.index(name)
        pa = space.indices(parents[name])
        cid = f"cpt_{name}"
        variables = (*pa, child)
        shape = tuple(space.dims[v] for v in variables)
        values = np.asarray(cpts.get(name, np.ones(shape)), dtype=float)
        components.append(ComponentSet(name, (child,), pa, (cid,)))
        potentials[cid] = PotentialTable(cid, variables, values)
    return ChainFactorGraph(space, tuple(components), potentials)


def undirected_model(
    space: VariableSpace,
    clusters: Sequence[Sequence[str]],
    tables: Sequence[np.ndarray] | None = None,
    component_id: str = "all",
) -> ChainFactorGraph:
    """Single parentless component covering every variable.

    ``clusters`` lists the member clusters by variable name; they must
    jointly cover the space.  Default tables are all-ones.
    """
    members = []
    potentials = {}
    for k, names in enumerate(clusters):
        cid = f"phi{k}_" + "_".join(names)
        variables = space.indices(names)
        shape = tuple(space.dims[v] for v in variables)
        values = np.ones(shape) if tables is None else np.asarray(tables[k], dtype=float)
        members.append(cid)
        potentials[cid] = PotentialTable(cid, variables, values)
    comp = ComponentSet(component_id, tuple(range(len(space))), (), tuple(members))
    return ChainFactorGraph(space, (comp,), potentials)
