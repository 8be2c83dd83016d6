"""Model, dataset, and trace file formats, plus the bundled heart-disease data.

Model files are JSON (UTF-8, LF line endings)::

    {
      "schema": "chain-factor-graph/1",
      "variables":  [{"name": ..., "states": [...]}, ...],      # ordered
      "components": [{"id": ..., "chain": [names...],
                      "parents": [names...], "members": [ids...]}, ...],
      "potentials": [{"cluster_id": ..., "variables": [names...],
                      "values": [flat floats...]}, ...]
    }

Potential values are flattened with the last listed variable varying
fastest.  Numbers are rendered with shortest round-trip decimals, so a
write/parse cycle is lossless and files are byte-identical across
platforms.  Parsing validates the graph and refuses files with
error-severity violations.

Dataset files are comma-separated text.  The header names variables of
the model space (any subset, any order) plus an optional ``__weight``
column.  A cell is ``<state>`` for an observed value, ``<state>!`` for a
clamped value, or ``?`` for a missing one; states are referenced by
label.

Trace files are comma-separated with the fixed header
``cycle,objective,wall_ms,optimizer,seed``, one row per recorded cycle.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

import numpy as np

from .errors import (
    NonPositiveWeight,
    SchemaError,
    UnknownState,
    UnknownVariable,
    ValidationError,
)
from .inference import Dataset, Evidence, Record
from .ipf import FitTrace
from .model import (
    ChainFactorGraph,
    ComponentSet,
    PotentialTable,
    VariableSpace,
    bayes_net,
    validate_graph,
)

MODEL_SCHEMA = "chain-factor-graph/1"
TRACE_HEADER = ("cycle", "objective", "wall_ms", "optimizer", "seed")
WEIGHT_COLUMN = "__weight"


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def write_model(graph: ChainFactorGraph) -> str:
    space = graph.space
    doc = {
        "schema": MODEL_SCHEMA,
        "variables": [
            {"name": v.name, "states": list(v.states)} for v in space.variables
        ],
        "components": [
            {
                "id": comp.id,
                "chain": [space.variables[v].name for v in comp.chain_vars],
                "parents": [space.variables[v].name for v in comp.parent_vars],
                "members": list(comp.member_ids),
            }
            for comp in graph.components
        ],
        "potentials": [
            {
                "cluster_id": cid,
                "variables": [space.variables[v].name for v in t.variables],
                "values": [float(x) for x in t.flat],
            }
            for cid, t in ((cid, graph.potentials[cid]) for cid in graph.cluster_schedule())
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _expect(doc: dict, field: str, kind, where: str):
    if field not in doc:
        raise SchemaError(f"missing {field!r}", field=where)
    value = doc[field]
    if not isinstance(value, kind):
        raise SchemaError(
            f"{field!r} must be {kind.__name__}, got {type(value).__name__}",
            field=where,
        )
    return value


def parse_model(text: str) -> ChainFactorGraph:
    """Parse and validate a model file; raises on schema or graph problems."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"not valid JSON: {e.msg}", line=e.lineno) from None
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    schema = _expect(doc, "schema", str, "schema")
    if schema != MODEL_SCHEMA:
        raise SchemaError(f"unsupported schema {schema!r}", field="schema")

    variables = []
    for k, entry in enumerate(_expect(doc, "variables", list, "variables")):
        name = _expect(entry, "name", str, f"variables[{k}]")
        states = _expect(entry, "states", list, f"variables[{k}]")
        variables.append((name, tuple(str(s) for s in states)))
    space = VariableSpace.of(*variables)
    known = set(space.names)

    def resolve(names: Sequence[str], where: str) -> tuple[int, ...]:
        for n in names:
            if n not in known:
                raise SchemaError(f"unknown variable {n!r}", field=where)
        return space.indices(names)

    components = []
    for k, entry in enumerate(_expect(doc, "components", list, "components")):
        where = f"components[{k}]"
        comp_id = _expect(entry, "id", str, where)
        chain = resolve(_expect(entry, "chain", list, where), where)
        parents = resolve(_expect(entry, "parents", list, where), where)
        members = tuple(_expect(entry, "members", list, where))
        components.append(ComponentSet(comp_id, chain, parents, members))

    potentials = {}
    for k, entry in enumerate(_expect(doc, "potentials", list, "potentials")):
        where = f"potentials[{k}]"
        cid = _expect(entry, "cluster_id", str, where)
        vars_ = resolve(_expect(entry, "variables", list, where), where)
        values = _expect(entry, "values", list, where)
        try:
            potentials[cid] = PotentialTable.from_flat(cid, vars_, values, space)
        except ValueError as e:
            raise SchemaError(str(e), field=where) from None

    graph = ChainFactorGraph(space, tuple(components), potentials)
    report = validate_graph(graph)
    if not report.ok:
        details = "; ".join(v.message for v in report.errors)
        raise ValidationError(f"model file fails validation: {details}", report=report)
    return graph


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def parse_dataset(text: str, space: VariableSpace) -> Dataset:
    """Parse the observed/clamped/missing cell grammar against a space."""
    reader = csv.reader(io.StringIO(text), skipinitialspace=True)
    rows = [(i + 1, row) for i, row in enumerate(reader) if row and any(c.strip() for c in row)]
    if not rows:
        raise SchemaError("dataset has no header row", line=1)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    weight_col = None
    columns: list[int] = []
    seen: set[str] = set()
    for pos, name in enumerate(header):
        if name == WEIGHT_COLUMN:
            if weight_col is not None:
                raise SchemaError("duplicate weight column", line=header_line)
            weight_col = pos
            continue
        if name in seen:
            raise SchemaError(f"duplicate column {name!r}", line=header_line)
        seen.add(name)
        try:
            columns.append(space.index(name))
        except KeyError:
            raise UnknownVariable(
                f"column {name!r} is not a variable of the model", line=header_line
            ) from None

    records = []
    for line, row in rows[1:]:
        expected = len(header)
        if len(row) != expected:
            raise SchemaError(
                f"row has {len(row)} cells, header has {expected}", line=line
            )
        observed: dict[int, int] = {}
        clamped: dict[int, int] = {}
        weight = 1.0
        cell_iter = iter(range(len(row)))
        var_pos = 0
        for pos in cell_iter:
            cell = row[pos].strip()
            if pos == weight_col:
                try:
                    weight = float(cell)
                except ValueError:
                    raise SchemaError(f"bad weight {cell!r}", line=line) from None
                if not weight > 0:
                    raise NonPositiveWeight(f"weight {weight} is not positive", line=line)
                continue
            var = columns[var_pos]
            var_pos += 1
            if cell == "?":
                continue
            clamp = cell.endswith("!")
            label = cell[:-1] if clamp else cell
            states = space.variables[var].states
            if label not in states:
                raise UnknownState(
                    f"state {label!r} is not a state of {space.variables[var].name!r}",
                    line=line,
                )
            target = clamped if clamp else observed
            target[var] = states.index(label)
        records.append(Record(Evidence.of(observed=observed, clamped=clamped), weight))
    return Dataset(tuple(records))


def write_dataset(dataset: Dataset, space: VariableSpace) -> str:
    """Serialize records in the documented cell grammar (all variables listed)."""
    from .inference import Mark

    with_weights = any(r.weight != 1.0 for r in dataset.records)
    header = list(space.names) + ([WEIGHT_COLUMN] if with_weights else [])
    lines = [",".join(header)]
    for rec in dataset.records:
        marks = {v: (s, m) for v, s, m in rec.evidence.items}
        cells = []
        for v in range(len(space)):
            if v not in marks:
                cells.append("?")
                continue
            s, m = marks[v]
            label = space.variables[v].states[s]
            cells.append(label + ("!" if m is Mark.CLAMPED else ""))
        if with_weights:
            cells.append(repr(rec.weight))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------


def write_trace_csv(trace: FitTrace, optimizer: str = "", seed: int | None = None) -> str:
    """Fixed-header per-cycle CSV; objectives keep full round-trip precision."""
    lines = [",".join(TRACE_HEADER)]
    seed_text = "" if seed is None else str(seed)
    for r in trace.records:
        lines.append(f"{r.cycle},{r.objective!r},{r.wall_ms!r},{optimizer},{seed_text}")
    return "\n".join(lines) + "\n"


def read_trace_csv(text: str) -> list[dict]:
    """Rows of an emitted trace file, numeric fields parsed back."""
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise SchemaError(f"trace header must be {','.join(TRACE_HEADER)}", line=1)
    out = []
    for row in rows[1:]:
        if len(row) != len(TRACE_HEADER):
            continue
        out.append(
            {
                "cycle": int(row[0]),
                "objective": float(row[1]),
                "wall_ms": float(row[2]),
                "optimizer": row[3],
                "seed": int(row[4]) if row[4] else None,
            }
        )
    return out


# ---------------------------------------------------------------------------
# Bundled heart-disease model and conditional data
# ---------------------------------------------------------------------------

AGE_STATES = ("30-39", "40-49", "50-59", "60-69")
SEX_STATES = ("m", "f")
DISEASE_STATES = ("true", "false")
CHEST_PAIN_STATES = ("asympt", "non-AP", "atyp-AP", "typ-AP")

# P(disease=true | sex, age, chest pain), one row per (sex, age), one column
# per chest-pain state, as printed in the source publication.
HEART_TABLE: dict[tuple[str, str], tuple[float, float, float, float]] = {
    ("m", "30-39"): (0.019, 0.052, 0.218, 0.677),
    ("m", "40-49"): (0.055, 0.141, 0.461, 0.873),
    ("m", "50-59"): (0.097, 0.215, 0.589, 0.92),
    ("m", "60-69"): (0.123, 0.281, 0.671, 0.943),
    ("f", "30-39"): (0.003, 0.008, 0.042, 0.258),
    ("f", "40-49"): (0.01, 0.028, 0.133, 0.552),
    ("f", "50-59"): (0.032, 0.084, 0.324, 0.794),
    ("f", "60-69"): (0.075, 0.186, 0.544, 0.906),
}

HEART_CONTEXT_VARS = ("s", "a", "c")
HEART_RESPONSE_VARS = ("d",)


def heart_disease_space() -> VariableSpace:
    return VariableSpace.of(
        ("a", AGE_STATES),
        ("s", SEX_STATES),
        ("d", DISEASE_STATES),
        ("c", CHEST_PAIN_STATES),
    )


def heart_disease_model() -> ChainFactorGraph:
    """Four-node directed model: age and sex prior, disease given both,
    chest pain given disease.  Uniform initial tables."""
    space = heart_disease_space()
    return bayes_net(
        space, {"a": (), "s": (), "d": ("a", "s"), "c": ("d",)}
    )


def table1_dataset() -> tuple[Dataset, np.ndarray]:
    """The published conditional frequencies as a weighted conditional dataset.

    One record per (sex, age, chest pain, disease) cell: sex, age, and
    chest pain are clamped, disease is observed, and the weight is the
    conditional probability of that disease value in its context, so the
    thirty-two contexts enter with equal total weight.  Also returns the
    target table ``Q`` with axes (sex, age, chest pain, disease) for
    divergence evaluation.
    """
    space = heart_disease_space()
    ia, is_, id_, ic = (space.index(n) for n in ("a", "s", "d", "c"))
    q = np.zeros((len(SEX_STATES), len(AGE_STATES), len(CHEST_PAIN_STATES), 2))
    records = []
    for s_i, sex in enumerate(SEX_STATES):
        for a_i, age in enumerate(AGE_STATES):
            row = HEART_TABLE[(sex, age)]
            for c_i, p_true in enumerate(row):
                q[s_i, a_i, c_i, 0] = p_true
                q[s_i, a_i, c_i, 1] = 1.0 - p_true
                for d_i in (0, 1):
                    records.append(
                        Record(
                            Evidence.of(
                                observed={id_: d_i},
                                clamped={is_: s_i, ia: a_i, ic: c_i},
                            ),
                            weight=float(q[s_i, a_i, c_i, d_i]),
                        )
                    )
    return Dataset(tuple(records)), q
