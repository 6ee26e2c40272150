"""Ground truth: execute a query exactly on the full data.

Counts are obtained by multiplicity propagation along the query's join
tree — each relation carries one weight per row, messages flow over the
PK/FK hash joins — so no join tuples are ever materialized.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .catalog import NUMERIC, Catalog, RelationData
from .query import EQ, IN, RANGE, Predicate, Query

DEFAULT_ROW_CAP = 50_000_000


class OracleError(RuntimeError):
    pass


class OracleResourceError(OracleError):
    pass


@dataclass(frozen=True)
class Truth:
    qualifying: float
    join_rows: float
    selectivity: float
    elapsed: float = 0.0


def predicate_mask(rel: RelationData, pred: Predicate) -> np.ndarray:
    """Per-row boolean truth of one predicate; nulls never match."""
    if pred.relation != rel.name:
        raise OracleError(f"predicate targets {pred.relation}, not {rel.name}")
    col = rel.column(pred.attribute)
    if col.kind == NUMERIC:
        vals = rel.numeric_values.get(pred.attribute)
        if vals is None:
            raise OracleError(f"no raw values retained for {rel.name}.{pred.attribute}")
        with np.errstate(invalid="ignore"):
            if pred.op == EQ:
                return vals == float(pred.value)
            if pred.op == RANGE:
                return (vals >= pred.lo) & (vals <= pred.hi)
            if pred.op == IN:
                targets = [float(v) for v in pred.values]
                return np.isin(vals, targets)
    else:
        lookup = {v: i for i, v in enumerate(col.dictionary)}
        if pred.op == EQ:
            code = lookup.get(str(pred.value))
            return col.codes == code if code is not None else np.zeros(rel.row_count, bool)
        if pred.op == IN:
            codes = [lookup[v] for v in pred.values if v in lookup]
            return np.isin(col.codes, codes)
        if pred.op == RANGE:
            raise OracleError(f"range predicate on categorical {rel.name}.{pred.attribute}")
    raise OracleError(f"unknown predicate op {pred.op!r}")


def _match_positions(parent: RelationData, child: RelationData, fk: str) -> np.ndarray:
    index = child.pk_index
    values = parent.key_values[fk]
    return np.fromiter(
        (index.get(v, -1) if v != "" else -1 for v in values),
        dtype=np.int64,
        count=len(values),
    )


def _propagate(
    catalog: Catalog,
    query: Query,
    edges: list[tuple[str, str, str]],
    base: dict[str, np.ndarray],
) -> float:
    """Sum over join rows of the product of per-relation row weights."""
    adjacency: dict[str, list[tuple[str, str, str]]] = {r: [] for r in query.relations}
    for parent, fk, child in edges:
        adjacency[parent].append((parent, fk, child))
        adjacency[child].append((parent, fk, child))

    def weight(rel: str, via: tuple[str, str, str] | None) -> np.ndarray:
        w = base[rel].astype(np.float64).copy()
        data = catalog.data(rel)
        for edge in adjacency[rel]:
            if edge == via:
                continue
            parent, fk, child = edge
            if rel == parent:
                cw = weight(child, edge)
                pos = _match_positions(data, catalog.data(child), fk)
                matched = pos >= 0
                gathered = np.zeros(data.row_count)
                gathered[matched] = cw[pos[matched]]
                w *= gathered
            else:
                pdata = catalog.data(parent)
                pw = weight(parent, edge)
                pos = _match_positions(pdata, data, fk)
                matched = pos >= 0
                agg = np.zeros(data.row_count)
                np.add.at(agg, pos[matched], pw[matched])
                w *= agg
        return w

    return float(weight(query.relations[0], None).sum())


def exact(catalog: Catalog, query: Query, max_rows: int = DEFAULT_ROW_CAP) -> Truth:
    """True join size and qualifying count under inner-join semantics."""
    start = time.perf_counter()
    total_rows = sum(catalog.data(r).row_count for r in query.relations)
    if total_rows > max_rows:
        raise OracleResourceError(
            f"query touches {total_rows} rows, above the cap of {max_rows}"
        )
    edges = []
    for parent, fk in query.joins:
        child = next(
            f.references
            for f in catalog.schema.relation(parent).foreign_keys
            if f.attribute == fk
        )
        edges.append((parent, fk, child))
    ones = {r: np.ones(catalog.data(r).row_count) for r in query.relations}
    join_rows = _propagate(catalog, query, edges, ones)
    filtered = {r: v.copy() for r, v in ones.items()}
    for pred in query.predicates:
        filtered[pred.relation] *= predicate_mask(catalog.data(pred.relation), pred)
    qualifying = _propagate(catalog, query, edges, filtered)
    selectivity = qualifying / join_rows if join_rows > 0 else 0.0
    return Truth(
        qualifying=qualifying,
        join_rows=join_rows,
        selectivity=selectivity,
        elapsed=time.perf_counter() - start,
    )
