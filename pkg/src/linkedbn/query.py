"""Query representation: joined relations plus conjunctive predicates.

A query names a set of relations, the schema FK edges joining them (the
join graph must be a connected tree), and a conjunction of eq / in / range
predicates over modeled attributes.  Queries parse from a small JSON format
or from a restricted SQL listing.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .catalog import NUMERIC, Catalog, EncodedColumn, Schema


class QueryError(ValueError):
    pass


EQ, IN, RANGE = "eq", "in", "range"


@dataclass(frozen=True)
class Predicate:
    relation: str
    attribute: str
    op: str
    value: str | float | None = None
    values: tuple[str, ...] | None = None
    lo: float | None = None
    hi: float | None = None

    def key(self):
        return (
            self.relation,
            self.attribute,
            self.op,
            str(self.value),
            tuple(self.values or ()),
            self.lo,
            self.hi,
        )


@dataclass(frozen=True)
class Query:
    relations: tuple[str, ...]
    joins: tuple[tuple[str, str], ...]  # (parent relation, fk attribute)
    predicates: tuple[Predicate, ...]
    fingerprint: str = ""

    def join_count(self) -> int:
        return len(self.joins)

    def filter_count(self) -> int:
        return len(self.predicates)


def _canonicalize(
    relations, joins, predicates, schema: Schema
) -> Query:
    rels = tuple(sorted(set(relations)))
    joins = tuple(sorted(set(tuple(j) for j in joins)))
    preds = tuple(sorted(predicates, key=Predicate.key))
    query = Query(rels, joins, preds, schema.fingerprint())
    _validate(query, schema)
    return query


def _validate(query: Query, schema: Schema) -> None:
    known = set(schema.names())
    for rel in query.relations:
        if rel not in known:
            raise QueryError(f"unknown relation {rel!r}")
    # Join edges must be declared FKs with both endpoints in the query.
    adjacency = {rel: set() for rel in query.relations}
    for parent, fk in query.joins:
        if parent not in query.relations:
            raise QueryError(f"join references excluded relation {parent!r}")
        decl = schema.relation(parent)
        match = [f for f in decl.foreign_keys if f.attribute == fk]
        if not match:
            raise QueryError(f"{parent}.{fk} is not a declared foreign key")
        child = match[0].references
        if child not in query.relations:
            raise QueryError(f"join {parent}.{fk} references excluded relation {child!r}")
        adjacency[parent].add((parent, fk))
        adjacency[child].add((parent, fk))
    if len(query.relations) > 1:
        if len(query.joins) != len(query.relations) - 1:
            raise QueryError("join graph is not a tree over the queried relations")
        seen = {query.relations[0]}
        frontier = [query.relations[0]]
        edge_child = {
            (parent, fk): schema.relation(parent).foreign_keys
            for parent, fk in query.joins
        }
        while frontier:
            rel = frontier.pop()
            for parent, fk in query.joins:
                child = next(
                    f.references for f in schema.relation(parent).foreign_keys if f.attribute == fk
                )
                for other in (parent, child):
                    if rel in (parent, child) and other not in seen:
                        seen.add(other)
                        frontier.append(other)
        if seen != set(query.relations):
            raise QueryError("join graph is disconnected")
    for pred in query.predicates:
        if pred.relation not in query.relations:
            raise QueryError(f"predicate on excluded relation {pred.relation!r}")
        decl = schema.relation(pred.relation)
        if pred.attribute not in decl.modeled_attributes():
            raise QueryError(
                f"{pred.relation}.{pred.attribute} is not a modeled attribute"
            )
        kind = next(a.kind for a in decl.attributes if a.name == pred.attribute)
        if pred.op == RANGE:
            if kind != NUMERIC:
                raise QueryError(f"range predicate on non-numeric {pred.relation}.{pred.attribute}")
            if pred.lo is None or pred.hi is None or pred.lo > pred.hi:
                raise QueryError("range predicate needs ordered lo <= hi")
        elif pred.op == EQ:
            if pred.value is None:
                raise QueryError("eq predicate needs a value")
            if kind == NUMERIC:
                try:
                    float(pred.value)
                except (TypeError, ValueError):
                    raise QueryError(
                        f"eq operand {pred.value!r} is not numeric for {pred.attribute}"
                    ) from None
        elif pred.op == IN:
            if not pred.values:
                raise QueryError("in predicate needs a non-empty value set")
        else:
            raise QueryError(f"unknown predicate op {pred.op!r}")


def query_from_dict(doc: dict, schema: Schema) -> Query:
    preds = []
    for p in doc.get("predicates", []):
        op = p["op"]
        preds.append(
            Predicate(
                relation=p["relation"],
                attribute=p["attribute"],
                op=op,
                value=p.get("value"),
                values=tuple(p["values"]) if op == IN else None,
                lo=p.get("lo"),
                hi=p.get("hi"),
            )
        )
    return _canonicalize(doc["relations"], doc.get("joins", []), preds, schema)


_SQL_PAT = re.compile(
    r"select\s+\*\s+from\s+(?P<rels>.*?)\s+(?:where\s+(?P<conds>.*))?$",
    re.IGNORECASE | re.DOTALL,
)


def parse_sql(text: str, schema: Schema) -> Query:
    """Parse the restricted SQL subset: SELECT * FROM rels WHERE a AND b..."""
    flat = " ".join(text.split()).rstrip(";")
    # keep BETWEEN lo AND hi intact through the conjunction split
    flat = re.sub(
        r"(between\s+\S+)\s+and\s+(\S+)", r"\1..\2", flat, flags=re.IGNORECASE
    )
    m = _SQL_PAT.match(flat)
    if not m:
        raise QueryError("query does not match the supported SQL subset")
    relations = [r.strip() for r in m.group("rels").split(",")]
    joins, preds = [], []
    conds = m.group("conds")
    for cond in re.split(r"\s+and\s+", conds, flags=re.IGNORECASE) if conds else []:
        cond = cond.strip()
        jm = re.fullmatch(r"(\w+)\.(\w+)\s*=\s*(\w+)\.(\w+)", cond)
        if jm and jm.group(3) + "." + jm.group(4) not in ("",):
            r1, a1, r2, a2 = jm.groups()
            edge = _sql_join_edge(schema, r1, a1, r2, a2)
            if edge is not None:
                joins.append(edge)
                continue
        pm = re.fullmatch(r"(\w+)\.(\w+)\s*=\s*'([^']*)'", cond) or re.fullmatch(
            r"(\w+)\.(\w+)\s*=\s*([-\d.eE+]+)", cond
        )
        if pm:
            rel, attr, val = pm.groups()
            preds.append(Predicate(rel, attr, EQ, value=val))
            continue
        im = re.fullmatch(r"(\w+)\.(\w+)\s+in\s*\(([^)]*)\)", cond, re.IGNORECASE)
        if im:
            rel, attr, body = im.groups()
            values = tuple(v.strip().strip("'") for v in body.split(","))
            preds.append(Predicate(rel, attr, IN, values=values))
            continue
        bm = re.fullmatch(
            r"(\w+)\.(\w+)\s+between\s+([-\d.eE+]+)\.\.([-\d.eE+]+)",
            cond,
            re.IGNORECASE,
        )
        if bm:
            rel, attr, lo, hi = bm.groups()
            preds.append(Predicate(rel, attr, RANGE, lo=float(lo), hi=float(hi)))
            continue
        raise QueryError(f"unsupported condition {cond!r}")
    return _canonicalize(relations, joins, preds, schema)


def _sql_join_edge(schema: Schema, r1, a1, r2, a2) -> tuple[str, str] | None:
    for (pr, pa, cr, ca) in ((r1, a1, r2, a2), (r2, a2, r1, a1)):
        try:
            decl = schema.relation(pr)
        except Exception:
            return None
        for fk in decl.foreign_keys:
            if fk.attribute == pa and fk.references == cr:
                try:
                    if schema.relation(cr).primary_key == ca:
                        return (pr, pa)
                except Exception:
                    return None
    return None


def parse_query(source: str | dict, schema: Schema) -> Query:
    """Accept a query dict, a JSON string, or the SQL subset."""
    if isinstance(source, dict):
        return query_from_dict(source, schema)
    text = source.strip()
    if text.startswith("{"):
        try:
            return query_from_dict(json.loads(text), schema)
        except json.JSONDecodeError as exc:
            raise QueryError(f"invalid query JSON: {exc}") from exc
    return parse_sql(text, schema)


def to_dict(query: Query) -> dict:
    preds = []
    for p in query.predicates:
        d = {"relation": p.relation, "attribute": p.attribute, "op": p.op}
        if p.op == EQ:
            d["value"] = p.value
        elif p.op == IN:
            d["values"] = list(p.values)
        else:
            d["lo"], d["hi"] = p.lo, p.hi
        preds.append(d)
    return {
        "relations": list(query.relations),
        "joins": [list(j) for j in query.joins],
        "predicates": preds,
    }


def canonical_json(query: Query) -> str:
    return json.dumps(to_dict(query), sort_keys=True)


def codes_for(pred: Predicate, col_kind: str, dictionary: tuple[str, ...],
              bin_edges: tuple[float, ...] | None) -> set[int]:
    """Dictionary codes selected by a predicate; empty means zero support."""
    if pred.op == EQ:
        if col_kind == NUMERIC:
            return _bin_codes(float(pred.value), float(pred.value), bin_edges)
        try:
            return {dictionary.index(str(pred.value))}
        except ValueError:
            return set()
    if pred.op == IN:
        lookup = {v: i for i, v in enumerate(dictionary)}
        return {lookup[v] for v in pred.values if v in lookup}
    return _bin_codes(pred.lo, pred.hi, bin_edges)


def _bin_codes(lo: float, hi: float, edges: tuple[float, ...] | None) -> set[int]:
    if not edges or len(edges) < 2:
        return set()
    out = set()
    for i in range(len(edges) - 1):
        blo, bhi = edges[i], edges[i + 1]
        last = i == len(edges) - 2
        # half-open bins, last bin closed; a partially overlapped bin counts fully
        if hi >= blo and (lo < bhi or (last and lo <= bhi)):
            out.add(i)
    return out


def predicate_codes(pred: Predicate, catalog: Catalog) -> set[int]:
    col: EncodedColumn = catalog.data(pred.relation).column(pred.attribute)
    return codes_for(pred, col.kind, col.dictionary, col.bin_edges)
