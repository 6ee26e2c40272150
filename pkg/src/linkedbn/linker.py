"""Linked-network construction: per-relation trees stitched along PK/FK edges.

Relations are processed referenced-first.  Before a referencing relation's
tree is learned, the exported attributes of every relation it references
are copied in through a left join on the primary key, so the referencing
tree measures those attributes' post-join distributions while each
referenced tree keeps the pre-join ones.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog, EncodedColumn, RelationData, topological_order
from .factor import ConditionalTable, Marginal
from .structure import TreeBN, build_bn

FORMAT_VERSION = 1


class LinkerError(ValueError):
    pass


@dataclass(frozen=True)
class ExportSet:
    """Parent-closed, root-first subset of a child network's attributes."""

    child: str
    attributes: tuple[str, ...]
    k: int


@dataclass(frozen=True)
class Link:
    parent: str  # referencing relation
    fk: str  # foreign key attribute in the parent
    child: str  # referenced relation
    shared: tuple[str, ...]  # child-side attribute names, root first

    def parent_name(self, attr: str) -> str:
        return f"{self.fk}.{attr}"


@dataclass(frozen=True)
class ColumnMeta:
    kind: str
    dictionary: tuple[str, ...]
    bin_edges: tuple[float, ...] | None = None


@dataclass
class LinkedModel:
    fingerprint: str
    k: int
    networks: dict[str, TreeBN]
    links: list[Link]
    join_cards: dict[str, int]  # "parent.fk" -> matched parent rows
    fk_targets: dict[str, str]  # "parent.fk" -> referenced relation
    row_counts: dict[str, int]
    meta: dict[str, dict[str, ColumnMeta]]  # relation -> network attr -> meta

    def link_for(self, parent: str, fk: str) -> Link:
        for link in self.links:
            if link.parent == parent and link.fk == fk:
                return link
        raise LinkerError(f"no link for {parent}.{fk}")

    def has_link(self, parent: str, fk: str) -> bool:
        return any(l.parent == parent and l.fk == fk for l in self.links)


def select_export_set(bn: TreeBN, k: int) -> ExportSet:
    """Root-first, parent-closed selection expanding along the heaviest
    tree edge at each step (ties by name)."""
    n = len(bn.nodes)
    if k < 0:
        raise LinkerError(f"k must be non-negative, got {k}")
    k = min(k, n)
    if k == 0 or bn.root is None:
        return ExportSet(bn.relation, (), min(k, n))
    chosen = [bn.root]
    while len(chosen) < k:
        frontier = [
            n2
            for n2 in bn.nodes
            if n2 not in chosen and bn.parent.get(n2) in chosen
        ]
        best = max(frontier, key=lambda n2: (bn.edge_weight[n2], _neg_name(n2)))
        chosen.append(best)
    return ExportSet(bn.relation, tuple(chosen), k)


def _neg_name(name: str):
    # max() with lexicographically *smaller* name winning ties
    return tuple(-ord(c) for c in name)


def match_positions(parent: RelationData, child: RelationData, fk: str) -> np.ndarray:
    """Hash join on the child's pk index: child row per parent row, -1 if unmatched."""
    index = child.pk_index
    values = parent.key_values[fk]
    return np.fromiter(
        (index.get(v, -1) if v != "" else -1 for v in values),
        dtype=np.int64,
        count=len(values),
    )


def join_cardinality(parent: RelationData, child: RelationData, fk: str) -> int:
    """Matched-row count only; cheaper than materializing join positions."""
    values = parent.key_values[fk]
    pks = np.array(list(child.pk_index), dtype=str)
    return int(np.isin(values, pks).sum())


def materialize_imports(
    parent: RelationData, child: RelationData, fk: str, exports: ExportSet
) -> tuple[RelationData, int]:
    """Left-join the child's exported columns into the parent.

    Returns the augmented relation plus the matched-row count. Unmatched or
    null foreign keys land in the imported columns' null slot.
    """
    if not exports.attributes:
        return parent, join_cardinality(parent, child, fk)
    positions = match_positions(parent, child, fk)
    matched = positions >= 0
    columns = dict(parent.columns)
    for attr in exports.attributes:
        src = child.columns[attr]
        codes = np.full(parent.row_count, src.null_code, dtype=np.int64)
        codes[matched] = src.codes[positions[matched]]
        columns[f"{fk}.{attr}"] = EncodedColumn(
            src.dictionary, codes, kind=src.kind, bin_edges=src.bin_edges
        )
    augmented = RelationData(
        name=parent.name,
        row_count=parent.row_count,
        columns=columns,
        pk_index=parent.pk_index,
        key_values=parent.key_values,
    )
    return augmented, int(matched.sum())


def _column_meta(col: EncodedColumn) -> ColumnMeta:
    return ColumnMeta(col.kind, col.dictionary, col.bin_edges)


def build_linked(catalog: Catalog, k: int, timings: dict | None = None) -> LinkedModel:
    """Algorithm: build every relation's tree referenced-first, importing the
    export set of each referenced relation through its FK edge."""
    if k < 0:
        raise LinkerError(f"k must be non-negative, got {k}")
    networks: dict[str, TreeBN] = {}
    links: list[Link] = []
    join_cards: dict[str, int] = {}
    fk_targets: dict[str, str] = {}
    meta: dict[str, dict[str, ColumnMeta]] = {}
    for name in topological_order(catalog.schema):
        start = time.perf_counter()
        decl = catalog.schema.relation(name)
        data = catalog.data(name)
        if data.row_count == 0:
            raise LinkerError(f"relation {name} is empty")
        own = decl.modeled_attributes()
        forced: list[tuple[str, str]] = []
        for fk in decl.foreign_keys:
            child_bn = networks[fk.references]
            k_edge = fk.k if fk.k is not None else k
            exports = select_export_set(child_bn, k_edge)
            data, matched = materialize_imports(
                data, catalog.data(fk.references), fk.attribute, exports
            )
            join_cards[f"{name}.{fk.attribute}"] = matched
            fk_targets[f"{name}.{fk.attribute}"] = fk.references
            if exports.attributes:
                links.append(Link(name, fk.attribute, fk.references, exports.attributes))
                for attr in exports.attributes:
                    parent_attr = child_bn.parent.get(attr)
                    if parent_attr is not None:
                        forced.append((f"{fk.attribute}.{attr}", f"{fk.attribute}.{parent_attr}"))
        networks[name] = build_bn(
            data, attributes=tuple(data.columns), forced_edges=forced, core=own
        )
        meta[name] = {attr: _column_meta(col) for attr, col in data.columns.items()}
        if timings is not None:
            timings[name] = time.perf_counter() - start
    model = LinkedModel(
        fingerprint=catalog.fingerprint(),
        k=k,
        networks=networks,
        links=links,
        join_cards=join_cards,
        fk_targets=fk_targets,
        row_counts={n: catalog.data(n).row_count for n in catalog.relations},
        meta=meta,
    )
    validate_linked(model)
    return model


def validate_linked(model: LinkedModel) -> None:
    """Structural checks: shared attributes present on both sides with equal
    dictionaries, import subtrees parent-closed, and the fully stitched
    structure a forest with one tree per connected relation group."""
    for link in model.links:
        child_bn = model.networks[link.child]
        parent_bn = model.networks[link.parent]
        if link.shared[0] != child_bn.root:
            raise LinkerError(f"link {link.parent}.{link.fk}: export set misses the child root")
        shared = set(link.shared)
        for attr in link.shared:
            pname = link.parent_name(attr)
            if attr not in child_bn.nodes or pname not in parent_bn.nodes:
                raise LinkerError(f"shared attribute {attr} missing from a linked network")
            if model.meta[link.child][attr].dictionary != model.meta[link.parent][pname].dictionary:
                raise LinkerError(f"dictionary mismatch on shared attribute {attr}")
            cp = child_bn.parent.get(attr)
            if cp is not None and cp not in shared:
                raise LinkerError(f"export set of {link.child} is not parent-closed at {attr}")
            pp = parent_bn.parent.get(pname)
            pc = {link.parent_name(a) for a in link.shared}
            if attr != child_bn.root and pp not in pc:
                raise LinkerError(f"import subtree broken at {link.parent}.{pname}")
    _check_stitched_forest(model)


def _check_stitched_forest(model: LinkedModel) -> None:
    # Union-find over (relation, attr) identities after unifying shared
    # attributes; duplicate edges after unification are collapsed.
    ids: dict[tuple[str, str], tuple[str, str]] = {}

    def find(x):
        while ids.get(x, x) != x:
            x = ids.get(x, x)
        return x

    for link in model.links:
        for attr in link.shared:
            ids[find((link.parent, link.parent_name(attr)))] = find((link.child, attr))
    edges = set()
    nodes = set()
    for rel, bn in model.networks.items():
        for n in bn.nodes:
            nodes.add(find((rel, n)))
        for n, p in bn.parent.items():
            a, b = find((rel, n)), find((rel, p))
            edges.add((a, b) if a <= b else (b, a))
    uf = {n: n for n in nodes}

    def root_of(x):
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    for a, b in edges:
        ra, rb = root_of(a), root_of(b)
        if ra == rb:
            raise LinkerError("stitched structure contains a cycle")
        uf[ra] = rb


# --- serialization -----------------------------------------------------------


def _marginal_to_json(m: Marginal | None):
    return None if m is None else {"attribute": m.attribute, "probs": m.probs.tolist()}


def _network_to_json(bn: TreeBN) -> dict:
    return {
        "relation": bn.relation,
        "nodes": list(bn.nodes),
        "root": bn.root,
        "edges": [
            {"child": n, "parent": bn.parent[n], "weight": bn.edge_weight[n]} for n in bn.nodes if n in bn.parent
        ],
        "root_marginal": _marginal_to_json(bn.root_marginal),
        "cpts": {n: bn.cpts[n].probs.tolist() for n in bn.cpts},
    }


def _network_from_json(doc: dict) -> TreeBN:
    parent = {e["child"]: e["parent"] for e in doc["edges"]}
    weights = {e["child"]: e["weight"] for e in doc["edges"]}
    rm = doc["root_marginal"]
    return TreeBN(
        relation=doc["relation"],
        nodes=tuple(doc["nodes"]),
        root=doc["root"],
        parent=parent,
        edge_weight=weights,
        root_marginal=None if rm is None else Marginal(rm["attribute"], np.array(rm["probs"])),
        cpts={
            n: ConditionalTable(n, parent[n], np.array(p)) for n, p in doc["cpts"].items()
        },
    )


def save_model(model: LinkedModel, path: str | Path) -> None:
    meta_json: dict[str, dict] = {}
    for rel, attrs in model.meta.items():
        meta_json[rel] = {}
        for attr, cm in attrs.items():
            source = _import_source(model, rel, attr)
            if source is not None:
                meta_json[rel][attr] = {"ref": list(source)}  # dictionary stored once
            else:
                meta_json[rel][attr] = {
                    "kind": cm.kind,
                    "dictionary": list(cm.dictionary),
                    "bin_edges": None if cm.bin_edges is None else list(cm.bin_edges),
                }
    doc = {
        "format_version": FORMAT_VERSION,
        "fingerprint": model.fingerprint,
        "k": model.k,
        "row_counts": model.row_counts,
        "join_cards": model.join_cards,
        "fk_targets": model.fk_targets,
        "links": [
            {"parent": l.parent, "fk": l.fk, "child": l.child, "shared": list(l.shared)}
            for l in model.links
        ],
        "networks": {rel: _network_to_json(bn) for rel, bn in model.networks.items()},
        "meta": meta_json,
    }
    Path(path).write_text(json.dumps(doc))


def _import_source(model: LinkedModel, rel: str, attr: str) -> tuple[str, str] | None:
    for link in model.links:
        if link.parent == rel:
            for a in link.shared:
                if link.parent_name(a) == attr:
                    return (link.child, a)
    return None


def load_model(path: str | Path) -> LinkedModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LinkerError(f"cannot read model file {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise LinkerError(
            f"unsupported model format version {doc.get('format_version')!r}"
        )
    links = [Link(l["parent"], l["fk"], l["child"], tuple(l["shared"])) for l in doc["links"]]
    meta: dict[str, dict[str, ColumnMeta]] = {}
    pending: list[tuple[str, str, tuple[str, str]]] = []
    for rel, attrs in doc["meta"].items():
        meta[rel] = {}
        for attr, m in attrs.items():
            if "ref" in m:
                pending.append((rel, attr, tuple(m["ref"])))
            else:
                meta[rel][attr] = ColumnMeta(
                    m["kind"],
                    tuple(m["dictionary"]),
                    None if m["bin_edges"] is None else tuple(m["bin_edges"]),
                )
    while pending:
        progressed = False
        still = []
        for rel, attr, (src_rel, src_attr) in pending:
            if src_attr in meta.get(src_rel, {}):
                meta[rel][attr] = meta[src_rel][src_attr]
                progressed = True
            else:
                still.append((rel, attr, (src_rel, src_attr)))
        pending = still
        if pending and not progressed:
            raise LinkerError("corrupt model file: unresolvable dictionary references")
    return LinkedModel(
        fingerprint=doc["fingerprint"],
        k=doc["k"],
        networks={rel: _network_from_json(n) for rel, n in doc["networks"].items()},
        links=links,
        join_cards={k_: int(v) for k_, v in doc["join_cards"].items()},
        fk_targets=dict(doc["fk_targets"]),
        row_counts={k_: int(v) for k_, v in doc["row_counts"].items()},
        meta=meta,
    )
