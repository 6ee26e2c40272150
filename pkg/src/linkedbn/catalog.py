"""Schema loading, CSV ingestion and dictionary encoding.

A catalog is the static view of a database: relation declarations with
primary/foreign keys, plus the per-relation data with every modeled
attribute dictionary-encoded.  Numeric attributes are equi-depth binned so
all downstream probability tables stay finite.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_MAX_BINS = 32


class CatalogError(ValueError):
    pass


CATEGORICAL = "categorical"
NUMERIC = "numeric"


@dataclass(frozen=True)
class AttributeDecl:
    name: str
    kind: str


@dataclass(frozen=True)
class ForeignKey:
    attribute: str
    references: str
    k: int | None = None  # optional per-edge override of the link width


@dataclass(frozen=True)
class RelationDecl:
    name: str
    path: str
    primary_key: str
    attributes: tuple[AttributeDecl, ...]
    foreign_keys: tuple[ForeignKey, ...]

    def modeled_attributes(self) -> tuple[str, ...]:
        """Non-key attributes, in declaration order. Keys are join plumbing."""
        keys = {self.primary_key} | {fk.attribute for fk in self.foreign_keys}
        return tuple(a.name for a in self.attributes if a.name not in keys)


@dataclass(frozen=True)
class Schema:
    relations: tuple[RelationDecl, ...]

    def relation(self, name: str) -> RelationDecl:
        for decl in self.relations:
            if decl.name == name:
                return decl
        raise CatalogError(f"unknown relation {name!r}")

    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.relations)

    def fingerprint(self) -> str:
        blob = json.dumps(
            [
                {
                    "name": r.name,
                    "primary_key": r.primary_key,
                    "attributes": [[a.name, a.kind] for a in r.attributes],
                    "foreign_keys": [[f.attribute, f.references] for f in r.foreign_keys],
                }
                for r in self.relations
            ],
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EncodedColumn:
    """Dictionary-encoded column; code ``len(dictionary)`` is the null slot."""

    dictionary: tuple[str, ...]
    codes: np.ndarray
    kind: str = CATEGORICAL
    bin_edges: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "codes", np.asarray(self.codes, dtype=np.int64))

    @property
    def null_code(self) -> int:
        return len(self.dictionary)

    @property
    def domain_size(self) -> int:
        return len(self.dictionary) + 1

    def decode(self) -> list[str | None]:
        return [None if c == self.null_code else self.dictionary[c] for c in self.codes]


@dataclass
class RelationData:
    name: str
    row_count: int
    columns: dict[str, EncodedColumn]
    pk_index: dict[str, int]
    key_values: dict[str, np.ndarray] = field(default_factory=dict)
    # raw numeric attribute values (NaN = null); kept so exact query
    # evaluation is not limited to bin resolution
    numeric_values: dict[str, np.ndarray] = field(default_factory=dict)

    def column(self, attr: str) -> EncodedColumn:
        try:
            return self.columns[attr]
        except KeyError:
            raise CatalogError(f"{self.name} has no modeled attribute {attr!r}") from None


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CatalogError(f"cannot parse schema file {path}: {exc}") from exc
    return schema_from_dict(doc, base_dir=path.parent)


def schema_from_dict(doc: dict, base_dir: str | Path = ".") -> Schema:
    relations = []
    try:
        for rel in doc["relations"]:
            attrs = tuple(AttributeDecl(a["name"], a.get("kind", CATEGORICAL)) for a in rel["attributes"])
            fks = tuple(
                ForeignKey(f["attribute"], f["references"], f.get("k"))
                for f in rel.get("foreign_keys", [])
            )
            relations.append(
                RelationDecl(
                    name=rel["name"],
                    path=str(Path(base_dir) / rel["path"]) if "path" in rel else "",
                    primary_key=rel["primary_key"],
                    attributes=attrs,
                    foreign_keys=fks,
                )
            )
    except (KeyError, TypeError) as exc:
        raise CatalogError(f"malformed schema document: {exc}") from exc
    schema = Schema(tuple(relations))
    _validate_schema(schema)
    return schema


def _validate_schema(schema: Schema) -> None:
    names = [r.name for r in schema.relations]
    if len(set(names)) != len(names):
        raise CatalogError("duplicate relation names")
    for rel in schema.relations:
        attr_names = [a.name for a in rel.attributes]
        if len(set(attr_names)) != len(attr_names):
            raise CatalogError(f"duplicate attribute names in {rel.name}")
        for kind in (a.kind for a in rel.attributes):
            if kind not in (CATEGORICAL, NUMERIC):
                raise CatalogError(f"unknown attribute kind {kind!r} in {rel.name}")
        seen_fk = set()
        for fk in rel.foreign_keys:
            if fk.references not in names:
                raise CatalogError(
                    f"{rel.name}.{fk.attribute} references unknown relation {fk.references!r}"
                )
            if fk.attribute in seen_fk:
                raise CatalogError(f"duplicate foreign key attribute {rel.name}.{fk.attribute}")
            seen_fk.add(fk.attribute)
    topological_order(schema)  # raises on FK cycles


def topological_order(schema: Schema) -> list[str]:
    """Relation names with every referenced relation before its referencers."""
    refs = {r.name: [fk.references for fk in r.foreign_keys] for r in schema.relations}
    indegree = {name: len(set(targets)) for name, targets in refs.items()}
    referenced_by: dict[str, list[str]] = {name: [] for name in refs}
    for name, targets in refs.items():
        for t in set(targets):
            referenced_by[t].append(name)
    order = []
    ready = [name for name in schema.names() if indegree[name] == 0]
    while ready:
        name = ready.pop(0)
        order.append(name)
        for parent in referenced_by[name]:
            indegree[parent] -= 1
            if indegree[parent] == 0:
                ready.append(parent)
    if len(order) != len(refs):
        cyclic = sorted(n for n, d in indegree.items() if d > 0)
        raise CatalogError(f"foreign key cycle involving {cyclic}")
    return order


def encode_categorical(values: list[str | None]) -> EncodedColumn:
    dictionary = tuple(sorted({v for v in values if v is not None}))
    lookup = {v: i for i, v in enumerate(dictionary)}
    null = len(dictionary)
    codes = np.fromiter(
        (null if v is None else lookup[v] for v in values), dtype=np.int64, count=len(values)
    )
    return EncodedColumn(dictionary, codes, kind=CATEGORICAL)


def _bin_label(lo: float, hi: float) -> str:
    return f"[{lo:.8g}, {hi:.8g})"


def encode_numeric(values: list[str | None], max_bins: int = DEFAULT_MAX_BINS) -> EncodedColumn:
    parsed = np.full(len(values), np.nan)
    for i, v in enumerate(values):
        if v is None:
            continue
        try:
            parsed[i] = float(v)
        except ValueError:
            raise CatalogError(f"non-numeric value {v!r} in numeric column") from None
    present = parsed[~np.isnan(parsed)]
    if len(present) == 0:
        return EncodedColumn((), np.full(len(values), 0, dtype=np.int64), kind=NUMERIC, bin_edges=())
    # Equi-depth edges; collapsing duplicate quantiles keeps heavy values intact.
    edges = np.unique(np.quantile(present, np.linspace(0.0, 1.0, max_bins + 1)))
    if len(edges) == 1:
        edges = np.array([edges[0], edges[0]])
    codes = np.searchsorted(edges[1:-1], parsed, side="right")
    codes[np.isnan(parsed)] = len(edges) - 1  # null slot
    dictionary = tuple(_bin_label(edges[i], edges[i + 1]) for i in range(len(edges) - 1))
    return EncodedColumn(dictionary, codes.astype(np.int64), kind=NUMERIC, bin_edges=tuple(edges))


def ingest_relation(decl: RelationDecl, max_bins: int = DEFAULT_MAX_BINS) -> RelationData:
    try:
        with open(decl.path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CatalogError(f"{decl.path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise CatalogError(f"cannot read {decl.path}: {exc}") from exc

    index = {name: i for i, name in enumerate(header)}
    key_attrs = [decl.primary_key] + [fk.attribute for fk in decl.foreign_keys]
    for name in list(dict.fromkeys(key_attrs)) + list(decl.modeled_attributes()):
        if name not in index:
            raise CatalogError(f"{decl.name}: column {name!r} missing from {decl.path}")

    def raw(attr: str) -> list[str | None]:
        i = index[attr]
        return [row[i] if i < len(row) and row[i] != "" else None for row in rows]

    pk_values = raw(decl.primary_key)
    pk_index: dict[str, int] = {}
    for pos, v in enumerate(pk_values):
        if v is None:
            raise CatalogError(f"{decl.name}: null primary key at row {pos}")
        if v in pk_index:
            raise CatalogError(f"{decl.name}: duplicate primary key {v!r}")
        pk_index[v] = pos

    columns: dict[str, EncodedColumn] = {}
    numeric_values: dict[str, np.ndarray] = {}
    for attr in decl.modeled_attributes():
        kind = next(a.kind for a in decl.attributes if a.name == attr)
        values = raw(attr)
        if kind == NUMERIC:
            columns[attr] = encode_numeric(values, max_bins=max_bins)
            parsed = np.full(len(values), np.nan)
            for i, v in enumerate(values):
                if v is not None:
                    parsed[i] = float(v)
            numeric_values[attr] = parsed
        else:
            columns[attr] = encode_categorical(values)

    key_values = {
        attr: np.array(["" if v is None else v for v in raw(attr)], dtype=str)
        for attr in dict.fromkeys(key_attrs)
    }
    return RelationData(
        name=decl.name,
        row_count=len(rows),
        columns=columns,
        pk_index=pk_index,
        key_values=key_values,
        numeric_values=numeric_values,
    )


@dataclass
class Catalog:
    schema: Schema
    relations: dict[str, RelationData]

    @classmethod
    def load(cls, schema_path: str | Path, max_bins: int = DEFAULT_MAX_BINS) -> "Catalog":
        schema = load_schema(schema_path)
        data = {decl.name: ingest_relation(decl, max_bins=max_bins) for decl in schema.relations}
        return cls(schema, data)

    def data(self, name: str) -> RelationData:
        try:
            return self.relations[name]
        except KeyError:
            raise CatalogError(f"no data for relation {name!r}") from None

    def fingerprint(self) -> str:
        return self.schema.fingerprint()
