"""Reference estimators: AVI histograms and (correlated) sampling.

The sampling estimator executes the query exactly on the retained rows, so
its machinery is the same multiplicity propagation used for ground truth;
only the row subsets differ.  Correlated mode hashes join keys with a fixed
deterministic hash so matching PK/FK rows are retained together.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import Catalog, EncodedColumn, RelationData
from .inference import Estimate
from .oracle import exact
from .query import Query, predicate_codes

UNIFORM = "uniform"
CORRELATED = "correlated"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_HASH_MAX = 1 << 64


class BaselineError(ValueError):
    pass


def fnv1a(value: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of the key."""
    h = _FNV_OFFSET
    for byte in value.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) % _HASH_MAX
    return h


def _avi_join_size(catalog: Catalog, query: Query) -> float:
    """Join-size under join uniformity: every FK is assumed to match."""
    if len(query.relations) == 1:
        return float(catalog.data(query.relations[0]).row_count)
    degree: dict[str, int] = {r: 0 for r in query.relations}
    size = 1.0
    for parent, fk in query.joins:
        child = next(
            f.references
            for f in catalog.schema.relation(parent).foreign_keys
            if f.attribute == fk
        )
        size *= catalog.data(parent).row_count
        degree[parent] += 1
        degree[child] += 1
    for rel in query.relations:
        size *= float(catalog.data(rel).row_count) ** (1 - degree[rel])
    return size


def avi_estimate(catalog: Catalog, query: Query, clamp: bool = True) -> Estimate:
    """Attribute-value-independence: predicate marginals simply multiply."""
    start = time.perf_counter()
    selectivity = 1.0
    for pred in query.predicates:
        col = catalog.data(pred.relation).column(pred.attribute)
        codes = predicate_codes(pred, catalog)
        hits = int(np.isin(col.codes, sorted(codes)).sum()) if codes else 0
        selectivity *= hits / len(col.codes)
    join_size = _avi_join_size(catalog, query)
    clamped = False
    if clamp and join_size > 0:
        floor = 1.0 / (2.0 * join_size)
        if selectivity < floor:
            selectivity, clamped = floor, True
    return Estimate(
        selectivity=selectivity,
        cardinality=selectivity * join_size,
        join_size=join_size,
        method="avi",
        elapsed=time.perf_counter() - start,
        clamped=clamped,
    )


@dataclass
class SampleSet:
    rate: float
    seed: int
    mode: str
    rows: dict[str, np.ndarray]  # relation -> kept row indices, ascending
    catalog: Catalog  # schema + per-relation sampled data


def _hash_key(decl) -> str:
    """Designated correlated-sampling key: first declared FK if the relation
    references anything (so referencing rows follow their referenced rows),
    else the primary key."""
    return decl.foreign_keys[0].attribute if decl.foreign_keys else decl.primary_key


def _subset(data: RelationData, keep: np.ndarray, pk_attr: str) -> RelationData:
    columns = {
        a: EncodedColumn(c.dictionary, c.codes[keep], kind=c.kind, bin_edges=c.bin_edges)
        for a, c in data.columns.items()
    }
    key_values = {a: v[keep] for a, v in data.key_values.items()}
    pk_index = {v: i for i, v in enumerate(key_values[pk_attr])}
    return RelationData(
        name=data.name,
        row_count=int(len(keep)),
        columns=columns,
        pk_index=pk_index,
        key_values=key_values,
        numeric_values={a: v[keep] for a, v in data.numeric_values.items()},
    )


def draw_samples(catalog: Catalog, rate: float, seed: int, mode: str = UNIFORM) -> SampleSet:
    """Deterministic per-relation row samples at the given rate."""
    if not 0 < rate <= 1:
        raise BaselineError(f"sampling rate must be in (0, 1], got {rate}")
    if mode not in (UNIFORM, CORRELATED):
        raise BaselineError(f"unknown sampling mode {mode!r}")
    rows: dict[str, np.ndarray] = {}
    sampled: dict[str, RelationData] = {}
    threshold = int(rate * _HASH_MAX)
    for decl in catalog.schema.relations:
        data = catalog.data(decl.name)
        if mode == UNIFORM:
            rng = np.random.default_rng([seed, fnv1a(decl.name) % (1 << 32)])
            keep = np.flatnonzero(rng.random(data.row_count) < rate)
        else:
            key = _hash_key(decl)
            values = data.key_values[key]
            keep = np.flatnonzero(
                np.fromiter(
                    (v != "" and fnv1a(v) < threshold for v in values),
                    dtype=bool,
                    count=len(values),
                )
            )
        rows[decl.name] = keep
        sampled[decl.name] = _subset(data, keep, decl.primary_key)
    return SampleSet(rate, seed, mode, rows, Catalog(catalog.schema, sampled))


def _scale_exponent(samples: SampleSet, query: Query) -> int:
    """Number of independent retention events a surviving join row implies."""
    if samples.mode == UNIFORM:
        return len(query.relations)
    shared = 0
    for parent, fk in query.joins:
        decl = samples.catalog.schema.relation(parent)
        if _hash_key(decl) == fk:
            shared += 1  # parent retention reuses the child row's hash
    return len(query.relations) - shared


def sampling_estimate(samples: SampleSet, query: Query, clamp: bool = True) -> Estimate:
    """Execute the query on the samples and extrapolate."""
    start = time.perf_counter()
    truth = exact(samples.catalog, query)
    scale = samples.rate ** _scale_exponent(samples, query)
    join_size = truth.join_rows / scale if scale > 0 else 0.0
    degenerate = truth.join_rows == 0
    if degenerate:
        # empty sampled join: fall back to the clamp floor against the
        # AVI join-size guess (the samples carry no join information)
        join_size = _avi_join_size(samples.catalog, query) / scale
        selectivity = 1.0 / (2.0 * join_size) if join_size > 0 else 0.0
    else:
        selectivity = truth.selectivity
        if clamp and join_size > 0:
            selectivity = max(selectivity, 1.0 / (2.0 * join_size))
    return Estimate(
        selectivity=selectivity,
        cardinality=selectivity * join_size,
        join_size=join_size,
        method=f"sampling-{samples.mode}",
        elapsed=time.perf_counter() - start,
        clamped=degenerate,
    )


def save_samples(samples: SampleSet, directory: str | Path) -> None:
    """Persist kept row indices per relation plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rel, keep in samples.rows.items():
        with open(directory / f"{rel}.sample.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row"])
            writer.writerows([[int(i)] for i in keep])
    manifest = {"rate": samples.rate, "seed": samples.seed, "mode": samples.mode}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_samples(catalog: Catalog, directory: str | Path) -> SampleSet:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BaselineError(f"cannot read sample manifest: {exc}") from exc
    rows: dict[str, np.ndarray] = {}
    sampled: dict[str, RelationData] = {}
    for decl in catalog.schema.relations:
        path = directory / f"{decl.name}.sample.csv"
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                keep = np.array([int(row[0]) for row in reader], dtype=np.int64)
        except (OSError, StopIteration, ValueError) as exc:
            raise BaselineError(f"cannot read sample file {path}: {exc}") from exc
        rows[decl.name] = keep
        sampled[decl.name] = _subset(catalog.data(decl.name), keep, decl.primary_key)
    return SampleSet(
        manifest["rate"], manifest["seed"], manifest["mode"], rows,
        Catalog(catalog.schema, sampled),
    )
