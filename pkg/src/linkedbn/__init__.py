"""Selectivity estimation with linked tree-shaped Bayesian networks."""

from .baselines import SampleSet, avi_estimate, draw_samples, sampling_estimate
from .catalog import Catalog, Schema, load_schema
from .inference import Estimate, estimate
from .linker import LinkedModel, build_linked, load_model, save_model
from .oracle import Truth, exact
from .query import Predicate, Query, parse_query
from .structure import TreeBN, build_bn
from .workload import compute_stats, emit_report, expand, q_error, run_bench

__all__ = [
    "Catalog",
    "Estimate",
    "LinkedModel",
    "Predicate",
    "Query",
    "SampleSet",
    "Schema",
    "TreeBN",
    "Truth",
    "avi_estimate",
    "build_bn",
    "build_linked",
    "compute_stats",
    "draw_samples",
    "emit_report",
    "estimate",
    "exact",
    "expand",
    "load_model",
    "load_schema",
    "parse_query",
    "q_error",
    "run_bench",
    "sampling_estimate",
    "save_model",
]

__version__ = "0.1.0"
