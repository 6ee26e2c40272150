"""One-way marginals and two-way conditional probability tables.

These are the building blocks of every tree-shaped network in the model:
a root carries a ``Marginal`` and every other node a ``ConditionalTable``
conditioned on its single parent.  Probabilities are plain empirical
frequencies; unseen values get probability zero on purpose (the model is
meant to memorise the data it was built on).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import EncodedColumn


class FactorError(ValueError):
    pass


@dataclass(frozen=True)
class Marginal:
    """Per-code probability vector for one attribute (last slot = null)."""

    attribute: str
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))

    @property
    def domain(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class ConditionalTable:
    """P(child | parent) as a matrix indexed [parent code][child code]."""

    child: str
    parent: str
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))

    @property
    def parent_domain(self) -> int:
        return self.probs.shape[0]

    @property
    def child_domain(self) -> int:
        return self.probs.shape[1]


def counts(col: EncodedColumn) -> np.ndarray:
    return np.bincount(col.codes, minlength=col.domain_size).astype(np.float64)


def joint_counts(child: EncodedColumn, parent: EncodedColumn) -> np.ndarray:
    """Joint count matrix indexed [parent code][child code]."""
    if len(child.codes) != len(parent.codes):
        raise FactorError("columns have different lengths")
    nc, np_ = child.domain_size, parent.domain_size
    flat = parent.codes.astype(np.int64) * nc + child.codes
    return (
        np.bincount(flat, minlength=nc * np_).reshape(np_, nc).astype(np.float64)
    )


def marginal_from_counts(col: EncodedColumn, attribute: str = "") -> Marginal:
    if len(col.codes) == 0:
        raise FactorError("cannot build a marginal from an empty column")
    c = counts(col)
    return Marginal(attribute, c / c.sum())


def cpt_from_counts(
    child: EncodedColumn, parent: EncodedColumn, child_name: str = "", parent_name: str = ""
) -> ConditionalTable:
    if len(child.codes) == 0:
        raise FactorError("cannot build a CPT from empty columns")
    joint = joint_counts(child, parent)
    row_sums = joint.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(row_sums > 0, joint / row_sums, 0.0)
    return ConditionalTable(child_name, parent_name, probs)


def marginalize(cpt: ConditionalTable, parent_marginal: Marginal) -> Marginal:
    """Sum the joint implied by ``cpt`` and ``parent_marginal`` over the parent."""
    if cpt.parent_domain != parent_marginal.domain:
        raise FactorError(
            f"parent dimension mismatch: {cpt.parent_domain} != {parent_marginal.domain}"
        )
    out = parent_marginal.probs @ cpt.probs
    return Marginal(cpt.child, out)


def point_product(terms) -> float:
    """Product of probabilities; the empty product is 1."""
    return math.prod(terms)
