"""Brute-force enumeration oracle for every conditional the package serves.

This module answers each query by materializing a full probability table
and summing - never by the estimators' ratio formulas - so agreement
between the two routes checks the conditional-probability algebra rather
than one implementation against itself.  Only the raw energy heads are
shared with the rest of the package; every normalization here is local.

Three tables cover all queries:

* dataset-level: p(x, c, y) = p(x) * prod_k p(c_k | x) * p(y | c) over the
  dataset x's, all 2^K concept vectors, and all classes.  Class-agnostic
  queries mix the per-class conditionals with the empirical class
  frequencies, exactly as the estimators' derivation composes them.
* per-input Boltzmann: p(c, y | x) proportional to exp(-e_joint), for
  intervention and missing-concept queries.
* per-input class-normalized: p(y | x, c) rows (each concept vector's
  class posterior), for the class-given-a-known-concept query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import model as em
from .inference import enumerate_bits
from .interpret import (CondGivenClassQuery, CondQuery, JointQuery,
                        MarginalQuery)
from .prob import ProbTable

MAX_CONCEPTS = 16
MAX_CLASSES = 64


@dataclass
class InterventionQuery:
    x: np.ndarray
    fixed: dict  # concept index -> bit


@dataclass
class MissingConceptQuery:
    x: np.ndarray
    fixed: dict


@dataclass
class ClassGivenConceptQuery:
    x: np.ndarray
    k: int
    value: int


def _check_size(cfg: em.ModelConfig) -> None:
    if cfg.n_concepts > MAX_CONCEPTS or cfg.n_classes > MAX_CLASSES:
        raise ValueError(
            f"oracle supports at most {MAX_CONCEPTS} concepts and "
            f"{MAX_CLASSES} classes")


def _normalize_exp_neg(energies: np.ndarray, axis) -> np.ndarray:
    """exp(-e) normalized along axis, shifted by the axis minimum."""
    shifted = np.exp(-(energies - energies.min(axis=axis, keepdims=True)))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def _joint_energy_full(theta: em.Theta, x) -> np.ndarray:
    """e_joint over every (concept vector, class): (2^K, M)."""
    cfg = theta.config
    rows = enumerate_bits(cfg.n_concepts)
    e_class = em.class_energies_all(theta, x)  # (M,)
    e_bits = em.concept_energies_bits(theta, x)  # (K, 2)
    idx = rows.astype(np.int64)
    e_concept = e_bits[np.arange(cfg.n_concepts), idx].sum(axis=1)  # (2^K,)
    e_global = em.global_energies_all_classes(theta, rows)  # (2^K, M)
    return (e_class[None, :] + cfg.lambda_c_inf * e_concept[:, None]
            + cfg.lambda_g_inf * e_global)


def dataset_joint(theta: em.Theta, dataset) -> tuple[np.ndarray, np.ndarray]:
    """(enumerated concept rows, joint table (N, 2^K, M))."""
    cfg = theta.config
    _check_size(cfg)
    features = dc.as_dense(dataset.features)
    rows = enumerate_bits(cfg.n_concepts)
    idx = rows.astype(np.int64)

    p_bits = _normalize_exp_neg(em.concept_energies_bits(theta, features), -1)
    # likelihood of each enumerated vector under each example: (N, 2^K)
    like = p_bits[:, np.arange(cfg.n_concepts)[None, :], idx].prod(axis=2)
    p_y_given_c = _normalize_exp_neg(
        em.global_energies_all_classes(theta, rows), -1)  # (2^K, M)
    joint = like[:, :, None] * p_y_given_c[None, :, :] / features.shape[0]
    return rows, joint


def _class_conditional(joint: np.ndarray, class_index: int) -> np.ndarray:
    """p(c | y) over the enumerated rows from the dataset joint."""
    slab = joint[:, :, class_index].sum(axis=0)
    return slab / slab.sum()


def _empirical_class_freq(dataset) -> np.ndarray:
    labels = np.asarray(dataset.labels, dtype=np.int64)
    return np.bincount(labels, minlength=int(dataset.n_classes)) / len(labels)


def brute_force_oracle(theta: em.Theta, dataset, query) -> ProbTable:
    """Answer any supported conditional query by table summation."""
    cfg = theta.config
    _check_size(cfg)

    if isinstance(query, (MarginalQuery, JointQuery, CondGivenClassQuery,
                          CondQuery)):
        rows, joint = dataset_joint(theta, dataset)

        if isinstance(query, MarginalQuery):
            cond = _class_conditional(joint, query.class_index)
            p1 = cond[rows[:, query.k] == 1.0].sum()
            return ProbTable.binary_split(f"c{query.k}", float(p1))

        if isinstance(query, JointQuery):
            cond = _class_conditional(joint, query.class_index)
            return ProbTable.from_weights(
                [f"c{i}" for i in range(cfg.n_concepts)],
                [("0", "1")] * cfg.n_concepts,
                cond.reshape((2,) * cfg.n_concepts))

        if isinstance(query, CondGivenClassQuery):
            cond = _class_conditional(joint, query.class_index)
            match = rows[:, query.kp] == float(query.value_kp)
            num = [cond[match & (rows[:, query.k] == b)].sum()
                   for b in (0.0, 1.0)]
            return ProbTable.from_weights((f"c{query.k}",), (("0", "1"),),
                                          np.array(num))

        freq = _empirical_class_freq(dataset)
        match = rows[:, query.kp] == float(query.value_kp)
        num = np.zeros(2)
        for m in range(cfg.n_classes):
            cond = _class_conditional(joint, m)
            for b in (0, 1):
                num[b] += freq[m] * cond[match & (rows[:, query.k] == b)].sum()
        return ProbTable.from_weights((f"c{query.k}",), (("0", "1"),), num)

    if isinstance(query, (InterventionQuery, MissingConceptQuery)):
        rows = enumerate_bits(cfg.n_concepts)
        boltzmann = _normalize_exp_neg(
            _joint_energy_full(theta, query.x), axis=None)  # (2^K, M)
        keep = np.ones(rows.shape[0], dtype=bool)
        for idx, bit in query.fixed.items():
            keep &= rows[:, int(idx)] == float(bit)
        conditioned = np.where(keep[:, None], boltzmann, 0.0)
        conditioned /= conditioned.sum()
        free_idx = [i for i in range(cfg.n_concepts) if i not in
                    {int(j) for j in query.fixed}]
        # collapse the pinned axes: rows are enumerated most-significant-first
        full = conditioned.reshape((2,) * cfg.n_concepts + (cfg.n_classes,))
        for axis, i in reversed(list(enumerate(range(cfg.n_concepts)))):
            if i not in free_idx:
                full = full.sum(axis=axis)
        table = ProbTable.from_weights(
            [f"c{i}" for i in free_idx] + ["y"],
            [("0", "1")] * len(free_idx)
            + [tuple(str(m) for m in range(cfg.n_classes))],
            full)
        if isinstance(query, MissingConceptQuery):
            return table.marginal([v for v in table.variables if v != "y"])
        return table

    if isinstance(query, ClassGivenConceptQuery):
        rows = enumerate_bits(cfg.n_concepts)
        per_row = _normalize_exp_neg(_joint_energy_full(theta, query.x), -1)
        sel = rows[:, query.k] == float(query.value)
        weights = per_row[sel].sum(axis=0)
        return ProbTable.from_weights(
            ("y",), (tuple(str(m) for m in range(cfg.n_classes)),), weights)

    raise TypeError(f"unsupported query type {type(query).__name__}")
