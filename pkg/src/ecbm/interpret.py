"""Conditional-interpretation estimators over a dataset.

Every estimator composes the three normalized branch conditionals

  p(y | x)   from the class energies (softmax of the negated energies),
  p(c_k | x) from the per-concept two-point Boltzmann weights,
  p(y | c)   from the global energies,

weights inputs by the empirical distribution (uniform over the supplied
dataset; class weights in the class-agnostic estimator are the empirical
class frequencies), and resolves proportionality by normalizing over the
query variable.  The same quantities computed by materializing the whole
joint table live in :mod:`ecbm.oracle`; the two routes must agree to
float precision on any parameters.

Soft mode sums exactly over the concept space when it is small enough and
falls back to uniform Monte Carlo sampling otherwise.  Hard mode rounds
the model's predictions first and counts frequencies over the rounded
(concepts, class) pairs; conditioning events that never occur are reported
as undefined rather than zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import model as em
from .inference import DEFAULT_CONFIG, InferenceConfig, enumerate_bits, predict_batch
from .inference import EnumerationLimitError
from .prob import ProbTable


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = "soft"  # "soft" (Boltzmann sums) or "hard" (rounded counts)
    k_exact: int = 12  # enumerate {0,1}^K up to this many concepts
    mc_samples: int = 2 ** 14
    seed: int = 0
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise ValueError("mode must be 'soft' or 'hard'")
        if self.k_exact < 1 or self.mc_samples < 1:
            raise ValueError("limits must be >= 1")


DEFAULT_ESTIMATOR = EstimatorConfig()


# query descriptors, shared with the oracle and the hard estimator
@dataclass
class MarginalQuery:
    k: int
    class_index: int


@dataclass
class JointQuery:
    class_index: int


@dataclass
class CondGivenClassQuery:
    k: int
    kp: int
    value_kp: int
    class_index: int


@dataclass
class CondQuery:
    k: int
    kp: int
    value_kp: int


@dataclass
class HardEstimate:
    """Counting estimate; undefined when the conditioning event is empty."""

    defined: bool
    table: ProbTable | None
    support_count: int


# ---------------------------------------------------------------------------
# soft mode machinery
# ---------------------------------------------------------------------------

def branch_posteriors(theta: em.Theta, features) -> tuple[np.ndarray, np.ndarray]:
    """(p(c_k = b | x_j) as (N, K, 2), p(y_m | x_j) as (N, M))."""
    pc = em.softmax_neg(em.concept_energies_bits(theta, features), axis=-1)
    pyx = em.softmax_neg(em.class_energies_all(theta, features), axis=-1)
    return pc, pyx


def global_posterior(theta: em.Theta, concept_rows: np.ndarray) -> np.ndarray:
    """p(y | c) for each binary row: (n, M)."""
    return em.softmax_neg(
        em.global_energies_all_classes(theta, concept_rows), axis=-1)


def mean_concept_likelihood(pc: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """mean over examples j of prod_k p(c_k = rows[i, k] | x_j), per row i."""
    idx = rows.astype(np.int64)
    n_examples, n_concepts, _ = pc.shape
    karr = np.arange(n_concepts)
    out = np.empty(len(idx))
    chunk = max(1, (1 << 22) // max(n_examples * n_concepts, 1))
    for start in range(0, len(idx), chunk):
        blk = idx[start:start + chunk]
        sel = pc[:, karr[None, :], blk]  # (N, B, K)
        out[start:start + chunk] = sel.prod(axis=2).mean(axis=0)
    return out


def _class_weight(class_index: int, pyx: np.ndarray) -> float:
    # p(y) under the class branch; constant in c, kept for the raw score
    return float(pyx[:, class_index].mean())


def _empirical_class_freq(dataset) -> np.ndarray:
    labels = np.asarray(dataset.labels, dtype=np.int64)
    m = int(dataset.n_classes)
    return np.bincount(labels, minlength=m) / len(labels)


def _check_k(theta, *ks):
    for k in ks:
        if not 0 <= k < theta.config.n_concepts:
            raise ValueError(f"concept index {k} out of range")


def _check_class(theta, m):
    if not 0 <= m < theta.config.n_classes:
        raise ValueError(f"class index {m} out of range")


def _check_bit(b):
    if b not in (0, 1):
        raise ValueError("concept value must be 0 or 1")


class _SoftContext:
    """Precomputed branch posteriors for one (theta, dataset) pair."""

    def __init__(self, theta, dataset):
        self.theta = theta
        self.pc, self.pyx = branch_posteriors(theta, dc.as_dense(dataset.features))
        self.k = theta.config.n_concepts
        self.m = theta.config.n_classes

    def weights_for_rows(self, rows: np.ndarray, class_index: int) -> np.ndarray:
        """w(c) = p(y | c) * mean_j prod_k p(c_k | x_j) per row."""
        pyc = global_posterior(self.theta, rows)[:, class_index]
        return pyc * mean_concept_likelihood(self.pc, rows)

    def weights_all_classes(self, rows: np.ndarray) -> np.ndarray:
        """(n, M): w_m(c) for every class at once."""
        pyc = global_posterior(self.theta, rows)
        return pyc * mean_concept_likelihood(self.pc, rows)[:, None]


def _mc_rows(theta, config, n_free) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    return (rng.random((config.mc_samples, n_free)) < 0.5).astype(np.float64)


def marginal_concept_importance(theta: em.Theta, dataset, class_index: int,
                                config: EstimatorConfig = DEFAULT_ESTIMATOR
                                ) -> list[ProbTable]:
    """p(c_k | y) for every concept k, normalized over the bit."""
    _check_class(theta, class_index)
    ctx = _SoftContext(theta, dataset)
    k_total = ctx.k
    tables = []
    if k_total <= config.k_exact:
        rows = enumerate_bits(k_total)
        w = ctx.weights_for_rows(rows, class_index)
        total = w.sum()
        for k in range(k_total):
            p1 = float(w[rows[:, k] == 1.0].sum() / total)
            tables.append(ProbTable.binary_split(f"c{k}", p1))
        return tables
    # Monte Carlo over the other concepts, shared samples for both bits
    for k in range(k_total):
        others = _mc_rows(theta, config, k_total - 1)
        est = []
        for bit in (0.0, 1.0):
            rows = np.insert(others, k, bit, axis=1)
            est.append(ctx.weights_for_rows(rows, class_index).mean())
        p1 = est[1] / (est[0] + est[1])
        tables.append(ProbTable.binary_split(f"c{k}", float(p1)))
    return tables


def joint_concept_importance(theta: em.Theta, dataset, class_index: int, c,
                             config: EstimatorConfig = DEFAULT_ESTIMATOR
                             ) -> tuple[float, ProbTable | None]:
    """Raw importance score of the full concept vector c for the class,
    plus the normalized table over every concept vector (when enumerable)."""
    _check_class(theta, class_index)
    c = dc.as_dense(c)
    if c.shape != (theta.config.n_concepts,) or not np.isin(c, (0.0, 1.0)).all():
        raise ValueError("c must be a binary concept vector")
    ctx = _SoftContext(theta, dataset)
    score = float(ctx.weights_for_rows(c[None, :], class_index)[0]
                  / _class_weight(class_index, ctx.pyx))
    if ctx.k > config.k_exact:
        return score, None
    rows = enumerate_bits(ctx.k)
    w = ctx.weights_for_rows(rows, class_index)
    table = ProbTable.from_weights(
        [f"c{k}" for k in range(ctx.k)], [("0", "1")] * ctx.k,
        w.reshape((2,) * ctx.k))
    return score, table


def concept_conditional_given_class(theta: em.Theta, dataset, k: int, kp: int,
                                    value_kp: int, class_index: int,
                                    config: EstimatorConfig = DEFAULT_ESTIMATOR
                                    ) -> ProbTable:
    """p(c_k | c_kp, y), normalized over c_k."""
    if k == kp:
        raise ValueError("the two concept indices must differ")
    _check_k(theta, k, kp)
    _check_class(theta, class_index)
    _check_bit(value_kp)
    ctx = _SoftContext(theta, dataset)
    if ctx.k <= config.k_exact:
        rows = enumerate_bits(ctx.k)
        w = ctx.weights_for_rows(rows, class_index)
        match = rows[:, kp] == float(value_kp)
        num = [w[match & (rows[:, k] == b)].sum() for b in (0.0, 1.0)]
    else:
        first, second = sorted((k, kp))
        others = _mc_rows(theta, config, ctx.k - 2)
        num = []
        for b in (0.0, 1.0):
            vals = {k: b, kp: float(value_kp)}
            rows = np.insert(others, first, vals[first], axis=1)
            rows = np.insert(rows, second, vals[second], axis=1)
            num.append(ctx.weights_for_rows(rows, class_index).mean())
    return ProbTable.binary_split(f"c{k}", float(num[1] / (num[0] + num[1])))


def concept_conditional(theta: em.Theta, dataset, k: int, kp: int,
                        value_kp: int,
                        config: EstimatorConfig = DEFAULT_ESTIMATOR
                        ) -> ProbTable:
    """Class-agnostic p(c_k | c_kp): per-class conditionals mixed by the
    empirical class frequencies."""
    if k == kp:
        raise ValueError("the two concept indices must differ")
    _check_k(theta, k, kp)
    _check_bit(value_kp)
    ctx = _SoftContext(theta, dataset)
    freq = _empirical_class_freq(dataset)
    if ctx.k <= config.k_exact:
        rows = enumerate_bits(ctx.k)
        w = ctx.weights_all_classes(rows)  # (n, M)
    else:
        rows = _mc_rows(theta, config, ctx.k)
        w = ctx.weights_all_classes(rows)
    z = w.sum(axis=0)  # per-class normalizers of p(c | y_m)
    if (z <= 0).any():
        raise ValueError("degenerate per-class normalizer")
    cond = w / z  # p(c | y_m) per row (Monte Carlo: consistent estimate)
    match = rows[:, kp] == float(value_kp)
    num = []
    for b in (0.0, 1.0):
        sel = match & (rows[:, k] == b)
        num.append(float(cond[sel].sum(axis=0) @ freq))
    return ProbTable.binary_split(f"c{k}", num[1] / (num[0] + num[1]))


# ---------------------------------------------------------------------------
# hard mode: counting over rounded predictions
# ---------------------------------------------------------------------------

def predictions_for(theta: em.Theta, dataset,
                    config: EstimatorConfig = DEFAULT_ESTIMATOR
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Rounded (concepts, class index) for every example."""
    concepts, classes, _, _ = predict_batch(
        theta, dc.as_dense(dataset.features), config.inference)
    return concepts, classes


def hard_estimates(theta: em.Theta, dataset, query,
                   config: EstimatorConfig = DEFAULT_ESTIMATOR,
                   predictions: tuple[np.ndarray, np.ndarray] | None = None
                   ) -> HardEstimate:
    """Counting frequency of the queried conditional over rounded
    predictions.  ``predictions`` may be precomputed with
    :func:`predictions_for` to amortize inference."""
    if predictions is None:
        predictions = predictions_for(theta, dataset, config)
    concepts, classes = predictions
    concepts = np.asarray(concepts, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)

    if isinstance(query, MarginalQuery):
        _check_k(theta, query.k)
        _check_class(theta, query.class_index)
        sel = classes == query.class_index
        if not sel.any():
            return HardEstimate(False, None, 0)
        p1 = float(concepts[sel, query.k].mean())
        return HardEstimate(True, ProbTable.binary_split(f"c{query.k}", p1),
                            int(sel.sum()))

    if isinstance(query, JointQuery):
        _check_class(theta, query.class_index)
        k = theta.config.n_concepts
        if k > config.k_exact:
            raise EnumerationLimitError(
                f"joint table over {k} concepts exceeds the cap {config.k_exact}")
        sel = classes == query.class_index
        if not sel.any():
            return HardEstimate(False, None, 0)
        counts = np.zeros((2,) * k)
        for row in concepts[sel]:
            counts[tuple(row)] += 1.0
        table = ProbTable.from_weights(
            [f"c{i}" for i in range(k)], [("0", "1")] * k, counts)
        return HardEstimate(True, table, int(sel.sum()))

    if isinstance(query, CondGivenClassQuery):
        if query.k == query.kp:
            raise ValueError("the two concept indices must differ")
        _check_k(theta, query.k, query.kp)
        _check_class(theta, query.class_index)
        _check_bit(query.value_kp)
        sel = (classes == query.class_index) & (concepts[:, query.kp]
                                                == query.value_kp)
        if not sel.any():
            return HardEstimate(False, None, 0)
        p1 = float(concepts[sel, query.k].mean())
        return HardEstimate(True, ProbTable.binary_split(f"c{query.k}", p1),
                            int(sel.sum()))

    if isinstance(query, CondQuery):
        if query.k == query.kp:
            raise ValueError("the two concept indices must differ")
        _check_k(theta, query.k, query.kp)
        _check_bit(query.value_kp)
        sel = concepts[:, query.kp] == query.value_kp
        if not sel.any():
            return HardEstimate(False, None, 0)
        p1 = float(concepts[sel, query.k].mean())
        return HardEstimate(True, ProbTable.binary_split(f"c{query.k}", p1),
                            int(sel.sum()))

    raise TypeError(f"unsupported query type {type(query).__name__}")
