"""Boltzmann negative-log-likelihood losses and the SGD training loop.

Each energy head trains by pushing its positive pair's energy below the
energies of the alternatives in a partition sum:

  class:   E(x, y) + log sum_m exp(-E(x, y_m))
  concept: sum_k [ E(x, c_k) + log(exp(-E(x, 0)) + exp(-E(x, 1))) ]
  global:  E(c, y) + log sum_{m, c'} exp(-E(c', y_m))

The global partition sum over all 2^K concept vectors is approximated by
negative sampling: the batch's own concept vectors (positives included)
plus uniform random binary vectors, deduplicated.  With the full
enumeration passed in, the loss is exact.

During training only, a fraction of each batch's concept vectors is
perturbed by independent bit flips before entering the global head, which
regularizes it against label noise.  The concept loss always sees the
clean bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .model import ModelConfig, Theta, loss_graph, param_shapes
from .model import class_energies_all, concept_energies_bits
from .model import global_energies_all_classes


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending epoch and batch."""

    def __init__(self, epoch: int, batch: int, cause: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {cause}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-2
    momentum: float = 0.0
    negative_samples: int = 20
    perturb_fraction: float = 0.2
    perturb_bit_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.negative_samples < 0:
            raise ValueError("negative_samples must be >= 0")
        for name in ("perturb_fraction", "perturb_bit_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-epoch means; l_total = l_class + lambda_c*l_concept + lambda_g*l_global."""

    l_class: float
    l_concept: float
    l_global: float
    l_total: float


def _lse_neg(energies: np.ndarray, axis=-1) -> np.ndarray:
    """log sum exp(-e) along axis, max-stabilized."""
    m = (-energies).max(axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(
        np.exp(-energies - m).sum(axis=axis))


def _check_onehot(y, n_classes: int) -> np.ndarray:
    y = dc.as_dense(y)
    if y.shape != (n_classes,) or not np.isin(y, (0.0, 1.0)).all() or y.sum() != 1:
        raise ValueError("y must be a one-hot class vector")
    return y


def _check_bits(c, n_concepts: int) -> np.ndarray:
    c = dc.as_dense(c)
    if c.shape != (n_concepts,) or not np.isin(c, (0.0, 1.0)).all():
        raise ValueError("c must be a binary concept vector")
    return c


def class_loss(theta: Theta, x, y) -> float:
    """-log p(y | x); always >= 0."""
    y = _check_onehot(y, theta.config.n_classes)
    e = class_energies_all(theta, x)
    return float(e[y.argmax()] + _lse_neg(e))


def concept_loss(theta: Theta, x, c) -> float:
    """Sum over concepts of the per-bit negative log-likelihood."""
    c = _check_bits(c, theta.config.n_concepts)
    bits = concept_energies_bits(theta, x)  # (K, 2)
    e_true = bits[np.arange(len(c)), c.astype(int)]
    return float((e_true + _lse_neg(bits)).sum())


def sample_negatives(batch_concepts, n_random: int, rng: np.random.Generator
                     ) -> np.ndarray:
    """Denominator set for the global loss: every in-batch concept vector
    plus ``n_random`` uniform binary vectors, first occurrence kept."""
    batch = np.atleast_2d(dc.as_dense(batch_concepts))
    k = batch.shape[1]
    extra = (rng.random((n_random, k)) < 0.5).astype(np.float64)
    seen = {}
    for row in np.concatenate([batch, extra], axis=0):
        key = row.astype(np.uint8).tobytes()
        if key not in seen:
            seen[key] = row
    return np.array(list(seen.values()))


def global_loss(theta: Theta, c, y, negatives) -> float:
    """Positive-pair energy plus the log partition sum over the sampled set.

    With ``negatives`` equal to the full enumeration of binary concept
    vectors this is exact; sampled sets give a biased estimate that can go
    negative.
    """
    c = _check_bits(c, theta.config.n_concepts)
    y = _check_onehot(y, theta.config.n_classes)
    negatives = np.atleast_2d(dc.as_dense(negatives))
    if negatives.shape[0] == 0:
        raise ValueError("negative set is empty")
    keys = {row.astype(np.uint8).tobytes() for row in negatives}
    if c.astype(np.uint8).tobytes() not in keys:
        raise ValueError("the positive concept vector must be in the negative set")
    e_pos = float(global_energies_all_classes(theta, c)[y.argmax()])
    pairs = global_energies_all_classes(theta, negatives)  # (n, M)
    return e_pos + float(_lse_neg(pairs.reshape(-1)))


def perturb_concepts(c, perturb_fraction: float, perturb_bit_prob: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Flip bits of a perturb_fraction-share of examples, each bit
    independently with perturb_bit_prob."""
    c = dc.as_dense(c)
    single = c.ndim == 1
    out = np.atleast_2d(c).copy()
    chosen = rng.random(out.shape[0]) < perturb_fraction
    flips = rng.random(out.shape) < perturb_bit_prob
    flips &= chosen[:, None]
    out[flips] = 1.0 - out[flips]
    return out[0] if single else out


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train(theta: Theta, dataset, config: TrainConfig
          ) -> tuple[Theta, list[LossBreakdown]]:
    """Minibatch SGD on the total loss; returns updated parameters and the
    per-epoch loss history.  Bit-reproducible for a fixed seed."""
    cfg = theta.config
    features = dc.as_dense(dataset.features)
    concepts = dc.as_dense(dataset.concepts)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    onehot = _one_hot(labels, cfg.n_classes)

    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in theta.arrays.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    graph = loss_graph(cfg, training=True)
    history = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            cb = concepts[idx]
            c_pert = perturb_concepts(cb, config.perturb_fraction,
                                      config.perturb_bit_prob, rng)
            negatives = sample_negatives(c_pert, config.negative_samples, rng)
            inputs = {
                "x": features[idx],
                "y_onehot": onehot[idx],
                "c_bits": cb,
                "c_glob": c_pert,
                "negatives": negatives,
            }
            seed = int(rng.integers(2**63))
            try:
                outs, grads = dc.value_and_gradient(
                    graph, inputs, params, output="l_total",
                    training=True, dropout_seed=seed)
            except dc.NonFiniteError as exc:
                raise TrainingDiverged(epoch, bi, str(exc)) from exc
            for name in param_shapes(cfg):
                g = grads[name]
                if config.momentum > 0:
                    velocity[name] = config.momentum * velocity[name] + g
                    g = velocity[name]
                params[name] = params[name] - config.learning_rate * g
            w = len(idx) / n
            sums += w * np.array([float(outs["l_class"]), float(outs["l_concept"]),
                                  float(outs["l_global"]), float(outs["l_total"])])
        history.append(LossBreakdown(*(float(v) for v in sums)))
    return Theta(cfg, params), history
