"""Synthetic concept-structured datasets, file persistence, and metrics.

Each example is (features, binary concepts, class label).  The generator
draws a class uniformly, copies its concept prototype, flips each bit
independently with a noise rate, forces coupled pairs equal (creating
correlated concepts), and maps [concepts ; one-hot class] through a fixed
random linear map plus Gaussian feature noise.  The feature map is seeded
separately from the sampling so train and test splits share it.

The header records two noise-floor accuracies computable from the spec
alone: the per-bit and whole-vector accuracy of the best predictor that
recovers the class and the coupling structure but cannot observe the
individual bit flips (per-bit 1 - flip_prob; whole-vector
(1 - flip_prob)^(number of independent flip events)).  A model that also
decodes the flips from the features can exceed them.

File format (line-oriented, lossless via 17-digit floats):

    #ecbm-dataset v1 K=<int> M=<int> f=<int> N=<int> bayes_concept=<float> \
bayes_overall=<float> hash=<hex>
    <f1> <f2> ... | <K bits as 0/1 string> | <class index>
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import diffcore as dc


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line."""


@dataclass
class Dataset:
    features: np.ndarray  # (N, f)
    concepts: np.ndarray  # (N, K) of 0.0 / 1.0
    labels: np.ndarray  # (N,) int64
    n_classes: int
    bayes_concept_accuracy: float | None = None
    bayes_overall_accuracy: float | None = None
    generator_hash: str | None = None

    def __post_init__(self):
        self.features = dc.as_dense(self.features)
        self.concepts = dc.as_dense(self.concepts)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.concepts.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("features, concepts, labels must align")
        if n and not np.isin(self.concepts, (0.0, 1.0)).all():
            raise ValueError("concepts must be binary")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.concepts.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GeneratorSpec:
    n_concepts: int
    n_classes: int
    feature_dim: int
    n_examples: int
    prototypes: tuple  # n_classes tuples of n_concepts bits
    flip_prob: float = 0.05
    couplings: tuple = ()  # (source, target) pairs forced equal after flips
    feature_seed: int = 0
    feature_noise: float = 0.1

    def __post_init__(self):
        if self.n_concepts < 1 or self.n_classes < 2:
            raise ValueError("need at least one concept and two classes")
        if self.feature_dim < 1 or self.n_examples < 0:
            raise ValueError("feature_dim must be >= 1 and n_examples >= 0")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must be in [0, 0.5)")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        protos = [tuple(int(b) for b in row) for row in self.prototypes]
        if len(protos) != self.n_classes:
            raise ValueError("one prototype per class required")
        for row in protos:
            if len(row) != self.n_concepts or any(b not in (0, 1) for b in row):
                raise ValueError("prototypes must be binary rows of width K")
        if len(set(protos)) != len(protos):
            raise ValueError("prototypes must be distinct per class")
        object.__setattr__(self, "prototypes", tuple(protos))
        pairs = tuple((int(a), int(b)) for a, b in self.couplings)
        used = set()
        for a, b in pairs:
            if not (0 <= a < self.n_concepts and 0 <= b < self.n_concepts):
                raise ValueError("coupling index out of range")
            if a == b or b in used or a in {t for _, t in pairs}:
                raise ValueError("couplings must form disjoint source->target pairs")
            used.add(b)
        object.__setattr__(self, "couplings", pairs)

    def bayes_concept_accuracy(self) -> float:
        # per-bit optimum of the class-and-couplings decoder (see module doc)
        return 1.0 - self.flip_prob

    def bayes_overall_accuracy(self) -> float:
        independent = self.n_concepts - len(self.couplings)
        return (1.0 - self.flip_prob) ** independent

    def digest(self) -> str:
        payload = repr(tuple(
            (f.name, getattr(self, f.name)) for f in fields(self))).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def generate(spec: GeneratorSpec, seed: int = 0) -> Dataset:
    """Deterministic per (spec, seed); classes uniform."""
    rng = np.random.default_rng(seed)
    protos = np.array(spec.prototypes, dtype=np.float64)
    labels = rng.integers(0, spec.n_classes, size=spec.n_examples)
    concepts = protos[labels].copy()
    flips = rng.random(concepts.shape) < spec.flip_prob
    concepts[flips] = 1.0 - concepts[flips]
    for src, dst in spec.couplings:
        concepts[:, dst] = concepts[:, src]
    fmap = np.random.default_rng(spec.feature_seed).standard_normal(
        (spec.feature_dim, spec.n_concepts + spec.n_classes))
    onehot = np.zeros((spec.n_examples, spec.n_classes))
    if spec.n_examples:
        onehot[np.arange(spec.n_examples), labels] = 1.0
    features = np.concatenate([concepts, onehot], axis=1) @ fmap.T
    features += spec.feature_noise * rng.standard_normal(features.shape)
    return Dataset(features, concepts, labels, spec.n_classes,
                   bayes_concept_accuracy=spec.bayes_concept_accuracy(),
                   bayes_overall_accuracy=spec.bayes_overall_accuracy(),
                   generator_hash=spec.digest())


# ---------------------------------------------------------------------------
# file round trip
# ---------------------------------------------------------------------------

_HEADER_PREFIX = "#ecbm-dataset v1"


def save(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(
            f"{_HEADER_PREFIX} K={dataset.n_concepts} M={dataset.n_classes} "
            f"f={dataset.feature_dim} N={len(dataset)} "
            f"bayes_concept={_fmt(dataset.bayes_concept_accuracy)} "
            f"bayes_overall={_fmt(dataset.bayes_overall_accuracy)} "
            f"hash={dataset.generator_hash or '-'}\n")
        for x, c, y in zip(dataset.features, dataset.concepts, dataset.labels):
            feats = " ".join(f"{v:.17g}" for v in x)
            bits = "".join(str(int(b)) for b in c)
            fh.write(f"{feats} | {bits} | {int(y)}\n")


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.17g}"


def _parse_float(token: str, what: str):
    if token == "-":
        return None
    try:
        return float(token)
    except ValueError as exc:
        raise DatasetFormatError(f"bad {what}: {token!r}") from exc


def load(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(_HEADER_PREFIX):
            raise DatasetFormatError("line 1: missing dataset header")
        meta = {}
        for token in header[len(_HEADER_PREFIX):].split():
            if "=" not in token:
                raise DatasetFormatError(f"line 1: bad header field {token!r}")
            key, _, val = token.partition("=")
            meta[key] = val
        try:
            k, m = int(meta["K"]), int(meta["M"])
            f, n = int(meta["f"]), int(meta["N"])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"line 1: bad header: {exc}") from exc

        features = np.empty((n, f))
        concepts = np.empty((n, k))
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise DatasetFormatError(
                    f"line {i + 2}: file truncated, expected {n} records")
            parts = line.rstrip("\n").split(" | ")
            if len(parts) != 3:
                raise DatasetFormatError(
                    f"line {i + 2}: expected 'features | bits | label'")
            feats = parts[0].split()
            if len(feats) != f:
                raise DatasetFormatError(
                    f"line {i + 2}: expected {f} features, got {len(feats)}")
            try:
                features[i] = [float(v) for v in feats]
            except ValueError as exc:
                raise DatasetFormatError(f"line {i + 2}: {exc}") from exc
            bits = parts[1].strip()
            if len(bits) != k or set(bits) - {"0", "1"}:
                raise DatasetFormatError(
                    f"line {i + 2}: expected {k} concept bits")
            concepts[i] = [int(b) for b in bits]
            try:
                labels[i] = int(parts[2])
            except ValueError as exc:
                raise DatasetFormatError(f"line {i + 2}: {exc}") from exc
        extra = fh.readline()
        if extra.strip():
            raise DatasetFormatError(f"line {n + 2}: trailing data after {n} records")
    return Dataset(features, concepts, labels, m,
                   bayes_concept_accuracy=_parse_float(
                       meta.get("bayes_concept", "-"), "bayes_concept"),
                   bayes_overall_accuracy=_parse_float(
                       meta.get("bayes_overall", "-"), "bayes_overall"),
                   generator_hash=None if meta.get("hash", "-") == "-"
                   else meta["hash"])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("metrics are undefined on an empty dataset")
    return pred, truth


def concept_accuracy(pred, truth) -> float:
    """Fraction of individually correct concept bits."""
    pred, truth = _pair(pred, truth)
    return float((pred == truth).mean())


def overall_concept_accuracy(pred, truth) -> float:
    """Fraction of examples whose whole concept vector is correct."""
    pred, truth = _pair(pred, truth)
    return float((pred == truth).all(axis=1).mean())


def class_accuracy(pred, truth) -> float:
    """Fraction of correctly predicted class labels."""
    pred, truth = _pair(pred, truth)
    return float((pred == truth).mean())


@dataclass(frozen=True)
class Metrics:
    concept: float
    overall_concept: float
    class_: float


def evaluate_predictions(concepts_pred, classes_pred, dataset: Dataset) -> Metrics:
    return Metrics(
        concept=concept_accuracy(concepts_pred, dataset.concepts.astype(np.int64)),
        overall_concept=overall_concept_accuracy(
            concepts_pred, dataset.concepts.astype(np.int64)),
        class_=class_accuracy(classes_pred, dataset.labels),
    )


# ---------------------------------------------------------------------------
# intervention curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    ratio: float
    concept: float
    overall_concept: float
    class_: float


def intervention_curve(theta, dataset: Dataset, ratios, mode: str = "exact",
                       seed: int = 0, config=None) -> list[CurvePoint]:
    """For each ratio r, pin ceil(r*K) uniformly chosen concepts per example
    to their ground-truth bits, re-infer the rest, and score the metrics."""
    from . import inference  # local import keeps module load light

    if mode not in ("exact", "gradient"):
        raise ValueError("mode must be 'exact' or 'gradient'")
    config = config or inference.DEFAULT_CONFIG
    k = dataset.n_concepts
    truth_bits = dataset.concepts.astype(np.int64)
    points = []
    for ratio in ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("ratios must lie in [0, 1]")
        n_fix = math.ceil(ratio * k)
        rng = np.random.default_rng(seed)
        free_mask = np.ones((len(dataset), k))
        fixed_vals = np.zeros((len(dataset), k))
        for j in range(len(dataset)):
            chosen = rng.permutation(k)[:n_fix]
            free_mask[j, chosen] = 0.0
            fixed_vals[j, chosen] = dataset.concepts[j, chosen]
        if mode == "gradient":
            concepts_pred, classes_pred, _, _ = inference.predict_batch(
                theta, dataset.features, config, free_mask, fixed_vals)
        else:
            concepts_pred = np.empty_like(truth_bits)
            classes_pred = np.empty(len(dataset), dtype=np.int64)
            for j in range(len(dataset)):
                mask = {int(i): int(fixed_vals[j, i])
                        for i in np.flatnonzero(free_mask[j] == 0.0)}
                c_marg, y_marg = inference.exact_marginals(
                    theta, dataset.features[j], mask, config)
                concepts_pred[j] = (c_marg >= 0.5).astype(np.int64)
                classes_pred[j] = int(y_marg.argmax())
        m = evaluate_predictions(concepts_pred, classes_pred, dataset)
        points.append(CurvePoint(float(ratio), m.concept, m.overall_concept,
                                 m.class_))
    return points
