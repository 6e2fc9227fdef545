"""Parameters and the four energy functions: class, concept, global, joint.

Each head scores a (features, embedding) pair with the same pattern: a
linear layer on the features, an elementwise gate by the L2-normalized
embedding with a residual add, relu, then a linear map to one scalar.
Lower energy means better compatibility.

Concepts and classes enter through embeddings.  Concept k owns a positive
and a negative embedding; its effective embedding for a weight c in [0, 1]
is the convex mix c*pos + (1-c)*neg, so binary inputs select a pure
embedding and relaxed inference can move continuously between them.  The
class embedding is likewise the convex mix of the class table under the
class weight vector.  The global head sees all K mixed concept embeddings
concatenated and projected down to the embedding width.

The joint energy combines the heads as

    e_joint = e_class + lambda_c_inf * sum_k e_concept_k + lambda_g_inf * e_global

which is the objective minimized at inference time and the exponent of the
model's Boltzmann conditionals.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import diffcore as dc


@dataclass(frozen=True)
class ModelConfig:
    """Sizes and energy-combination weights.

    lambda_c / lambda_g weight the concept and global losses during
    training; lambda_c_inf / lambda_g_inf weight the concept and global
    energies inside the joint energy (a 1 : 1 : 0.01 class/concept/global
    ratio by default).
    """

    n_concepts: int
    n_classes: int
    feature_dim: int
    embed_dim: int = 16
    dropout_p: float = 0.2
    lambda_c: float = 0.3
    lambda_g: float = 0.3
    lambda_c_inf: float = 1.0
    lambda_g_inf: float = 0.01

    @property
    def hidden_dim(self) -> int:
        # tracks embed_dim so the elementwise gate in each head is shape-valid
        return self.embed_dim

    def __post_init__(self):
        if self.n_concepts < 1:
            raise ValueError("n_concepts must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.feature_dim < 1 or self.embed_dim < 1:
            raise ValueError("feature_dim and embed_dim must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        for name in ("lambda_c", "lambda_g", "lambda_c_inf", "lambda_g_inf"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape; the single source of truth for Theta."""
    f, h, d = cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim
    K, M = cfg.n_concepts, cfg.n_classes
    return {
        "feat_w1": (f, h),
        "feat_b1": (h,),
        "feat_w2": (h, h),
        "feat_b2": (h,),
        "class_embed": (M, d),
        "concept_pos": (K, d),
        "concept_neg": (K, d),
        "class_fc_w": (h, h),
        "class_fc_b": (h,),
        "class_out_w": (h, 1),
        "class_out_b": (1,),
        "concept_fc_w": (h, h),
        "concept_fc_b": (h,),
        "concept_out_w": (h, 1),
        "concept_out_b": (1,),
        "global_proj_w": (K * d, d),
        "global_out_w": (d, 1),
        "global_out_b": (1,),
    }


# fan_in used for each layer's uniform init bound (biases share their
# layer's fan_in)
def _fan_in(cfg: ModelConfig, name: str) -> int:
    shapes = param_shapes(cfg)
    if name.endswith("_w") or name in ("feat_w1", "feat_w2"):
        return shapes[name][0]
    return {
        "feat_b1": cfg.feature_dim,
        "feat_b2": cfg.hidden_dim,
        "class_fc_b": cfg.hidden_dim,
        "class_out_b": cfg.hidden_dim,
        "concept_fc_b": cfg.hidden_dim,
        "concept_out_b": cfg.hidden_dim,
        "global_out_b": cfg.embed_dim,
    }[name]


@dataclass
class Theta:
    """All learnable parameters plus the config they were sized for."""

    config: ModelConfig
    arrays: dict

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ValueError(f"bad parameter set: missing={missing} extra={extra}")
        for name, shape in expected.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape}, expected {shape}"
                )
            if not np.isfinite(arr).all():
                raise ValueError(f"parameter {name} contains non-finite values")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "Theta":
        return Theta(self.config, {k: v.copy() for k, v in self.arrays.items()})


def init_theta(config: ModelConfig, seed: int = 0) -> Theta:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) layers; embeddings are
    0.01-scaled standard normals.  Fixed seed gives identical parameters."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name in ("class_embed", "concept_pos", "concept_neg"):
            arrays[name] = 0.01 * rng.standard_normal(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(config, name))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return Theta(config, arrays)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Joint energy and its parts; e_concept_per_k has one entry per concept."""

    e_class: float
    e_concept_per_k: np.ndarray
    e_global: float
    e_joint: float


# ---------------------------------------------------------------------------
# graph construction (cached per config; parameters are bound per call)
# ---------------------------------------------------------------------------

_GRAPH_CACHE: dict = {}


def _cached(key, build):
    graph = _GRAPH_CACHE.get(key)
    if graph is None:
        graph = build()
        _GRAPH_CACHE[key] = graph
    return graph


def _features(g: dc.GraphBuilder, x: dc.Ref) -> dc.Ref:
    z = g.relu(g.add(g.matmul(x, g.param("feat_w1")), g.param("feat_b1")))
    return g.add(g.matmul(z, g.param("feat_w2")), g.param("feat_b2"))


def _trunk(g, z, prefix, training, p):
    zz = g.add(g.matmul(z, g.param(f"{prefix}_fc_w")), g.param(f"{prefix}_fc_b"))
    if training and p > 0:
        zz = g.dropout(zz, p)
    return zz


def _head(g, gated, prefix):
    """relu then the final linear map to one energy per leading index."""
    e = g.add(g.matmul(g.relu(gated), g.param(f"{prefix}_out_w")),
              g.param(f"{prefix}_out_b"))
    return e  # (..., 1); callers reshape the singleton away


def _class_energy_ref(g, cfg, trunk, y_ref):
    """e_class (B,) for class weights y_ref (B, M)."""
    u = g.matmul(y_ref, g.param("class_embed"))  # (B, d) convex mix
    gated = g.add(g.mul(trunk, g.l2norm(u)), trunk)
    return g.reshape(_head(g, gated, "class"), (-1,))


def _class_energies_all_ref(g, cfg, trunk):
    """e_class for every class at once: (B, M)."""
    t3 = g.reshape(trunk, (-1, 1, cfg.hidden_dim))
    gated = g.add(g.mul(t3, g.l2norm(g.param("class_embed"))), t3)
    return g.reshape(_head(g, gated, "class"), (-1, cfg.n_classes))


def _concept_mix_ref(g, cfg, c_ref):
    """Mixed concept embeddings (B, K, d) for weights c_ref (B, K)."""
    w = g.reshape(c_ref, (-1, cfg.n_concepts, 1))
    return g.mix(w, g.param("concept_pos"), g.param("concept_neg"))


def _concept_energies_ref(g, cfg, trunk, vmix):
    """Per-concept energies (B, K) from mixed embeddings (B, K, d)."""
    t3 = g.reshape(trunk, (-1, 1, cfg.hidden_dim))
    gated = g.add(g.mul(t3, g.l2norm(vmix)), t3)
    return g.reshape(_head(g, gated, "concept"), (-1, cfg.n_concepts))


def _concept_energies_bits_ref(g, cfg, trunk):
    """Energies for both bit values of every concept: (B, K, 2)."""
    t3 = g.reshape(trunk, (-1, 1, cfg.hidden_dim))
    parts = []
    for table in ("concept_neg", "concept_pos"):  # index 0 = bit 0
        gated = g.add(g.mul(t3, g.l2norm(g.param(table))), t3)
        parts.append(_head(g, gated, "concept"))  # (B, K, 1)
    return g.concat(parts, axis=-1)


def _global_energy_ref(g, cfg, vmix, y_ref):
    """e_global (B,) from mixed embeddings (B, K, d) and class weights."""
    flat = g.reshape(vmix, (-1, cfg.n_concepts * cfg.embed_dim))
    proj = g.matmul(flat, g.param("global_proj_w"))
    u = g.matmul(y_ref, g.param("class_embed"))
    gated = g.add(g.mul(u, g.l2norm(proj)), u)
    return g.reshape(_head(g, gated, "global"), (-1,))


def _global_energies_all_ref(g, cfg, vmix):
    """e_global against every class: (n, M) from mixed embeddings (n, K, d)."""
    flat = g.reshape(vmix, (-1, cfg.n_concepts * cfg.embed_dim))
    proj = g.l2norm(g.matmul(flat, g.param("global_proj_w")))
    p3 = g.reshape(proj, (-1, 1, cfg.embed_dim))
    u = g.param("class_embed")  # (M, d)
    gated = g.add(g.mul(u, p3), u)
    return g.reshape(_head(g, gated, "global"), (-1, cfg.n_classes))


def energies_graph(cfg: ModelConfig) -> dc.Graph:
    """x, c, y -> e_class (B,), e_concept (B, K), e_global (B,), e_joint (B,)."""
    def build():
        g = dc.GraphBuilder()
        x, c, y = g.input("x"), g.input("c"), g.input("y")
        z = _features(g, x)
        e_class = _class_energy_ref(g, cfg, _trunk(g, z, "class", False, 0), y)
        vmix = _concept_mix_ref(g, cfg, c)
        e_concept = _concept_energies_ref(
            g, cfg, _trunk(g, z, "concept", False, 0), vmix)
        e_global = _global_energy_ref(g, cfg, vmix, y)
        e_joint = g.add(
            e_class,
            g.add(g.scale(g.sum(e_concept, axis=-1), cfg.lambda_c_inf),
                  g.scale(e_global, cfg.lambda_g_inf)))
        g.output("e_class", e_class)
        g.output("e_concept", e_concept)
        g.output("e_global", e_global)
        g.output("e_joint", e_joint)
        return g.build()
    return _cached(("energies", cfg), build)


def class_all_graph(cfg: ModelConfig) -> dc.Graph:
    """x -> e_class_all (B, M)."""
    def build():
        g = dc.GraphBuilder()
        x = g.input("x")
        z = _features(g, x)
        g.output("e", _class_energies_all_ref(g, cfg, _trunk(g, z, "class", False, 0)))
        return g.build()
    return _cached(("class_all", cfg), build)


def concept_bits_graph(cfg: ModelConfig) -> dc.Graph:
    """x -> e_bits (B, K, 2): concept energies at bit 0 and bit 1."""
    def build():
        g = dc.GraphBuilder()
        x = g.input("x")
        z = _features(g, x)
        g.output("e", _concept_energies_bits_ref(
            g, cfg, _trunk(g, z, "concept", False, 0)))
        return g.build()
    return _cached(("concept_bits", cfg), build)


def global_pairs_graph(cfg: ModelConfig) -> dc.Graph:
    """c (n, K) -> e_global for every class: (n, M)."""
    def build():
        g = dc.GraphBuilder()
        c = g.input("c")
        vmix = _concept_mix_ref(g, cfg, c)
        g.output("e", _global_energies_all_ref(g, cfg, vmix))
        return g.build()
    return _cached(("global_pairs", cfg), build)


def features_graph(cfg: ModelConfig) -> dc.Graph:
    def build():
        g = dc.GraphBuilder()
        x = g.input("x")
        g.output("z", _features(g, x))
        return g.build()
    return _cached(("features", cfg), build)


def loss_graph(cfg: ModelConfig, training: bool) -> dc.Graph:
    """Batched total loss with its three parts.

    Inputs: x (B, f), y_onehot (B, M), c_bits (B, K) for the concept loss,
    c_glob (B, K) for the global head's positive pair (perturbed copy
    during training), negatives (n, K) shared by the whole batch.
    """
    def build():
        g = dc.GraphBuilder()
        x = g.input("x")
        y_onehot = g.input("y_onehot")
        c_bits = g.input("c_bits")
        c_glob = g.input("c_glob")
        neg = g.input("negatives")
        p = cfg.dropout_p
        z = _features(g, x)

        # class branch: E(x, y_true) + logsumexp over classes of -E
        e_all = _class_energies_all_ref(g, cfg, _trunk(g, z, "class", training, p))
        e_true = g.sum(g.mul(e_all, y_onehot), axis=-1)
        l_class_vec = g.add(e_true, g.logsumexp(g.scale(e_all, -1.0)))
        l_class = g.mean(l_class_vec)

        # concept branch: per-concept two-way partition function
        e_bits = _concept_energies_bits_ref(
            g, cfg, _trunk(g, z, "concept", training, p))  # (B, K, 2)
        e_bit_true = g.sum(
            g.mul(e_bits, g.concat(
                [g.reshape(g.add(g.scale(c_bits, -1.0), g.const(1.0)),
                           (-1, cfg.n_concepts, 1)),
                 g.reshape(c_bits, (-1, cfg.n_concepts, 1))], axis=-1)),
            axis=-1)  # (B, K): picks E(x, c_k)
        lse_bits = g.logsumexp(g.scale(e_bits, -1.0))  # (B, K)
        l_concept_vec = g.sum(g.add(e_bit_true, lse_bits), axis=-1)
        l_concept = g.mean(l_concept_vec)

        # global branch: positive pair against the sampled partition sum
        e_pos = _global_energy_ref(g, cfg, _concept_mix_ref(g, cfg, c_glob),
                                   y_onehot)
        e_neg = _global_energies_all_ref(g, cfg, _concept_mix_ref(g, cfg, neg))
        log_z = g.logsumexp(g.scale(g.reshape(e_neg, (-1,)), -1.0))
        l_global = g.add(g.mean(e_pos), log_z)

        l_total = g.add(l_class, g.add(g.scale(l_concept, cfg.lambda_c),
                                       g.scale(l_global, cfg.lambda_g)))
        g.output("l_class", l_class)
        g.output("l_concept", l_concept)
        g.output("l_global", l_global)
        g.output("l_total", l_total)
        return g.build()
    return _cached(("loss", cfg, training), build)


def relaxed_graph(cfg: ModelConfig) -> dc.Graph:
    """Joint energy as a function of unconstrained concept/class scores.

    c_hat = free_mask * sigmoid(c_tilde) + fixed_vals pins intervened
    concepts exactly while letting gradients flow to the free ones;
    y_hat = softmax(y_tilde).

    Concepts enter the heads through their convex embedding mixes.  The
    class variable enters as the expectation of the per-class energies
    under y_hat (for both the class and global heads), which is linear in
    y_hat: heads are trained on pure class embeddings only, and scoring an
    interpolated embedding instead would let the optimizer park y_hat at
    spurious interior minima whose argmax carries no information.  At
    one-hot y_hat both forms coincide with the discrete energies.

    e_total sums e_joint over the batch, so one reverse sweep yields every
    example's gradient (the objective is separable across rows).
    """
    def build():
        g = dc.GraphBuilder()
        x = g.input("x")
        c_tilde = g.input("c_tilde")
        y_tilde = g.input("y_tilde")
        free_mask = g.input("free_mask")
        fixed_vals = g.input("fixed_vals")

        c_hat = g.add(g.mul(free_mask, g.sigmoid(c_tilde)), fixed_vals)
        y_hat = g.softmax(y_tilde)

        z = _features(g, x)
        e_class_all = _class_energies_all_ref(
            g, cfg, _trunk(g, z, "class", False, 0))  # (B, M)
        e_class = g.sum(g.mul(e_class_all, y_hat), axis=-1)
        vmix = _concept_mix_ref(g, cfg, c_hat)
        e_concept = _concept_energies_ref(
            g, cfg, _trunk(g, z, "concept", False, 0), vmix)
        e_global_all = _global_energies_all_ref(g, cfg, vmix)  # (B, M)
        e_global = g.sum(g.mul(e_global_all, y_hat), axis=-1)
        e_joint = g.add(
            e_class,
            g.add(g.scale(g.sum(e_concept, axis=-1), cfg.lambda_c_inf),
                  g.scale(e_global, cfg.lambda_g_inf)))

        g.output("c_hat", c_hat)
        g.output("y_hat", y_hat)
        g.output("e_class", e_class)
        g.output("e_concept", e_concept)
        g.output("e_global", e_global)
        g.output("e_joint", e_joint)
        g.output("e_total", g.sum(e_joint))
        return g.build()
    return _cached(("relaxed", cfg), build)


def class_energy_graph(cfg: ModelConfig) -> dc.Graph:
    def build():
        g = dc.GraphBuilder()
        x, y = g.input("x"), g.input("y")
        z = _features(g, x)
        g.output("e", _class_energy_ref(g, cfg, _trunk(g, z, "class", False, 0), y))
        return g.build()
    return _cached(("class_energy", cfg), build)


def concept_energy_graph(cfg: ModelConfig) -> dc.Graph:
    """x, c (B, K) -> per-concept energies (B, K)."""
    def build():
        g = dc.GraphBuilder()
        x, c = g.input("x"), g.input("c")
        z = _features(g, x)
        vmix = _concept_mix_ref(g, cfg, c)
        g.output("e", _concept_energies_ref(
            g, cfg, _trunk(g, z, "concept", False, 0), vmix))
        return g.build()
    return _cached(("concept_energy", cfg), build)


def global_energy_graph(cfg: ModelConfig) -> dc.Graph:
    def build():
        g = dc.GraphBuilder()
        c, y = g.input("c"), g.input("y")
        vmix = _concept_mix_ref(g, cfg, c)
        g.output("e", _global_energy_ref(g, cfg, vmix, y))
        return g.build()
    return _cached(("global_energy", cfg), build)


# ---------------------------------------------------------------------------
# public energy API
# ---------------------------------------------------------------------------

def _as_batch(arr, dim: int, what: str) -> tuple[np.ndarray, bool]:
    a = dc.as_dense(arr)
    if a.ndim == 1:
        if a.shape[0] != dim:
            raise ValueError(f"{what}: expected length {dim}, got {a.shape[0]}")
        return a[None, :], True
    if a.ndim == 2:
        if a.shape[1] != dim:
            raise ValueError(f"{what}: expected width {dim}, got {a.shape[1]}")
        return a, False
    raise ValueError(f"{what}: expected a 1-d or 2-d array")


def check_simplex(y_weights, tol: float = 1e-9) -> None:
    y = np.atleast_2d(dc.as_dense(y_weights))
    if (y < -tol).any() or (y > 1 + tol).any():
        raise ValueError("class weights must lie in [0, 1]")
    if np.abs(y.sum(axis=-1) - 1.0).max() > tol:
        raise ValueError("class weights must sum to 1")


def check_unit_range(c_weights) -> None:
    c = dc.as_dense(c_weights)
    if (c < 0).any() or (c > 1).any():
        raise ValueError("concept weights must lie in [0, 1]")


def extract_features(theta: Theta, x) -> np.ndarray:
    """Hidden representation z = F(x); deterministic."""
    xb, single = _as_batch(x, theta.config.feature_dim, "x")
    z = dc.evaluate(features_graph(theta.config), {"x": xb}, theta.arrays)["z"]
    return z[0] if single else z


def concept_embedding(theta: Theta, k: int, c_k: float) -> np.ndarray:
    """Convex mix c_k * pos_k + (1 - c_k) * neg_k.  k is a 0-based index."""
    if not 0 <= k < theta.config.n_concepts:
        raise IndexError(f"concept index {k} out of range")
    if not 0.0 <= c_k <= 1.0:
        raise ValueError("concept weight must lie in [0, 1]")
    return c_k * theta["concept_pos"][k] + (1.0 - c_k) * theta["concept_neg"][k]


def class_energy(theta: Theta, x, y_weights):
    """Scalar energy of (x, y) for a point y on the class simplex."""
    check_simplex(y_weights)
    cfg = theta.config
    xb, sx = _as_batch(x, cfg.feature_dim, "x")
    yb, _ = _as_batch(y_weights, cfg.n_classes, "y_weights")
    e = dc.evaluate(class_energy_graph(cfg), {"x": xb, "y": yb}, theta.arrays)["e"]
    return float(e[0]) if sx else e


def concept_energy(theta: Theta, x, k: int, c_k: float):
    """Scalar energy of (x, c_k) for concept k (0-based)."""
    cfg = theta.config
    if not 0 <= k < cfg.n_concepts:
        raise IndexError(f"concept index {k} out of range")
    if not 0.0 <= c_k <= 1.0:
        raise ValueError("concept weight must lie in [0, 1]")
    xb, sx = _as_batch(x, cfg.feature_dim, "x")
    c = np.zeros((xb.shape[0], cfg.n_concepts))
    c[:, k] = c_k
    e = dc.evaluate(concept_energy_graph(cfg), {"x": xb, "c": c}, theta.arrays)["e"]
    return float(e[0, k]) if sx else e[:, k]


def global_energy(theta: Theta, c_weights, y_weights):
    """Scalar energy of a (concepts, class) pair, both possibly relaxed."""
    check_unit_range(c_weights)
    check_simplex(y_weights)
    cfg = theta.config
    cb, sc = _as_batch(c_weights, cfg.n_concepts, "c_weights")
    yb, _ = _as_batch(y_weights, cfg.n_classes, "y_weights")
    e = dc.evaluate(global_energy_graph(cfg), {"c": cb, "y": yb}, theta.arrays)["e"]
    return float(e[0]) if sc else e


def joint_energy(theta: Theta, x, c_weights, y_weights) -> EnergyBreakdown:
    """Breakdown of the joint energy for one example."""
    check_unit_range(c_weights)
    check_simplex(y_weights)
    cfg = theta.config
    xb, single = _as_batch(x, cfg.feature_dim, "x")
    if not single:
        raise ValueError("joint_energy takes a single example")
    cb, _ = _as_batch(c_weights, cfg.n_concepts, "c_weights")
    yb, _ = _as_batch(y_weights, cfg.n_classes, "y_weights")
    out = dc.evaluate(energies_graph(cfg), {"x": xb, "c": cb, "y": yb},
                      theta.arrays)
    return EnergyBreakdown(
        e_class=float(out["e_class"][0]),
        e_concept_per_k=out["e_concept"][0],
        e_global=float(out["e_global"][0]),
        e_joint=float(out["e_joint"][0]),
    )


def class_energies_all(theta: Theta, x) -> np.ndarray:
    """Class energies against every class: (M,) or (B, M)."""
    xb, single = _as_batch(x, theta.config.feature_dim, "x")
    e = dc.evaluate(class_all_graph(theta.config), {"x": xb}, theta.arrays)["e"]
    return e[0] if single else e


def concept_energies_bits(theta: Theta, x) -> np.ndarray:
    """Concept energies at both bit values: (K, 2) or (B, K, 2)."""
    xb, single = _as_batch(x, theta.config.feature_dim, "x")
    e = dc.evaluate(concept_bits_graph(theta.config), {"x": xb}, theta.arrays)["e"]
    return e[0] if single else e


def global_energies_all_classes(theta: Theta, c_weights) -> np.ndarray:
    """Global energies against every class: (M,) or (n, M)."""
    check_unit_range(c_weights)
    cb, single = _as_batch(c_weights, theta.config.n_concepts, "c_weights")
    e = dc.evaluate(global_pairs_graph(theta.config), {"c": cb}, theta.arrays)["e"]
    return e[0] if single else e


def softmax_neg(energies: np.ndarray, axis: int = -1) -> np.ndarray:
    """Boltzmann weights exp(-e) normalized along axis, max-stabilized."""
    e = dc.as_dense(energies)
    shifted = -e + e.min(axis=axis, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=axis, keepdims=True)


def class_posterior(theta: Theta, x) -> np.ndarray:
    """p(y | x) = softmax over classes of the negated class energies."""
    e = class_energies_all(theta, x)
    p = softmax_neg(e)
    if not np.isfinite(p).all():
        raise dc.NonFiniteError("class posterior is not finite")
    return p
