"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line (run with -s to see them).

Criteria 4-6 share one trained model: K=6, M=4, 16 features, 2000 train
examples, 5% concept-bit flip noise, one coupled concept pair, seed 0,
30 epochs, default hyperparameters.  Metrics are measured on a held-out
split drawn from the same generator.
"""

import itertools
import json
import time

import numpy as np
import pytest

from ecbm import data as ed
from ecbm import diffcore as dc
from ecbm import inference as inf
from ecbm import interpret as it
from ecbm import model as em
from ecbm import oracle as orc
from ecbm import training as tr
from ecbm.cli import main as cli_main
from ecbm.persist import load_checkpoint, save_checkpoint


def report(criterion, ok, detail):
    line = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def random_theta(cfg, seed, scale=0.7):
    theta = em.init_theta(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name in theta.arrays:
        theta.arrays[name] = rng.normal(scale=scale,
                                        size=theta.arrays[name].shape)
    return theta


def small_dataset(k, m, seed, n=50):
    rng = np.random.default_rng(seed)
    protos = set()
    while len(protos) < m:
        protos.add(tuple(int(b) for b in rng.integers(0, 2, k)))
    spec = ed.GeneratorSpec(n_concepts=k, n_classes=m, feature_dim=5,
                            n_examples=n, prototypes=tuple(sorted(protos)),
                            flip_prob=0.1, couplings=(), feature_seed=seed,
                            feature_noise=0.3)
    return ed.generate(spec, seed=seed + 1)


MAIN_SPEC = ed.GeneratorSpec(
    n_concepts=6, n_classes=4, feature_dim=16, n_examples=2000,
    prototypes=((1, 1, 0, 0, 1, 0), (0, 1, 1, 0, 0, 1),
                (1, 0, 1, 1, 0, 0), (0, 0, 0, 1, 1, 1)),
    flip_prob=0.05, couplings=((4, 5),), feature_seed=1, feature_noise=0.1)


@pytest.fixture(scope="module")
def main_model():
    train_set = ed.generate(MAIN_SPEC, seed=0)
    test_set = ed.generate(MAIN_SPEC, seed=1)
    cfg = em.ModelConfig(n_concepts=6, n_classes=4, feature_dim=16,
                         embed_dim=16)
    started = time.time()
    theta, history = tr.train(em.init_theta(cfg, seed=0), train_set,
                              tr.TrainConfig(epochs=30, seed=0))
    train_seconds = time.time() - started
    concepts, classes, _, _ = inf.predict_batch(theta, test_set.features)
    return {
        "theta": theta,
        "train_set": train_set,
        "test_set": test_set,
        "history": history,
        "train_seconds": train_seconds,
        "predictions": (concepts, classes),
    }


def test_criterion_1_estimators_equal_oracle():
    """Every soft conditional estimator matches the brute-force oracle to
    1e-6 on every support point, across 5 random models."""
    started = time.time()
    worst = 0.0
    combos = [(3, 2), (4, 3), (5, 4), (6, 2), (4, 4)]
    for draw, (k, m) in enumerate(combos):
        cfg = em.ModelConfig(n_concepts=k, n_classes=m, feature_dim=5,
                             embed_dim=4)
        theta = random_theta(cfg, seed=draw)
        ds = small_dataset(k, m, seed=draw)

        def track(a, b):
            nonlocal worst
            gap = float(np.abs(np.asarray(a) - np.asarray(b)).max())
            worst = max(worst, gap)
            assert gap <= 1e-6, f"draw {draw} (K={k}, M={m}): gap {gap}"

        for cls in range(m):
            tables = it.marginal_concept_importance(theta, ds, cls)
            for kk, table in enumerate(tables):
                ref = orc.brute_force_oracle(theta, ds,
                                             it.MarginalQuery(kk, cls))
                track(table.probs, ref.probs)
            _, joint = it.joint_concept_importance(theta, ds, cls, np.zeros(k))
            track(joint.probs,
                  orc.brute_force_oracle(theta, ds, it.JointQuery(cls)).probs)
            for kk, kp in itertools.permutations(range(k), 2):
                for val in (0, 1):
                    est = it.concept_conditional_given_class(
                        theta, ds, kk, kp, val, cls)
                    ref = orc.brute_force_oracle(theta, ds, it.CondGivenClassQuery(
                        kk, kp, val, cls))
                    track(est.probs, ref.probs)
        for kk, kp in itertools.permutations(range(k), 2):
            for val in (0, 1):
                est = it.concept_conditional(theta, ds, kk, kp, val)
                ref = orc.brute_force_oracle(theta, ds,
                                             it.CondQuery(kk, kp, val))
                track(est.probs, ref.probs)

        # input-conditioned propositions on three examples
        masks = [{}, {0: 1}, {0: 0, k - 1: 1}]
        for x in ds.features[:3]:
            for mask in masks:
                table = inf.intervene_exact(theta, x, mask)
                ref = orc.brute_force_oracle(
                    theta, ds, orc.InterventionQuery(x=x, fixed=mask))
                track(table.probs, ref.probs)
                if len(mask) < k:
                    miss = inf.missing_concept_posterior(theta, x, mask)
                    ref = orc.brute_force_oracle(
                        theta, ds, orc.MissingConceptQuery(x=x, fixed=mask))
                    track(miss.probs, ref.probs)
            for kk in range(k):
                for val in (0, 1):
                    p = inf.class_given_concept(theta, x, kk, val)
                    ref = orc.brute_force_oracle(theta, ds,
                                                 orc.ClassGivenConceptQuery(
                                                     x=x, k=kk, value=val))
                    track(p, ref.probs)
    elapsed = time.time() - started
    report(1, worst <= 1e-6 and elapsed < 60,
           f"max |estimator - oracle| = {worst:.2e} over 5 models "
           f"in {elapsed:.1f}s (< 60s)")


def test_criterion_2_loss_gradients():
    """Analytic gradients of the three losses match central finite
    differences within 1e-4 relative error at 3 random parameter draws."""
    cfg = em.ModelConfig(n_concepts=2, n_classes=2, feature_dim=3,
                         embed_dim=2, dropout_p=0.0)
    graph = em.loss_graph(cfg, training=False)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for seed in range(3):
        theta = random_theta(cfg, seed=seed, scale=0.5)
        point = dict(theta.arrays)
        point["x"] = rng.normal(size=(2, 3))
        point["y_onehot"] = np.eye(2)[rng.integers(0, 2, 2)]
        point["c_bits"] = rng.integers(0, 2, (2, 2)).astype(float)
        point["c_glob"] = point["c_bits"].copy()
        point["negatives"] = inf.enumerate_bits(2)  # exhaustive
        for out in ("l_class", "l_concept", "l_global"):
            err = dc.check_gradient(graph, dict(point), 1e-5, output=out)
            worst = max(worst, float(err))
            assert err < 1e-4, f"{out} at draw {seed}: {err}"
    report(2, worst < 1e-4,
           f"max relative gradient error {worst:.2e} (< 1e-4)")


def test_criterion_3_normalization_and_shift_invariance():
    """Posteriors and tables normalize to 1e-9; adding 7.3 to any one
    energy head moves no table entry by more than 1e-9."""
    cfg = em.ModelConfig(n_concepts=4, n_classes=3, feature_dim=5,
                         embed_dim=4)
    theta = random_theta(cfg, seed=5, scale=0.5)
    ds = small_dataset(4, 3, seed=5, n=30)
    rng = np.random.default_rng(0)
    worst_norm = 0.0
    for _ in range(10):
        p = em.class_posterior(theta, rng.normal(size=5))
        worst_norm = max(worst_norm, abs(float(p.sum()) - 1.0))

    def tables_for(th):
        out = [inf.intervene_exact(th, ds.features[0], {0: 1}).probs,
               inf.missing_concept_posterior(th, ds.features[1], {1: 0}).probs,
               it.concept_conditional(th, ds, 0, 1, 1).probs,
               it.concept_conditional_given_class(th, ds, 2, 3, 1, 1).probs,
               it.joint_concept_importance(th, ds, 0, np.zeros(4))[1].probs]
        out.extend(t.probs for t in it.marginal_concept_importance(th, ds, 2))
        return out

    base = tables_for(theta)
    for t in base:
        worst_norm = max(worst_norm, abs(float(t.sum()) - 1.0))
    worst_shift = 0.0
    for prefix in ("class", "concept", "global"):
        shifted = theta.copy()
        shifted.arrays[f"{prefix}_out_b"] = \
            shifted.arrays[f"{prefix}_out_b"] + 7.3
        for a, b in zip(base, tables_for(shifted)):
            worst_shift = max(worst_shift, float(np.abs(a - b).max()))
    report(3, worst_norm <= 1e-9 and worst_shift <= 1e-9,
           f"normalization gap {worst_norm:.2e}, shift-induced change "
           f"{worst_shift:.2e} (both <= 1e-9)")


def test_criterion_4_training_sanity(main_model):
    """Loss falls, concept accuracy reaches the generator's noise floor
    within 0.05, class accuracy beats twice the uniform baseline."""
    history = main_model["history"]
    test_set = main_model["test_set"]
    concepts, classes = main_model["predictions"]
    metrics = ed.evaluate_predictions(concepts, classes, test_set)
    bayes = test_set.bayes_concept_accuracy
    ok = (history[-1].l_total < history[0].l_total
          and abs(metrics.concept - bayes) <= 0.05
          and metrics.class_ > 2 * 0.25
          and main_model["train_seconds"] < 300)
    report(4, ok,
           f"loss {history[0].l_total:.3f} -> {history[-1].l_total:.3f}, "
           f"concept acc {metrics.concept:.4f} (noise floor {bayes:.2f} "
           f"+/- 0.05), class acc {metrics.class_:.4f} (> 0.5), "
           f"trained in {main_model['train_seconds']:.1f}s (< 300s)")


def test_criterion_5_intervention_trend(main_model):
    """Overall concept accuracy is non-decreasing in the intervention
    ratio, exactly 1 at full intervention; class accuracy does not drop."""
    theta = main_model["theta"]
    test_set = main_model["test_set"]
    points = ed.intervention_curve(theta, test_set, [0, 0.25, 0.5, 0.75, 1],
                                   mode="exact", seed=0)
    overall = [p.overall_concept for p in points]
    ok = (all(b >= a - 1e-12 for a, b in zip(overall, overall[1:]))
          and overall[-1] == 1.0
          and points[-1].class_ >= points[0].class_)
    report(5, ok,
           "overall concept accuracy by ratio " +
           " -> ".join(f"{v:.3f}" for v in overall) +
           f"; class {points[0].class_:.3f} -> {points[-1].class_:.3f}")


def test_criterion_6_interpretation_fidelity(main_model):
    """Hard-mode p(c_k=1 | c_k'=1) tracks the dataset frequencies with a
    mean L1 gap of at most 0.1 over all ordered concept pairs."""
    theta = main_model["theta"]
    test_set = main_model["test_set"]
    predictions = main_model["predictions"]
    truth = test_set.concepts.astype(np.int64)
    gaps = []
    for k, kp in itertools.permutations(range(6), 2):
        est = it.hard_estimates(theta, test_set,
                                it.CondQuery(k=k, kp=kp, value_kp=1),
                                predictions=predictions)
        assert est.defined, f"pair ({k}, {kp}) undefined"
        sel = truth[:, kp] == 1
        empirical = truth[sel, k].mean()
        gaps.append(abs(float(est.table.probs[1]) - empirical))
    mean_gap = float(np.mean(gaps))
    report(6, mean_gap <= 0.1,
           f"mean L1 gap {mean_gap:.4f} over {len(gaps)} ordered pairs "
           f"(<= 0.1), max {max(gaps):.4f}")


def test_criterion_7_determinism(tmp_path):
    """Seeded train + eval twice gives byte-identical outputs; checkpoints
    survive a load/save round trip byte-for-byte."""
    spec = tmp_path / "gen.cfg"
    spec.write_text(
        "n_concepts=4\nn_classes=3\nfeature_dim=6\nn_examples=120\n"
        "flip_prob=0.05\nfeature_noise=0.1\nfeature_seed=2\n"
        "couplings=0:1\nprototypes=1100,0110,0011\n")
    data = tmp_path / "train.txt"
    assert cli_main(["generate", "--spec", str(spec), "--seed", "0",
                     "--out", str(data)]) == 0
    ckpts, summaries = [], []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"model_{tag}.ckpt"
        summary = tmp_path / f"summary_{tag}.json"
        assert cli_main(["train", "--data", str(data), "--out", str(ckpt),
                         "--epochs", "3", "--embed-dim", "6",
                         "--seed", "0"]) == 0
        assert cli_main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                         "--out", str(summary)]) == 0
        ckpts.append(ckpt.read_bytes())
        summaries.append(summary.read_bytes())
    theta = load_checkpoint(tmp_path / "model_a.ckpt")
    resaved = tmp_path / "resaved.ckpt"
    save_checkpoint(resaved, theta)
    ok = (ckpts[0] == ckpts[1] and summaries[0] == summaries[1]
          and resaved.read_bytes() == ckpts[0])
    report(7, ok,
           "checkpoints identical across runs, metric summaries "
           "byte-identical, round trip lossless")


def test_criterion_8_exact_vs_gradient_intervention(small_trained):
    """With one concept pinned to truth, gradient-mode class predictions
    agree with the exact posterior's class argmax on at least 90 of 100
    inputs (K=4, M=3)."""
    theta, _, test_set, _ = small_trained
    n = 100
    rng = np.random.default_rng(0)
    k = theta.config.n_concepts
    free = np.ones((n, k))
    fixed = np.zeros((n, k))
    for j in range(n):
        pin = int(rng.integers(0, k))
        free[j, pin] = 0.0
        fixed[j, pin] = test_set.concepts[j, pin]
    _, classes_grad, _, _ = inf.predict_batch(
        theta, test_set.features[:n], free_mask=free, fixed_vals=fixed)
    agree = 0
    for j in range(n):
        mask = {int(i): int(fixed[j, i]) for i in np.flatnonzero(free[j] == 0)}
        _, y_marg = inf.exact_marginals(theta, test_set.features[j], mask)
        agree += int(classes_grad[j] == int(y_marg.argmax()))
    report(8, agree >= 90, f"class agreement {agree}/100 (>= 90)")
