"""Estimator-vs-oracle equivalence and hard-mode counting.

The estimators compute each conditional by its ratio formula; the oracle
materializes the full joint and sums.  Equality across random parameters
is the check that the conditional-probability algebra holds.
"""

import numpy as np
import pytest

from ecbm import data as ed
from ecbm import interpret as it
from ecbm import model as em
from ecbm import oracle as orc
from tests.conftest import make_spec


def random_setup(seed, n_concepts=3, n_classes=2, n_examples=12):
    cfg = em.ModelConfig(n_concepts=n_concepts, n_classes=n_classes,
                         feature_dim=5, embed_dim=4)
    # unit-scale parameters exercise non-trivial energies
    rng = np.random.default_rng(seed)
    theta = em.init_theta(cfg, seed=seed)
    for name in theta.arrays:
        theta.arrays[name] = rng.normal(scale=0.7,
                                        size=theta.arrays[name].shape)
    spec = make_spec(n_concepts=n_concepts, n_classes=n_classes,
                     feature_dim=5, n_examples=n_examples, couplings=())
    return theta, ed.generate(spec, seed=seed + 1)


def zero_all_heads(theta):
    t = theta.copy()
    for prefix in ("class", "concept", "global"):
        t.arrays[f"{prefix}_out_w"] = np.zeros_like(t.arrays[f"{prefix}_out_w"])
        t.arrays[f"{prefix}_out_b"] = np.zeros_like(t.arrays[f"{prefix}_out_b"])
    return t


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_marginal(self, seed):
        theta, ds = random_setup(seed)
        tables = it.marginal_concept_importance(theta, ds, 0)
        for k, table in enumerate(tables):
            ref = orc.brute_force_oracle(theta, ds,
                                         it.MarginalQuery(k=k, class_index=0))
            np.testing.assert_allclose(table.probs, ref.probs, atol=1e-6)

    @pytest.mark.parametrize("seed", [0, 3])
    def test_joint(self, seed):
        theta, ds = random_setup(seed)
        _, table = it.joint_concept_importance(
            theta, ds, 1, np.zeros(theta.config.n_concepts))
        ref = orc.brute_force_oracle(theta, ds, it.JointQuery(class_index=1))
        np.testing.assert_allclose(table.probs, ref.probs, atol=1e-6)

    @pytest.mark.parametrize("seed", [0, 4])
    def test_conditional_given_class(self, seed):
        theta, ds = random_setup(seed)
        for value in (0, 1):
            table = it.concept_conditional_given_class(theta, ds, 0, 2, value, 1)
            ref = orc.brute_force_oracle(theta, ds, it.CondGivenClassQuery(
                k=0, kp=2, value_kp=value, class_index=1))
            np.testing.assert_allclose(table.probs, ref.probs, atol=1e-6)

    @pytest.mark.parametrize("seed", [0, 5])
    def test_class_agnostic_conditional(self, seed):
        theta, ds = random_setup(seed)
        table = it.concept_conditional(theta, ds, 1, 0, 1)
        ref = orc.brute_force_oracle(theta, ds,
                                     it.CondQuery(k=1, kp=0, value_kp=1))
        np.testing.assert_allclose(table.probs, ref.probs, atol=1e-6)

    def test_two_concept_degenerate_inner_sum(self):
        theta, ds = random_setup(7, n_concepts=2)
        table = it.concept_conditional_given_class(theta, ds, 0, 1, 1, 0)
        ref = orc.brute_force_oracle(theta, ds, it.CondGivenClassQuery(
            k=0, kp=1, value_kp=1, class_index=0))
        np.testing.assert_allclose(table.probs, ref.probs, atol=1e-6)


class TestDegenerateCases:
    def test_zero_heads_give_uniform(self):
        theta, ds = random_setup(0)
        t = zero_all_heads(theta)
        for table in it.marginal_concept_importance(t, ds, 0):
            np.testing.assert_allclose(table.probs, 0.5, atol=1e-12)
        _, joint = it.joint_concept_importance(t, ds, 0, np.zeros(3))
        np.testing.assert_allclose(joint.probs, 1 / 8, atol=1e-12)
        cond = it.concept_conditional_given_class(t, ds, 0, 1, 1, 0)
        np.testing.assert_allclose(cond.probs, 0.5, atol=1e-12)
        cond2 = it.concept_conditional(t, ds, 0, 1, 1)
        np.testing.assert_allclose(cond2.probs, 0.5, atol=1e-12)

    def test_single_class_dataset_reduces_to_class_conditional(self):
        theta, ds = random_setup(2)
        only = ds.labels == 0
        single = ed.Dataset(ds.features[only], ds.concepts[only],
                            np.zeros(only.sum(), dtype=np.int64), 2)
        a = it.concept_conditional(theta, single, 0, 1, 1)
        b = it.concept_conditional_given_class(theta, single, 0, 1, 1, 0)
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)

    def test_marginal_normalizes(self):
        theta, ds = random_setup(3)
        for table in it.marginal_concept_importance(theta, ds, 0):
            assert float(table.probs.sum()) == pytest.approx(1.0, abs=1e-9)

    def test_score_unnormalized_vs_table(self):
        theta, ds = random_setup(4)
        c = np.array([1.0, 0.0, 1.0])
        score, table = it.joint_concept_importance(theta, ds, 0, c)
        assert score > 0
        # normalized table entry is the score over the summed scores
        rows = [np.array(bits, dtype=float) for bits, _ in
                [(tuple(int(b) for b in f"{i:03b}"), None) for i in range(8)]]
        scores = [it.joint_concept_importance(theta, ds, 0, r)[0] for r in rows]
        np.testing.assert_allclose(
            table.lookup({"c0": 1, "c1": 0, "c2": 1}),
            score / sum(scores), atol=1e-9)


class TestShiftInvariance:
    @pytest.mark.parametrize("prefix", ["class", "concept", "global"])
    def test_tables_unchanged_by_head_offset(self, prefix):
        theta, ds = random_setup(6)
        shifted = theta.copy()
        shifted.arrays[f"{prefix}_out_b"] = \
            shifted.arrays[f"{prefix}_out_b"] + 7.3
        base = it.marginal_concept_importance(theta, ds, 0)
        moved = it.marginal_concept_importance(shifted, ds, 0)
        for a, b in zip(base, moved):
            np.testing.assert_allclose(a.probs, b.probs, atol=1e-9)
        a = it.concept_conditional(theta, ds, 0, 1, 1)
        b = it.concept_conditional(shifted, ds, 0, 1, 1)
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-9)


class TestMonteCarlo:
    def test_mc_close_to_exact_and_stable_under_doubling(self):
        theta, ds = random_setup(8, n_concepts=8, n_examples=10)
        exact_cfg = it.EstimatorConfig(k_exact=8)
        exact = it.marginal_concept_importance(theta, ds, 0, exact_cfg)[0]
        vals = {}
        for powers in (14, 15):
            cfg = it.EstimatorConfig(k_exact=4, mc_samples=2 ** powers, seed=5)
            vals[powers] = it.marginal_concept_importance(
                theta, ds, 0, cfg)[0].probs[1]
        assert abs(vals[14] - vals[15]) < 0.01
        assert abs(vals[15] - exact.probs[1]) < 0.01

    def test_mc_conditional_given_class(self):
        theta, ds = random_setup(9, n_concepts=6, n_examples=10)
        exact = it.concept_conditional_given_class(
            theta, ds, 0, 3, 1, 0, it.EstimatorConfig(k_exact=6))
        mc = it.concept_conditional_given_class(
            theta, ds, 0, 3, 1, 0,
            it.EstimatorConfig(k_exact=3, mc_samples=2 ** 15, seed=1))
        assert abs(exact.probs[1] - mc.probs[1]) < 0.02

    def test_mc_class_agnostic(self):
        theta, ds = random_setup(10, n_concepts=6, n_examples=10)
        exact = it.concept_conditional(theta, ds, 2, 4, 1,
                                       it.EstimatorConfig(k_exact=6))
        mc = it.concept_conditional(
            theta, ds, 2, 4, 1,
            it.EstimatorConfig(k_exact=3, mc_samples=2 ** 15, seed=2))
        assert abs(exact.probs[1] - mc.probs[1]) < 0.02

    def test_joint_table_refuses_large_k(self):
        theta, ds = random_setup(11, n_concepts=6)
        cfg = it.EstimatorConfig(k_exact=3)
        score, table = it.joint_concept_importance(
            theta, ds, 0, np.zeros(6), cfg)
        assert table is None
        assert np.isfinite(score)


class TestHardEstimates:
    def test_perfect_predictor_recovers_empirical_frequency(self):
        theta, ds = random_setup(12, n_examples=40)
        truth = (ds.concepts.astype(np.int64), ds.labels)
        q = it.CondQuery(k=0, kp=1, value_kp=1)
        est = it.hard_estimates(theta, ds, q, predictions=truth)
        sel = ds.concepts[:, 1] == 1
        expected = ds.concepts[sel, 0].mean()
        assert est.defined
        assert est.table.probs[1] == pytest.approx(expected, abs=0)

    def test_undefined_when_conditioning_event_absent(self):
        theta, ds = random_setup(13, n_examples=10)
        preds = (np.zeros_like(ds.concepts, dtype=np.int64),
                 np.zeros(len(ds), dtype=np.int64))
        est = it.hard_estimates(theta, ds, it.CondQuery(k=0, kp=1, value_kp=1),
                                predictions=preds)
        assert not est.defined
        assert est.table is None

    def test_marginal_and_class_conditional_counting(self):
        theta, ds = random_setup(14, n_examples=30)
        truth = (ds.concepts.astype(np.int64), ds.labels)
        for m in range(2):
            est = it.hard_estimates(theta, ds,
                                    it.MarginalQuery(k=2, class_index=m),
                                    predictions=truth)
            sel = ds.labels == m
            if sel.any():
                assert est.defined
                assert est.table.probs[1] == pytest.approx(
                    ds.concepts[sel, 2].mean())

    def test_joint_query_counts(self):
        theta, ds = random_setup(15, n_examples=30)
        truth = (ds.concepts.astype(np.int64), ds.labels)
        est = it.hard_estimates(theta, ds, it.JointQuery(class_index=0),
                                predictions=truth)
        assert est.defined
        assert float(est.table.probs.sum()) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_same_indices(self):
        theta, ds = random_setup(16)
        with pytest.raises(ValueError):
            it.hard_estimates(theta, ds, it.CondQuery(k=1, kp=1, value_kp=0),
                              predictions=(ds.concepts.astype(np.int64),
                                           ds.labels))


class TestEstimatorConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            it.EstimatorConfig(mode="fuzzy")
        with pytest.raises(ValueError):
            it.EstimatorConfig(k_exact=0)
