"""Signed-gradient search: reductions, budget exactness, sign conventions."""

import numpy as np
import pytest

from aidkit.aid import (
    AidConfig,
    aid_dataset,
    fgsm_aid,
    fgsm_attack,
    ifgsm_aid,
    ifgsm_attack,
)
from aidkit.core import (
    InvalidLabelError,
    LabeledDataset,
    PerturbationBudget,
    clip_box,
    input_gradient,
    project_budget,
)
from aidkit.zoo import LinearSoftmaxModel, build_structure, NetHandle


@pytest.fixture(scope="module")
def linear_model():
    rng = np.random.default_rng(10)
    W = rng.normal(size=(12, 4))
    return LinearSoftmaxModel(W, input_shape=(2, 2, 3))


@pytest.fixture(scope="module")
def conv_model():
    net, feats = build_structure("tinycnn", (8, 8, 3), 5, seed=3)
    return NetHandle(net, 5, (8, 8, 3), model_id="rand_cnn", feature_layers=feats)


def rand_image(shape, seed):
    return np.random.default_rng(seed).uniform(0, 1, shape)


class TestFgsm:
    def test_zero_epsilon(self, linear_model):
        x = rand_image((2, 2, 3), 0)
        r = fgsm_aid(linear_model, x, 1, 0.0)
        np.testing.assert_array_equal(r.perturbation.delta, 0.0)
        np.testing.assert_array_equal(r.perturbed.probabilities,
                                      r.original.probabilities)
        assert r.perturbed.predicted_class == r.original.predicted_class

    def test_linear_closed_form(self, linear_model):
        x = rand_image((2, 2, 3), 1)
        y, eps = 2, 0.05
        g = input_gradient(linear_model, x, y)
        r = fgsm_aid(linear_model, x, y, eps)
        np.testing.assert_array_equal(r.perturbation.delta, -eps * np.sign(g))
        # descent direction: <grad, delta> = -eps * ||grad||_1 < 0
        dd = float((g * r.perturbation.delta).sum())
        assert dd == pytest.approx(-eps * np.abs(g).sum(), rel=1e-12)
        assert dd < 0

    def test_aid_is_negated_attack(self, linear_model):
        x = rand_image((2, 2, 3), 2)
        ra = fgsm_aid(linear_model, x, 0, 0.03)
        rt = fgsm_attack(linear_model, x, 0, 0.03)
        np.testing.assert_array_equal(ra.perturbation.delta,
                                      -rt.perturbation.delta)

    def test_method_and_direction_tags(self, linear_model):
        x = rand_image((2, 2, 3), 3)
        assert fgsm_aid(linear_model, x, 0, 0.01).method == "fgsm_aid"
        assert fgsm_attack(linear_model, x, 0, 0.01).perturbation.direction == "attack"


class TestIfgsm:
    @pytest.mark.parametrize("model_fix", ["linear_model", "conv_model"])
    def test_n1_reduces_to_fgsm_plus_clips(self, model_fix, request):
        model = request.getfixturevalue(model_fix)
        x = rand_image(model.input_shape, 4)
        y, eps = 1, 0.05
        budget = PerturbationBudget(eps, np.inf, 1)
        ri = ifgsm_aid(model, x, y, budget)
        rf = fgsm_aid(model, x, y, eps)
        d = project_budget(rf.perturbation.delta, x, budget)
        np.testing.assert_array_equal(ri.perturbation.delta, d)
        # identical delta bits through the same finalization -> identical image
        np.testing.assert_array_equal(ri.perturbed_image, rf.perturbed_image)
        # and the image is the clipped application up to <=1-ulp budget repair
        np.testing.assert_allclose(ri.perturbed_image,
                                   clip_box(x + d, 0.0, 1.0), atol=5e-16)

    def test_budget_exactness_and_box(self, conv_model):
        rng = np.random.default_rng(5)
        for i in range(10):
            x = rng.uniform(0, 1, conv_model.input_shape)
            eps = float(rng.choice([0.01, 0.05, 0.3, 5.0]))
            r = ifgsm_aid(conv_model, x, int(rng.integers(0, 5)),
                          PerturbationBudget(eps, np.inf, 5))
            z = r.perturbed_image
            assert np.abs(z - x).max() <= eps
            assert z.min() >= 0.0 and z.max() <= 1.0
            assert np.abs(r.perturbation.delta).max() <= eps

    def test_aid_raises_confidence_linear(self, linear_model):
        x = rand_image((2, 2, 3), 6)
        r = ifgsm_aid(linear_model, x, 3, PerturbationBudget(0.1, np.inf, 20))
        assert r.perturbed.true_class_confidence > r.original.true_class_confidence

    def test_attack_lowers_confidence_linear(self, linear_model):
        x = rand_image((2, 2, 3), 7)
        r = ifgsm_attack(linear_model, x, 3, PerturbationBudget(0.1, np.inf, 20))
        assert r.perturbed.true_class_confidence < r.original.true_class_confidence

    def test_first_step_antisymmetry(self, conv_model):
        # unclipped first steps of aid and attack are exact negations
        x = rand_image(conv_model.input_shape, 8)
        y, eps = 2, 0.04
        budget = PerturbationBudget(eps, np.inf, 1)
        ra = ifgsm_aid(conv_model, x, y, budget)
        rt = ifgsm_attack(conv_model, x, y, budget)
        np.testing.assert_array_equal(ra.perturbation.delta, -rt.perturbation.delta)

    def test_directional_derivative_signs(self, conv_model):
        x = rand_image(conv_model.input_shape, 9)
        y = 0
        g = input_gradient(conv_model, x, y)
        eps, n = 0.05, 10
        step_aid = -(eps / n) * np.sign(g)
        assert float((g * step_aid).sum()) == pytest.approx(
            -(eps / n) * np.abs(g).sum(), rel=1e-12)
        assert float((g * -step_aid).sum()) > 0

    def test_determinism(self, conv_model):
        x = rand_image(conv_model.input_shape, 10)
        budget = PerturbationBudget(0.05, np.inf, 8)
        a = ifgsm_aid(conv_model, x, 1, budget)
        b = ifgsm_aid(conv_model, x, 1, budget)
        np.testing.assert_array_equal(a.perturbation.delta, b.perturbation.delta)
        np.testing.assert_array_equal(a.perturbed_image, b.perturbed_image)

    def test_rejects_l2_budget(self, linear_model):
        with pytest.raises(ValueError):
            ifgsm_aid(linear_model, rand_image((2, 2, 3), 11), 0,
                      PerturbationBudget(0.1, 2, 5))

    def test_invalid_label(self, linear_model):
        with pytest.raises(InvalidLabelError):
            ifgsm_aid(linear_model, rand_image((2, 2, 3), 12), 9,
                      PerturbationBudget(0.1, np.inf, 2))


class TestAidDataset:
    def _dataset(self, model, n=12, seed=13):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(0, 1, (n,) + tuple(model.input_shape))
        ys = rng.integers(0, model.class_count, n)
        return LabeledDataset(xs, ys, model.class_count, name="toy")

    def test_zero_epsilon_matches_plain_eval(self, linear_model):
        ds = self._dataset(linear_model)
        cfg = AidConfig(PerturbationBudget(0.0, np.inf, 3))
        results, report = aid_dataset(linear_model, ds, cfg)
        rows = {r["stage"]: r for r in report.rows}
        assert rows["original"]["accuracy"] == rows["perturbed"]["accuracy"]
        assert rows["original"]["mean_confidence"] == pytest.approx(
            rows["perturbed"]["mean_confidence"], rel=1e-12)

    def test_accuracy_definition(self, linear_model):
        ds = self._dataset(linear_model, n=20, seed=14)
        cfg = AidConfig.weak(iterations=5)
        results, report = aid_dataset(linear_model, ds, cfg)
        manual = np.mean([r.perturbed.predicted_class == y
                          for r, y in zip(results, ds.labels)])
        row = [r for r in report.rows if r["stage"] == "perturbed"][0]
        assert row["accuracy"] == pytest.approx(manual, abs=1e-12)
        assert row["n"] == 20

    def test_aid_helps(self, linear_model):
        ds = self._dataset(linear_model, n=30, seed=15)
        cfg = AidConfig(PerturbationBudget(0.2, np.inf, 25))
        _, report = aid_dataset(linear_model, ds, cfg)
        rows = {r["stage"]: r for r in report.rows}
        assert rows["perturbed"]["mean_confidence"] > rows["original"]["mean_confidence"]

    def test_empty_dataset_rejected(self, linear_model):
        ds = LabeledDataset(np.zeros((0, 2, 2, 3)), [], 4)
        with pytest.raises(ValueError):
            aid_dataset(linear_model, ds, AidConfig.weak(iterations=2))


class TestAidConfig:
    def test_defaults_match_regimes(self):
        assert AidConfig.weak().budget.epsilon == 0.05
        assert AidConfig.strong().budget.epsilon == 5.0
        assert AidConfig.weak().budget.iterations == 50

    def test_overridable(self):
        cfg = AidConfig.strong(epsilon=2.0, iterations=10)
        assert cfg.budget.epsilon == 2.0

    def test_validation(self):
        with pytest.raises(ValueError):
            AidConfig(PerturbationBudget(0.05), regime="mild")
