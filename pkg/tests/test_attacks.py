"""Attack module: FGSM, DeepFool, C&W, presets, batch runner."""

import numpy as np
import pytest

from helpers import hand_bundle, linear_model, random_linear_model
from zslbench import predict
from zslbench.attacks import (ATTACK_PRESETS, AttackConfig, AttackError,
                              attack_batch, attack_cw_l2, attack_deepfool,
                              attack_fgsm, run_attack)


def one_d_model():
    return linear_model([[1.0]], [[1.0], [-1.0]])


def diag_model():
    """2-pixel identity model with axis-aligned classes: s_i = x_i."""
    return linear_model(np.eye(2), [[1.0, 0.0], [0.0, 1.0]])


class TestAttackConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(kind="pgd")
        with pytest.raises(ValueError):
            AttackConfig(kind="fgsm", epsilon=-0.1)
        with pytest.raises(ValueError):
            AttackConfig(kind="deepfool", max_iter=0)
        with pytest.raises(ValueError):
            AttackConfig(kind="deepfool", top_k=0)
        with pytest.raises(ValueError):
            AttackConfig(kind="cw_l2", c=0.0)
        with pytest.raises(ValueError):
            AttackConfig(kind="cw_l2", lr=0.0)
        with pytest.raises(ValueError):
            AttackConfig(kind="cw_l2", kappa=-1.0)
        with pytest.raises(ValueError):
            AttackConfig(kind="deepfool", overshoot_mode="huge")

    def test_preset_table_pinned(self):
        eps = {f"FGSM_{i}": e for i, e in zip((1, 2, 3), (0.001, 0.01, 0.1))}
        for name, e in eps.items():
            assert ATTACK_PRESETS[name].kind == "fgsm"
            assert ATTACK_PRESETS[name].epsilon == e
        defo = {"DEFO_1": (3, 1e-6), "DEFO_2": (3, 1e-5), "DEFO_3": (10, 1e-6)}
        for name, (it, ov) in defo.items():
            p = ATTACK_PRESETS[name]
            assert p.kind == "deepfool"
            assert (p.max_iter, p.epsilon) == (it, ov)
        for name, it in (("CaWa_1", 3), ("CaWa_2", 6), ("CaWa_3", 10)):
            p = ATTACK_PRESETS[name]
            assert p.kind == "cw_l2"
            assert p.max_iter == it
            assert (p.c, p.lr) == (1.0, 0.01)
        assert all(p.clip for p in ATTACK_PRESETS.values())


class TestFgsm:
    def test_one_d_worked_example(self):
        # true class 1: loss decreases in x, so the step is -epsilon
        model = one_d_model()
        cfg = AttackConfig(kind="fgsm", epsilon=0.1)
        res = attack_fgsm(np.array([0.3]), 1, model, [1, 2], cfg)
        assert abs(res.adv_image[0] - 0.2) < 1e-15
        assert abs(res.perturbation_linf - 0.1) < 1e-15

    def test_zero_epsilon_is_identity(self):
        model = one_d_model()
        cfg = AttackConfig(kind="fgsm", epsilon=0.0)
        img = np.array([0.3])
        res = attack_fgsm(img, 1, model, [1, 2], cfg)
        np.testing.assert_array_equal(res.adv_image, img)
        assert res.perturbation_l2 == 0.0
        assert res.perturbation_linf == 0.0
        assert not res.crossed_boundary

    def test_matches_defining_formula_bitwise(self):
        rng = np.random.default_rng(11)
        model = random_linear_model(rng, 6, 3, 4)
        img = rng.random(6)
        cfg = AttackConfig(kind="fgsm", epsilon=0.03)
        from zslbench import loss_and_input_grad
        _, g = loss_and_input_grad(img, 1, model)
        expected = np.clip(img + cfg.epsilon * np.sign(g), 0.0, 1.0)
        res = attack_fgsm(img, 1, model, None, cfg)
        np.testing.assert_array_equal(res.adv_image, expected)

    def test_linf_step_exact_on_unsaturated_coords(self):
        rng = np.random.default_rng(12)
        eps = 0.01
        cfg = AttackConfig(kind="fgsm", epsilon=eps)
        one_ulp = np.spacing(1.0 + eps)
        for _ in range(20):
            model = random_linear_model(rng, 5, 3, 3)
            img = rng.uniform(0.2, 0.8, size=5)  # interior, no clipping
            res = attack_fgsm(img, 1, model, None, cfg)
            from zslbench import loss_and_input_grad
            _, g = loss_and_input_grad(img, 1, model)
            diff = np.abs(res.adv_image - img)
            live = np.sign(g) != 0
            assert np.all(np.abs(diff[live] - eps) <= one_ulp)
            assert np.all(diff[~live] == 0.0)

    def test_single_gradient_evaluation(self, monkeypatch):
        import zslbench.attacks as atk
        calls = {"n": 0}
        real = atk.loss_and_input_grad

        def counting(*args, **kwargs):
            calls["n"] += 1
            return real(*args, **kwargs)

        monkeypatch.setattr(atk, "loss_and_input_grad", counting)
        cfg = AttackConfig(kind="fgsm", epsilon=0.01)
        attack_fgsm(np.array([0.3]), 1, one_d_model(), [1, 2], cfg)
        assert calls["n"] == 1

    def test_crossed_flag_tracks_prediction_change(self):
        model = diag_model()
        img = np.array([0.55, 0.45])
        small = attack_fgsm(img, 1, model, None,
                            AttackConfig(kind="fgsm", epsilon=0.01))
        big = attack_fgsm(img, 1, model, None,
                          AttackConfig(kind="fgsm", epsilon=0.1))
        assert not small.crossed_boundary
        assert big.crossed_boundary

    def test_norms_match_recomputation(self):
        rng = np.random.default_rng(13)
        model = random_linear_model(rng, 6, 3, 4)
        img = rng.random(6)
        res = attack_fgsm(img, 2, model, None,
                          AttackConfig(kind="fgsm", epsilon=0.05))
        d = res.adv_image - img
        assert res.perturbation_l2 == float(np.linalg.norm(d.ravel()))
        assert res.perturbation_linf == float(np.max(np.abs(d)))
        assert res.elapsed >= 0.0


def _deepfool_oracle(x, model, eps):
    """Nearest linearized boundary step for an identity-extractor model."""
    ids = sorted(model.embeddings)
    phis = np.asarray([model.embeddings[c] for c in ids])
    W = model.weights.W
    scores = phis @ (W.T @ x)
    p = int(np.argmax(scores))
    best = None
    for k in range(len(ids)):
        if k == p:
            continue
        w = W @ (phis[k] - phis[p])
        f = scores[k] - scores[p]
        nw = np.linalg.norm(w)
        if nw < 1e-12:
            continue
        d = abs(f) / nw
        if best is None or d < best[0]:
            best = (d, w, f)
    d, w, f = best
    return x + (abs(f) + eps) / (np.dot(w, w)) * w


class TestDeepFool:
    def test_two_class_worked_example(self):
        # boundary x1 = x2; projection from (1, 0) lands at (0.5, 0.5)
        model = diag_model()
        cfg = AttackConfig(kind="deepfool", max_iter=1, epsilon=1e-6)
        res = attack_deepfool(np.array([1.0, 0.0]), model, None, cfg)
        np.testing.assert_allclose(res.adv_image, [0.5, 0.5],
                                   rtol=0, atol=1e-6)
        half = 0.5 * (1.0 + 1e-6)
        np.testing.assert_allclose(res.adv_image, [1.0 - half, half],
                                   rtol=0, atol=1e-12)
        assert res.iterations_used == 1
        assert res.crossed_boundary

    def test_single_step_matches_linear_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(5):
            model = random_linear_model(rng, 8, 4, 6)
            x = rng.uniform(0.2, 0.8, size=8)
            cfg = AttackConfig(kind="deepfool", max_iter=1, epsilon=1e-6,
                               clip=False)
            res = attack_deepfool(x, model, None, cfg)
            oracle = _deepfool_oracle(x, model, 1e-6)
            assert np.max(np.abs(res.adv_image - oracle)) <= 1e-9
            assert res.iterations_used == 1
            assert res.crossed_boundary

    def test_multiplicative_overshoot(self):
        model = diag_model()
        cfg = AttackConfig(kind="deepfool", max_iter=1, epsilon=0.5,
                           overshoot_mode="multiplicative", clip=False)
        res = attack_deepfool(np.array([1.0, 0.0]), model, None, cfg)
        # r_total = 0.5 (-1, 1); scaled by 1.5: adv = (0.25, 0.75)
        np.testing.assert_allclose(res.adv_image, [0.25, 0.75],
                                   rtol=0, atol=1e-12)

    def test_degenerate_gradients_leave_input_unchanged(self):
        model = linear_model(np.zeros((2, 2)), [[1.0, 0.0], [0.0, 1.0]])
        cfg = AttackConfig(kind="deepfool", max_iter=3)
        img = np.array([0.4, 0.6])
        res = attack_deepfool(img, model, None, cfg)
        np.testing.assert_array_equal(res.adv_image, img)
        assert not res.crossed_boundary

    def test_needs_two_classes(self):
        model = one_d_model()
        cfg = AttackConfig(kind="deepfool")
        with pytest.raises(ValueError):
            attack_deepfool(np.array([0.3]), model, [1], cfg)

    def test_respects_box_and_budget(self):
        rng = np.random.default_rng(15)
        model = random_linear_model(rng, 6, 3, 4)
        img = rng.random(6)
        cfg = AttackConfig(kind="deepfool", max_iter=4)
        res = attack_deepfool(img, model, None, cfg)
        assert res.iterations_used <= 4
        assert np.all(res.adv_image >= 0.0) and np.all(res.adv_image <= 1.0)


class TestCarliniWagner:
    def test_already_misclassified_returns_unchanged(self):
        model = one_d_model()
        img = np.array([0.3])  # predicted class 1
        cfg = AttackConfig(kind="cw_l2", max_iter=5)
        res = attack_cw_l2(img, 2, model, None, cfg)
        np.testing.assert_array_equal(res.adv_image, img)
        assert res.crossed_boundary
        assert res.perturbation_l2 == 0.0

    def test_objective_trace_non_increasing(self):
        model = diag_model()
        trace = []
        cfg = AttackConfig(kind="cw_l2", max_iter=10, lr=0.01, c=1.0)
        attack_cw_l2(np.array([0.55, 0.45]), 1, model, None, cfg,
                     record_objective=trace)
        assert len(trace) >= 2
        diffs = np.diff(np.asarray(trace))
        assert np.all(diffs <= 1e-12)

    def test_beats_fgsm_grid_on_diagonal_model(self):
        # smallest succeeding FGSM epsilon from {0.001, 0.01, 0.1} is 0.1
        model = diag_model()
        img = np.array([0.55, 0.45])
        fgsm_l2 = None
        for eps in (0.001, 0.01, 0.1):
            res = attack_fgsm(img, 1, model, None,
                              AttackConfig(kind="fgsm", epsilon=eps))
            if res.crossed_boundary:
                fgsm_l2 = res.perturbation_l2
                break
        assert fgsm_l2 is not None
        cw = attack_cw_l2(img, 1, model, None,
                          AttackConfig(kind="cw_l2", max_iter=10))
        assert cw.crossed_boundary
        assert cw.perturbation_l2 <= fgsm_l2 + 1e-12

    def test_stays_in_box(self):
        rng = np.random.default_rng(16)
        model = random_linear_model(rng, 6, 3, 4)
        img = rng.random(6)
        res = attack_cw_l2(img, 1, model, None,
                           AttackConfig(kind="cw_l2", max_iter=10))
        assert np.all(res.adv_image >= 0.0) and np.all(res.adv_image <= 1.0)


class TestBatch:
    def _bundle(self):
        rng = np.random.default_rng(17)
        imgs = rng.random((6, 2, 2, 1))
        labels = [1, 1, 2, 2, 3, 3]
        phis = {1: [1.0, 0.0], 2: [0.0, 1.0], 3: [1.0, 1.0]}
        return hand_bundle(imgs, labels, phis, seen=(1, 2), unseen=(3,),
                           train_idx=(0, 2), test_seen_idx=(1, 3),
                           test_unseen_idx=(4, 5))

    def test_all_mode_covers_every_index_in_id_order(self):
        bundle = self._bundle()
        rng = np.random.default_rng(18)
        model = random_linear_model(rng, 4, 2, 3)
        cfg = AttackConfig(kind="fgsm", epsilon=0.01)
        out = attack_batch(bundle, [5, 0, 3], model, None, cfg)
        assert [i for i, _ in out] == [0, 3, 5]

    def test_traversal_order_does_not_matter(self):
        bundle = self._bundle()
        rng = np.random.default_rng(19)
        model = random_linear_model(rng, 4, 2, 3)
        cfg = AttackConfig(kind="cw_l2", max_iter=3)
        a = attack_batch(bundle, [0, 1, 2, 3], model, None, cfg)
        b = attack_batch(bundle, [3, 2, 1, 0], model, None, cfg)
        assert [i for i, _ in a] == [i for i, _ in b]
        for (_, ra), (_, rb) in zip(a, b):
            np.testing.assert_array_equal(ra.adv_image, rb.adv_image)

    def test_only_correct_filters_by_original_prediction(self):
        bundle = self._bundle()
        # all scores equal: tie goes to class 1 everywhere
        model = linear_model(np.zeros((4, 2)),
                             [[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]],
                             ids=[1, 2, 3])
        cfg = AttackConfig(kind="fgsm", epsilon=0.01)
        out = attack_batch(bundle, range(6), model, None, cfg,
                           mode="only_correct")
        assert [i for i, _ in out] == [0, 1]  # the label-1 samples

    def test_bad_mode_rejected(self):
        bundle = self._bundle()
        model = linear_model(np.zeros((4, 2)), [[1.0, 0.0], [0.0, 1.0]],
                             ids=[1, 2])
        with pytest.raises(ValueError):
            attack_batch(bundle, [0], model, None,
                         AttackConfig(kind="fgsm"), mode="some")

    def test_failures_annotated_with_sample_id(self):
        bundle = self._bundle()
        rng = np.random.default_rng(20)
        model = random_linear_model(rng, 4, 2, 3)
        cfg = AttackConfig(kind="fgsm", epsilon=0.01)
        # class 3 missing from the search space: sample 4 cannot be attacked
        with pytest.raises(AttackError, match="sample 4"):
            attack_batch(bundle, [4], model, [1, 2], cfg)

    def test_attacks_do_not_mutate_inputs(self):
        bundle = self._bundle()
        rng = np.random.default_rng(21)
        model = random_linear_model(rng, 4, 2, 3)
        before_images = bundle.images.copy()
        before_w = model.weights.W.copy()
        for kind in ("fgsm", "deepfool", "cw_l2"):
            attack_batch(bundle, range(6), model, None,
                         AttackConfig(kind=kind, max_iter=3))
        np.testing.assert_array_equal(bundle.images, before_images)
        np.testing.assert_array_equal(model.weights.W, before_w)

    def test_dispatch_matches_direct_calls(self):
        bundle = self._bundle()
        rng = np.random.default_rng(22)
        model = random_linear_model(rng, 4, 2, 3)
        img = bundle.images[0]
        cfg = AttackConfig(kind="deepfool", max_iter=2)
        via_dispatch = run_attack(img, 1, model, [1, 2, 3], cfg)
        direct = attack_deepfool(img, model, [1, 2, 3], cfg)
        np.testing.assert_array_equal(via_dispatch.adv_image,
                                      direct.adv_image)
