import numpy as np
import pytest

from inkline.grad_balance import (BalanceWeights, GradientBundle, combine,
                                  normalize_to_reference, record)


def test_paper_weight_defaults():
    w = BalanceWeights()
    assert (w.auto_r, w.adv_g, w.rec_g, w.adv_r, w.rec_r) == (1.0, 0.5, 0.6, 0.4, 0.75)


def test_record_layer_means():
    b = record("adv_g", {"layer": np.array([1.0, -1.0])})
    assert b.layer_means["layer"] == pytest.approx(1.0)
    b = record("adv_g", {"layer": np.array([0.0, 0.0])})
    assert b.layer_means["layer"] == 0.0


def test_record_rejects_nonfinite():
    with pytest.raises(ValueError):
        record("adv_g", {"layer": np.array([np.nan])})


def test_record_rejects_unknown_loss():
    with pytest.raises(ValueError):
        record("mystery", {"layer": np.zeros(2)})


def test_missing_layer_absent_from_bundle():
    b = record("rec_g", {"a": np.ones(2)})
    assert "b" not in b.grads and "b" not in b.layer_means


def test_identical_bundle_with_half_weight_gives_1_5x():
    g = {"w": np.array([0.5, -1.5, 2.0]), "b": np.array([[1.0, -2.0]])}
    ref = record("auto_r", g)
    other = record("adv_g", g)
    out = combine({"auto_r": ref, "adv_g": other}, BalanceWeights())
    for k in g:
        assert np.allclose(out[k], 1.5 * g[k])


def test_10x_magnitude_bundle_is_rescaled():
    rng = np.random.default_rng(0)
    ref_grads = {"l1": rng.standard_normal(8), "l2": rng.standard_normal((3, 3))}
    big = {k: 10.0 * v for k, v in ref_grads.items()}
    ref = record("auto_r", ref_grads)
    noisy = record("rec_r", big)
    normalized = normalize_to_reference(noisy, ref)
    for k in ref_grads:
        assert np.abs(normalized[k]).mean() == pytest.approx(np.abs(ref_grads[k]).mean(), abs=1e-6)
        assert np.allclose(normalized[k], 0.1 * big[k])


def test_zero_gradient_layer_is_dropped_without_nan():
    ref = record("auto_r", {"a": np.ones(3), "b": np.full(3, 2.0)})
    other = record("adv_r", {"a": np.zeros(3), "b": np.ones(3)})
    out = combine({"auto_r": ref, "adv_r": other}, BalanceWeights())
    assert np.all(np.isfinite(out["a"]))
    # layer "a" of adv_r dropped: combined a == reference a only
    assert np.allclose(out["a"], np.ones(3))


def test_missing_reference_errors():
    with pytest.raises(ValueError):
        combine({"adv_g": record("adv_g", {"a": np.ones(1)})})


def test_sign_preservation():
    rng = np.random.default_rng(1)
    ref = record("auto_r", {"w": rng.standard_normal(50)})
    for loss in ("adv_g", "rec_g", "adv_r", "rec_r"):
        g = rng.standard_normal(50) * rng.uniform(0.01, 100)
        normalized = normalize_to_reference(record(loss, {"w": g}), ref)
        assert np.array_equal(np.sign(normalized["w"]), np.sign(g))


def test_post_normalization_mean_matches_reference():
    rng = np.random.default_rng(2)
    ref = record("auto_r", {f"l{i}": rng.standard_normal(20) for i in range(3)})
    for loss in ("adv_g", "rec_g", "adv_r", "rec_r"):
        b = record(loss, {f"l{i}": rng.standard_normal(20) * rng.uniform(1e-3, 1e3)
                          for i in range(3)})
        normalized = normalize_to_reference(b, ref)
        for pid in normalized:
            assert np.abs(normalized[pid]).mean() == pytest.approx(
                ref.layer_means[pid], abs=1e-6)


def test_homogeneous_in_reference():
    rng = np.random.default_rng(3)
    grads_ref = {"a": rng.standard_normal(6), "b": rng.standard_normal(4)}
    grads_x = {"a": rng.standard_normal(6), "b": rng.standard_normal(4)}
    out1 = combine({"auto_r": record("auto_r", grads_ref),
                    "adv_g": record("adv_g", grads_x)})
    c = 3.7
    out2 = combine({"auto_r": record("auto_r", {k: c * v for k, v in grads_ref.items()}),
                    "adv_g": record("adv_g", grads_x)})
    for k in grads_ref:
        assert np.allclose(out2[k], c * out1[k], rtol=1e-12)


def test_layer_absent_from_bundle_contributes_zero():
    ref = record("auto_r", {"a": np.ones(2), "b": np.ones(2)})
    partial = record("adv_g", {"a": np.full(2, 2.0)})  # never touches b
    out = combine({"auto_r": ref, "adv_g": partial})
    assert np.allclose(out["b"], np.ones(2))  # reference only


def test_weights_must_be_positive():
    with pytest.raises(ValueError):
        BalanceWeights(adv_g=-0.1)
