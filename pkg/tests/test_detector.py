import numpy as np
import pytest
from scipy import stats

from nlunmix import gp
from nlunmix.detector import (
    build_linear_model,
    calibrate_threshold,
    compute_statistics,
    detect_image,
    linear_residual,
    roc_curve,
    statistic_values,
    test_statistic as make_statistic,
)
from nlunmix.errors import DegenerateInputError, NumericalError, UsageError, ValidationError
from nlunmix.mixing import SceneConfig, generate_scene, make_rng
from nlunmix.scene_io import LINEAR, NONLINEAR

from conftest import random_endmembers


def test_projector_orthonormal_columns(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((12, 3)))
    P = build_linear_model(Q).projector
    assert np.max(np.abs(P - (np.eye(12) - Q @ Q.T))) <= 1e-12


def test_projector_annihilates_m_and_has_rank(rng):
    M = random_endmembers(rng, 40, 4)
    lm = build_linear_model(M)
    assert np.max(np.abs(lm.projector @ M)) <= 1e-10
    assert abs(np.trace(lm.projector) - 36) <= 1e-8
    assert lm.rank == 36


def test_projector_rank_deficient(rng):
    M = random_endmembers(rng, 10, 2)
    with pytest.raises(NumericalError):
        build_linear_model(np.c_[M, M[:, 0] + M[:, 1]])


def test_linear_residual_cases(rng):
    M = random_endmembers(rng, 30, 3)
    lm = build_linear_model(M)
    assert np.linalg.norm(linear_residual(lm, M @ rng.dirichlet(np.ones(3)))) <= 1e-10
    Q, _ = np.linalg.qr(np.c_[M, rng.standard_normal(30)])
    ortho = Q[:, 3]
    np.testing.assert_allclose(linear_residual(lm, ortho), ortho, atol=1e-12)


def test_chi_square_mean_under_h0(M100):
    sc = generate_scene(SceneConfig(n_pixels=4000, endmembers=M100, proportions={"lmm": 1.0},
                                    noise_variance=0.001, seed=2))
    e = linear_residual(build_linear_model(M100), sc.pixels)
    mean = np.mean(np.sum(e * e, axis=1)) / 0.001
    assert abs(mean - 97) <= 3 * np.sqrt(2 * 97 / 4000)


def test_statistic_values():
    assert make_statistic(np.array([1.0, 1.0]), np.array([0.0, np.sqrt(2.0)])).value == pytest.approx(1.0)
    assert make_statistic(np.zeros(3), np.ones(3)).value == 0.0
    assert statistic_values(1.0, 3.0) == 0.5
    with pytest.raises(DegenerateInputError):
        statistic_values(0.0, 0.0)
    s = make_statistic(np.zeros(3), np.ones(3))
    assert s.decide(0.5) == NONLINEAR and make_statistic(np.ones(3), np.ones(3)).decide(0.5) == LINEAR


def _h0(M, n, seed, noise=0.001):
    return generate_scene(SceneConfig(n_pixels=n, endmembers=M, proportions={"lmm": 1.0},
                                      noise_variance=noise, seed=seed))


def test_calibration_fpr_on_fresh_pixels(M100):
    settings = gp.GPSettings(seed=1)
    cal = calibrate_threshold(M100, _h0(M100, 1000, 1), 0.05, settings)
    fresh = _h0(M100, 4000, 2)
    T = compute_statistics(M100, fresh.pixels, settings, hyper=cal.hypers[0])[0]
    assert 0.025 <= np.mean(T < cal.tau) <= 0.10
    again = calibrate_threshold(M100, _h0(M100, 1000, 1), 0.05, settings)
    assert again.tau == cal.tau
    d = cal.to_dict()
    assert d["tau"] == cal.tau and d["n_samples"] == 1000


def test_calibration_rejects_bad_pfa(M100):
    for pfa in (0.0, 1.0, -0.2):
        with pytest.raises(UsageError):
            calibrate_threshold(M100, _h0(M100, 50, 1), pfa, gp.GPSettings())


def test_noiseless_lmm_scene_flags_nothing(M100):
    img = _h0(M100, 400, 3, noise=0.0)
    settings = gp.GPSettings(seed=3)
    cal = calibrate_threshold(M100, img, 0.01, settings)
    dmap = detect_image(M100, img, cal.tau, settings, hyper=cal.hypers[0])
    assert np.sum(dmap.labels == NONLINEAR) == 0


def _mixed(M, n, seed):
    return generate_scene(SceneConfig(n_pixels=n, endmembers=M, eta=0.5, noise_variance=0.001, seed=seed))


def test_labels_invariant_to_pixel_order(M100):
    img = _mixed(M100, 30, 4)
    perm = make_rng(4, 9).permutation(30)
    for settings, hyper in [(gp.GPSettings(mode="per_pixel"), None),
                            (gp.GPSettings(), gp.Hyperparameters(0.3, 0.001))]:
        a = detect_image(M100, img.pixels, 0.9, settings, hyper=hyper)
        b = detect_image(M100, img.pixels[perm], 0.9, settings, hyper=hyper)
        np.testing.assert_array_equal(a.labels[perm], b.labels)
        np.testing.assert_allclose(a.statistics[perm], b.statistics, rtol=1e-10)


def test_detector_separates_small_scene(M100):
    img = _mixed(M100, 400, 5)
    T = compute_statistics(M100, img.pixels, gp.GPSettings(seed=5))[0]
    assert roc_curve(T, img.truth.labels).auc >= 0.97


def test_roc_separated_and_orientation():
    T = np.r_[np.linspace(0, 0.4, 50), np.linspace(0.6, 1, 50)]
    y = np.r_[np.full(50, NONLINEAR), np.full(50, LINEAR)]
    roc = roc_curve(T, y)
    assert roc.auc == 1.0 and roc.pd_at(0.0) == 1.0
    assert roc_curve(T, y, "higher").auc == pytest.approx(0.0)
    g = make_rng(1, 0)
    T2 = g.uniform(size=300)
    y2 = g.integers(0, 2, size=300)
    assert roc_curve(T2, y2, "higher").auc == pytest.approx(1 - roc_curve(T2, y2).auc, abs=1e-12)


def test_roc_matches_mann_whitney_with_ties():
    g = make_rng(2, 0)
    T = np.round(g.uniform(size=500), 1)
    y = g.integers(0, 2, size=500)
    u = stats.mannwhitneyu(T[y == LINEAR], T[y == NONLINEAR]).statistic
    assert roc_curve(T, y).auc == pytest.approx(u / (np.sum(y == 0) * np.sum(y == 1)), abs=1e-12)


def test_roc_null_auc():
    g = make_rng(3, 0)
    T = g.uniform(size=10_000)
    y = g.permutation(np.r_[np.zeros(5000, dtype=int), np.ones(5000, dtype=int)])
    assert abs(roc_curve(T, y).auc - 0.5) <= 0.02


def test_roc_single_class():
    with pytest.raises(ValidationError):
        roc_curve(np.arange(5.0), np.zeros(5, dtype=int))
