import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlunmix import gp
from nlunmix.detector import build_linear_model, linear_residual
from nlunmix.errors import NumericalError, UsageError
from nlunmix.mixing import SceneConfig, generate_scene, make_rng, mix_pixel
from nlunmix.scene_io import LINEAR, NONLINEAR
from nlunmix.unmix import (
    abundance_rmse,
    detect_then_unmix,
    fcls,
    fcls_everywhere,
    fcls_kkt_residual,
    gp_reconstruct,
    ls_abundances,
    reconstruction_rmse,
)

from conftest import random_endmembers


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u - css / np.arange(1, len(v) + 1) > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def projected_gradient(M, r, iters=20000):
    """Accelerated projected gradient on 0.5 |r - M a|^2 over the simplex."""
    G = M.T @ M
    c = M.T @ r
    step = 1.0 / np.linalg.eigvalsh(G)[-1]
    a = np.full(M.shape[1], 1.0 / M.shape[1])
    y, t = a.copy(), 1.0
    for _ in range(iters):
        a_next = project_simplex(y - step * (G @ y - c))
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = a_next + (t - 1) / t_next * (a_next - a)
        if np.max(np.abs(a_next - a)) < 1e-15:
            a = a_next
            break
        a, t = a_next, t_next
    return a


def objective(M, r, a):
    d = r - M @ a
    return 0.5 * float(d @ d)


def test_ls_abundances(rng):
    M = random_endmembers(rng, 25, 3)
    alpha = rng.standard_normal(3)
    np.testing.assert_allclose(ls_abundances(M, M @ alpha), alpha, atol=1e-12)
    Q, _ = np.linalg.qr(np.c_[M, rng.standard_normal(25)])
    assert np.max(np.abs(ls_abundances(M, Q[:, 3]))) <= 1e-12
    r = M @ alpha + 0.1 * rng.standard_normal(25)
    oracle = np.linalg.solve(M.T @ M, M.T @ r)
    np.testing.assert_allclose(ls_abundances(M, r), oracle, atol=1e-10)


def test_fcls_vertex_and_interior(rng):
    M = random_endmembers(rng, 25, 4)
    np.testing.assert_allclose(fcls(M, M[:, 0]), [1, 0, 0, 0], atol=1e-12)
    alpha = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(fcls(M, M @ alpha), alpha, atol=1e-8)


@pytest.mark.parametrize("seed", range(40))
def test_fcls_vs_projected_gradient(seed):
    g = make_rng(seed, 7)
    R = int(g.integers(2, 7))
    M = random_endmembers(g, 30, R)
    # far-from-simplex targets put the optimum on a face
    r = M @ g.standard_normal(R) + 0.1 * g.standard_normal(30)
    a = fcls(M, r)
    assert fcls_kkt_residual(M, r, a) <= 1e-8
    assert a.min() >= -1e-9 and abs(a.sum() - 1) <= 1e-9
    assert objective(M, r, a) <= objective(M, r, projected_gradient(M, r)) + 1e-7


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), R=st.integers(2, 8))
def test_fcls_permutation_covariance(seed, R):
    g = make_rng(seed, 0)
    M = random_endmembers(g, 20, R)
    r = M @ g.standard_normal(R)
    perm = g.permutation(R)
    np.testing.assert_allclose(fcls(M[:, perm], r), fcls(M, r)[perm], atol=1e-9)


def test_fcls_rejects_bad_shapes(rng):
    M = random_endmembers(rng, 10, 3)
    with pytest.raises(UsageError):
        fcls(M, np.ones(9))
    with pytest.raises(NumericalError):
        fcls(np.c_[M, M[:, 0]], np.ones(10))


def test_gp_reconstruct_limits_and_identity(M100, rng):
    r = M100 @ rng.dirichlet(np.ones(3)) + 0.03 * rng.standard_normal(100)
    # narrow kernel keeps K well conditioned, so jitter does not mask the limit
    tiny = gp.GPSettings(bandwidth=1e-3, noise_variance=1e-12)
    assert np.max(np.abs(gp_reconstruct(M100, r, tiny) - r)) <= 1e-4
    s = gp.GPSettings(bandwidth=0.3, noise_variance=1e-3)
    E, _ = gp.residuals(M100, r[None, :], s)
    assert np.linalg.norm(r - gp_reconstruct(M100, r, s)) == pytest.approx(np.linalg.norm(E), rel=1e-12)


def test_gp_beats_linear_projector_on_gbm_pixels(M100):
    wins = 0
    lm = build_linear_model(M100)
    s = gp.GPSettings()
    for t in range(500):
        g = make_rng(t, 5)
        r, _, _ = mix_pixel("gbm", M100, g.dirichlet(np.ones(3)), 0.5)
        r = r + np.sqrt(0.001) * g.standard_normal(100)
        hyper = gp.estimate_shared(M100, r[None, :], s) if t == 0 else hyper
        e_gp = np.linalg.norm(r - gp_reconstruct(M100, r, s, hyper=hyper))
        wins += e_gp < np.linalg.norm(linear_residual(lm, r))
    assert wins >= 475


def test_detect_then_unmix_noiseless_linear(M100):
    img = generate_scene(SceneConfig(n_pixels=200, endmembers=M100, proportions={"lmm": 1.0},
                                     noise_variance=0.0, seed=1))
    res = detect_then_unmix(img, M100, 0.01, gp.GPSettings(seed=1))
    A, rec = fcls_everywhere(img, M100)
    assert np.all(res.labels == LINEAR)
    assert np.max(np.abs(res.abundances - A)) <= 1e-8
    assert np.max(np.abs(res.reconstruction - rec)) <= 1e-8


def test_detect_then_unmix_branches_and_permutation(M100):
    img = generate_scene(SceneConfig(n_pixels=120, endmembers=M100, eta=0.5, seed=2))
    s = gp.GPSettings(seed=2)
    res = detect_then_unmix(img, M100, 0.01, s, tau=0.9)
    nl = res.labels == NONLINEAR
    assert nl.any() and (~nl).any()
    assert np.all(np.isnan(res.abundances[nl])) and not np.any(np.isnan(res.abundances[~nl]))
    np.testing.assert_allclose(res.reconstruction[~nl], res.abundances[~nl] @ M100.T)
    np.testing.assert_allclose(res.squared_error, np.sum((img.pixels - res.reconstruction) ** 2, axis=1))
    assert res.squared_error.min() >= 0
    # with shared hyperparameters fixed, the result is per-pixel
    fixed = gp.GPSettings(bandwidth=0.3, noise_variance=0.001)
    a = detect_then_unmix(img, M100, tau=0.9, settings=fixed)
    perm = make_rng(2, 3).permutation(120)
    b = detect_then_unmix(img.pixels[perm], M100, tau=0.9, settings=fixed)
    np.testing.assert_array_equal(a.labels[perm], b.labels)
    np.testing.assert_allclose(a.reconstruction[perm], b.reconstruction, atol=1e-12)


def test_detect_then_unmix_dominance_small_scene(M100):
    img = generate_scene(SceneConfig(n_pixels=400, endmembers=M100, eta=0.5, seed=4))
    s = gp.GPSettings(seed=4)
    res = detect_then_unmix(img, M100, 0.01, s)
    clean = img.truth.clean
    rec_gp = gp_reconstruct(M100, img.pixels, s, hyper=res.calibration.hypers[0])
    _, rec_fcls = fcls_everywhere(img, M100)
    ours = reconstruction_rmse(clean, res.reconstruction)
    assert ours <= min(reconstruction_rmse(clean, rec_gp), reconstruction_rmse(clean, rec_fcls)) + 1e-4


def test_abundance_rmse():
    A = np.random.default_rng(0).uniform(size=(7, 3))
    assert abundance_rmse(A, A) == 0
    assert abundance_rmse([[0.5, 0.5]], [[0.2, 0.8]]) == pytest.approx(0.3, abs=1e-15)
    B = A + np.random.default_rng(1).normal(size=A.shape)
    total = 0.0
    for i in range(7):
        for j in range(3):
            total += (A[i, j] - B[i, j]) ** 2
    assert abundance_rmse(A, B) == pytest.approx(np.sqrt(total / 21), abs=1e-14)
    perm = [3, 1, 0, 6, 5, 4, 2]
    assert abundance_rmse(A[perm], B[perm]) == pytest.approx(abundance_rmse(A, B), abs=1e-15)
    with pytest.raises(UsageError):
        abundance_rmse(A, B[:3])


def test_reconstruction_rmse():
    X = np.ones((1, 4))
    Y = X.copy()
    assert reconstruction_rmse(X, Y) == 0
    Y[0, 2] += 0.1
    assert reconstruction_rmse(X, Y) == pytest.approx(0.05, abs=1e-15)
    g = np.random.default_rng(3)
    X, Y = g.uniform(size=(5, 6)), g.uniform(size=(5, 6))
    total = sum((X[i, j] - Y[i, j]) ** 2 for i in range(5) for j in range(6))
    assert reconstruction_rmse(X, Y) == pytest.approx(np.sqrt(total / 30), abs=1e-14)
