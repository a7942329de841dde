import numpy as np
import pytest

from nlunmix.mixing import library_endmembers, make_rng


@pytest.fixture(scope="session")
def M100():
    """Three library spectra at 100 bands."""
    return library_endmembers(3, 100)


@pytest.fixture
def rng():
    return make_rng(12345, 0)


def random_endmembers(rng, L, R):
    return rng.uniform(0.05, 0.95, size=(L, R))


def lattice_abundances(n: int, cap: float) -> np.ndarray:
    """Barycentric lattice of step 1/n on the 2-simplex, restricted to max <= cap."""
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array([p for p in pts if max(p) <= cap + 1e-12])


def capped_dense_scene(M, n_pixels=2000, cap=0.8, seed=0):
    """Noiseless R=3 mixtures densely covering the capped simplex.

    A lattice guarantees points near every corner of the capped region;
    uniform capped draws fill up to ``n_pixels``.
    """
    from nlunmix.mixing import sample_abundance_capped

    lat = lattice_abundances(65, cap)
    fill = sample_abundance_capped(3, make_rng(seed, 1), n_pixels - len(lat), cap)
    A = np.vstack([lat, fill])
    return A @ M.T, A


@pytest.fixture(scope="session")
def algorithm1_runs():
    """Iterative extraction, VCA and detector AUCs on ten seeded 50%-GBM scenes.

    1000 pixels, 276 bands, eta 0.5, noise variance 0.001 (about 21 dB).
    """
    from nlunmix import config as C
    from nlunmix.detector import compute_statistics, roc_curve
    from nlunmix.extraction import iterative_endmember_estimation, mean_sam, vca
    from nlunmix.mixing import generate_scene

    cfg = C.resolve("paper-extract")
    runs = []
    for seed in range(10):
        img = generate_scene(C.scene_config(cfg, seed))
        M = img.truth.endmembers
        settings = C.gp_settings(cfg, seed)
        res = iterative_endmember_estimation(img, 3, C.iterative_params(cfg), settings, reference=M)
        labels = img.truth.labels
        runs.append({
            "seed": seed,
            "vca_sam": mean_sam(vca(img, 3, seed=seed), M),
            "iter_sam": mean_sam(res.endmembers, M),
            "trace": res.trace,
            "auc_known": roc_curve(compute_statistics(M, img.pixels, settings)[0], labels).auc,
            "auc_hat": roc_curve(compute_statistics(res.endmembers, img.pixels, settings)[0], labels).auc,
        })
    return runs
