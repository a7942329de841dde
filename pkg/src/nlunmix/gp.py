"""Gaussian-process regression with endmember rows as inputs.

For a pixel ``r`` (length L) the training set is ``{(M[l], r[l])}``: band l
contributes the R-vector of endmember reflectances at that band as input and
the observed reflectance as target. All routines below accept either a
single spectrum of shape ``(L,)`` or a block of spectra of shape ``(L, P)``
that share one Gram matrix; the marginal likelihood of a block is the sum of
the per-column likelihoods.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import FittingError, NumericalError, UsageError
from .mixing import make_rng

JITTER_SCALE = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise UsageError(f"unknown kernel {self.kind!r}")
        if self.kind == "gaussian" and not self.bandwidth > 0:
            raise UsageError(f"gaussian bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class Hyperparameters:
    bandwidth: float
    noise_variance: float
    nlml: float = float("nan")


def _sq_dists(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def gram_matrix(kernel: KernelSpec, inputs, other=None) -> np.ndarray:
    """Kernel matrix between the rows of ``inputs`` and ``other``."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = X if other is None else np.atleast_2d(np.asarray(other, dtype=float))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise UsageError("kernel inputs must be finite")
    if X.shape[1] != Y.shape[1]:
        raise UsageError(f"input dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel.kind == "linear":
        return X @ Y.T
    K = np.exp(-_sq_dists(X, Y) / (2.0 * kernel.bandwidth ** 2))
    if other is None:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


def jitter_for(K: np.ndarray) -> float:
    return JITTER_SCALE * float(np.trace(K)) / K.shape[0]


def _factor(K, noise_variance):
    L = K.shape[0]
    C = K + (noise_variance + jitter_for(K)) * np.eye(L)
    try:
        return linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalError(
            "Cholesky factorization of K + noise*I failed; increase the noise "
            "variance floor or the jitter scale"
        ) from None


def median_pairwise_distance(inputs) -> float:
    D = np.sqrt(_sq_dists(inputs, inputs))
    iu = np.triu_indices(D.shape[0], k=1)
    med = float(np.median(D[iu])) if len(iu[0]) else 1.0
    return med if med > 0 else 1.0


def _nlml_parts(log_theta, M, targets, kind):
    s = math.exp(log_theta[0])
    noise = math.exp(log_theta[1])
    Y = targets if targets.ndim == 2 else targets[:, None]
    L, P = Y.shape
    D = _sq_dists(M, M)
    if kind == "gaussian":
        K = np.exp(-D / (2.0 * s * s))
        np.fill_diagonal(K, 1.0)
    else:
        K = M @ M.T
    chol = _factor(K, noise)
    A = linalg.cho_solve((chol, True), Y, check_finite=False)
    data_fit = 0.5 * float(np.sum(Y * A))
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    value = data_fit + 0.5 * P * log_det + 0.5 * P * L * LOG_2PI
    return value, K, D, chol, A, s, noise, P


def negative_log_marginal_likelihood(theta, M, r, kind: str = "gaussian") -> float:
    """NLML at ``theta = (bandwidth, noise_variance)``.

    Includes the ``L/2 log(2 pi)`` constant (once per column of ``r``).
    """
    s, noise = theta
    if not (s > 0 and noise > 0):
        raise UsageError("bandwidth and noise variance must be positive")
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=float)
    return _nlml_parts((math.log(s), math.log(noise)), M, r, kind)[0]


def nlml_gradient(theta, M, r, kind: str = "gaussian", return_terms: bool = False):
    """Gradient of the NLML with respect to ``(log s, log noise_variance)``.

    With ``return_terms`` the gradient is split into the data-fit part
    ``-1/2 a' dC a`` and the complexity part ``1/2 tr(C^-1 dC)``.
    """
    s, noise = theta
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=float)
    _, K, D, chol, A, s, noise, P = _nlml_parts((math.log(s), math.log(noise)), M, r, kind)
    Cinv = linalg.cho_solve((chol, True), np.eye(K.shape[0]), check_finite=False)
    dC_s = K * D / (s * s) if kind == "gaussian" else np.zeros_like(K)
    data = np.array([
        -0.5 * float(np.sum(A * (dC_s @ A))),
        -0.5 * noise * float(np.sum(A * A)),
    ])
    complexity = np.array([
        0.5 * P * float(np.sum(Cinv * dC_s)),
        0.5 * P * noise * float(np.trace(Cinv)),
    ])
    if return_terms:
        return data, complexity
    return data + complexity


def _objective(log_theta, M, Y, kind):
    try:
        s, noise = math.exp(log_theta[0]), math.exp(log_theta[1])
        value = _nlml_parts(log_theta, M, Y, kind)[0]
        grad = nlml_gradient((s, noise), M, Y, kind)
    except NumericalError:
        return np.inf, np.zeros(2)
    return value, grad


def default_starts(M, r) -> list[tuple[float, float]]:
    """Bandwidth in {median distance, 3x median} with noise in {1e-2, 1e-4} x var(r),
    plus one noise-dominated start (10x median, var(r) / 2).

    Without the last start, data that are mostly noise end up in the
    small-bandwidth basin where the kernel interpolates the noise.
    """
    med = median_pairwise_distance(M)
    Y = r if r.ndim == 2 else r[:, None]
    var = float(np.mean(np.var(Y, axis=0)))
    if var <= 0:
        var = float(np.mean(Y ** 2)) or 1.0
    starts = [(s, f * var) for s in (med, 3.0 * med) for f in (1e-2, 1e-4)]
    return starts + [(10.0 * med, 0.5 * var)]


def fit_hyperparameters(
    M,
    r,
    starts=None,
    kind: str = "gaussian",
    noise_floor: float = 1e-6,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> Hyperparameters:
    """Maximize the marginal likelihood from several starting points.

    Optimization runs in log-parameter space with L-BFGS-B; the best local
    optimum over the starts is returned. ``r`` may be a block of spectra, in
    which case one set of hyperparameters is fitted to all of them.
    """
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=float)
    L, R = M.shape
    if L <= R:
        raise UsageError(f"need more bands than endmembers, got L={L}, R={R}")
    if r.shape[0] != L:
        raise UsageError(f"targets have {r.shape[0]} rows, expected {L}")
    starts = default_starts(M, r) if starts is None else list(starts)
    med = median_pairwise_distance(M)
    Y = r if r.ndim == 2 else r[:, None]
    scale = float(np.mean(Y ** 2)) + 1.0
    s_bounds = (math.log(1e-3 * med), math.log(1e3 * med))
    n_bounds = (math.log(noise_floor), math.log(10.0 * scale))
    if kind == "linear":
        s_bounds = (0.0, 0.0)

    best = None
    for s0, n0 in starts:
        x0 = np.array([
            min(max(math.log(s0), s_bounds[0]), s_bounds[1]) if kind == "gaussian" else 0.0,
            min(max(math.log(max(n0, noise_floor)), n_bounds[0]), n_bounds[1]),
        ])
        f0, _ = _objective(x0, M, r, kind)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(
            _objective,
            x0,
            args=(M, r, kind),
            jac=True,
            method="L-BFGS-B",
            bounds=[s_bounds, n_bounds],
            options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15},
        )
        x, f = (res.x, res.fun) if res.fun <= f0 else (x0, f0)
        if best is None or f < best[1]:
            best = (x, f)
    if best is None or not np.isfinite(best[1]):
        raise FittingError("every start failed to factorize K + noise*I")
    x, f = best
    s = math.exp(x[0]) if kind == "gaussian" else 1.0
    return Hyperparameters(bandwidth=s, noise_variance=math.exp(x[1]), nlml=float(f))


@dataclass(frozen=True)
class GPModel:
    kernel: KernelSpec
    noise_variance: float
    inputs: np.ndarray  # L x R
    targets: np.ndarray  # L or L x P
    gram: np.ndarray  # K, without jitter
    jitter: float
    chol: np.ndarray  # lower Cholesky factor of K + (noise + jitter) I
    weights: np.ndarray  # (K + (noise + jitter) I)^-1 targets

    @property
    def effective_noise(self) -> float:
        """Noise variance actually added to the Gram diagonal."""
        return self.noise_variance + self.jitter


def fit_model(M, r, kernel: KernelSpec, noise_variance: float) -> GPModel:
    """Condition a GP with fixed hyperparameters on ``r``."""
    if not noise_variance > 0:
        raise UsageError("noise variance must be positive")
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.shape[0] != M.shape[0]:
        raise UsageError(f"targets have {r.shape[0]} rows, expected {M.shape[0]}")
    K = gram_matrix(kernel, M)
    chol = _factor(K, noise_variance)
    weights = linalg.cho_solve((chol, True), r, check_finite=False)
    return GPModel(
        kernel=kernel,
        noise_variance=float(noise_variance),
        inputs=M,
        targets=r,
        gram=K,
        jitter=jitter_for(K),
        chol=chol,
        weights=weights,
    )


def _check_test_inputs(model, test_inputs):
    X = np.atleast_2d(np.asarray(test_inputs, dtype=float))
    if X.shape[1] != model.inputs.shape[1]:
        raise UsageError(f"test inputs have {X.shape[1]} columns, expected {model.inputs.shape[1]}")
    return X


def predictive_mean(model: GPModel, test_inputs) -> np.ndarray:
    X = _check_test_inputs(model, test_inputs)
    Ks = gram_matrix(model.kernel, model.inputs, X)  # L x T
    return Ks.T @ model.weights


def predictive_cov(model: GPModel, test_inputs) -> np.ndarray:
    X = _check_test_inputs(model, test_inputs)
    Ks = gram_matrix(model.kernel, model.inputs, X)
    Kss = gram_matrix(model.kernel, X)
    V = linalg.solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    cov = Kss - V.T @ V
    return 0.5 * (cov + cov.T)


def fitting_residual(model: GPModel) -> np.ndarray:
    """GP fitting error ``r - mean(M)`` on the training inputs.

    Equals ``s2 * (K + s2*I)^-1 r`` with ``s2 = model.effective_noise``,
    i.e. the noise variance plus the factorization jitter.
    """
    return model.effective_noise * model.weights


@dataclass(frozen=True)
class GPSettings:
    """How hyperparameters are obtained for a batch of pixels.

    ``mode="shared"`` fits one set of hyperparameters to a random subsample
    of ``subsample`` pixels (pooled marginal likelihood) and reuses it for
    every pixel. ``mode="per_pixel"`` fits each pixel separately.
    Fixed ``bandwidth``/``noise_variance`` bypass fitting entirely.
    """

    mode: str = "shared"
    subsample: int = 64
    kernel: str = "gaussian"
    noise_floor: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    threads: int = 1
    bandwidth: float | None = None
    noise_variance: float | None = None

    def __post_init__(self):
        if self.mode not in ("shared", "per_pixel"):
            raise UsageError(f"gp mode must be 'shared' or 'per_pixel', got {self.mode!r}")
        if self.subsample < 1 or self.threads < 1:
            raise UsageError("subsample and threads must be positive")


def estimate_shared(M, pixels, settings: GPSettings) -> Hyperparameters:
    """Hyperparameters shared by all pixels of an image."""
    if settings.bandwidth is not None and settings.noise_variance is not None:
        return Hyperparameters(settings.bandwidth, settings.noise_variance)
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    n = pixels.shape[0]
    if n > settings.subsample:
        idx = np.sort(make_rng(settings.seed, 101).choice(n, settings.subsample, replace=False))
        block = pixels[idx].T
    else:
        block = pixels.T
    return fit_hyperparameters(
        M, block, kind=settings.kernel, noise_floor=settings.noise_floor, max_iter=settings.max_iter
    )


def residuals(M, pixels, settings: GPSettings, hyper: Hyperparameters | None = None):
    """GP fitting residuals for every pixel.

    Returns ``(E, hypers)`` where ``E`` is ``N x L`` and ``hypers`` is a list
    with one entry (shared mode) or one per pixel.
    """
    M = np.asarray(M, dtype=float)
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    if settings.mode == "shared" or hyper is not None:
        if hyper is None:
            hyper = estimate_shared(M, pixels, settings)
        kernel = KernelSpec(settings.kernel, hyper.bandwidth)
        model = fit_model(M, pixels.T, kernel, hyper.noise_variance)
        return fitting_residual(model).T, [hyper]

    def one(r):
        h = fit_hyperparameters(M, r, kind=settings.kernel, noise_floor=settings.noise_floor,
                                max_iter=settings.max_iter)
        model = fit_model(M, r, KernelSpec(settings.kernel, h.bandwidth), h.noise_variance)
        return fitting_residual(model), h

    if settings.threads > 1:
        with ThreadPoolExecutor(settings.threads) as pool:
            results = list(pool.map(one, pixels))
    else:
        results = [one(r) for r in pixels]
    E = np.array([e for e, _ in results])
    return E, [h for _, h in results]
