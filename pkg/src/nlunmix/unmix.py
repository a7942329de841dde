"""Abundance estimation, GP reconstruction and the Detect-then-Unmix pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import gp
from .detector import (
    CalibrationResult,
    build_linear_model,
    calibrate_threshold,
    linear_residual,
    statistic_values,
)
from .errors import NumericalError, UsageError, ValidationError
from .scene_io import LINEAR, NONLINEAR, SceneImage


def _pixels(image) -> np.ndarray:
    if isinstance(image, SceneImage):
        return image.pixels
    return np.atleast_2d(np.asarray(image, dtype=float))


def _check_rank(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < M.shape[1]:
        raise UsageError(f"endmember matrix must be L x R with L >= R, got {M.shape}")
    Q, Rf = linalg.qr(M, mode="economic")
    d = np.abs(np.diag(Rf))
    if d.min() <= 1e-12 * max(d.max(), 1e-300) * max(M.shape):
        raise NumericalError("endmember matrix is rank deficient")
    return M, Q, Rf


def ls_abundances(M, r) -> np.ndarray:
    """Unconstrained least-squares abundances; ``r`` may be one spectrum or N x L."""
    M, Q, Rf = _check_rank(M)
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != M.shape[0]:
        raise UsageError(f"spectrum has {r.shape[-1]} bands, expected {M.shape[0]}")
    return linalg.solve_triangular(Rf, Q.T @ r.T).T


# --------------------------------------------------------------------------
# FCLS


def fcls_kkt_residual(M, r, alpha, support_tol: float = 1e-12) -> float:
    """Largest violation of the FCLS optimality conditions at ``alpha``.

    With ``g`` the gradient of ``0.5 |r - M a|^2``, optimality means ``g_i``
    equals a common value ``mu`` on the support and is ``>= mu`` off it,
    ``alpha >= 0`` and ``sum(alpha) = 1``.
    """
    M = np.asarray(M, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    g = M.T @ (M @ alpha - np.asarray(r, dtype=float))
    support = alpha > support_tol
    if not support.any():
        return float("inf")
    mu = float(np.mean(g[support]))
    parts = [
        np.max(np.abs(g[support] - mu)),
        np.max(np.maximum(mu - g[~support], 0.0), initial=0.0),
        abs(alpha.sum() - 1.0),
        np.max(np.maximum(-alpha, 0.0)),
    ]
    return float(max(parts))


def _eq_qp(G, c, free):
    """Minimize 0.5 a'Ga - c'a over a_free with sum(a_free) = 1, a_rest = 0."""
    idx = np.flatnonzero(free)
    k = idx.size
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G[np.ix_(idx, idx)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.append(c[idx], 1.0)
    sol = np.linalg.solve(K, rhs)
    a = np.zeros(G.shape[0])
    a[idx] = sol[:k]
    return a


def fcls(M, r, tol: float = 1e-12) -> np.ndarray:
    """Fully constrained least squares: nonnegative abundances summing to one.

    Primal active-set method on the QP ``min 0.5 |r - M a|^2``. Starts at the
    vertex ``e_j`` of the best single endmember, so every iterate is feasible.
    """
    M, _, _ = _check_rank(M)
    r = np.asarray(r, dtype=float)
    if r.ndim == 2:
        return np.array([fcls(M, row, tol) for row in r])
    if r.shape != (M.shape[0],):
        raise UsageError(f"spectrum has shape {r.shape}, expected ({M.shape[0]},)")
    R = M.shape[1]
    G = M.T @ M
    c = M.T @ r
    scale = max(1.0, float(np.abs(G).max()), float(np.abs(c).max()))

    # interior solution first: it is optimal whenever it is nonnegative
    a = _eq_qp(G, c, np.ones(R, dtype=bool))
    if a.min() >= 0.0:
        return a

    j = int(np.argmin(np.sum((M - r[:, None]) ** 2, axis=0)))
    a = np.zeros(R)
    a[j] = 1.0
    free = np.zeros(R, dtype=bool)
    free[j] = True
    for _ in range(100 * R):
        target = _eq_qp(G, c, free)
        p = target - a
        if np.max(np.abs(p)) <= tol:
            g = G @ a - c
            mu = float(np.mean(g[free]))
            lam = g - mu
            lam[free] = np.inf
            k = int(np.argmin(lam))
            if lam[k] >= -tol * scale:
                return a
            free[k] = True
            continue
        step = 1.0
        block = -1
        for i in np.flatnonzero(free & (p < 0)):
            t = -a[i] / p[i]
            if t < step:
                step, block = t, i
        a = a + step * p
        if block >= 0:
            a[block] = 0.0
            free[block] = False
        a[~free] = 0.0
    raise NumericalError(f"FCLS did not converge in {100 * R} iterations")


# --------------------------------------------------------------------------
# GP reconstruction


def gp_reconstruct(M, r, settings: gp.GPSettings | None = None, hyper=None) -> np.ndarray:
    """GP predictive mean at the training inputs, i.e. ``r - e_nlin``.

    ``r`` may be one spectrum or an N x L block.
    """
    settings = settings or gp.GPSettings()
    r = np.asarray(r, dtype=float)
    block = np.atleast_2d(r)
    E, _ = gp.residuals(M, block, settings, hyper=hyper)
    out = block - E
    return out[0] if r.ndim == 1 else out


# --------------------------------------------------------------------------
# Detect-then-Unmix


@dataclass
class UnmixResult:
    labels: np.ndarray  # int8, LINEAR / NONLINEAR
    statistics: np.ndarray
    threshold: float
    abundances: np.ndarray  # N x R, NaN rows for nonlinear pixels
    reconstruction: np.ndarray  # N x L
    squared_error: np.ndarray  # per pixel |r - r_hat|^2
    calibration: CalibrationResult | None = None


def detect_then_unmix(image, M, pfa: float = 0.01, settings: gp.GPSettings | None = None,
                      tau: float | None = None) -> UnmixResult:
    """Label pixels with the detector, then unmix each with its branch.

    Linear pixels get FCLS abundances and the reconstruction ``M a``;
    nonlinear pixels get the GP reconstruction. The threshold is calibrated
    at ``pfa`` unless ``tau`` is given.
    """
    settings = settings or gp.GPSettings()
    X = _pixels(image)
    M, _, _ = _check_rank(M)
    if X.shape[0] == 0:
        raise UsageError("image has no pixels")
    if X.shape[1] != M.shape[0]:
        raise ValidationError(f"image has {X.shape[1]} bands, endmembers have {M.shape[0]}")

    calibration = None
    if tau is None:
        calibration = calibrate_threshold(M, X, pfa, settings)
        tau = calibration.tau
    shared = calibration.hypers[0] if (calibration is not None and settings.mode == "shared") else None
    E, _ = gp.residuals(M, X, settings, hyper=shared)
    e_lin = linear_residual(build_linear_model(M), X)
    T = statistic_values(np.einsum("ij,ij->i", E, E), np.einsum("ij,ij->i", e_lin, e_lin))
    labels = np.where(T < tau, NONLINEAR, LINEAR).astype(np.int8)

    N, R = X.shape[0], M.shape[1]
    abundances = np.full((N, R), np.nan)
    recon = X - E
    lin = labels == LINEAR
    if lin.any():
        abundances[lin] = fcls(M, X[lin])
        recon[lin] = abundances[lin] @ M.T
    sq = np.sum((X - recon) ** 2, axis=1)
    return UnmixResult(labels, T, float(tau), abundances, recon, sq, calibration)


def fcls_everywhere(image, M):
    """FCLS on every pixel. Returns ``(abundances, reconstruction)``."""
    X = _pixels(image)
    A = fcls(M, X)
    return A, A @ np.asarray(M, dtype=float).T


# --------------------------------------------------------------------------
# metrics


def abundance_rmse(truth, estimate) -> float:
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    if truth.shape != estimate.shape:
        raise UsageError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if truth.size == 0:
        raise UsageError("no abundances to compare")
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))


def reconstruction_rmse(image, reconstruction) -> float:
    X = _pixels(image)
    Y = np.atleast_2d(np.asarray(reconstruction, dtype=float))
    if X.shape != Y.shape:
        raise UsageError(f"shape mismatch {X.shape} vs {Y.shape}")
    if X.size == 0:
        raise UsageError("no pixels to compare")
    return float(np.sqrt(np.mean((X - Y) ** 2)))
