"""Endmember extraction: affine reduction, VCA, MVES and the detector-guided
iterative scheme that discards nonlinearly mixed pixels between MVES runs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import gp
from .detector import calibrate_threshold, compute_statistics
from .errors import EarlyStopError, ExtractionError, NumericalError, UsageError
from .lp import LPProblem, solve_lp
from .mixing import make_rng
from .scene_io import SceneImage


def _pixels(image) -> np.ndarray:
    if isinstance(image, SceneImage):
        return image.pixels
    return np.atleast_2d(np.asarray(image, dtype=float))


# --------------------------------------------------------------------------
# spectral angles and column matching


def spectral_angle(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(min(1.0, max(-1.0, cos)))


def match_endmembers(estimate, reference):
    """Column order of ``estimate`` that best matches ``reference``.

    Returns ``(perm, angles)`` with ``estimate[:, perm[j]]`` matched to
    ``reference[:, j]``. Exhaustive search for R <= 6, Hungarian otherwise.
    """
    E = np.asarray(estimate, dtype=float)
    Rf = np.asarray(reference, dtype=float)
    if E.shape != Rf.shape:
        raise UsageError(f"shape mismatch {E.shape} vs {Rf.shape}")
    R = E.shape[1]
    cost = np.array([[spectral_angle(E[:, i], Rf[:, j]) for j in range(R)] for i in range(R)])
    if R <= 6:
        best = min(itertools.permutations(range(R)), key=lambda p: sum(cost[p[j], j] for j in range(R)))
        perm = np.array(best)
    else:
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(R, dtype=int)
        perm[cols] = rows
    angles = np.array([cost[perm[j], j] for j in range(R)])
    return perm, angles


def mean_sam(estimate, reference) -> float:
    return float(match_endmembers(estimate, reference)[1].mean())


# --------------------------------------------------------------------------
# affine dimensionality reduction


@dataclass(frozen=True)
class ReducedData:
    projected: np.ndarray  # N x (R-1)
    basis: np.ndarray  # L x (R-1), orthonormal columns
    centroid: np.ndarray  # L
    singular_values: np.ndarray

    def lift(self, coords) -> np.ndarray:
        """Map reduced coordinates (rows) back to spectra (rows)."""
        return self.centroid + np.atleast_2d(coords) @ self.basis.T


def affine_reduce(image, R: int) -> ReducedData:
    """Project pixels onto the (R-1)-dimensional principal affine subspace."""
    X = _pixels(image)
    N, L = X.shape
    if R < 2:
        raise UsageError(f"need R >= 2, got {R}")
    if N < R:
        raise UsageError(f"need at least R={R} pixels, got {N}")
    centroid = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - centroid, full_matrices=False)
    basis = Vt[: R - 1].T.copy()
    for k in range(basis.shape[1]):
        if basis[np.argmax(np.abs(basis[:, k])), k] < 0:
            basis[:, k] *= -1.0
    projected = (X - centroid) @ basis
    return ReducedData(projected=projected, basis=basis, centroid=centroid, singular_values=s)


def _check_rank(s, R, what):
    if s.size < R - 1 or s[0] <= 0 or s[R - 2] <= 1e-10 * s[0]:
        raise ExtractionError(f"{what}: data span fewer than R-1={R - 1} affine dimensions")


# --------------------------------------------------------------------------
# VCA


def vca(image, R: int, seed: int = 0) -> np.ndarray:
    """Vertex component analysis; returns R observed pixels as an L x R matrix.

    Follows Nascimento & Bioucas-Dias: data are projected on a signal
    subspace (projective projection at high SNR, affine at low SNR) and
    endmembers are found one at a time as the pixel with the largest
    projection on a random direction orthogonal to those already found.
    """
    Y = _pixels(image).T  # L x N
    L, N = Y.shape
    if N < R:
        raise UsageError(f"need at least R={R} pixels, got {N}")
    if R < 2 or L < R:
        raise UsageError(f"invalid endmember count R={R} for L={L} bands")
    rng = make_rng(seed, 301)

    r_m = Y.mean(axis=1, keepdims=True)
    Yc = Y - r_m
    U, s, _ = np.linalg.svd(Yc, full_matrices=False)
    _check_rank(s, R, "vca")
    Ud = U[:, :R]
    x_p = Ud.T @ Yc
    P_y = np.sum(Y ** 2) / N
    P_x = np.sum(x_p ** 2) / N + float(np.sum(r_m ** 2))
    if P_y - P_x <= 0:
        snr = np.inf
    else:
        snr = 10.0 * math.log10(max((P_x - R / L * P_y) / (P_y - P_x), 1e-12))
    snr_th = 15.0 + 10.0 * math.log10(R)

    if snr < snr_th:
        d = R - 1
        x = x_p[:d]
        c = np.sqrt(np.max(np.sum(x ** 2, axis=0)))
        y = np.vstack([x, np.full((1, N), c)])
    else:
        d = R
        U2, _, _ = np.linalg.svd(Y @ Y.T / N)
        Ud2 = U2[:, :d]
        x_p2 = Ud2.T @ Y
        u = x_p2.mean(axis=1, keepdims=True)
        denom = u.T @ x_p2
        if np.any(np.abs(denom) < 1e-300):
            raise ExtractionError("vca: projective projection is singular")
        y = x_p2 / denom

    A = np.zeros((R, R))
    A[-1, 0] = 1.0
    indices = np.zeros(R, dtype=int)
    for i in range(R):
        w = rng.random(R)
        f = w - A @ np.linalg.pinv(A) @ w
        f /= np.linalg.norm(f)
        v = f @ y
        indices[i] = int(np.argmax(np.abs(v)))
        A[:, i] = y[:, indices[i]]
    if len(set(indices.tolist())) < R:
        raise ExtractionError("vca: selected the same pixel twice")
    return Y[:, indices].copy()


# --------------------------------------------------------------------------
# MVES


@dataclass
class MVESInfo:
    volumes: list = field(default_factory=list)  # simplex volume (reduced coords) after each sweep
    sweeps: int = 0
    min_barycentric: float = float("nan")
    lp_iterations: int = 0


def _barycentric(H, g, X):
    S = X @ H.T - g  # N x d
    return np.hstack([S, 1.0 - S.sum(axis=1, keepdims=True)])


def _initial_simplex(X, R):
    """Vertices (R x d) of a simplex containing every row of X."""
    d = R - 1
    idx = [int(np.argmax(np.sum((X - X.mean(axis=0)) ** 2, axis=1)))]
    for _ in range(1, R):
        V = X[idx]
        if len(idx) == 1:
            dist = np.sum((X - V[0]) ** 2, axis=1)
        else:
            B = (V[1:] - V[0]).T
            Q, _ = np.linalg.qr(B)
            D = X - V[0]
            D = D - (D @ Q) @ Q.T
            dist = np.sum(D ** 2, axis=1)
        idx.append(int(np.argmax(dist)))
    V = X[idx].astype(float)
    B = (V[:d] - V[d]).T
    if abs(np.linalg.det(B)) < 1e-14 * max(1.0, np.abs(B).max()) ** d:
        # degenerate pick; fall back on a large regular-ish simplex
        spread = np.abs(X - X.mean(axis=0)).max() + 1.0
        V = np.vstack([np.eye(d) * spread * R, -np.ones((1, d)) * spread * R]) + X.mean(axis=0)
    center = V.mean(axis=0)
    H, g = _hg_from_vertices(V)
    bary = _barycentric(H, g, X)
    t = max(1.0, float(np.max(1.0 - R * bary.min(axis=1)))) * (1.0 + 1e-6)
    return center + t * (V - center)


def _hg_from_vertices(V):
    d = V.shape[1]
    B = (V[:d] - V[d]).T
    H = np.linalg.inv(B)
    return H, H @ V[d]


def _vertices_from_hg(H, g):
    d = H.shape[0]
    Hinv = np.linalg.inv(H)
    V = [Hinv @ (np.eye(d)[j] + g) for j in range(d)]
    V.append(Hinv @ g)
    return np.array(V)


def _row_lp(X, H, g, i, direction, pivot_rule):
    """Optimize ``direction . h_i`` over row i of (H, g), other rows fixed.

    The primal has R free variables and 2N rows; it is solved through its
    dual (R equality rows, 2N nonnegative variables) and recovered from the
    equality multipliers.
    """
    N, d = X.shape
    others = np.delete(np.arange(d), i)
    S_other = X @ H[others].T - g[others]
    slack = 1.0 - S_other.sum(axis=1)
    # primal rows G y <= w with y = (h_i, g_i)
    G = np.vstack([
        np.hstack([-X, np.ones((N, 1))]),
        np.hstack([X, -np.ones((N, 1))]),
    ])
    w = np.concatenate([np.zeros(N), slack])
    q = np.append(direction, 0.0)
    res = solve_lp(LPProblem(c=w, A_eq=G.T, b_eq=q), pivot_rule=pivot_rule)
    y = res.duals_eq
    return y[:d], y[d], res.iterations


def _joint_step(X, H, g, rho, pivot_rule):
    """One linearized step on all of (H, g) inside the box ``|change| <= rho``.

    Maximizes the first-order change of log|det H| subject to enclosure.
    Only rows whose slack could be used up within the box enter the LP.
    Returns ``(dH, dg, predicted_gain, lp_iterations)``.
    """
    N, d = X.shape
    S = _barycentric(H, g, X)
    reach = rho * (np.abs(X).sum(axis=1) + 1.0)
    nv = d * d + d
    rows, rhs = [], []
    for j in range(d):
        for n in np.flatnonzero(S[:, j] <= reach):
            a = np.zeros(nv)
            a[j * d:(j + 1) * d] = -X[n]
            a[d * d + j] = 1.0
            rows.append(a)
            rhs.append(S[n, j])
    for n in np.flatnonzero(S[:, d] <= d * reach):
        a = np.zeros(nv)
        for j in range(d):
            a[j * d:(j + 1) * d] = X[n]
            a[d * d + j] = -1.0
        rows.append(a)
        rhs.append(S[n, d])
    c = np.concatenate([np.linalg.inv(H).T.ravel(), np.zeros(d)])
    # box rows join the enclosure rows; the dual has only nv equality rows
    G = np.vstack([np.array(rows).reshape(-1, nv), np.eye(nv), -np.eye(nv)])
    w = np.concatenate([np.maximum(np.array(rhs), 0.0), np.full(2 * nv, rho)])
    res = solve_lp(LPProblem(c=w, A_eq=G.T, b_eq=c), pivot_rule=pivot_rule)
    z = res.duals_eq
    return z[:d * d].reshape(d, d), z[d * d:], float(c @ z), res.iterations


def _polish(X, H, g, pivot_rule, stats, max_steps=200):
    """Trust-region sequential LP on the joint (H, g); never increases volume.

    Row-wise updates always move facet i together with the last facet, so
    they stall where a single facet would still rotate about its contact
    point. A joint step removes that stall.
    """
    logdet = math.log(abs(np.linalg.det(H)))
    rho = 0.1 * max(1.0, float(np.abs(H).max()))
    floor = 1e-12 * max(1.0, float(np.abs(H).max()))
    for _ in range(max_steps):
        if rho < floor:
            break
        try:
            dH, dg, pred, its = _joint_step(X, H, g, rho, pivot_rule)
        except NumericalError:
            rho *= 0.25
            continue
        stats.lp_iterations += its
        if pred <= 1e-13:
            break
        Hn, gn = H + dH, g + dg
        det_n = np.linalg.det(Hn)
        if det_n * np.linalg.det(H) <= 0:
            rho *= 0.25
            continue
        gain = math.log(abs(det_n)) - logdet
        if gain >= 0.25 * pred:
            H, g, logdet = Hn, gn, logdet + gain
            if gain >= 0.75 * pred:
                rho *= 2.0
        else:
            rho *= 0.25
    return H, g


def mves(image, R: int, tol: float = 1e-6, max_sweeps: int = 50, info: bool = False,
         pivot_rule: str = "dantzig"):
    """Minimum-volume enclosing simplex of the pixels.

    In reduced coordinates x the simplex is ``{x : s = Hx - g >= 0,
    1's <= 1}`` and its volume is ``1 / (d! |det H|)``. Rows of (H, g) are
    optimized one at a time by linear programs (det H is linear in each
    row), sweeping until the relative volume change drops below ``tol``.
    A stalled sweep is followed by a joint trust-region step on (H, g);
    sweeping resumes if that step shrinks the simplex.
    Returns the L x R endmember matrix, and an :class:`MVESInfo` when
    ``info`` is set.
    """
    X_full = _pixels(image)
    N = X_full.shape[0]
    if N < R:
        raise UsageError(f"need at least R={R} pixels, got {N}")
    red = affine_reduce(X_full, R)
    _check_rank(red.singular_values, R, "mves")
    d = R - 1
    X = red.projected
    scale = float(np.abs(X).max())
    Xs = X / scale

    V0 = _initial_simplex(Xs, R)
    H, g = _hg_from_vertices(V0)
    log_fact = math.lgamma(d + 1)

    def volume(Hm):
        return math.exp(-log_fact - math.log(abs(np.linalg.det(Hm)))) * scale ** d

    stats = MVESInfo(volumes=[volume(H)])
    history = [abs(np.linalg.det(H))]
    for sweep in range(1, max_sweeps + 1):
        for i in range(d):
            det = np.linalg.det(H)
            cof = det * np.linalg.inv(H)[:, i]
            best = None
            for direction in (cof, -cof):
                try:
                    h, gi, its = _row_lp(Xs, H, g, i, direction, pivot_rule)
                except NumericalError:
                    continue
                stats.lp_iterations += its
                value = abs(float(cof @ h))
                if best is None or value > best[0]:
                    best = (value, h, gi)
            if best is None:
                raise ExtractionError("mves: every row subproblem failed")
            if best[0] >= abs(det):
                H[i], g[i] = best[1], best[2]
        # the reference vertex rotates each sweep; a fixed one lets the row
        # alternation stall at a point that is not a minimum
        H, g = _hg_from_vertices(np.roll(_vertices_from_hg(H, g), 1, axis=0))
        stats.volumes.append(volume(H))
        stats.sweeps = sweep
        history.append(abs(np.linalg.det(H)))
        if len(history) > R and abs(history[-1] - history[-1 - R]) <= tol * history[-1]:
            before = history[-1]
            H, g = _polish(Xs, H, g, pivot_rule, stats)
            after = abs(np.linalg.det(H))
            if after - before <= tol * after:
                break
            stats.volumes.append(volume(H))
            history = [after]

    bary = _barycentric(H, g, Xs)
    stats.min_barycentric = float(bary.min())
    V = _vertices_from_hg(H, g) * scale
    M = red.lift(V).T
    return (M, stats) if info else M


# --------------------------------------------------------------------------
# detector-guided iterative extraction


@dataclass(frozen=True)
class IterativeParams:
    n_max: int = 10
    epsilon: float = 0.05
    r_f: float = 0.9
    r_inc: float | None = None  # default 0.1 / n_max
    pfa: float = 0.05

    def __post_init__(self):
        if self.r_inc is None:
            object.__setattr__(self, "r_inc", 0.1 / self.n_max)
        if not (0.0 < self.r_f <= 1.0):
            raise UsageError(f"relaxing factor must lie in (0, 1], got {self.r_f}")
        if self.r_inc < 0 or self.n_max < 1 or not (0 < self.pfa < 1):
            raise UsageError("invalid iterative extraction parameters")


@dataclass
class IterationRecord:
    iteration: int
    surviving_pixels: int
    discarded: int
    tau_r: float
    endmembers: np.ndarray
    sam_to_reference: float = float("nan")


@dataclass
class IterativeResult:
    endmembers: np.ndarray
    tau: float
    trace: list
    survivors: np.ndarray  # indices into the input image


def iterative_endmember_estimation(
    image,
    R: int,
    params: IterativeParams | None = None,
    settings: gp.GPSettings | None = None,
    reference=None,
) -> IterativeResult:
    """MVES alternated with removal of pixels the detector finds nonlinear.

    The threshold is calibrated once, on the first MVES estimate; pixels
    with ``T <= r_f * tau`` are removed and ``r_f`` grows by ``r_inc`` each
    pass. Stops when the T range of the survivors falls to ``epsilon`` or
    after ``n_max`` passes, then re-runs MVES on the survivors.
    """
    params = params or IterativeParams()
    settings = settings or gp.GPSettings()
    X = _pixels(image)
    if X.shape[0] == 0:
        raise UsageError("image has no pixels")

    def sam(Mhat):
        return mean_sam(Mhat, reference) if reference is not None else float("nan")

    idx = np.arange(X.shape[0])
    M_hat = mves(X, R)
    tau = calibrate_threshold(M_hat, X, params.pfa, settings).tau
    r_f = params.r_f
    tau_r = r_f * tau
    t_max, t_min = 1.0, 0.0
    cc = 1
    trace = [IterationRecord(0, len(idx), 0, tau_r, M_hat, sam(M_hat))]
    while t_max - t_min > params.epsilon and cc < params.n_max:
        T, _, _, _ = compute_statistics(M_hat, X[idx], settings)
        keep = T > tau_r
        used_tau = tau_r
        discarded = int((~keep).sum())
        idx = idx[keep]
        r_f += params.r_inc
        tau_r = r_f * tau
        if idx.size < 5 * R:
            raise EarlyStopError(
                f"only {idx.size} pixels survive iteration {cc}; need at least {5 * R}", trace
            )
        t_max, t_min = float(T[keep].max()), float(T[keep].min())
        cc += 1
        M_hat = mves(X[idx], R)
        trace.append(IterationRecord(cc - 1, int(idx.size), discarded, used_tau, M_hat, sam(M_hat)))
    return IterativeResult(endmembers=M_hat, tau=float(tau), trace=trace, survivors=idx)
