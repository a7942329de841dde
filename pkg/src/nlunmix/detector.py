"""Detection of nonlinearly mixed pixels.

Each pixel is fitted twice: by least squares on the endmembers (residual
``e_lin = P r``) and by GP regression (residual ``e_nlin``). The statistic

    T = 2 |e_nlin|^2 / (|e_nlin|^2 + |e_lin|^2)

is small when the GP explains the pixel much better than the linear model.
A pixel is declared nonlinear iff ``T < tau``; the threshold comes from a
beta law fitted to T on a synthetic image that is linear by construction.

T can reach 2, but on linear pixels the GP residual is almost never larger
than the linear one, so T|H0 piles up just below 1 with a long left tail.
The beta law is therefore fitted on (0, 1); the rare H0 samples with
T >= 1 are left out of the fit and counted in ``n_excluded``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import gp
from .beta import BetaParams, beta_inverse_cdf, fit_beta
from .errors import DegenerateInputError, NumericalError, UsageError, ValidationError
from .mixing import make_rng
from .scene_io import LINEAR, NONLINEAR, DetectionMap, SceneImage


BETA_SUPPORT = 1.0

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _pixels(image) -> np.ndarray:
    if isinstance(image, SceneImage):
        return image.pixels
    return np.atleast_2d(np.asarray(image, dtype=float))


@dataclass(frozen=True)
class LinearModel:
    projector: np.ndarray  # L x L, projects onto the orthogonal complement of span(M)
    rank: int


def build_linear_model(M) -> LinearModel:
    M = np.asarray(M, dtype=float)
    L, R = M.shape
    Q, Rf = linalg.qr(M, mode="economic")
    diag = np.abs(np.diag(Rf))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300) * max(L, R):
        raise NumericalError("endmember matrix is rank deficient")
    P = np.eye(L) - Q @ Q.T
    return LinearModel(projector=0.5 * (P + P.T), rank=L - R)


def linear_residual(lm: LinearModel, r) -> np.ndarray:
    """``P r`` for a spectrum or each row of an N x L block."""
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != lm.projector.shape[0]:
        raise UsageError(f"spectrum has {r.shape[-1]} bands, expected {lm.projector.shape[0]}")
    return r @ lm.projector


@dataclass(frozen=True)
class TestStatistic:
    value: float
    e_lin_sq: float
    e_nlin_sq: float

    def decide(self, tau: float) -> int:
        return NONLINEAR if self.value < tau else LINEAR


def statistic_values(e_nlin_sq, e_lin_sq) -> np.ndarray:
    e_nlin_sq = np.asarray(e_nlin_sq, dtype=float)
    e_lin_sq = np.asarray(e_lin_sq, dtype=float)
    denom = e_nlin_sq + e_lin_sq
    if np.any(denom <= 0):
        raise DegenerateInputError("both residuals are zero; the statistic is undefined")
    return 2.0 * e_nlin_sq / denom


def test_statistic(e_nlin, e_lin) -> TestStatistic:
    e_nlin = np.asarray(e_nlin, dtype=float)
    e_lin = np.asarray(e_lin, dtype=float)
    nl = float(e_nlin @ e_nlin)
    li = float(e_lin @ e_lin)
    return TestStatistic(float(statistic_values(nl, li)), li, nl)


# keep pytest from collecting the function above as a test
test_statistic.__test__ = False
TestStatistic.__test__ = False


def compute_statistics(M, pixels, settings: gp.GPSettings, hyper=None):
    """T for every pixel. Returns ``(T, e_lin_sq, e_nlin_sq, hypers)``."""
    pixels = _pixels(pixels)
    lm = build_linear_model(M)
    e_lin = linear_residual(lm, pixels)
    e_nlin, hypers = gp.residuals(M, pixels, settings, hyper=hyper)
    lin_sq = np.einsum("ij,ij->i", e_lin, e_lin)
    nlin_sq = np.einsum("ij,ij->i", e_nlin, e_nlin)
    return statistic_values(nlin_sq, lin_sq), lin_sq, nlin_sq, hypers


@dataclass(frozen=True)
class CalibrationResult:
    beta: BetaParams
    tau: float
    pfa: float
    h0_samples: np.ndarray
    hypers: list = field(default_factory=list)
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.beta.alpha,
            "beta": self.beta.beta,
            "tau": self.tau,
            "pfa": self.pfa,
            "n_samples": int(len(self.h0_samples)),
        }


def ls_abundances_block(M, pixels) -> np.ndarray:
    """Unconstrained least-squares abundances for each row of ``pixels``."""
    M = np.asarray(M, dtype=float)
    Q, Rf = linalg.qr(M, mode="economic")
    return linalg.solve_triangular(Rf, Q.T @ np.asarray(pixels, dtype=float).T).T


def linear_surrogate(M, pixels, settings: gp.GPSettings, hypers=None):
    """Synthetic linear image ``A_hat M^T + noise`` built from the real pixels.

    Noise is drawn at the GP-estimated noise variance (per pixel in
    per-pixel mode). Returns ``(surrogate, hypers)``.
    """
    pixels = _pixels(pixels)
    M = np.asarray(M, dtype=float)
    A_hat = ls_abundances_block(M, pixels)
    clean = A_hat @ M.T
    if hypers is None:
        if settings.mode == "shared":
            hypers = [gp.estimate_shared(M, pixels, settings)]
        else:
            _, hypers = gp.residuals(M, pixels, settings)
    noise_var = np.array([h.noise_variance for h in hypers])
    std = np.sqrt(noise_var)[:, None] if len(hypers) > 1 else np.sqrt(noise_var[0])
    noise = make_rng(settings.seed, 202).standard_normal(clean.shape) * std
    return clean + noise, hypers


def calibrate_threshold(M, image, pfa: float, settings: gp.GPSettings, hypers=None) -> CalibrationResult:
    """Threshold for a target false-alarm probability.

    1. unconstrained LS abundances of every real pixel;
    2. a synthetic linear image from them plus noise at the estimated level;
    3. T for every synthetic pixel;
    4. a beta fit to the samples with T < 1;
    5. ``tau`` = the beta quantile at ``pfa``.
    """
    if not (0.0 < pfa < 1.0):
        raise UsageError(f"pfa must lie in (0, 1), got {pfa}")
    pixels = _pixels(image)
    if pixels.shape[0] == 0:
        raise UsageError("image has no pixels")
    surrogate, hypers = linear_surrogate(M, pixels, settings, hypers)
    shared = hypers[0] if settings.mode == "shared" else None
    if shared is not None:
        T, _, _, _ = compute_statistics(M, surrogate, settings, hyper=shared)
    else:
        T, _, _, _ = compute_statistics(M, surrogate, settings)
    usable = T[(T > 0) & (T < BETA_SUPPORT)]
    params = fit_beta(usable, scale=BETA_SUPPORT)
    tau = beta_inverse_cdf(params, pfa)
    return CalibrationResult(
        beta=params,
        tau=float(tau),
        pfa=float(pfa),
        h0_samples=T,
        hypers=list(hypers),
        n_excluded=int(len(T) - len(usable)),
    )


def detect_image(M, image, tau: float, settings: gp.GPSettings, hyper=None) -> DetectionMap:
    """Label each pixel: nonlinear iff T < tau (ties stay linear)."""
    pixels = _pixels(image)
    T, lin_sq, nlin_sq, hypers = compute_statistics(M, pixels, settings, hyper=hyper)
    labels = np.where(T < tau, NONLINEAR, LINEAR).astype(np.int8)
    meta = {"e_lin_sq": lin_sq, "e_nlin_sq": nlin_sq, "hypers": hypers}
    return DetectionMap(labels=labels, statistics=T, threshold=float(tau), meta=meta)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    pfa: np.ndarray
    pd: np.ndarray
    auc: float

    def pd_at(self, pfa: float) -> float:
        """Best detection probability whose false-alarm rate does not exceed ``pfa``."""
        ok = self.pfa <= pfa + 1e-12
        return float(self.pd[ok].max()) if np.any(ok) else 0.0


def roc_curve(statistics, labels, orientation: str = "lower") -> RocCurve:
    """Empirical ROC of the rule "nonlinear iff T < t" over all thresholds t.

    ``orientation="higher"`` flips the rule to "nonlinear iff T > t".
    """
    T = np.asarray(statistics, dtype=float)
    y = np.asarray(labels) == NONLINEAR
    if T.shape != y.shape or T.ndim != 1:
        raise ValidationError("statistics and labels must be 1-D of equal length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs both linear and nonlinear pixels")
    if orientation == "higher":
        T = -T
    elif orientation != "lower":
        raise UsageError(f"orientation must be 'lower' or 'higher', got {orientation!r}")

    order = np.argsort(T, kind="stable")
    Ts = T[order]
    ys = y[order]
    # after each block of tied values, everything up to and including it is flagged
    last_of_block = np.r_[Ts[1:] != Ts[:-1], True]
    tp = np.cumsum(ys)[last_of_block]
    fp = np.cumsum(~ys)[last_of_block]
    pd = np.r_[0.0, tp / n_pos]
    pf = np.r_[0.0, fp / n_neg]
    # threshold that flags exactly the blocks up to index i: the next value (strict <)
    uniq = Ts[last_of_block]
    thresholds = np.r_[uniq, np.inf]
    if orientation == "higher":
        thresholds = -thresholds
    auc = float(_trapezoid(pd, pf))
    return RocCurve(thresholds=thresholds, pfa=pf, pd=pd, auc=auc)
