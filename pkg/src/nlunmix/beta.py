"""Beta distribution: regularized incomplete beta, quantiles, ML fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma

from .errors import DegenerateInputError, FittingError, UsageError, ValidationError

_CF_MAX_ITER = 10000
_CF_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters of a beta law on ``(0, scale)``."""

    alpha: float
    beta: float
    scale: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"beta parameter {name} must be finite and positive, got {v}")


def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a, b, x):
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise FittingError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at x."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def beta_pdf(x: float, a: float, b: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta(a, b))


def beta_cdf(params: BetaParams, x):
    """CDF on the ``(0, scale)`` support; vectorized over x."""
    xs = np.asarray(x, dtype=float) / params.scale
    out = np.array([regularized_incomplete_beta(v, params.alpha, params.beta) for v in xs.ravel()])
    return out.reshape(xs.shape) if xs.ndim else float(out[0])


def beta_inverse_cdf(params: BetaParams, p: float, tol: float = 1e-12) -> float:
    """Quantile of the beta law, returned on the ``(0, scale)`` support.

    Newton iterations kept inside a shrinking bracket; a step that leaves
    the bracket is replaced by bisection.
    """
    if not (0.0 < p < 1.0):
        raise UsageError(f"probability must lie in (0, 1), got {p}")
    a, b = params.alpha, params.beta
    lo, hi = 0.0, 1.0
    x = a / (a + b)
    for _ in range(500):
        f = regularized_incomplete_beta(x, a, b) - p
        if abs(f) <= tol:
            break
        if f > 0:
            hi = x
        else:
            lo = x
        dens = beta_pdf(x, a, b)
        step = x - f / dens if dens > 0 else -1.0
        x = step if lo < step < hi else 0.5 * (lo + hi)
        # relative width: for alpha < 1 low quantiles can be far below 1e-17
        if hi - lo <= 4e-16 * hi:
            break
    return x * params.scale


def fit_beta(samples, scale: float = 1.0, tol: float = 1e-10, max_iter: int = 100) -> BetaParams:
    """Maximum-likelihood beta fit to samples in ``(0, scale)``.

    Samples are divided by ``scale`` first. Starts from the method of
    moments and runs Newton on the digamma score equations.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 30:
        raise ValidationError(f"need at least 30 samples, got {x.size}")
    if np.any(~np.isfinite(x)) or np.any(x <= 0) or np.any(x >= scale):
        raise ValidationError(f"samples must lie strictly inside (0, {scale})")
    x = x / scale
    mean = float(x.mean())
    var = float(x.var())
    if var <= 1e-14 * max(mean, 1e-300):
        raise DegenerateInputError("samples have zero variance")
    common = mean * (1.0 - mean) / var - 1.0
    if common <= 0:
        common = 1.0
    a, b = mean * common, (1.0 - mean) * common
    mlog = float(np.mean(np.log(x)))
    mlog1 = float(np.mean(np.log1p(-x)))

    # Newton in log-parameters: shapes stay positive, stopping rule is relative
    for _ in range(max_iter):
        dab = digamma(a + b)
        g = np.array([digamma(a) - dab - mlog, digamma(b) - dab - mlog1])
        tab = polygamma(1, a + b)
        J = np.array([[polygamma(1, a) - tab, -tab], [-tab, polygamma(1, b) - tab]])
        J = J * np.array([a, b])[None, :]
        step = np.linalg.solve(J, g)
        step = np.clip(step, -1.0, 1.0)
        a, b = a * math.exp(-step[0]), b * math.exp(-step[1])
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise FittingError("beta maximum-likelihood iterations did not converge")
    return BetaParams(float(a), float(b), float(scale))
