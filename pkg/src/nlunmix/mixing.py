"""Synthetic pixel generation under linear, bilinear and post-nonlinear mixing.

Nonlinear pixels are written as ``r = k*M@a + gamma*nu`` where ``nu`` is the
nonlinear term of the chosen family. ``k`` and ``gamma`` are chosen so that
the pixel energy equals that of the plain linear mixture and a prescribed
fraction ``eta`` of it comes from the nonlinear part.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, UsageError
from .scene_io import LINEAR, NONLINEAR, GroundTruth, SceneImage, validate_endmembers

FAMILIES = ("lmm", "gbm", "pnmm")

# Abundance vector used for the fixed-abundance experiments. As printed it
# sums to 1.1, so it is normalized before use.
DEFAULT_FIXED_ABUNDANCE = (0.6, 0.4, 0.1)

_LIBRARY_SEED = 20160613
WAVELENGTH_RANGE = (0.4, 2.5)  # micrometres


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for an independent named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def library_endmembers(R: int = 3, n_bands: int = 826) -> np.ndarray:
    """Smooth synthetic reflectance spectra, one per column.

    Each spectrum is a baseline plus 3-5 Gaussian bumps over 0.4-2.5 um. The
    i-th spectrum depends only on i, so asking for more endmembers extends
    the set without changing the earlier columns.
    """
    if R < 1 or n_bands < 2:
        raise UsageError("need R >= 1 and n_bands >= 2")
    wl = np.linspace(*WAVELENGTH_RANGE, n_bands)
    M = np.empty((n_bands, R))
    for i in range(R):
        rng = make_rng(_LIBRARY_SEED, i)
        spec = np.full(n_bands, rng.uniform(0.05, 0.25))
        spec += rng.uniform(-0.08, 0.08) * (wl - wl.mean()) / np.ptp(wl)
        for _ in range(rng.integers(3, 6)):
            amp = rng.uniform(0.1, 0.45)
            center = rng.uniform(*WAVELENGTH_RANGE)
            width = rng.uniform(0.08, 0.45)
            spec += amp * np.exp(-0.5 * ((wl - center) / width) ** 2)
        M[:, i] = np.clip(spec, 0.02, 0.98)
    return M


def sample_abundance_uniform(R: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw abundances uniformly on the (R-1)-simplex (flat Dirichlet)."""
    if R < 2:
        raise UsageError(f"need R >= 2 endmembers, got {R}")
    shape = (R,) if size is None else (size, R)
    e = rng.standard_exponential(shape)
    return e / e.sum(axis=-1, keepdims=True)


def sample_abundance_capped(R: int, rng, size: int, cap: float) -> np.ndarray:
    """Uniform-on-simplex draws conditioned on every abundance being <= cap."""
    if not (1.0 / R < cap <= 1.0):
        raise UsageError(f"abundance cap must lie in (1/R, 1], got {cap}")
    out = np.empty((0, R))
    while len(out) < size:
        draw = sample_abundance_uniform(R, rng, size=2 * (size - len(out)) + 16)
        out = np.vstack([out, draw[draw.max(axis=1) <= cap]])
    return out[:size]


def _check_pair(M, alpha):
    M = np.asarray(M, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if M.ndim != 2 or alpha.shape[-1] != M.shape[1]:
        raise UsageError(f"abundance length {alpha.shape[-1]} does not match {M.shape[1]} endmembers")
    return M, alpha


def lmm_pixel(M, alpha) -> np.ndarray:
    """Noiseless linear mixture ``M @ alpha``. ``alpha`` may be N x R."""
    M, alpha = _check_pair(M, alpha)
    return alpha @ M.T


def gbm_nonlinear_term(M, alpha) -> np.ndarray:
    """Sum over pairs i<j of alpha_i*alpha_j*(m_i * m_j)."""
    M, alpha = _check_pair(M, alpha)
    R = M.shape[1]
    if R < 2:
        raise UsageError("bilinear term needs at least 2 endmembers")
    iu, ju = np.triu_indices(R, k=1)
    products = M[:, iu] * M[:, ju]  # L x R(R-1)/2
    weights = alpha[..., iu] * alpha[..., ju]
    return weights @ products.T


def pnmm_nonlinear_term(M, alpha, xi: float) -> np.ndarray:
    """Entrywise power ``(M @ alpha) ** xi``."""
    lin = lmm_pixel(M, alpha)
    if float(xi) != int(xi) and np.any(lin < 0):
        raise DegenerateInputError("negative reflectance raised to a fractional power")
    return lin ** xi


def nonlinear_term(family: str, M, alpha, xi: float = 3.0) -> np.ndarray:
    if family == "gbm":
        return gbm_nonlinear_term(M, alpha)
    if family == "pnmm":
        return pnmm_nonlinear_term(M, alpha, xi)
    raise UsageError(f"unknown nonlinear family {family!r}")


def solve_scaling(eta: float, lin, nu) -> tuple[float, float]:
    """Scaling factors (k, gamma) for ``r = k*lin + gamma*nu``.

    ``lin`` is the linear mixture ``M @ alpha``. ``k = sqrt(1 - eta)`` and
    gamma is the positive root of
    ``gamma^2 |nu|^2 + 2 k gamma nu.lin - (1 - k^2) |lin|^2 = 0``.
    """
    if not (0.0 <= eta < 1.0):
        raise UsageError(f"degree of nonlinearity must lie in [0, 1), got {eta}")
    lin = np.asarray(lin, dtype=float)
    nu = np.asarray(nu, dtype=float)
    k = math.sqrt(1.0 - eta)
    if eta == 0.0:
        return 1.0, 0.0
    a = float(nu @ nu)
    if a == 0.0:
        raise DegenerateInputError("nonlinear term is identically zero; eta > 0 is infeasible")
    b = k * float(nu @ lin)
    c = (1.0 - k * k) * float(lin @ lin)
    disc = math.sqrt(b * b + a * c)
    # conjugate form avoids cancellation when b dominates
    gamma = c / (b + disc) if b >= 0 else (disc - b) / a
    return k, gamma


def degree_of_nonlinearity(r_lin, r_nlin) -> float:
    """Fraction of the pixel energy attributable to the nonlinear part."""
    r_lin = np.asarray(r_lin, dtype=float)
    r_nlin = np.asarray(r_nlin, dtype=float)
    if r_lin.shape != r_nlin.shape:
        raise UsageError("linear and nonlinear parts differ in length")
    total = r_lin + r_nlin
    energy = float(total @ total)
    if energy == 0.0:
        raise DegenerateInputError("pixel has zero energy")
    return (2.0 * float(r_lin @ r_nlin) + float(r_nlin @ r_nlin)) / energy


def mix_pixel(family: str, M, alpha, eta: float, xi: float = 3.0) -> tuple[np.ndarray, float, float]:
    """Noiseless pixel of the given family at degree of nonlinearity eta.

    Returns ``(pixel, k, gamma)``.
    """
    lin = lmm_pixel(M, alpha)
    if family == "lmm":
        return lin, 1.0, 0.0
    nu = nonlinear_term(family, M, alpha, xi)
    k, gamma = solve_scaling(eta, lin, nu)
    return k * lin + gamma * nu, k, gamma


@dataclass
class SceneConfig:
    """Parameters of a synthetic scene.

    ``proportions`` maps family name to the fraction of pixels generated
    with it. ``abundance`` is ``"uniform"`` or a fixed vector (normalized to
    sum to one). ``abundance_cap`` restricts uniform draws to
    ``max(alpha) <= cap``.
    """

    n_pixels: int
    endmembers: np.ndarray
    proportions: dict = field(default_factory=lambda: {"lmm": 0.5, "gbm": 0.5})
    eta: float = 0.5
    xi: float = 3.0
    noise_variance: float = 0.001
    abundance: object = "uniform"
    abundance_cap: float = 1.0
    seed: int = 0

    def validate(self):
        if int(self.n_pixels) < 1:
            raise UsageError(f"n_pixels must be positive, got {self.n_pixels}")
        validate_endmembers(self.endmembers)
        unknown = set(self.proportions) - set(FAMILIES)
        if unknown:
            raise UsageError(f"unknown mixing families {sorted(unknown)}")
        props = np.array([self.proportions.get(f, 0.0) for f in FAMILIES], dtype=float)
        if np.any(props < 0) or abs(props.sum() - 1.0) > 1e-9:
            raise UsageError(f"family proportions must be nonnegative and sum to 1, got {self.proportions}")
        if not (0.0 <= self.eta < 1.0):
            raise UsageError(f"eta must lie in [0, 1), got {self.eta}")
        if self.noise_variance < 0:
            raise UsageError("noise variance must be nonnegative")
        if isinstance(self.abundance, str):
            if self.abundance != "uniform":
                raise UsageError(f"abundance must be 'uniform' or a vector, got {self.abundance!r}")
        else:
            a = np.asarray(self.abundance, dtype=float)
            if a.shape != (self.endmembers.shape[1],) or np.any(a < 0) or a.sum() <= 0:
                raise UsageError("fixed abundance must be a nonnegative R-vector")

    def family_counts(self) -> dict:
        n = int(self.n_pixels)
        counts = {}
        assigned = 0
        active = [f for f in FAMILIES if self.proportions.get(f, 0.0) > 0]
        for f in active[:-1]:
            counts[f] = int(round(n * self.proportions[f]))
            assigned += counts[f]
        if active:
            counts[active[-1]] = n - assigned
        return counts


def _draw_abundances(cfg: SceneConfig, n: int) -> np.ndarray:
    R = cfg.endmembers.shape[1]
    if isinstance(cfg.abundance, str):
        rng = make_rng(cfg.seed, 1)
        if cfg.abundance_cap < 1.0:
            return sample_abundance_capped(R, rng, n, cfg.abundance_cap)
        return sample_abundance_uniform(R, rng, size=n)
    a = np.asarray(cfg.abundance, dtype=float)
    return np.tile(a / a.sum(), (n, 1))


def generate_scene(cfg: SceneConfig) -> SceneImage:
    """Generate a labelled synthetic scene.

    Pixels are laid out family by family in the order lmm, gbm, pnmm.
    """
    cfg.validate()
    M = np.asarray(cfg.endmembers, dtype=float)
    n = int(cfg.n_pixels)
    alphas = _draw_abundances(cfg, n)

    clean = lmm_pixel(M, alphas)
    labels = np.full(n, LINEAR, dtype=np.int8)
    eta = np.zeros(n)
    start = 0
    for family, count in cfg.family_counts().items():
        stop = start + count
        if family != "lmm":
            labels[start:stop] = NONLINEAR
            eta[start:stop] = cfg.eta
            nu = nonlinear_term(family, M, alphas[start:stop], cfg.xi)
            for i in range(start, stop):
                k, gamma = solve_scaling(cfg.eta, clean[i], nu[i - start])
                clean[i] = k * clean[i] + gamma * nu[i - start]
        start = stop

    pixels = clean
    if cfg.noise_variance > 0:
        noise = make_rng(cfg.seed, 2).normal(0.0, math.sqrt(cfg.noise_variance), size=clean.shape)
        pixels = clean + noise

    truth = GroundTruth(labels=labels, abundances=alphas, endmembers=M.copy(), eta=eta, clean=clean.copy())
    return SceneImage(pixels, truth=truth)


def empirical_snr_db(clean: np.ndarray, noise_variance: float) -> float:
    """10*log10(mean |r|^2 / (L * sigma^2)); reported as metadata only."""
    clean = np.atleast_2d(clean)
    if noise_variance <= 0:
        return float("inf")
    power = np.mean(np.sum(clean ** 2, axis=1))
    return 10.0 * math.log10(power / (clean.shape[1] * noise_variance))
