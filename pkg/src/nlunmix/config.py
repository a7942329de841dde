"""Flat ``key = value`` experiment configuration and the named presets."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import gp
from .errors import FormatError, UsageError
from .extraction import IterativeParams
from .mixing import DEFAULT_FIXED_ABUNDANCE, SceneConfig, library_endmembers
from .scene_io import decimate_bands, load_endmembers

DEFAULTS = {
    "n_pixels": "1000",
    "n_endmembers": "3",
    "bands": "826",
    "decimate": "3",
    "proportions": "lmm:0.5,gbm:0.5",
    "eta": "0.5",
    "xi": "3",
    "noise_variance": "0.001",
    "abundance": "uniform",
    "abundance_cap": "1",
    "pfa": "0.01",
    "gp_mode": "shared",
    "gp_subsample": "64",
    "kernel": "gaussian",
    "orientation": "lower",
    "extractor": "iterative",
    "n_max": "10",
    "epsilon": "0.05",
    "r_f": "0.9",
    "extract_pfa": "0.05",
}

_fixed = ",".join(repr(v) for v in DEFAULT_FIXED_ABUNDANCE)

PRESETS = {
    # detector with known M: 4000 linear + 4000 GBM pixels, one fixed abundance vector
    "paper-main": {
        "n_pixels": "8000",
        "proportions": "lmm:0.5,gbm:0.5",
        "eta": "0.5",
        "noise_variance": "0.001",
        "abundance": _fixed,
        "bands": "826",
        "decimate": "3",
    },
    # the same scene swept over the degree of nonlinearity
    "paper-roc": {
        "n_pixels": "8000",
        "proportions": "lmm:0.5,gbm:0.5",
        "eta_sweep": "0.3,0.5,0.8",
        "noise_variance": "0.001",
        "abundance": _fixed,
        "bands": "826",
        "decimate": "3",
    },
    # iterative extraction: 500 linear + 500 GBM pixels, uniform abundances
    "paper-extract": {
        "n_pixels": "1000",
        "proportions": "lmm:0.5,gbm:0.5",
        "eta": "0.5",
        "noise_variance": "0.001",
        "abundance": "uniform",
        "bands": "826",
        "decimate": "3",
        "extractor": "iterative",
        "extract_pfa": "0.05",
    },
    # unmixing tables: 500 linear + 500 nonlinear pixels, pfa 0.01
    "paper-unmix-gbm": {
        "n_pixels": "1000",
        "proportions": "lmm:0.5,gbm:0.5",
        "eta": "0.5",
        "noise_variance": "0.001",
        "abundance": "uniform",
        "bands": "826",
        "decimate": "3",
        "pfa": "0.01",
    },
    "paper-unmix-pnmm": {
        "n_pixels": "1000",
        "proportions": "lmm:0.5,pnmm:0.5",
        "eta": "0.5",
        "xi": "3",
        "noise_variance": "0.001",
        "abundance": "uniform",
        "bands": "826",
        "decimate": "3",
        "pfa": "0.01",
    },
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        if key in out:
            raise UsageError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def resolve(preset: str | None = None, file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then preset, then config file, then command-line overrides."""
    cfg = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        cfg.update(PRESETS[preset])
    cfg.update(file_values or {})
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


# --------------------------------------------------------------------------
# typed accessors


def get_int(cfg, key, minimum=None) -> int:
    try:
        v = int(cfg[key])
    except KeyError:
        raise UsageError(f"missing config key {key!r}") from None
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {cfg[key]!r}") from None
    if minimum is not None and v < minimum:
        raise UsageError(f"{key} must be >= {minimum}, got {v}")
    return v


def get_float(cfg, key) -> float:
    try:
        v = float(cfg[key])
    except KeyError:
        raise UsageError(f"missing config key {key!r}") from None
    except ValueError:
        raise UsageError(f"{key} must be a number, got {cfg[key]!r}") from None
    if not np.isfinite(v):
        raise UsageError(f"{key} must be finite, got {cfg[key]!r}")
    return v


def get_floats(cfg, key) -> list[float]:
    try:
        return [float(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{key} must be a comma-separated list of numbers, got {cfg[key]!r}") from None


def parse_proportions(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if ":" not in part:
            raise UsageError(f"proportions entries look like 'family:fraction', got {part!r}")
        name, value = part.split(":", 1)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"bad proportion {part!r}") from None
    return out


def endmembers_from(cfg) -> np.ndarray:
    """Endmember file when ``endmembers`` is set, else the bundled library."""
    if cfg.get("endmembers"):
        return load_endmembers(cfg["endmembers"])
    R = get_int(cfg, "n_endmembers", 2)
    M = library_endmembers(R, get_int(cfg, "bands", 2))
    return decimate_bands(M, get_int(cfg, "decimate", 1))


def scene_config(cfg, seed: int, eta: float | None = None) -> SceneConfig:
    abundance = cfg["abundance"].strip()
    if abundance != "uniform":
        try:
            abundance = np.array([float(v) for v in abundance.split(",")])
        except ValueError:
            raise UsageError(f"abundance must be 'uniform' or a list of numbers, got {cfg['abundance']!r}") from None
    n = get_int(cfg, "n_pixels")
    if n < 1:
        raise UsageError(f"n_pixels must be positive, got {n}")
    return SceneConfig(
        n_pixels=n,
        endmembers=endmembers_from(cfg),
        proportions=parse_proportions(cfg["proportions"]),
        eta=get_float(cfg, "eta") if eta is None else eta,
        xi=get_float(cfg, "xi"),
        noise_variance=get_float(cfg, "noise_variance"),
        abundance=abundance,
        abundance_cap=get_float(cfg, "abundance_cap"),
        seed=seed,
    )


def gp_settings(cfg, seed: int, threads: int = 1) -> gp.GPSettings:
    return gp.GPSettings(
        mode=cfg["gp_mode"],
        subsample=get_int(cfg, "gp_subsample", 1),
        kernel=cfg["kernel"],
        seed=seed,
        threads=threads,
    )


def iterative_params(cfg) -> IterativeParams:
    n_max = get_int(cfg, "n_max", 1)
    r_inc = get_float(cfg, "r_inc") if "r_inc" in cfg else None
    return IterativeParams(
        n_max=n_max,
        epsilon=get_float(cfg, "epsilon"),
        r_f=get_float(cfg, "r_f"),
        r_inc=r_inc,
        pfa=get_float(cfg, "extract_pfa"),
    )
