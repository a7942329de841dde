"""Scene containers and file formats.

Images are stored as flat ``N x L`` arrays (pixels by bands); the spatial
layout, when it matters, is passed separately as width/height.

File formats
------------
* endmembers: headerless CSV, L rows of R dot-decimal fields.
* images: a ``key: value`` text header next to a raw little-endian float32
  band-sequential payload with the same stem and a ``.raw`` suffix.
* detection maps: binary PGM (P5, maxval 255); linear=255, nonlinear=0,
  unclassified=128.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    MissingKeyError,
    SizeMismatchError,
    UnsupportedFormatError,
    UsageError,
    ValidationError,
)

LINEAR = 0
NONLINEAR = 1
UNCLASSIFIED = 2

LABEL_NAMES = {LINEAR: "linear", NONLINEAR: "nonlinear", UNCLASSIFIED: "unclassified"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}

_PGM_LEVELS = {LINEAR: 255, NONLINEAR: 0, UNCLASSIFIED: 128}

HEADER_KEYS = ("samples", "bands", "data_type", "byte_order", "interleave")


@dataclass(frozen=True)
class GroundTruth:
    """Per-pixel truth for synthetic scenes. Any field may be absent."""

    labels: np.ndarray | None = None  # LINEAR / NONLINEAR codes
    abundances: np.ndarray | None = None  # N x R
    endmembers: np.ndarray | None = None  # L x R
    eta: np.ndarray | None = None  # per-pixel degree of nonlinearity
    clean: np.ndarray | None = None  # N x L noiseless spectra; not serialized


@dataclass(frozen=True)
class SceneImage:
    pixels: np.ndarray  # N x L
    truth: GroundTruth | None = None
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.shape[1] < 1:
            raise ValidationError(f"pixels must be an N x L array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValidationError("pixels contain non-finite values")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        n = pixels.shape[0]
        if self.truth is not None:
            for name in ("labels", "abundances", "eta"):
                arr = getattr(self.truth, name)
                if arr is not None and len(arr) != n:
                    raise ValidationError(
                        f"ground-truth {name} has length {len(arr)}, expected {n}"
                    )

    @property
    def n_pixels(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_bands(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DetectionMap:
    labels: np.ndarray  # LINEAR / NONLINEAR / UNCLASSIFIED
    statistics: np.ndarray  # T per pixel, in [0, 2]
    threshold: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        stats = np.asarray(self.statistics, dtype=float)
        if labels.shape != stats.shape or labels.ndim != 1:
            raise ValidationError("labels and statistics must be 1-D and of equal length")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "statistics", stats)

    def __len__(self):
        return len(self.labels)


def validate_endmembers(M) -> np.ndarray:
    """Check an L x R endmember matrix and return it as a float array."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValidationError(f"endmember matrix must be 2-D, got shape {M.shape}")
    L, R = M.shape
    if R < 2:
        raise ValidationError(f"need at least 2 endmembers, got {R}")
    if L <= R:
        raise ValidationError(f"need more bands than endmembers, got L={L}, R={R}")
    if not np.all(np.isfinite(M)):
        raise ValidationError("endmember matrix contains non-finite values")
    if np.any(M < 0):
        raise ValidationError("endmember matrix contains negative reflectances")
    scale = max(np.abs(M).max(), 1.0)
    for i in range(R):
        for j in range(i + 1, R):
            if np.max(np.abs(M[:, i] - M[:, j])) <= 1e-12 * scale:
                raise ValidationError(f"endmember columns {i} and {j} are identical")
    return M


def _format_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


def load_endmembers(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if rows and len(fields) != len(rows[0]):
                raise FormatError(
                    f"{path}: row {lineno} has {len(fields)} fields, expected {len(rows[0])}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: empty endmember file")
    M = np.array(rows, dtype=float)
    if np.any(np.isnan(M)):
        raise ValidationError(f"{path}: NaN entries")
    return validate_endmembers(M)


def save_endmembers(M, path) -> None:
    M = np.asarray(M, dtype=float)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in M:
            fh.write(",".join(_format_float(v) for v in row))
            fh.write("\n")


def raw_path_for(header_path) -> Path:
    return Path(header_path).with_suffix(".raw")


def _read_header(header_path) -> dict:
    header = {}
    with open(header_path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise FormatError(f"{header_path}: malformed header line {line!r}")
            key, value = line.split(":", 1)
            header[key.strip().lower()] = value.strip()
    return header


def load_image(header_path) -> SceneImage:
    header = _read_header(header_path)
    for key in HEADER_KEYS:
        if key not in header:
            raise MissingKeyError(f"{header_path}: missing header key {key!r}")
    if header["data_type"].lower() != "float32":
        raise UnsupportedFormatError(f"unsupported data_type {header['data_type']!r}")
    if header["byte_order"].lower() != "little":
        raise UnsupportedFormatError(f"unsupported byte_order {header['byte_order']!r}")
    if header["interleave"].lower() != "bsq":
        raise UnsupportedFormatError(f"unsupported interleave {header['interleave']!r}")
    try:
        n = int(header["samples"])
        L = int(header["bands"])
    except ValueError:
        raise FormatError(f"{header_path}: samples/bands must be integers") from None
    if n < 1 or L < 1:
        raise FormatError(f"{header_path}: samples and bands must be positive")

    raw = raw_path_for(header_path)
    payload = raw.read_bytes()
    expected = n * L * 4
    if len(payload) != expected:
        raise SizeMismatchError(f"{raw}: {len(payload)} bytes, header implies {expected}")
    cube = np.frombuffer(payload, dtype="<f4").reshape(L, n)
    pixels = cube.T.astype(float)

    width = int(header["width"]) if "width" in header else None
    height = int(header["height"]) if "height" in header else None
    return SceneImage(pixels, width=width, height=height)


def save_image(image: SceneImage, header_path) -> None:
    pixels = image.pixels
    n, L = pixels.shape
    lines = [
        f"samples: {n}",
        f"bands: {L}",
        "data_type: float32",
        "byte_order: little",
        "interleave: bsq",
    ]
    if image.width is not None and image.height is not None:
        lines += [f"width: {image.width}", f"height: {image.height}"]
    Path(header_path).write_text("\n".join(lines) + "\n", encoding="ascii")
    raw_path_for(header_path).write_bytes(np.ascontiguousarray(pixels.T, dtype="<f4").tobytes())


def decimate_bands(data, factor: int):
    """Keep bands 0, factor, 2*factor, ...

    Works on a SceneImage (bands are columns), on an L x R endmember matrix
    (bands are rows) and on a 1-D spectrum.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise UsageError(f"decimation factor must be a positive integer, got {factor!r}")
    if isinstance(data, SceneImage):
        truth = data.truth
        if truth is not None and truth.endmembers is not None:
            truth = GroundTruth(
                labels=truth.labels,
                abundances=truth.abundances,
                endmembers=truth.endmembers[::factor],
                eta=truth.eta,
                clean=None if truth.clean is None else truth.clean[:, ::factor],
            )
        return SceneImage(data.pixels[:, ::factor], truth=truth, width=data.width, height=data.height)
    arr = np.asarray(data)
    return arr[::factor].copy()


def save_detection_map(dmap: DetectionMap, width: int, height: int, path) -> None:
    if width < 1 or height < 1 or width * height != len(dmap):
        raise UsageError(
            f"map of {len(dmap)} pixels cannot be rendered as {width} x {height}"
        )
    levels = np.empty(len(dmap), dtype=np.uint8)
    for code, level in _PGM_LEVELS.items():
        levels[dmap.labels == code] = level
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path) -> tuple[int, int, np.ndarray]:
    """Read a P5 PGM written by :func:`save_detection_map`."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    payload = data[pos + 1:]
    if len(payload) != width * height:
        raise SizeMismatchError(f"{path}: payload has {len(payload)} bytes")
    return width, height, np.frombuffer(payload, dtype=np.uint8).copy()


def grid_shape(n: int) -> tuple[int, int]:
    """A width x height close to square with width * height == n."""
    w = int(math.isqrt(n))
    while w > 1 and n % w:
        w -= 1
    return n // w, w


def write_rows(path, header, rows) -> None:
    """Write a small CSV with exact float formatting."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return _format_float(v)
        return str(v)

    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def save_ground_truth(truth: GroundTruth, path) -> None:
    labels = truth.labels
    alphas = truth.abundances
    eta = truth.eta
    n = len(labels)
    R = alphas.shape[1]
    header = ["pixel_index", "label", "eta_d"] + [f"alpha_{i + 1}" for i in range(R)]
    rows = (
        [i, LABEL_NAMES[int(labels[i])], float(eta[i])] + [float(a) for a in alphas[i]]
        for i in range(n)
    )
    write_rows(path, header, rows)


def load_ground_truth(path) -> GroundTruth:
    header, rows = read_rows(path)
    if header[:3] != ["pixel_index", "label", "eta_d"]:
        raise FormatError(f"{path}: unexpected ground-truth header {header[:3]}")
    try:
        labels = np.array([LABEL_CODES[r[1]] for r in rows], dtype=np.int8)
        eta = np.array([float(r[2]) for r in rows])
        alphas = np.array([[float(v) for v in r[3:]] for r in rows])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return GroundTruth(labels=labels, abundances=alphas, eta=eta)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
