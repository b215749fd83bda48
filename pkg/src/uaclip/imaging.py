"""Image decoding and closed-form visual attribute metrics.

Images are held as float64 arrays of shape ``(height, width, 3)`` with every
channel in [0, 1]. The attribute functions here are the raw (unnormalized)
inputs to the demand model; :class:`AttributeScaler` maps them onto [0, 1]
using corpus min/max.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCorpus, IOFailure, MalformedImage

ATTRIBUTE_NAMES = ("colorfulness", "brightness", "symmetry", "aesthetic")

# Rec.601 luma weights for (G, B); the R weight is implied by sum-to-one.
_LUMA_G = 0.587
_LUMA_B = 0.114


@dataclass(frozen=True)
class RasterImage:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise MalformedImage(f"expected (height, width, 3) pixels, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise MalformedImage("zero image dimension")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise MalformedImage("channel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @classmethod
    def from_bytes(cls, data, width, height):
        """Build an image from 8-bit interleaved RGB samples."""
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
        if arr.size != width * height * 3:
            raise MalformedImage("pixel payload does not match dimensions")
        return cls(arr.reshape(height, width, 3) / 255.0)

    @classmethod
    def uniform(cls, width, height, rgb):
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3)))

    def to_bytes(self):
        return np.rint(self.pixels * 255.0).astype(np.uint8).tobytes()


@dataclass(frozen=True)
class RawAttributes:
    colorfulness: float
    brightness: float
    symmetry: float
    aesthetic: float

    def as_dict(self):
        return {name: float(getattr(self, name)) for name in ATTRIBUTE_NAMES}


# ---------------------------------------------------------------------------
# decoding / encoding


def _read_ppm(data):
    if data[:2] != b"P6":
        raise MalformedImage("bad magic: not a binary PPM (P6)")
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedImage("truncated or invalid PPM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise MalformedImage("truncated PPM header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedImage("zero image dimension")
    if maxval != 255:
        raise MalformedImage(f"unsupported maxval {maxval}; only 255 is accepted")
    payload = data[pos : pos + width * height * 3]
    if len(payload) < width * height * 3:
        raise MalformedImage("truncated PPM payload")
    return RasterImage.from_bytes(payload, width, height)


def _read_png(path):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise MalformedImage("bad magic: not a PNG")
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P"):
                raise MalformedImage(f"unsupported PNG mode {im.mode}; 8-bit RGB(A) expected")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise MalformedImage(str(exc)) from exc
    except OSError as exc:
        raise MalformedImage(f"cannot decode PNG: {exc}") from exc
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MalformedImage("zero image dimension")
    return RasterImage(arr / 255.0)


def load_image(path, format=None):
    """Read a P6 PPM or 8-bit PNG file; alpha is dropped."""
    if format is None:
        ext = os.path.splitext(str(path))[1].lower()
        format = "png" if ext == ".png" else "ppm"
    try:
        if format == "png":
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            return _read_png(path)
        with open(path, "rb") as fh:
            data = fh.read()
    except MalformedImage:
        raise
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    if format != "ppm":
        raise MalformedImage(f"unknown image format {format!r}")
    return _read_ppm(data)


def write_ppm(path, img):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + img.to_bytes())
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def write_pgm(path, values):
    """Write a 2-D array of 0..255 integers as a binary PGM."""
    arr = np.asarray(values)
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + data.tobytes())
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# attributes


def luminance(img):
    px = img.pixels
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    # written relative to R so that R == G == B gives exactly R
    return r + _LUMA_G * (g - r) + _LUMA_B * (b - r)


def _std(x):
    # shift by the first sample so constant inputs give exactly zero
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x - x[0]
    d = d - np.mean(d)
    return math.sqrt(float(np.mean(d * d)))


def colorfulness(img):
    """Hasler-Suesstrunk colorfulness on 0-255 channel values."""
    px = img.pixels * 255.0
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    sd = math.hypot(_std(rg), _std(yb))
    mu = math.hypot(float(np.mean(rg)), float(np.mean(yb)))
    return sd + 0.3 * mu


def brightness(img):
    return float(np.mean(luminance(img)))


def symmetry(img):
    """One minus the mean absolute left-right mirror difference."""
    px = img.pixels
    diff = np.abs(px - px[:, ::-1, :])
    return 1.0 - float(np.mean(diff))


def aesthetic_proxy(img):
    """Contrast/edge-density composite used in place of a learned aesthetic scorer.

    ``0.5 * std(luminance) + 0.5 * (mean |dL/dx| + mean |dL/dy|)``; a
    gradient direction with no neighbouring pixels contributes zero.
    """
    lum = luminance(img)
    contrast = _std(lum)
    edges = 0.0
    if lum.shape[1] > 1:
        edges += float(np.mean(np.abs(np.diff(lum, axis=1))))
    if lum.shape[0] > 1:
        edges += float(np.mean(np.abs(np.diff(lum, axis=0))))
    return 0.5 * contrast + 0.5 * edges


def raw_attributes(img):
    return RawAttributes(
        colorfulness=colorfulness(img),
        brightness=brightness(img),
        symmetry=symmetry(img),
        aesthetic=aesthetic_proxy(img),
    )


# ---------------------------------------------------------------------------
# min-max scaling


@dataclass(frozen=True)
class AttributeScaler:
    """Per-attribute corpus ``(min, max)``; degenerate ranges map to 0.5."""

    bounds: dict = field(default_factory=dict)

    def degenerate(self, name):
        lo, hi = self.bounds[name]
        return hi == lo

    def to_json(self):
        return {name: {"min": lo, "max": hi} for name, (lo, hi) in self.bounds.items()}

    @classmethod
    def from_json(cls, obj):
        return cls({name: (float(v["min"]), float(v["max"])) for name, v in obj.items()})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def _as_mapping(raw):
    if isinstance(raw, RawAttributes):
        return raw.as_dict()
    return dict(raw)


def fit_scaler(corpus):
    items = [_as_mapping(r) for r in corpus]
    if not items:
        raise EmptyCorpus("cannot fit a scaler on an empty corpus")
    bounds = {}
    for name in items[0]:
        vals = [float(item[name]) for item in items]
        bounds[name] = (min(vals), max(vals))
    return AttributeScaler(bounds)


def apply_scaler(raw, scaler):
    """Min-max normalize ``raw`` attributes, clamped to [0, 1]."""
    values = _as_mapping(raw)
    out = {}
    for name, (lo, hi) in scaler.bounds.items():
        if name not in values:
            continue
        if hi == lo:
            out[name] = 0.5
            continue
        x = (float(values[name]) - lo) / (hi - lo)
        out[name] = min(max(x, 0.0), 1.0)
    return out
