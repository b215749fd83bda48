"""Featurizers and the small dual-encoder towers.

Text is featurized as hashed unigram+bigram counts and images as a box-pooled
RGB grid. Each tower is an affine projection (optionally through one tanh
hidden layer) followed by L2 normalization.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEmbedding, InvalidConfig, IOFailure

NORM_EPS = 1e-12
EMPTY_BUCKET = 0

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a(text):
    """64-bit FNV-1a hash of the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text):
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def featurize_text(text, H):
    """Hashed unigram and adjacent-bigram counts in ``H`` buckets."""
    if H < 2:
        raise InvalidConfig("text hash dimension must be at least 2")
    out = np.zeros(H, dtype=np.int64)
    tokens = tokenize(text)
    if not tokens:
        out[EMPTY_BUCKET] = 1
        return out
    for tok in tokens:
        out[fnv1a(tok) % H] += 1
    for a, b in zip(tokens, tokens[1:]):
        out[fnv1a(f"{a} {b}") % H] += 1
    return out


def _pool_matrix(n, G):
    """(G, n) matrix averaging ``n`` samples into ``G`` equal-width cells."""
    W = np.zeros((G, n))
    width = n / G
    for j in range(G):
        lo, hi = j * width, (j + 1) * width
        for p in range(int(math.floor(lo)), min(n, int(math.ceil(hi)))):
            overlap = min(hi, p + 1) - max(lo, p)
            if overlap > 0:
                W[j, p] = overlap / width
    return W


def featurize_image(img, G):
    """Area-weighted box pooling onto a ``G x G`` grid, flattened (row, col, channel)."""
    if G < 1:
        raise InvalidConfig("image grid size must be at least 1")
    rows = _pool_matrix(img.height, G)
    cols = _pool_matrix(img.width, G)
    pooled = np.einsum("ah,hwc,bw->abc", rows, img.pixels, cols)
    return np.clip(pooled, 0.0, 1.0).ravel()


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class EncoderDims:
    d: int = 32
    G: int = 8
    H: int = 512
    m: int = 64

    @property
    def image_in(self):
        return 3 * self.G * self.G

    @property
    def text_in(self):
        return self.H


def tower_keys(tower, m):
    keys = [f"{tower}_proj_w", f"{tower}_proj_b"]
    if m > 0:
        keys = [f"{tower}_hidden_w", f"{tower}_hidden_b"] + keys
    return keys


def param_shapes(dims):
    shapes = {}
    for tower, n_in in (("img", dims.image_in), ("txt", dims.text_in)):
        if dims.m > 0:
            shapes[f"{tower}_hidden_w"] = (dims.m, n_in)
            shapes[f"{tower}_hidden_b"] = (dims.m,)
            shapes[f"{tower}_proj_w"] = (dims.d, dims.m)
        else:
            shapes[f"{tower}_proj_w"] = (dims.d, n_in)
        shapes[f"{tower}_proj_b"] = (dims.d,)
    return shapes


@dataclass(frozen=True)
class EncoderParams:
    dims: EncoderDims
    seed: int
    tensors: dict

    def __post_init__(self):
        shapes = param_shapes(self.dims)
        if set(shapes) != set(self.tensors):
            raise InvalidConfig(f"parameter keys {sorted(self.tensors)} do not match dims")
        frozen = {}
        for key, shape in shapes.items():
            arr = np.array(self.tensors[key], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidConfig(f"{key}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidConfig(f"{key}: non-finite entries")
            arr.setflags(write=False)
            frozen[key] = arr
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, key):
        return self.tensors[key]

    def replace(self, tensors):
        return EncoderParams(self.dims, self.seed, tensors)

    def to_json(self):
        return {
            "dims": {"d": self.dims.d, "G": self.dims.G, "H": self.dims.H, "m": self.dims.m},
            "seed": self.seed,
            "tensors": {k: v.tolist() for k, v in sorted(self.tensors.items())},
        }

    @classmethod
    def from_json(cls, obj):
        dims = EncoderDims(**{k: int(v) for k, v in obj["dims"].items()})
        return cls(dims, int(obj["seed"]), {k: np.array(v, dtype=np.float64) for k, v in obj["tensors"].items()})

    def save(self, path):
        try:
            with open(path, "w") as fh:
                # json writes floats with repr(), which round-trips doubles exactly
                json.dump(self.to_json(), fh)
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise IOFailure(f"cannot read {path}: {exc}") from exc


def init_params(seed, dims=EncoderDims()):
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    if dims.d < 2:
        raise InvalidConfig("embedding dimension must be at least 2")
    rng = np.random.default_rng(seed)
    tensors = {}
    for key, shape in param_shapes(dims).items():
        if key.endswith("_w"):
            fan_out, fan_in = shape
            a = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[key] = rng.uniform(-a, a, size=shape)
        else:
            tensors[key] = np.zeros(shape)
    return EncoderParams(dims, int(seed), tensors)


# ---------------------------------------------------------------------------
# forward passes


def tower_forward(params, tower, F):
    """Run a tower on a batch ``F`` of shape (N, n_in).

    Returns ``(U, cache)`` where U holds unit-norm rows and cache carries the
    intermediates needed for backpropagation.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    cache = {"F": F}
    x = F
    if params.dims.m > 0:
        a = np.tanh(x @ params[f"{tower}_hidden_w"].T + params[f"{tower}_hidden_b"])
        cache["A"] = a
        x = a
    Z = x @ params[f"{tower}_proj_w"].T + params[f"{tower}_proj_b"]
    norms = np.linalg.norm(Z, axis=1)
    if np.any(~np.isfinite(norms)) or np.any(norms < NORM_EPS):
        bad = int(np.argmin(np.where(np.isfinite(norms), norms, -1.0)))
        raise DegenerateEmbedding(f"{tower} embedding {bad} has norm below {NORM_EPS}")
    U = Z / norms[:, None]
    cache["norms"] = norms
    cache["U"] = U
    return U, cache


def tower_backward(params, tower, cache, dU):
    """Gradients of a scalar loss w.r.t. the tower parameters given dL/dU."""
    U, norms = cache["U"], cache["norms"]
    dZ = (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / norms[:, None]
    grads = {f"{tower}_proj_b": dZ.sum(axis=0)}
    if params.dims.m > 0:
        A = cache["A"]
        grads[f"{tower}_proj_w"] = dZ.T @ A
        dH = (dZ @ params[f"{tower}_proj_w"]) * (1.0 - A * A)
        grads[f"{tower}_hidden_w"] = dH.T @ cache["F"]
        grads[f"{tower}_hidden_b"] = dH.sum(axis=0)
    else:
        grads[f"{tower}_proj_w"] = dZ.T @ cache["F"]
    return grads


def encode_image(params, f):
    U, _ = tower_forward(params, "img", f)
    return U[0] if np.ndim(f) == 1 else U


def encode_text(params, f):
    U, _ = tower_forward(params, "txt", f)
    return U[0] if np.ndim(f) == 1 else U


def cosine_similarity(a, b):
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))
