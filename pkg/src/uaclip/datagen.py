"""Synthetic matched image-text corpora with planted demand.

Each image is a uniform base colour plus two zero-mean gray textures:

* a checkerboard of amplitude ``a``, which is exactly anti-symmetric under a
  left-right flip (even widths), so symmetry = 1 - a;
* horizontal stripes of amplitude ``b``, which are mirror symmetric and only
  move the aesthetic proxy.

The base colour is ``g + c * d`` where ``d`` is a zero-luminance chroma
direction, so brightness stays at ``g`` and colorfulness is linear in ``c``.
Colorfulness targets are expressed as levels, raw colorfulness / 100.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .demand import HIGHER_IS_DEMAND, LOWER_IS_DEMAND, DemandModel, demand_score
from .errors import ArityMismatch, InfeasibleTarget, InvalidConfig, IOFailure
from .imaging import RasterImage, aesthetic_proxy, apply_scaler, fit_scaler, raw_attributes, write_ppm

COLORFULNESS_SCALE = 100.0
TARGET_TOL = 0.1

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "orange": (1.0, 0.5, 0.0),
    "yellow": (1.0, 1.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "teal": (0.0, 0.6, 0.6),
    "blue": (0.0, 0.0, 1.0),
    "purple": (0.5, 0.0, 0.8),
    "pink": (1.0, 0.4, 0.7),
}

DEFAULT_VOCABULARY = ("lamp", "chair", "sofa", "mug", "bedroom", "kitchen", "vase", "rug")


def _lum(rgb):
    r, g, b = rgb
    return 0.299 * r + 0.587 * g + 0.114 * b


def chroma_direction(word):
    """Zero-luminance direction scaled so ``c = 1`` gives raw colorfulness 100."""
    ref = np.asarray(PALETTE[word], dtype=np.float64)
    d = ref - _lum(ref)
    rg = d[0] - d[1]
    yb = 0.5 * (d[0] + d[1]) - d[2]
    per_unit = 0.3 * 255.0 * math.hypot(rg, yb)
    return d * (COLORFULNESS_SCALE / per_unit)


def colorfulness_level(img):
    return raw_attributes(img).colorfulness / COLORFULNESS_SCALE


@dataclass(frozen=True)
class RenderParams:
    color: str
    brightness: float
    chroma: float
    checker: float
    stripes: float


def render(p, width=32, height=32):
    """Rasterize ``p`` and quantize to 8 bits (what a PPM file would hold)."""
    base = np.full(3, p.brightness)
    if p.chroma > 0:
        base = base + p.chroma * chroma_direction(p.color)
    y, x = np.mgrid[0:height, 0:width]
    texture = 0.5 * p.checker * (-1.0) ** (x + y) + 0.5 * p.stripes * (-1.0) ** y
    px = base[None, None, :] + texture[:, :, None]
    q = np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)
    return RasterImage(q / 255.0)


def _room(brightness, chroma, color):
    base = np.full(3, brightness)
    if chroma > 0:
        base = base + chroma * chroma_direction(color)
    return min(float(base.min()), 1.0 - float(base.max()))


def render_target(targets, color="red", width=32, height=32, tol=TARGET_TOL):
    """Solve for render parameters that hit the requested attribute levels.

    ``targets`` may hold colorfulness (level), brightness, symmetry and
    aesthetic; missing entries default to gray, 0.5, 1.0 and the smallest
    reachable aesthetic. Raises InfeasibleTarget when the combination cannot
    be rendered within ``tol``.
    """
    if width % 2 or height % 2:
        raise InvalidConfig("the renderer needs even image dimensions")
    level = float(targets.get("colorfulness", 0.0))
    g = float(targets.get("brightness", 0.5))
    a = 1.0 - float(targets.get("symmetry", 1.0))
    if level <= 0:
        color = "gray"
    if not (0 <= g <= 1 and 0 <= a <= 1 and level >= 0):
        raise InfeasibleTarget(f"targets out of range: {targets}")
    chroma = level if color != "gray" else 0.0
    room = _room(g, chroma, color)
    if room < a / 2 - 1e-12:
        raise InfeasibleTarget(f"targets {targets} exceed the colour gamut")
    b_max = max(2 * room - a, 0.0)

    def make(b):
        return render(RenderParams(color, g, chroma, a, b), width, height)

    b = 0.0
    if "aesthetic" in targets:
        want = float(targets["aesthetic"])
        lo, hi = 0.0, b_max
        if aesthetic_proxy(make(lo)) >= want:
            b = lo
        elif aesthetic_proxy(make(hi)) <= want:
            b = hi
        else:
            for _ in range(24):
                mid = 0.5 * (lo + hi)
                if aesthetic_proxy(make(mid)) < want:
                    lo = mid
                else:
                    hi = mid
            b = 0.5 * (lo + hi)
    img = make(b)
    measured = measure(img)
    for name, want in targets.items():
        if abs(measured[name] - float(want)) > tol:
            raise InfeasibleTarget(f"{name}: reached {measured[name]:.4f}, wanted {float(want):.4f}")
    return img, RenderParams(color, g, chroma, a, b)


def measure(img):
    """Attributes on the generator's target scales."""
    raw = raw_attributes(img).as_dict()
    raw["colorfulness"] /= COLORFULNESS_SCALE
    return raw


# ---------------------------------------------------------------------------
# corpora


@dataclass(frozen=True)
class SynthSpec:
    n: int = 200
    seed: int = 0
    width: int = 32
    height: int = 32
    vocabulary: tuple = DEFAULT_VOCABULARY
    coefficients: dict = field(default_factory=dict)
    orientation: str = LOWER_IS_DEMAND
    sigma: float = 0.1
    fixed_effects: dict = field(default_factory=dict)
    fe_scale: float = 0.5
    controls: dict = field(default_factory=dict)
    targets: tuple = None
    eta: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfig("corpus size must be at least 1")
        if self.sigma < 0:
            raise InvalidConfig("noise sigma must be non-negative")
        if self.targets is not None and len(self.targets) != self.n:
            raise InvalidConfig("explicit targets must list one entry per item")
        if self.orientation not in (HIGHER_IS_DEMAND, LOWER_IS_DEMAND):
            raise InvalidConfig(f"unknown orientation {self.orientation!r}")

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        if "vocabulary" in obj:
            obj["vocabulary"] = tuple(obj["vocabulary"])
        if "coefficients" in obj:
            obj["coefficients"] = {k: tuple(v) for k, v in obj["coefficients"].items()}
        if obj.get("targets") is not None:
            obj["targets"] = tuple(dict(t) for t in obj["targets"])
        return cls(**obj)


@dataclass(frozen=True)
class SynthItem:
    id: str
    image: RasterImage
    text: str
    raw: object
    targets: dict
    params: RenderParams


def _words(p):
    g = p.brightness
    color = p.color if p.chroma >= 0.05 else "gray"
    bright = "dark" if g < 0.35 else "dim" if g < 0.5 else "light" if g < 0.65 else "bright"
    if p.checker < 0.05 and p.stripes < 0.05:
        pattern = "plain"
    else:
        pattern = "checkered" if p.checker >= p.stripes else "striped"
    return bright, color, pattern


def _random_targets(rng, color, width, height):
    """Draw render parameters inside the gamut and report their attribute levels."""
    g = rng.uniform(0.2, 0.8)
    d = chroma_direction(color)
    # largest chroma keeping the base colour inside [0.05, 0.95]
    limits = [((0.95 - g) / x if x > 0 else (0.05 - g) / x) for x in d if x != 0]
    chroma = rng.uniform(0.0, 1.0) * max(min(limits), 0.0)
    room = _room(g, chroma, color)
    a = rng.uniform(0.0, 1.0) * room
    b = rng.uniform(0.0, 1.0) * max(2 * room - a, 0.0)
    img = render(RenderParams(color, g, chroma, a, b), width, height)
    m = measure(img)
    return {k: m[k] for k in ("colorfulness", "brightness", "symmetry", "aesthetic")}


def generate_corpus(spec):
    """Render ``spec.n`` items; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    colors = sorted(PALETTE)
    items = []
    for i in range(spec.n):
        color = colors[rng.integers(len(colors))]
        noun = spec.vocabulary[rng.integers(len(spec.vocabulary))]
        if spec.targets is not None:
            targets = dict(spec.targets[i])
            color = targets.pop("color", color)
        else:
            targets = _random_targets(rng, color, spec.width, spec.height)
        img, params = render_target(targets, color, spec.width, spec.height)
        bright, color_word, pattern = _words(params)
        text = f"{bright} {color_word} {pattern} {noun}"
        items.append(SynthItem(f"item{i:05d}", img, text, raw_attributes(img), targets, params))
    return items


def plant_demand_outcomes(attrs, coefficients, fe_labels=None, sigma=0.0, seed=0,
                          fe_scale=0.5, controls=None, control_coefficients=None):
    """Outcomes from a planted quadratic index plus fixed effects and noise.

    ``attrs`` are normalized attribute mappings; ``coefficients`` maps each
    attribute to ``(linear, quadratic)``. Fixed-effect offsets are drawn per
    category level (sorted) from the same seeded stream before the noise.
    """
    rng = np.random.default_rng(seed)
    names = sorted(coefficients)
    out = np.zeros(len(attrs))
    for j, a in enumerate(attrs):
        if set(a) != set(coefficients):
            raise ArityMismatch(f"item {j}: attributes {sorted(a)} vs coefficients {names}")
        out[j] = sum(coefficients[k][0] * a[k] + coefficients[k][1] * a[k] ** 2 for k in names)
    if fe_labels:
        for cat in sorted(fe_labels[0]):
            levels = sorted({lab[cat] for lab in fe_labels})
            offsets = dict(zip(levels, rng.normal(0.0, fe_scale, size=len(levels))))
            out += np.array([offsets[lab[cat]] for lab in fe_labels])
    if controls:
        for name in sorted(control_coefficients or {}):
            out += control_coefficients[name] * np.array([c[name] for c in controls])
    if sigma > 0:
        out += rng.normal(0.0, sigma, size=len(attrs))
    return out


# ---------------------------------------------------------------------------
# on-disk dataset


def write_dataset(spec, out_dir):
    """Render, measure and plant; write PPMs, manifest, observations and schema.

    Returns a summary dict (including the largest target error per attribute).
    """
    items = generate_corpus(spec)
    rng = np.random.default_rng([spec.seed, 1])
    fe_labels = [
        {cat: f"{cat}{rng.integers(k):02d}" for cat, k in sorted(spec.fixed_effects.items())}
        for _ in items
    ]
    controls = [{name: float(rng.normal()) for name in sorted(spec.controls)} for _ in items]
    attr_names = sorted(spec.coefficients) or ["colorfulness", "brightness", "symmetry", "aesthetic"]
    raw = [{k: it.raw.as_dict()[k] for k in attr_names} for it in items]
    scaler = fit_scaler(raw)
    scaled = [apply_scaler(r, scaler) for r in raw]
    coefs = spec.coefficients or {k: (0.0, 0.0) for k in attr_names}
    outcomes = plant_demand_outcomes(scaled, coefs, fe_labels if spec.fixed_effects else None, spec.sigma,
                                     spec.seed, spec.fe_scale, controls, dict(spec.controls))
    planted = DemandModel(
        attributes=tuple(attr_names),
        linear={k: float(coefs[k][0]) for k in attr_names},
        quadratic={k: float(coefs[k][1]) for k in attr_names},
        orientation=spec.orientation,
        scaler=scaler,
    )
    try:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        for it in items:
            write_ppm(os.path.join(out_dir, "images", f"{it.id}.ppm"), it.image)
        with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "image_path", "text", "h"])
            for it, a in zip(items, scaled):
                w.writerow([it.id, f"images/{it.id}.ppm", it.text, repr(spec.eta * demand_score(planted, a))])
        with open(os.path.join(out_dir, "observations.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            fe_cols = sorted(spec.fixed_effects)
            ctrl_cols = sorted(spec.controls)
            w.writerow(["id", *attr_names, *ctrl_cols, *fe_cols, "outcome"])
            for it, r, c, f, y in zip(items, raw, controls, fe_labels, outcomes):
                w.writerow([it.id, *[repr(r[k]) for k in attr_names], *[repr(c[k]) for k in ctrl_cols],
                            *[f[k] for k in fe_cols], repr(float(y))])
        schema = {"id": "id", "attributes": attr_names, "controls": sorted(spec.controls),
                  "fixed_effects": sorted(spec.fixed_effects), "outcome": "outcome"}
        with open(os.path.join(out_dir, "schema.json"), "w") as fh:
            json.dump(schema, fh, indent=2)
        planted.save(os.path.join(out_dir, "planted_model.json"))
    except OSError as exc:
        raise IOFailure(f"cannot write dataset to {out_dir}: {exc}") from exc
    errors = {}
    for it in items:
        m = measure(it.image)
        for k, want in it.targets.items():
            errors[k] = max(errors.get(k, 0.0), abs(m[k] - float(want)))
    return {"n": len(items), "max_target_error": errors, "out_dir": out_dir}
