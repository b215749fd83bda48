"""Numerical checks of the contrastive objective and occlusion saliency.

* ``logit_nll`` is the conditional-logit negative log-likelihood; fed with
  ``V = S / tau`` and the diagonal as the chosen alternative it reproduces the
  text-to-image InfoNCE loss.
* ``bound_check`` samples batches from a discrete joint, scores them with the
  density-ratio critic and compares ``log N - L_UA`` against
  ``I(t, v) + alpha_v * (mean h - min h)``.
* ``occlusion_heatmap`` masks patches and records the score drop.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .contrastive import UtilityConfig, utility_aware_t2v
from .encoder import cosine_similarity, encode_image, encode_text, featurize_image, featurize_text
from .errors import IndexOutOfRange, InvalidConfig, InvalidDistribution, IOFailure, ZeroMarginal
from .imaging import RasterImage, write_pgm
from .scoring import image_attributes, ua_score, utility_h

NEG_INF_SENTINEL = -1e9
MASS_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint table ``p[t, v]`` over a text alphabet and an image alphabet."""

    table: np.ndarray

    def __post_init__(self):
        p = np.array(self.table, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise InvalidDistribution("joint must be a non-empty 2-D table")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidDistribution("joint entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise InvalidDistribution(f"joint mass is {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "table", p)

    @property
    def sizes(self):
        return self.table.shape

    def p_t(self):
        return self.table.sum(axis=1)

    def p_v(self):
        return self.table.sum(axis=0)

    def transpose(self):
        return DiscreteJoint(self.table.T)

    @classmethod
    def from_json(cls, obj):
        table = np.array(obj["table"], dtype=np.float64)
        if "sizes" in obj and tuple(obj["sizes"]) != table.shape:
            raise InvalidDistribution(f"sizes {obj['sizes']} disagree with table shape {table.shape}")
        return cls(table)


def mutual_information(j):
    """Mutual information in nats, with ``0 log 0 = 0``."""
    p = j.table
    outer = np.outer(j.p_t(), j.p_v())
    mask = p > 0
    return max(float(np.sum(p[mask] * np.log(p[mask] / outer[mask]))), 0.0)


def optimal_critic(j):
    """``s[v, t] = log p(v | t) / p(v)``; impossible pairs get ``-inf``."""
    pt, pv = j.p_t(), j.p_v()
    if np.any(pv <= 0) or np.any(pt <= 0):
        raise ZeroMarginal("every text and image symbol needs positive marginal mass")
    ratio = j.table / np.outer(pt, pv)
    with np.errstate(divide="ignore"):
        return np.log(ratio).T


@dataclass(frozen=True)
class BoundReport:
    exact_mi: float
    alpha_v: float
    spread: float
    lhs_estimate: float
    rhs: float
    slack: float
    slack_se: float
    holds: bool
    N: int
    trials: int
    seed: int

    def to_json(self):
        return asdict(self)


def bound_check(j, h, alpha_v, N, trials, seed):
    """Monte Carlo check of the mutual-information bound at ``tau = beta_s = 1``.

    ``h`` gives the utility of each image symbol. Per trial, N pairs are drawn
    i.i.d. from the joint; ``holds`` means the mean slack is at least minus
    three standard errors.
    """
    if trials < 100:
        raise InvalidConfig("bound_check needs at least 100 trials")
    if N < 1:
        raise InvalidConfig("batch size must be positive")
    h = np.asarray(h, dtype=np.float64).ravel()
    n_t, n_v = j.sizes
    if len(h) != n_v:
        raise InvalidConfig(f"h has {len(h)} entries for {n_v} image symbols")
    crit = optimal_critic(j)
    crit = np.where(np.isneginf(crit), NEG_INF_SENTINEL, crit)
    mi = mutual_information(j)
    cfg = UtilityConfig(alpha_v=alpha_v, beta_s=1.0, tau=1.0)
    rng = np.random.default_rng(seed)
    draws = rng.choice(n_t * n_v, size=(trials, N), p=j.table.ravel())
    t_idx, v_idx = np.divmod(draws, n_v)
    logn = math.log(N)
    lhs = np.empty(trials)
    spread = np.empty(trials)
    for r in range(trials):
        S = crit[np.ix_(v_idx[r], t_idx[r])]
        hb = h[v_idx[r]]
        lhs[r] = logn - utility_aware_t2v(S, hb, cfg)
        spread[r] = float(np.mean(hb - hb.min()))
    slack = mi + alpha_v * spread - lhs
    mean_slack = float(np.mean(slack))
    se = float(np.std(slack, ddof=1) / math.sqrt(trials))
    return BoundReport(
        exact_mi=mi,
        alpha_v=float(alpha_v),
        spread=float(np.mean(spread)),
        lhs_estimate=float(np.mean(lhs)),
        rhs=mi + alpha_v * float(np.mean(spread)),
        slack=mean_slack,
        slack_se=se,
        holds=bool(mean_slack >= -3.0 * se),
        N=int(N),
        trials=int(trials),
        seed=int(seed),
    )


def logit_nll(choice_sets):
    """Average negative log-likelihood of conditional-logit choices."""
    total = 0.0
    for utilities, chosen in choice_sets:
        u = np.asarray(utilities, dtype=np.float64).ravel()
        if not 0 <= chosen < len(u):
            raise IndexOutOfRange(f"chosen index {chosen} outside a set of {len(u)}")
        m = u.max()
        total += m + math.log(float(np.exp(u - m).sum())) - u[chosen]
    return total / len(choice_sets)


# ---------------------------------------------------------------------------
# occlusion


@dataclass(frozen=True)
class OcclusionGrid:
    rows: int
    cols: int
    fill: tuple
    deltas: np.ndarray
    base_score: float
    row_edges: tuple
    col_edges: tuple

    def save_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["row", "col", "delta"])
                for r in range(self.rows):
                    for c in range(self.cols):
                        w.writerow([r, c, repr(float(self.deltas[r, c]))])
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc

    def normalized(self):
        """Deltas mapped to [0, 255] at image resolution (visualization only)."""
        d = self.deltas
        span = float(d.max() - d.min())
        scaled = np.zeros_like(d) if span == 0 else (d - d.min()) / span * 255.0
        rows = np.repeat(np.arange(self.rows), np.diff(self.row_edges))
        cols = np.repeat(np.arange(self.cols), np.diff(self.col_edges))
        return scaled[np.ix_(rows, cols)]

    def save_pgm(self, path):
        write_pgm(path, self.normalized())


def patch_edges(n, parts):
    if parts < 1 or parts > n:
        raise InvalidConfig(f"cannot cut {n} pixels into {parts} patches")
    step = n // parts
    return tuple([i * step for i in range(parts)] + [n])


def _fill_rgb(fill):
    if isinstance(fill, str):
        if fill == "gray":
            return (0.5, 0.5, 0.5)
        raise InvalidConfig(f"fill {fill!r} needs an explicit RGB value")
    rgb = tuple(float(x) for x in fill)
    if len(rgb) != 3 or min(rgb) < 0 or max(rgb) > 1:
        raise InvalidConfig("fill must be an RGB triple in [0, 1]")
    return rgb


def corpus_mean_fill(images):
    return tuple(np.mean([img.pixels.reshape(-1, 3).mean(axis=0) for img in images], axis=0).tolist())


def make_scorer(scorer, prompt, params, model=None, cfg=None, corpus=None):
    """Return ``score(img)`` for the similarity-only or utility-aware scorer."""
    t = encode_text(params, featurize_text(prompt, params.dims.H))

    def similarity(img):
        return cosine_similarity(encode_image(params, featurize_image(img, params.dims.G)), t)

    if scorer == "clip":
        return similarity
    if scorer != "ua":
        raise InvalidConfig(f"unknown scorer {scorer!r}")
    if model is None or cfg is None:
        raise InvalidConfig("the utility-aware scorer needs a demand model and utility config")

    def utility_aware(img):
        attrs = image_attributes(img, model, params, corpus)
        return ua_score(utility_h(model, attrs, cfg.eta), similarity(img), cfg)

    return utility_aware


def occlusion_heatmap(img, prompt, scorer, params, model=None, cfg=None, grid=(7, 7), fill="gray", corpus=None):
    """Score drop when each patch of a ``grid`` tiling is replaced by ``fill``.

    The last patch row/column absorbs any remainder pixels.
    """
    score = make_scorer(scorer, prompt, params, model, cfg, corpus)
    rgb = _fill_rgb(fill)
    re = patch_edges(img.height, grid[0])
    ce = patch_edges(img.width, grid[1])
    base = score(img)
    deltas = np.empty(grid)
    for r in range(grid[0]):
        for c in range(grid[1]):
            px = img.pixels.copy()
            px[re[r] : re[r + 1], ce[c] : ce[c + 1], :] = rgb
            deltas[r, c] = base - score(RasterImage(px))
    return OcclusionGrid(grid[0], grid[1], rgb, deltas, base, re, ce)


def load_joint(path):
    try:
        with open(path) as fh:
            return DiscreteJoint.from_json(json.load(fh))
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
