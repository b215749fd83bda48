"""Utility-aware scoring and post-hoc ranking of candidate images."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .demand import demand_score
from .encoder import cosine_similarity, encode_image, encode_text, featurize_image, featurize_text
from .errors import CorpusTooSmall, IOFailure
from .imaging import apply_scaler, raw_attributes

DEFAULT_UNIQUENESS_K = 5


def utility_h(model, a, eta):
    return eta * demand_score(model, a)


def ua_score(h, s, cfg):
    return cfg.alpha_v * h + cfg.beta_s * s


def fidelity(candidate, reference):
    return cosine_similarity(candidate, reference)


def uniqueness_score(e, corpus, k=DEFAULT_UNIQUENESS_K, exclude_self=False):
    """Mean cosine distance from ``e`` to its ``k`` nearest corpus embeddings.

    With ``exclude_self`` one corpus entry identical to ``e`` is skipped
    (leave-one-out scoring of a corpus member).
    """
    E = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    if exclude_self:
        same = np.flatnonzero(np.all(E == e, axis=1))
        if len(same):
            E = np.delete(E, same[0], axis=0)
    if k < 1 or len(E) < k:
        raise CorpusTooSmall(f"need at least k={k} corpus embeddings, have {len(E)}")
    dist = 1.0 - np.clip(E @ np.asarray(e, dtype=np.float64), -1.0, 1.0)
    return float(np.mean(np.sort(dist, kind="stable")[:k]))


def normalized_attributes(model, raw):
    """Scale raw attributes with the model's training-time scaler.

    Attributes the scaler does not know are passed through clamped to [0, 1].
    """
    raw = dict(raw)
    out = {}
    if model.scaler is not None:
        out.update(apply_scaler(raw, model.scaler))
    for name in model.attributes:
        if name not in out:
            out[name] = min(max(float(raw[name]), 0.0), 1.0)
    return out


def image_attributes(img, model, params=None, corpus=None, k=DEFAULT_UNIQUENESS_K, embedding=None):
    """Normalized attribute vector for one image under ``model``."""
    raw = raw_attributes(img).as_dict()
    if "uniqueness" in model.attributes:
        if embedding is None:
            embedding = encode_image(params, featurize_image(img, params.dims.G))
        # the scored image is usually a corpus member, which leave-one-out removes
        k = min(k, max(1, len(corpus) - 1))
        raw["uniqueness"] = uniqueness_score(embedding, corpus, k, exclude_self=True)
    return normalized_attributes(model, raw)


@dataclass(frozen=True)
class Candidate:
    id: str
    image: object
    attributes: dict
    embedding: np.ndarray


@dataclass(frozen=True)
class RankedEntry:
    rank: int
    id: str
    US: float
    s: float
    h: float
    demand: float
    fidelity: float = None


@dataclass(frozen=True)
class RankedResult:
    entries: list

    def ids(self):
        return [e.id for e in self.entries]

    def to_json(self):
        return [asdict(e) for e in self.entries]

    def save(self, csv_path, json_path=None):
        try:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["rank", "id", "US", "s", "h", "demand", "fidelity"])
                for e in self.entries:
                    w.writerow([e.rank, e.id, repr(e.US), repr(e.s), repr(e.h), repr(e.demand),
                                "" if e.fidelity is None else repr(e.fidelity)])
            if json_path is not None:
                with open(json_path, "w") as fh:
                    json.dump(self.to_json(), fh, indent=2)
        except OSError as exc:
            raise IOFailure(f"cannot write ranking: {exc}") from exc


def build_candidates(items, params, model, k=DEFAULT_UNIQUENESS_K):
    """``items`` is a list of ``(id, RasterImage)``; uniqueness, if the model
    uses it, is measured leave-one-out against the candidate set itself."""
    embeddings = [encode_image(params, featurize_image(img, params.dims.G)) for _, img in items]
    out = []
    for (cid, img), emb in zip(items, embeddings):
        attrs = image_attributes(img, model, params, embeddings, k, embedding=emb)
        out.append(Candidate(cid, img, attrs, emb))
    return out


def rank_by_scores(ids, s, h, cfg, demand=None, fid=None):
    """Sort by descending US with ascending-id tie-breaks."""
    rows = []
    for j, cid in enumerate(ids):
        us = ua_score(h[j], s[j], cfg)
        rows.append((cid, us, s[j], h[j], None if demand is None else demand[j], None if fid is None else fid[j]))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return RankedResult([
        RankedEntry(rank=i + 1, id=r[0], US=float(r[1]), s=float(r[2]), h=float(r[3]),
                    demand=float("nan") if r[4] is None else float(r[4]), fidelity=r[5])
        for i, r in enumerate(rows)
    ])


def rank_candidates(cands, prompt, params, model, cfg, reference=None):
    t = encode_text(params, featurize_text(prompt, params.dims.H))
    s = [cosine_similarity(c.embedding, t) for c in cands]
    demand = [demand_score(model, c.attributes) for c in cands]
    h = [cfg.eta * d for d in demand]
    fid = None
    if reference is not None:
        fid = [fidelity(c.embedding, reference.embedding) for c in cands]
    return rank_by_scores([c.id for c in cands], s, h, cfg, demand, fid)


def retrieval_metrics(Uv, Ut, h, demand, attributes, cfg):
    """Text-to-image retrieval over a paired corpus scored by US.

    Row ``i`` of ``Uv``/``Ut`` is a matched pair. For every text the top-1
    image (ties to the lower index) is compared with its partner; fidelity is
    the cosine similarity between the retrieved and the partner image.
    """
    h = np.asarray(h, dtype=np.float64)
    S = np.clip(Uv @ Ut.T, -1.0, 1.0)
    US = cfg.alpha_v * h[:, None] + cfg.beta_s * S
    top = np.argmax(US, axis=0)
    n = len(top)
    fid = np.clip(np.sum(Uv[top] * Uv, axis=1), -1.0, 1.0)
    out = {
        "recall_at_1": float(np.mean(top == np.arange(n))),
        "mean_h": float(np.mean(h[top])),
        "mean_demand": float(np.mean(np.asarray(demand)[top])),
        "mean_fidelity": float(np.mean(fid)),
    }
    for name in sorted(attributes[0]) if attributes else []:
        out[f"mean_{name}"] = float(np.mean([attributes[j][name] for j in top]))
    return out
