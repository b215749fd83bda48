"""Standard and utility-aware InfoNCE losses, their gradients, and training.

Score matrices follow the convention ``S[k, i] = s(v_k, t_i)``: rows index
images, columns index texts. The text-to-image loss takes a softmax down each
column (over candidate images), the image-to-text loss along each row.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import tower_backward, tower_forward
from .errors import InvalidConfig, IOFailure, NonFiniteLoss, NonFiniteScore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UtilityConfig:
    alpha_v: float = 0.0
    beta_s: float = 1.0
    tau: float = 0.07
    eta: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidConfig("tau must be positive")
        if not self.beta_s > 0:
            raise InvalidConfig("beta_s must be positive")
        if self.alpha_v < 0 or self.eta < 0:
            raise InvalidConfig("alpha_v and eta must be non-negative")


@dataclass(frozen=True)
class Batch:
    image_features: np.ndarray
    text_features: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        img = np.atleast_2d(np.asarray(self.image_features, dtype=np.float64))
        txt = np.atleast_2d(np.asarray(self.text_features, dtype=np.float64))
        h = np.asarray(self.h, dtype=np.float64).ravel()
        if not (len(img) == len(txt) == len(h)) or len(h) < 1:
            raise InvalidConfig("batch lists must share a positive length")
        if not np.all(np.isfinite(h)):
            raise NonFiniteScore("utility values must be finite")
        object.__setattr__(self, "image_features", img)
        object.__setattr__(self, "text_features", txt)
        object.__setattr__(self, "h", h)

    def __len__(self):
        return len(self.h)

    def subset(self, idx):
        return Batch(self.image_features[idx], self.text_features[idx], self.h[idx])


@dataclass(frozen=True)
class LossBreakdown:
    t2v: float
    v2t: float
    total: float


# ---------------------------------------------------------------------------
# losses on score matrices


def _check_scores(S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidConfig(f"score matrix must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NonFiniteScore("score matrix has non-finite entries")
    return S


def _column_terms(logits):
    """Per-column ``lse_k logits[k, i] - logits[i, i]`` with max subtraction."""
    m = logits.max(axis=0)
    lse = m + np.log(np.exp(logits - m).sum(axis=0))
    return lse - np.diag(logits)


def infonce_t2v(S, tau):
    S = _check_scores(S)
    return float(np.mean(_column_terms(S / tau)))


def infonce_v2t(S, tau):
    S = _check_scores(S)
    return float(np.mean(_column_terms(S.T / tau)))


def _centered_utility(h, n):
    h = np.asarray(h, dtype=np.float64).ravel()
    if len(h) != n:
        raise InvalidConfig(f"utility vector has length {len(h)}, expected {n}")
    if not np.all(np.isfinite(h)):
        raise NonFiniteScore("utility values must be finite")
    # softmax is shift invariant; centering makes constant h exactly zero
    return h - h.min()


def tilted_scores(S, h, cfg):
    """``alpha_v * h[k] + beta_s * S[k, i]``; the utility is an image (row) effect."""
    S = _check_scores(S)
    hc = _centered_utility(h, len(S))
    return cfg.alpha_v * hc[:, None] + cfg.beta_s * S


def utility_aware_t2v(S, h, cfg):
    return float(np.mean(_column_terms(tilted_scores(S, h, cfg) / cfg.tau)))


def utility_aware_v2t(S, h, cfg):
    # For image i the utility alpha_v * h[i] is shared by every text candidate,
    # so it cancels from the row softmax and only beta_s * S remains.
    S = _check_scores(S)
    _centered_utility(h, len(S))
    return float(np.mean(_column_terms((cfg.beta_s * S).T / cfg.tau)))


def bidirectional_loss(S, h, cfg):
    t2v = utility_aware_t2v(S, h, cfg)
    v2t = utility_aware_v2t(S, h, cfg)
    return LossBreakdown(t2v, v2t, (t2v + v2t) / 2.0)


# ---------------------------------------------------------------------------
# encoder-level loss and gradients


def score_matrix(params, batch):
    Uv, _ = tower_forward(params, "img", batch.image_features)
    Ut, _ = tower_forward(params, "txt", batch.text_features)
    return np.clip(Uv @ Ut.T, -1.0, 1.0)


def _softmax_cols(logits):
    e = np.exp(logits - logits.max(axis=0))
    return e / e.sum(axis=0)


def _encode_batch(params, batch):
    Uv, cv = tower_forward(params, "img", batch.image_features)
    Ut, ct = tower_forward(params, "txt", batch.text_features)
    return Uv, cv, Ut, ct


def _backprop_scores(params, dS, Uv, cv, Ut, ct):
    grads = tower_backward(params, "img", cv, dS @ Ut)
    grads.update(tower_backward(params, "txt", ct, dS.T @ Uv))
    return grads


def loss_and_gradients(params, batch, cfg):
    """Bidirectional utility-aware loss and its exact parameter gradients."""
    Uv, cv, Ut, ct = _encode_batch(params, batch)
    S = Uv @ Ut.T
    n = len(S)
    loss = bidirectional_loss(S, batch.h, cfg)
    eye = np.eye(n)
    scale = cfg.beta_s / cfg.tau
    P = _softmax_cols(tilted_scores(S, batch.h, cfg) / cfg.tau)
    Q = _softmax_cols((cfg.beta_s * S).T / cfg.tau).T
    dS = 0.5 * scale * ((P - eye) + (Q - eye)) / n
    return loss, _backprop_scores(params, dS, Uv, cv, Ut, ct)


def loss_gradients(params, batch, cfg):
    if len(batch) < 2:
        raise InvalidConfig("gradients need at least two pairs per batch")
    return loss_and_gradients(params, batch, cfg)[1]


def standard_loss_and_gradients(params, batch, tau):
    """Plain bidirectional InfoNCE with no utility term."""
    Uv, cv, Ut, ct = _encode_batch(params, batch)
    S = Uv @ Ut.T
    n = len(S)
    t2v = infonce_t2v(S, tau)
    v2t = infonce_v2t(S, tau)
    eye = np.eye(n)
    P = _softmax_cols(S / tau)
    Q = _softmax_cols(S.T / tau).T
    dS = 0.5 * (1.0 / tau) * ((P - eye) + (Q - eye)) / n
    loss = LossBreakdown(t2v, v2t, (t2v + v2t) / 2.0)
    return loss, _backprop_scores(params, dS, Uv, cv, Ut, ct)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    shuffle_seed: int = 0
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    objective: str = "utility-aware"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning rate must be non-negative")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be at least 1")
        if self.batch_size < 2:
            raise InvalidConfig("batch size must be at least 2")
        if self.objective not in ("utility-aware", "standard"):
            raise InvalidConfig(f"unknown objective {self.objective!r}")

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        util = UtilityConfig(**obj.pop("utility", {}))
        return cls(utility=util, **obj)


@dataclass
class TrainReport:
    initial_loss: float
    epoch_losses: list
    train_batch_losses: list
    config: dict
    init_seed: int
    shuffle_seed: int

    def to_json(self):
        return asdict(self)

    def save(self, path):
        try:
            with open(path, "w") as fh:
                json.dump(self.to_json(), fh, indent=2)
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc


def _batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) >= 2:
            yield idx


def _step(params, batch, cfg):
    if cfg.objective == "standard":
        return standard_loss_and_gradients(params, batch, cfg.utility.tau)
    return loss_and_gradients(params, batch, cfg.utility)


def dataset_loss(params, data, cfg):
    """Mean bidirectional loss over the dataset cut into fixed-order batches."""
    totals = []
    for idx in _batches(np.arange(len(data)), cfg.batch_size):
        sub = data.subset(idx)
        S = score_matrix(params, sub)
        if cfg.objective == "standard":
            totals.append((infonce_t2v(S, cfg.utility.tau) + infonce_v2t(S, cfg.utility.tau)) / 2.0)
        else:
            totals.append(bidirectional_loss(S, sub.h, cfg.utility).total)
    return float(np.mean(totals))


def train(params, data, cfg):
    """Shuffled mini-batch Adam on the bidirectional loss.

    ``epoch_losses`` are evaluated on a fixed partition of the data after each
    epoch, so a zero learning rate gives a constant trajectory;
    ``train_batch_losses`` are the running means seen during the epoch.
    """
    if len(data) < cfg.batch_size:
        raise InvalidConfig("dataset is smaller than one batch")
    rng = np.random.default_rng(cfg.shuffle_seed)
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    m1 = {k: np.zeros_like(v) for k, v in tensors.items()}
    m2 = {k: np.zeros_like(v) for k, v in tensors.items()}
    step = 0
    current = params
    initial = dataset_loss(params, data, cfg)
    epoch_losses, batch_losses = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        seen = []
        for idx in _batches(order, cfg.batch_size):
            loss, grads = _step(current, data.subset(idx), cfg)
            if not np.isfinite(loss.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss at batch {step}", batch_index=step)
            seen.append(loss.total)
            step += 1
            for k, g in grads.items():
                m1[k] = cfg.beta1 * m1[k] + (1 - cfg.beta1) * g
                m2[k] = cfg.beta2 * m2[k] + (1 - cfg.beta2) * g * g
                mhat = m1[k] / (1 - cfg.beta1**step)
                vhat = m2[k] / (1 - cfg.beta2**step)
                tensors[k] = tensors[k] - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
            current = params.replace(tensors)
        batch_losses.append(float(np.mean(seen)))
        epoch_losses.append(dataset_loss(current, data, cfg))
        log.info("epoch %d loss %.6f", epoch + 1, epoch_losses[-1])
    config = asdict(cfg)
    report = TrainReport(initial, epoch_losses, batch_losses, config, params.seed, cfg.shuffle_seed)
    return current, report
