"""Two-step training, threshold selection and inference.

Step 1 fits the encoder (with its single-unit head) on individual windows.
Step 2 freezes the encoder, embeds every window of each (recording, lead)
sequence and fits the context head on the centre-window targets.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..nn.functional import sigmoid
from ..nn.layers import Module
from ..nn.losses import weighted_bce_with_logits
from ..nn.optim import Adam
from ..qrs_sqi import BSQI_THRESHOLD
from ..signal_io import EcgRecording
from ..windowing import WINDOW_S, Window, exclude_for_training, segment
from .model import ModelSpec, RawECGNet, zscore

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimisation settings shared by both steps.

    ``pos_weight=None`` balances the classes as they appear in the batches:
    after rebalancing that is ``(1 - f) / f`` with ``f`` the positive share
    of a batch.
    """

    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    pos_weight: Optional[float] = None
    positive_fraction: float = 0.25
    step2_lr: float = 1e-3
    step2_batch_size: int = 64
    step2_max_epochs: int = 50
    step2_patience: int = 5
    eval_batch_size: int = 128
    monitor: str = "f1"

    def __post_init__(self):
        if self.monitor not in ("f1", "loss"):
            raise ValueError("monitor must be 'f1' or 'loss'")
        if self.batch_size < 2 or self.step2_batch_size < 2:
            raise ValueError("batch sizes must be at least 2")
        if not 0.0 <= self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in [0, 1)")
        if self.lr < 0 or self.step2_lr < 0:
            raise ValueError("learning rates must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    best_epoch: int = -1


# --- parameter snapshots -------------------------------------------------------

def snapshot(module: Module) -> list:
    return [({k: v.copy() for k, v in m.params.items()}, {k: v.copy() for k, v in m.buffers.items()})
            for m in module.modules()]


def restore(module: Module, snap: list) -> None:
    for m, (params, buffers) in zip(module.modules(), snap):
        for k, v in params.items():
            m.params[k][...] = v
        for k, v in buffers.items():
            m.buffers[k][...] = v


# --- data helpers ----------------------------------------------------------------

def window_arrays(windows: Sequence[Window]):
    """(batch, 1, samples) z-scored inputs and 0/1 targets."""
    if not windows:
        return np.zeros((0, 1, 0), np.float32), np.zeros(0, np.int64)
    x = zscore(np.stack([w.samples for w in windows]))[:, None, :]
    y = np.array([w.target for w in windows], dtype=np.int64)
    return x, y


def training_leads(rec: EcgRecording, spec: ModelSpec) -> list[str]:
    return rec.lead_names if spec.multi_lead_training else rec.lead_names[:1]


def group_sequences(windows: Sequence[Window]) -> dict:
    """Windows keyed by ``(recording_id, lead_name)``, ordered by index."""
    groups = defaultdict(list)
    for w in windows:
        groups[(w.recording_id, w.lead_name)].append(w)
    return {k: sorted(v, key=lambda w: w.index) for k, v in sorted(groups.items())}


def context_indices(n: int, p: int, s: int) -> np.ndarray:
    """(n, p+1+s) neighbour indices with edge replication."""
    if n < 1:
        raise ValueError("a sequence needs at least one window")
    offsets = np.arange(-p, s + 1)
    return np.clip(np.arange(n)[:, None] + offsets[None, :], 0, n - 1)


def _batches(n, size):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def _logits_to_prob(logits):
    p, _ = sigmoid(np.asarray(logits, dtype=np.float64).reshape(-1))
    return p


def encode(model: RawECGNet, x, batch_size: int = 128):
    """Eval-mode embeddings (n, d) and step-1 probabilities (n,)."""
    enc = model.encoder.eval()
    emb = np.zeros((len(x), model.spec.embedding_dim), dtype=np.float32)
    logits = np.zeros(len(x))
    for sl in _batches(len(x), batch_size):
        logits[sl] = enc.forward(x[sl]).reshape(-1)
        emb[sl] = enc.embedding
    return emb, _logits_to_prob(logits)


def head_probs(model: RawECGNet, seqs, batch_size: int = 512) -> np.ndarray:
    head = model.head.eval()
    out = np.zeros(len(seqs))
    for sl in _batches(len(seqs), batch_size):
        out[sl] = head.forward(seqs[sl]).reshape(-1)
    return _logits_to_prob(out)


# --- step 1 ----------------------------------------------------------------------

def _rebalanced_epoch(y, batch_size, fraction, rng):
    """Index batches for one epoch with at least ``fraction`` positives each."""
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    n_batches = max(1, int(np.ceil(len(y) / batch_size)))
    natural = len(pos) / len(y)
    if len(pos) == 0 or len(neg) == 0 or natural >= fraction:
        order = rng.permutation(len(y))
        return [order[sl] for sl in _batches(len(y), batch_size) if sl.stop - sl.start >= 2]
    n_pos = max(1, int(round(batch_size * fraction)))
    n_neg = batch_size - n_pos
    pos_stream = np.concatenate([rng.permutation(pos) for _ in range(-(-n_batches * n_pos // len(pos)))])
    neg_stream = np.concatenate([rng.permutation(neg) for _ in range(-(-n_batches * n_neg // len(neg)))])
    return [
        rng.permutation(np.concatenate([pos_stream[b * n_pos:(b + 1) * n_pos],
                                        neg_stream[b * n_neg:(b + 1) * n_neg]]))
        for b in range(n_batches)
    ]


def batch_pos_weight(y, cfg: TrainConfig) -> float:
    if cfg.pos_weight is not None:
        return float(cfg.pos_weight)
    f = float(np.mean(y)) if len(y) else 0.0
    if f == 0.0 or f == 1.0:
        return 1.0
    f = max(f, cfg.positive_fraction)
    return (1 - f) / f


def _eval_logits(forward, x, batch_size):
    return np.concatenate([forward(x[sl]).reshape(-1) for sl in _batches(len(x), batch_size)])


def best_f1(probs, targets) -> float:
    """Highest F1 over the candidate thresholds of :func:`select_threshold`."""
    p = np.asarray(probs, dtype=np.float64)
    u = np.unique(p)
    cands = np.concatenate([[0.0, 1.0], (u[:-1] + u[1:]) / 2])
    return float(np.max(f1_at_thresholds(p, targets, cands)))


def _fit_loop(module: Module, forward, x, y, xv, yv, pos_weight, batch_fn, lr, max_epochs,
              patience, eval_batch, monitor, label):
    """Mini-batch Adam with early stopping; the best epoch's weights are restored.

    ``monitor="f1"`` keeps the epoch with the highest validation F1 at its
    best threshold, ``"loss"`` the lowest validation loss. Without
    validation data the training loss is monitored.
    """
    opt = Adam(module.parameters(), lr=lr)
    hist = History()
    best, best_score, wait = snapshot(module), np.inf, 0
    for epoch in range(max_epochs):
        module.train()
        losses = []
        for idx in batch_fn():
            module.zero_grad()
            loss, dlogits = weighted_bce_with_logits(forward(x[idx]), y[idx].reshape(-1, 1), pos_weight)
            module.backward(dlogits)
            opt.step(module.gradients())
            losses.append(loss)
        hist.train_loss.append(float(np.mean(losses)))
        module.eval()
        if len(yv):
            logits = _eval_logits(forward, xv, eval_batch)
            vloss, _ = weighted_bce_with_logits(logits, yv, pos_weight)
            vf1 = best_f1(_logits_to_prob(logits), yv)
        else:
            vloss, vf1 = hist.train_loss[-1], float("nan")
        hist.val_loss.append(float(vloss))
        hist.val_f1.append(vf1)
        log.info("%s epoch %d train %.4f val %.4f f1 %.4f", label, epoch + 1,
                 hist.train_loss[-1], vloss, vf1)
        score = -vf1 if monitor == "f1" and len(yv) and yv.any() else vloss
        if score < best_score - 1e-9:
            best, best_score, wait, hist.best_epoch = snapshot(module), score, 0, epoch
        else:
            wait += 1
            if wait >= patience:
                break
    restore(module, best)
    module.eval()
    return hist


def train_step1(model: RawECGNet, train_windows: Sequence[Window], val_windows: Sequence[Window],
                cfg: TrainConfig) -> History:
    """Fit the encoder in place on quality-filtered windows."""
    train_windows = exclude_for_training(train_windows)
    val_windows = exclude_for_training(val_windows)
    if not train_windows:
        raise ValueError("empty training set after quality exclusion")
    x, y = window_arrays(train_windows)
    xv, yv = window_arrays(val_windows)
    rng = np.random.default_rng([cfg.seed, 1])
    model.encoder.set_rng(np.random.default_rng([cfg.seed, 2]))
    pw = batch_pos_weight(y, cfg)
    model.meta["pos_weight_step1"] = pw

    def batches():
        return _rebalanced_epoch(y, cfg.batch_size, cfg.positive_fraction, rng)

    hist = _fit_loop(model.encoder, model.encoder.forward, x, y, xv, yv, pw, batches, cfg.lr,
                     cfg.max_epochs, cfg.patience, cfg.eval_batch_size, cfg.monitor, "step1")
    model.meta["epochs_step1"] = len(hist.train_loss)
    return hist


# --- step 2 ----------------------------------------------------------------------

def sequence_dataset(model: RawECGNet, windows: Sequence[Window], batch_size: int = 128,
                     quality_mask: bool = True):
    """Context sequences (n, p+1+s, d), centre targets and a usable-centre mask."""
    spec = model.spec
    seqs, ys, keep = [], [], []
    for group in group_sequences(windows).values():
        x, y = window_arrays(group)
        emb, _ = encode(model, x, batch_size)
        seqs.append(emb[context_indices(len(group), spec.context_p, spec.context_s)])
        ys.append(y)
        q = np.array([w.bsqi for w in group])
        keep.append(q >= BSQI_THRESHOLD if quality_mask else np.ones(len(group), bool))
    if not seqs:
        d = spec.embedding_dim
        return np.zeros((0, spec.context_len, d), np.float32), np.zeros(0, np.int64), np.zeros(0, bool)
    return np.concatenate(seqs), np.concatenate(ys), np.concatenate(keep)


def train_step2(model: RawECGNet, train_windows: Sequence[Window], val_windows: Sequence[Window],
                cfg: TrainConfig) -> History:
    """Fit the context head with the encoder frozen.

    ``*_windows`` must hold every window of each sequence (no exclusion), so
    that neighbours exist; the loss only uses centres with bsqi >= 0.8.
    """
    seq, y, keep = sequence_dataset(model, train_windows, cfg.eval_batch_size)
    vseq, vy, vkeep = sequence_dataset(model, val_windows, cfg.eval_batch_size)
    return fit_head(model, seq[keep], y[keep], vseq[vkeep], vy[vkeep], cfg)


def fit_head(model: RawECGNet, seq, y, vseq, vy, cfg: TrainConfig) -> History:
    """Train the context head on precomputed (n, p+1+s, d) sequences."""
    seq = np.asarray(seq, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty step-2 training set")
    if seq.ndim != 3 or seq.shape[1] != model.spec.context_len:
        raise ValueError(f"sequences must have {model.spec.context_len} time steps, got {seq.shape}")
    vseq = np.asarray(vseq, dtype=np.float32).reshape((-1,) + seq.shape[1:])
    vy = np.asarray(vy, dtype=np.int64)
    rng = np.random.default_rng([cfg.seed, 3])
    model.head.set_rng(np.random.default_rng([cfg.seed, 4]))
    pw = cfg.pos_weight if cfg.pos_weight is not None else (
        float((y == 0).sum() / (y == 1).sum()) if 0 < y.sum() < len(y) else 1.0)
    model.meta["pos_weight_step2"] = pw

    def batches():
        order = rng.permutation(len(y))
        return [order[sl] for sl in _batches(len(y), cfg.step2_batch_size) if sl.stop - sl.start >= 2]

    hist = _fit_loop(model.head, model.head.forward, seq, y, vseq, vy, pw, batches, cfg.step2_lr,
                     cfg.step2_max_epochs, cfg.step2_patience, 512, cfg.monitor, "step2")
    model.meta["epochs_step2"] = len(hist.train_loss)
    return hist


# --- threshold -------------------------------------------------------------------

def f1_at_thresholds(probs, targets, thresholds) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    order = np.argsort(p, kind="stable")
    ps, ys = p[order], y[order]
    # suffix sums: positives predicted when prob >= t
    tail_pos = np.concatenate([np.cumsum(ys[::-1])[::-1], [0]])
    first = np.searchsorted(ps, thresholds, side="left")
    n_pred = len(p) - first
    tp = tail_pos[first]
    denom = n_pred + y.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2.0 * tp / denom, 0.0)


def select_threshold(probs, targets) -> float:
    """F1-maximising threshold among {0, 1} and midpoints of sorted unique probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("probs and targets differ in shape")
    if y.sum() == 0:
        return 1.0
    u = np.unique(p)
    cands = np.unique(np.concatenate([[0.0, 1.0], (u[:-1] + u[1:]) / 2]))
    f1 = f1_at_thresholds(p, y, cands)
    return float(cands[int(np.argmax(f1))])


# --- full pipeline ---------------------------------------------------------------

def fit(model: RawECGNet, train_windows: Sequence[Window], val_windows: Sequence[Window],
        cfg: TrainConfig) -> dict:
    """Run step 1, step 2 and threshold selection; returns both histories."""
    h1 = train_step1(model, train_windows, val_windows, cfg)
    h2 = train_step2(model, train_windows, val_windows, cfg)
    seq, y, keep = sequence_dataset(model, val_windows if val_windows else train_windows,
                                    cfg.eval_batch_size)
    model.threshold = select_threshold(head_probs(model, seq[keep]), y[keep])
    model.meta.update({"seed": model.meta.get("seed", cfg.seed), "train_config": cfg.to_dict()})
    return {"step1": asdict(h1), "step2": asdict(h2), "threshold": model.threshold}


def window_probabilities(model: RawECGNet, windows: Sequence[Window], batch_size: int = 128):
    """Head probabilities for every window, in the order of ``group_sequences``."""
    seq, _, _ = sequence_dataset(model, windows, batch_size, quality_mask=False)
    return head_probs(model, seq)


def predict_recording(rec: EcgRecording, lead: str, model: RawECGNet, batch_size: int = 128):
    """``[((t0, t1), prob, binary), ...]`` for every full 30-s window; none excluded."""
    if model.threshold is None:
        raise ValueError("model has no threshold; run fit first")
    windows = segment(rec, lead, compute_bsqi=False)
    if not windows:
        return []
    probs = window_probabilities(model, windows, batch_size)
    return [((w.start_s, w.start_s + WINDOW_S), float(p), int(p >= model.threshold))
            for w, p in zip(windows, probs)]
