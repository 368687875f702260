"""Loss, optimizers, training loops and classification metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fcn, signals
from .errors import DivergenceError

LAYOUT_OF_VARIANT = fcn.LAYOUT_OF_VARIANT

_PROB_CLAMP = 1e-12
_EVAL_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"      # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sgd_momentum: float = 0.0
    patience: int = 15           # early-stop patience on val loss; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs it)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class History:
    """Per-epoch curves plus run metadata."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1         # -1: the untrained starting point was best
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.train_loss)


def cce_loss(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Mean categorical cross-entropy; probabilities clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs targets {onehot.shape}")
    if probs.ndim != 2:
        raise ValueError("expected (batch, classes) arrays")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    return float(-(onehot * np.log(np.clip(probs, _PROB_CLAMP, None))).sum(axis=1).mean())


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _labels_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs[np.arange(labels.size), labels], _PROB_CLAMP, None)
    return float(-np.log(p).mean())


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            g = g.astype(params[k].dtype, copy=False)
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + c.adam_eps)


class _Sgd:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.vel = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        c = self.cfg
        for k, g in grads.items():
            g = g.astype(params[k].dtype, copy=False)
            self.vel[k] = c.sgd_momentum * self.vel[k] + g
            params[k] -= c.learning_rate * self.vel[k]


def _make_optimizer(cfg: TrainConfig, params: dict[str, np.ndarray]):
    return _Adam(cfg, params) if cfg.optimizer == "adam" else _Sgd(cfg, params)


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Contiguous batch boundaries; a trailing singleton is merged into the
    previous batch so batch norm always sees at least two samples."""
    bounds = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2] = (bounds[-2][0], bounds[-1][1])
        bounds.pop()
    return bounds


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _check_model_dataset(model: fcn.FcnModel, dataset: signals.LabeledDataset):
    if model.class_count != dataset.class_count:
        raise ValueError(f"model has {model.class_count} classes, "
                         f"dataset has {dataset.class_count}")
    if model.variant == fcn.VARIANT_MULTICHANNEL and \
            model.in_channels != dataset.lead_count:
        raise ValueError(f"model expects {model.in_channels} input channels, "
                         f"dataset has {dataset.lead_count} leads")


def _infer_probs(model: fcn.FcnModel, x: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], model.class_count))
    for lo in range(0, x.shape[0], _EVAL_BATCH):
        hi = min(lo + _EVAL_BATCH, x.shape[0])
        out[lo:hi] = fcn.forward(model, x[lo:hi], mode="infer").probs
    return out


def _snapshot(model: fcn.FcnModel):
    return ({k: v.copy() for k, v in model.params.items()},
            {k: v.copy() for k, v in model.stats.items()})


def _restore(model: fcn.FcnModel, snap):
    params, stats = snap
    model.params = {k: v.copy() for k, v in params.items()}
    model.stats = {k: v.copy() for k, v in stats.items()}


def fit(model: fcn.FcnModel, dataset: signals.LabeledDataset,
        split: signals.SplitIndices, config: TrainConfig) -> tuple[fcn.FcnModel, History]:
    """Mini-batch training with early stopping on validation loss.

    The state with the best validation loss (the untrained starting state
    included) is restored at the end, so a run can never leave the model
    worse on validation than it started.  With learning_rate 0 nothing is
    updated, running statistics included, and the model comes back
    unchanged.  Deterministic for a fixed config seed.
    """
    _check_model_dataset(model, dataset)
    if split.train.size < 2:
        raise ValueError("need at least 2 training samples")
    if split.val.size < 1:
        raise ValueError("need a non-empty validation set")
    layout = LAYOUT_OF_VARIANT[model.variant]
    x_train = signals.batch_layout(dataset, split.train, layout)
    y_train = dataset.labels[split.train]
    x_val = signals.batch_layout(dataset, split.val, layout)
    y_val = dataset.labels[split.val]
    # a null update must be a true no-op, so frozen statistics come with it
    learning = config.learning_rate > 0

    rng = np.random.default_rng(config.seed)
    opt = _make_optimizer(config, model.params)
    history = History(metadata={
        "optimizer": config.optimizer, "learning_rate": config.learning_rate,
        "batch_size": config.batch_size, "seed": config.seed})

    best_snap = _snapshot(model)
    best_val = _labels_loss(_infer_probs(model, x_val), y_val)
    best_epoch = -1
    stale = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(split.train.size)
        loss_sum = 0.0
        correct = 0
        for lo, hi in _batch_bounds(perm.size, config.batch_size):
            bidx = perm[lo:hi]
            xb, yb = x_train[bidx], y_train[bidx]
            cache = fcn.forward(model, xb, mode="train", update_running=learning)
            loss = _labels_loss(cache.probs, yb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            loss_sum += loss * yb.size
            correct += int((cache.probs.argmax(axis=1) == yb).sum())
            grads, _ = fcn.backward(model, cache, yb)
            opt.step(model.params, grads)
        val_probs = _infer_probs(model, x_val)
        val_loss = _labels_loss(val_probs, y_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch)
        history.train_loss.append(loss_sum / perm.size)
        history.train_acc.append(100.0 * correct / perm.size)
        history.val_loss.append(val_loss)
        history.val_acc.append(100.0 * float((val_probs.argmax(axis=1) == y_val).mean()))
        if val_loss < best_val:
            best_val = val_loss
            best_snap = _snapshot(model)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    _restore(model, best_snap)
    history.best_epoch = best_epoch
    return model, history


def fine_tune(model: fcn.FcnModel, dataset: signals.LabeledDataset,
              split: signals.SplitIndices, config: TrainConfig) -> fcn.FcnModel:
    """Retrain only the dense head; conv blocks are completely frozen.

    The frozen feature extractor (batch norm in inference mode, running
    statistics untouched) is applied once to collect pooled feature
    vectors, then the dense layer is trained on those.  As in :func:`fit`,
    the best-validation state -- including the incoming one -- wins.
    """
    _check_model_dataset(model, dataset)
    if split.train.size < 1 or split.val.size < 1:
        raise ValueError("need non-empty train and validation sets")
    layout = LAYOUT_OF_VARIANT[model.variant]

    def pooled(indices: np.ndarray) -> np.ndarray:
        x = signals.batch_layout(dataset, indices, layout)
        out = np.empty((x.shape[0], model.params["dense_w"].shape[0]), model.dtype)
        for lo in range(0, x.shape[0], _EVAL_BATCH):
            hi = min(lo + _EVAL_BATCH, x.shape[0])
            out[lo:hi] = fcn.forward(model, x[lo:hi], mode="infer").v
        return out

    v_train, y_train = pooled(split.train), dataset.labels[split.train]
    v_val, y_val = pooled(split.val), dataset.labels[split.val]
    dense = {"dense_w": model.params["dense_w"], "dense_b": model.params["dense_b"]}
    opt = _make_optimizer(config, dense)
    rng = np.random.default_rng(config.seed)

    def head_probs(v: np.ndarray) -> np.ndarray:
        from .layers import softmax
        return softmax(v @ dense["dense_w"] + dense["dense_b"])

    best = (dense["dense_w"].copy(), dense["dense_b"].copy())
    best_val = _labels_loss(head_probs(v_val), y_val)
    stale = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(split.train.size)
        for lo, hi in _batch_bounds(perm.size, config.batch_size):
            bidx = perm[lo:hi]
            vb, yb = v_train[bidx], y_train[bidx]
            probs = head_probs(vb)
            loss = _labels_loss(probs, yb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            dz = probs
            dz[np.arange(yb.size), yb] -= 1.0
            dz /= yb.size
            opt.step(dense, {"dense_w": vb.T @ dz, "dense_b": dz.sum(axis=0)})
        val_loss = _labels_loss(head_probs(v_val), y_val)
        if val_loss < best_val:
            best_val = val_loss
            best = (dense["dense_w"].copy(), dense["dense_b"].copy())
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    model.params["dense_w"], model.params["dense_b"] = best
    return model


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassMetrics:
    """Per-class confusion counts and rates over one index set.

    Rates are percentages; a class absent from the evaluated indices gets
    NaN sensitivity.
    """

    confusion: np.ndarray          # (C, C), rows true, cols predicted
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    sensitivity_pct: np.ndarray
    specificity_pct: np.ndarray
    accuracy_pct: float

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn


def predict(model: fcn.FcnModel, dataset: signals.LabeledDataset,
            indices: np.ndarray) -> np.ndarray:
    """Argmax class predictions (ties resolved toward the smaller index)."""
    _check_model_dataset(model, dataset)
    x = signals.batch_layout(dataset, indices, LAYOUT_OF_VARIANT[model.variant])
    return _infer_probs(model, x).argmax(axis=1)


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray,
                             class_count: int) -> ClassMetrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction/label length mismatch")
    conf = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    tp = np.diag(conf).copy()
    fn = conf.sum(axis=1) - tp
    fp = conf.sum(axis=0) - tp
    tn = y_true.size - tp - fn - fp
    with np.errstate(invalid="ignore", divide="ignore"):
        sens = np.where(tp + fn > 0, 100.0 * tp / np.maximum(tp + fn, 1), np.nan)
        spec = np.where(tn + fp > 0, 100.0 * tn / np.maximum(tn + fp, 1), np.nan)
    acc = 100.0 * tp.sum() / max(y_true.size, 1)
    return ClassMetrics(confusion=conf, tp=tp, fn=fn, fp=fp, tn=tn,
                        sensitivity_pct=sens, specificity_pct=spec,
                        accuracy_pct=float(acc))


def evaluate(model: fcn.FcnModel, dataset: signals.LabeledDataset,
             indices: np.ndarray) -> ClassMetrics:
    indices = np.asarray(indices, dtype=np.int64)
    y_pred = predict(model, dataset, indices)
    return metrics_from_predictions(dataset.labels[indices], y_pred,
                                    dataset.class_count)


@dataclass(frozen=True)
class GroupMetrics:
    classes: frozenset
    tp: int
    fn: int
    fp: int
    tn: int
    sensitivity_pct: float
    specificity_pct: float


def grouped_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                    groups: list[set[int]], class_count: int) -> list[GroupMetrics]:
    """Metrics for class groups; within-group confusions count as correct.

    Groups must not overlap within one call.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    seen: set[int] = set()
    for g in groups:
        g = set(g)
        if not g or any(c < 0 or c >= class_count for c in g):
            raise ValueError(f"group {sorted(g)} is empty or out of range")
        if seen & g:
            raise ValueError(f"overlapping groups: classes {sorted(seen & g)} repeat")
        seen |= g
    out = []
    for g in groups:
        in_true = np.isin(y_true, sorted(g))
        in_pred = np.isin(y_pred, sorted(g))
        tp = int((in_true & in_pred).sum())
        fn = int((in_true & ~in_pred).sum())
        fp = int((~in_true & in_pred).sum())
        tn = int((~in_true & ~in_pred).sum())
        sens = 100.0 * tp / (tp + fn) if tp + fn else float("nan")
        spec = 100.0 * tn / (tn + fp) if tn + fp else float("nan")
        out.append(GroupMetrics(frozenset(g), tp, fn, fp, tn, sens, spec))
    return out


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_history_csv(history: History, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        for i in range(len(history)):
            w.writerow([i, _fmt(history.train_loss[i]), _fmt(history.val_loss[i]),
                        _fmt(history.train_acc[i]), _fmt(history.val_acc[i])])


def write_metrics_csv(metrics: ClassMetrics, path: str | Path,
                      train_cardinality: np.ndarray | None = None) -> None:
    """Class table: specificity, sensitivity and split cardinalities."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "specificity_pct", "sensitivity_pct",
                    "train_cardinality", "test_cardinality"])
        for c in range(metrics.confusion.shape[0]):
            w.writerow([c, _fmt(metrics.specificity_pct[c]),
                        _fmt(metrics.sensitivity_pct[c]),
                        "" if train_cardinality is None else int(train_cardinality[c]),
                        int(metrics.support[c])])
