"""Training loops, accuracy metrics and the hyperparameter grid harness."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .campaign import QOI_NAMES, Scaler
from .engine import AdamState, NonFiniteError, Tensor, adam_step, backward, mean, square, tabs
from .models import (
    DeepOnetConfig, DnnConfig, FnoConfig, RomModel, apply, flatten, predict_scaled,
    scalar_heads, unflatten,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int | None = None   # None means full batch
    lr: float = 1e-3
    seed: int = 0
    loss: str = "mse"
    patience: int = 300

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("mse", "mae"):
            raise ValueError("loss must be 'mse' or 'mae'")


def default_train_config(kind, target="scalar", seed=0):
    """Per-architecture defaults that fit a laptop CPU budget."""
    if kind == "dnn":
        return TrainConfig(epochs=2000, lr=1e-3, seed=seed, loss="mse", patience=300)
    if kind == "deeponet":
        return TrainConfig(epochs=2000, batch_size=32, lr=1e-3, seed=seed, loss="mse", patience=150)
    return TrainConfig(epochs=300, batch_size=32, lr=2e-3, seed=seed, loss="mae", patience=80)


def default_model_config(kind, target="scalar"):
    if kind == "dnn":
        return DnnConfig([100, 150, 200, 150, 100])
    if kind == "deeponet":
        return DeepOnetConfig.from_layers(130, 3, 3)
    return FnoConfig(modes=50, width=16, n_layers=4)


@dataclass
class TrainResult:
    model: RomModel
    train_loss: list
    val_loss: list
    best_epoch: int
    training_time_s: float


def _loss(pred, target, kind):
    diff = pred - target
    return mean(square(diff)) if kind == "mse" else mean(tabs(diff))


def training_arrays(model, dataset, part):
    """Scaled inputs and scaled targets matching the model's output layout."""
    x = dataset.inputs(part)
    if model.target == "scalar":
        y = dataset.scalar_scaler.transform(dataset.scalar_targets(part))
    else:
        y = dataset.series_scaler.transform(dataset.series_targets(part))
    return x, y


def attach_metadata(model, dataset):
    scaler = dataset.scalar_scaler if model.target == "scalar" else dataset.series_scaler
    model.bounds = dict(dataset.bounds)
    model.output_scaler = scaler.to_dict()
    model.n_steps = dataset.n_steps
    return model


def train(model, dataset, cfg):
    """Minimize the configured loss on the training split with Adam.

    Returns the weights with the lowest validation loss seen. Stops early
    after ``cfg.patience`` epochs without validation improvement.
    """
    if model.kind == "dnn" and model.target != "scalar":
        raise ValueError("the DNN surrogate only supports scalar targets")
    if not dataset.split["train"] or not dataset.split["val"]:
        raise ValueError("dataset needs non-empty train and val splits")
    attach_metadata(model, dataset)
    x_tr, y_tr = training_arrays(model, dataset, "train")
    x_va, y_va = training_arrays(model, dataset, "val")
    times = dataset.time_coords()
    kind, conf = model.kind, model.config

    params = unflatten(kind, conf, model.weights)
    state = AdamState.zeros_like(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(x_tr)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)

    def loss_on(p, xb, yb, grad):
        tp = [Tensor(a, requires_grad=grad) for a in p]
        loss = _loss(apply(kind, conf, tp, xb, times, len(times)), yb, cfg.loss)
        return loss, tp

    best = (np.inf, 0, [a.copy() for a in params])
    train_hist, val_hist = [], []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            try:
                loss, tp = loss_on(params, x_tr[idx], y_tr[idx], True)
                grads = backward(loss, tp)
                params, state = adam_step(params, grads, state)
            except (NonFiniteError, FloatingPointError) as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}") from exc
            total += loss.item() * len(idx)
        train_hist.append(total / n)
        val = loss_on(params, x_va, y_va, False)[0].item()
        val_hist.append(val)
        if val < best[0]:
            best = (val, epoch, [a.copy() for a in params])
        elif epoch - best[1] >= cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best[1])
            break
    elapsed = time.perf_counter() - start
    model.weights = flatten(best[2])
    return TrainResult(model, train_hist, val_hist, best[1], elapsed)


# -- prediction in physical units --------------------------------------------------

def output_scaler(model):
    return Scaler.from_dict(model.output_scaler)


def predict_series(model, x_scaled):
    """Physical-unit series (B, n, 2); only for series-target models."""
    if model.target != "series":
        raise ValueError("model does not predict time series")
    return output_scaler(model).inverse(predict_scaled(model, x_scaled))


def predict_scalar(model, x_scaled):
    """Physical-unit (V_bead,max, T_mp,max), shape (B, 2), for any model."""
    raw = output_scaler(model).inverse(predict_scaled(model, x_scaled))
    return raw if model.target == "scalar" else scalar_heads(raw)


# -- metrics -------------------------------------------------------------------------

def rmse(pred, truth):
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same shape")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def r2(pred, truth):
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("r2 undefined for zero-variance truth")
    return float(1.0 - np.sum((pred - truth) ** 2) / ss_tot)


def rel_err(pred, truth, skip_zero=False):
    """Absolute relative error in percent.

    With ``skip_zero`` entries whose truth magnitude is below 1e-12 are
    dropped and the count of dropped entries is returned alongside.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    zero = np.abs(truth) < 1e-12
    if zero.any() and not skip_zero:
        raise ValueError("relative error undefined for zero truth values")
    err = 100.0 * np.abs(pred[~zero] - truth[~zero]) / np.abs(truth[~zero])
    return (err, int(zero.sum())) if skip_zero else err


@dataclass
class FiveNumber:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n_outliers: int = 0

    def as_tuple(self):
        return (self.min, self.q1, self.median, self.q3, self.max)


def five_number(values):
    """Min/quartiles/max with linear-interpolation quantiles.

    Outliers are values above ``Q3 + 1.5 IQR``.
    """
    v = np.asarray(values, float).ravel()
    if v.size == 0:
        raise ValueError("five_number needs at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    fence = q3 + 1.5 * (q3 - q1)
    return FiveNumber(float(v.min()), float(q1), float(med), float(q3), float(v.max()),
                      int(np.sum(v > fence)))


def relative_l2(pred, truth):
    """Per-sample ``||pred - truth|| / ||truth||`` over the time axis."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    return np.linalg.norm(pred - truth, axis=-1) / np.linalg.norm(truth, axis=-1)


def monotonicity_violation(series):
    """Largest drop below the running maximum, per sample (last axis is time)."""
    series = np.asarray(series, float)
    return np.max(np.maximum.accumulate(series, axis=-1) - series, axis=-1)


@dataclass
class QoiReport:
    rmse: float
    r2: float
    rmse_scaled: float
    rel_err: list
    summary: FiveNumber
    excluded: int = 0
    rel_l2: list = field(default_factory=list)


@dataclass
class EvalReport:
    kind: str
    target: str
    split: str
    qois: dict
    training_time_s: float = float("nan")

    def to_json(self, with_time=False):
        d = {
            "kind": self.kind,
            "target": self.target,
            "split": self.split,
            "qois": {k: asdict(v) for k, v in self.qois.items()},
        }
        if with_time:
            d["training_time_s"] = self.training_time_s
        return d


def evaluate(model, dataset, part="test", target="scalar", training_time_s=float("nan")):
    """Accuracy report on one split, in physical units (plus scaled RMSE).

    ``target='scalar'`` compares (V_bead,max, T_mp,max); series models are
    read out through :func:`scalar_heads`. ``target='series'`` compares the
    whole 200-step series and adds per-sample relative L2 errors.
    """
    x = dataset.inputs(part)
    if target == "scalar":
        pred = predict_scalar(model, x)
        truth = dataset.scalar_targets(part)
        scaler = dataset.scalar_scaler
    else:
        pred = predict_series(model, x)
        truth = dataset.series_targets(part)
        scaler = dataset.series_scaler
    pred_s, truth_s = scaler.transform(pred), scaler.transform(truth)
    qois = {}
    for q, name in enumerate(QOI_NAMES):
        p, t = pred[..., q], truth[..., q]
        errs, skipped = rel_err(p, t, skip_zero=True)
        rep = QoiReport(rmse(p, t), r2(p, t), rmse(pred_s[..., q], truth_s[..., q]),
                        errs.tolist(), five_number(errs if errs.size else [0.0]), skipped)
        if target == "series":
            rep.rel_l2 = relative_l2(p, t).tolist()
        qois[name] = rep
    return EvalReport(model.kind, target, part, qois, training_time_s)


# -- grid search ---------------------------------------------------------------------

def hyper_groups():
    """The six hyperparameter groups: neurons/modes and layer counts per kind."""
    deeponet = [(100, 2, 1), (200, 2, 1), (300, 2, 1), (150, 3, 2), (150, 4, 3), (150, 5, 4)]
    fno = [(1, 4), (5, 4), (9, 4), (1, 1), (1, 2), (1, 3)]
    dnn = [[100, 150, 200, 150, 100], [150, 200, 250, 200, 150], [250, 300, 350, 300, 250],
           [300, 300], [300, 300, 300], [300, 300, 300, 300]]
    return [
        {
            "dnn": DnnConfig(dnn[g]),
            "deeponet": DeepOnetConfig.from_layers(*deeponet[g]),
            "fno": FnoConfig(modes=fno[g][0], n_layers=fno[g][1]),
        }
        for g in range(6)
    ]


@dataclass
class GridEntry:
    rank: int
    config: dict
    val_rmse: float
    report: EvalReport | None
    error: str | None = None


def grid_search(kind, dataset, configs, train_cfg=None, target=None):
    """Train every config with the same seed and rank by validation RMSE.

    Validation RMSE is taken in scaled units, averaged over both QoIs.
    Failed runs are kept at the bottom of the ranking with their error.
    """
    if not configs:
        raise ValueError("grid_search needs at least one config")
    target = target or ("scalar" if kind == "dnn" else "series")
    entries = []
    for cfg in configs:
        tc = train_cfg or default_train_config(kind)
        model = RomModel.initialize(kind, cfg, seed=tc.seed, target=target)
        try:
            res = train(model, dataset, tc)
            val = evaluate(res.model, dataset, "val", "scalar")
            score = float(np.mean([q.rmse_scaled for q in val.qois.values()]))
            rep = evaluate(res.model, dataset, "test", "scalar", res.training_time_s)
            entries.append(GridEntry(0, asdict(cfg), score, rep))
        except (DivergenceError, ValueError) as exc:
            entries.append(GridEntry(0, asdict(cfg), float("inf"), None, str(exc)))
    order = sorted(range(len(entries)), key=lambda i: (entries[i].val_rmse, i))
    ranked = []
    for rank, i in enumerate(order, 1):
        ranked.append(replace(entries[i], rank=rank))
    return ranked


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":"), allow_nan=False) + "\n")


def loss_curve_rows(result):
    return [{"epoch": i, "train_loss": tr, "val_loss": va}
            for i, (tr, va) in enumerate(zip(result.train_loss, result.val_loss))]
