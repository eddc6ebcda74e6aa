"""L1 training with Adam and early stopping; horizon-wise metrics; Win Point."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import numerics as nx
from .data import PreparedData, Scaler
from .model import ModelConfig, forward, init, init_buffers, update_buffers
from .nawg import NormContext
from .numerics import NonFiniteError, Tensor
from .seeds import label_rng


class TrainingDiverged(FloatingPointError):
    pass


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error over all entries."""
    pred = nx.as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return nx.mean(nx.tabs(pred - target))


# ---------------------------------------------------------------- Adam

@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **kw) -> "OptimState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **kw)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    if set(params) != set(grads):
        raise KeyError("gradients must be keyed exactly like the parameters")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        update = state.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
        new_params[k] = (p - update).astype(p.dtype)
    return new_params, OptimState(m, v, step, state.lr, b1, b2, state.eps)


def clip_by_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# ---------------------------------------------------------------- early stopping

class EarlyStopping:
    """Tracks the best validation score.

    ``patience`` non-improving epochs are tolerated; the run stops on the
    next one.
    """

    def __init__(self, patience: int = 15):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score``; return True when it is a new best."""
        if score < self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs > self.patience


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.003
    epochs: int = 100
    patience: int = 15
    seed: int = 0
    grad_clip: float = 0.0  # 0 disables
    # a ragged last batch gives noisy batch-norm statistics; skip it when a full one exists
    drop_last: bool = True


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_mae(self) -> float:
        return self.val_mae[self.best_epoch - 1]


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    history: TrainHistory
    config: ModelConfig


# ---------------------------------------------------------------- prediction

def predict(params, buffers, cfg: ModelConfig, x: np.ndarray, scaler: Scaler, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode predictions in original scale, B x T_out x N."""
    ctx = NormContext(training=False, buffers=buffers, mode=cfg.norm_mode)
    consts = {k: Tensor(v, dtype=v.dtype) for k, v in params.items()}
    out = []
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size].astype(cfg.dtype)
        out.append(scaler.inverse(forward(consts, xb, cfg, ctx).data))
    return np.concatenate(out).astype(np.float64)


def train(
    cfg: ModelConfig,
    data: PreparedData,
    tcfg: TrainConfig | None = None,
    on_epoch: Callable[[int, float, float, bool], None] | None = None,
) -> TrainResult:
    """Minibatch Adam on the L1 loss of de-normalized predictions.

    Validation MAE is measured in evaluation mode after every epoch; the
    parameters (and running statistics) of the best epoch are returned.
    """
    tcfg = tcfg or TrainConfig()
    cfg.validate()
    params = init(cfg, seed=tcfg.seed)
    buffers = init_buffers(cfg)
    state = OptimState.zeros_like(params, lr=tcfg.lr)
    stopper = EarlyStopping(tcfg.patience)
    history = TrainHistory()
    best = (dict(params), dict(buffers))
    n = len(data.x_train)

    for epoch in range(1, tcfg.epochs + 1):
        order = label_rng(tcfg.seed, f"shuffle.{epoch}").permutation(n)
        total, seen = 0.0, 0
        stop = n - n % tcfg.batch_size if tcfg.drop_last and n >= tcfg.batch_size else n
        for b, start in enumerate(range(0, stop, tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            xb, yb = data.x_train[idx].astype(cfg.dtype), data.y_train[idx]
            ctx = NormContext(training=True, mode=cfg.norm_mode)
            try:
                leaves = nx.leaves(params)
                pred = data.scaler.inverse(forward(leaves, xb, cfg, ctx))
                loss = l1_loss(pred, yb)
                grads = nx.gradients(loss, leaves)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"epoch {epoch} batch {b}: non-finite gradient")
            if tcfg.grad_clip > 0:
                grads = clip_by_norm(grads, tcfg.grad_clip)
            params, state = adam_step(params, grads, state)
            update_buffers(buffers, ctx.batch_stats, cfg.norm_momentum)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_pred = predict(params, buffers, cfg, data.x_val, data.scaler)
        val_mae = float(np.mean(np.abs(val_pred - data.y_val)))
        improved = stopper.update(epoch, val_mae)
        if improved:
            best = (dict(params), {k: v.copy() for k, v in buffers.items()})
        history.train_loss.append(train_loss)
        history.val_mae.append(val_mae)
        if on_epoch:
            on_epoch(epoch, train_loss, val_mae, improved)
        if stopper.should_stop:
            history.stop_reason = f"early stop: {tcfg.patience} epochs without improvement"
            break
    else:
        history.stop_reason = f"reached {tcfg.epochs} epochs"
    history.best_epoch = stopper.best_epoch
    return TrainResult(best[0], best[1], history, cfg)


# ---------------------------------------------------------------- metrics

@dataclass
class HorizonMetrics:
    mae: float
    rmse: float
    mape: float | None  # percent; None when every target is zero


@dataclass
class MetricsReport:
    horizons: list[HorizonMetrics]
    overall: HorizonMetrics
    samples: int
    masked: int  # zero targets excluded from MAPE

    def to_text(self, per_horizon: bool = True) -> str:
        def fmt(v):
            return "NA" if v is None else repr(float(v))

        lines = ["horizon,mae,rmse,mape"]
        if per_horizon:
            for i, h in enumerate(self.horizons, 1):
                lines.append(f"{i},{fmt(h.mae)},{fmt(h.rmse)},{fmt(h.mape)}")
        o = self.overall
        lines.append(f"avg,{fmt(o.mae)},{fmt(o.rmse)},{fmt(o.mape)}")
        return "\n".join(lines) + "\n"


def _metrics(p: np.ndarray, y: np.ndarray) -> HorizonMetrics:
    err = p - y
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    nz = y != 0
    mape = float(np.mean(np.abs(err[nz]) / np.abs(y[nz])) * 100.0) if nz.any() else None
    return HorizonMetrics(mae, rmse, mape)


def metrics_report(pred: np.ndarray, target: np.ndarray) -> MetricsReport:
    """MAE, RMSE, MAPE per horizon (axis 1) and overall; MAPE skips zero targets."""
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    horizons = [_metrics(pred[:, t], target[:, t]) for t in range(pred.shape[1])]
    return MetricsReport(horizons, _metrics(pred, target), pred.shape[0], int(np.sum(target == 0)))


def evaluate(params, buffers, cfg: ModelConfig, x: np.ndarray, y: np.ndarray, scaler: Scaler) -> MetricsReport:
    return metrics_report(predict(params, buffers, cfg, x, scaler), y)


@dataclass
class WinPoint:
    count_a: int
    count_b: int
    ties: int

    @property
    def total(self) -> int:
        return self.count_a + self.count_b + self.ties

    @property
    def win_percentage(self) -> float:
        """Margin of the leading model relative to its own point count, in percent."""
        lead = max(self.count_a, self.count_b)
        return 0.0 if lead == 0 else 100.0 * abs(self.count_a - self.count_b) / lead


def win_point(pred_a, pred_b, target) -> WinPoint:
    pred_a, pred_b, target = (np.asarray(a, float) for a in (pred_a, pred_b, target))
    if not pred_a.shape == pred_b.shape == target.shape:
        raise ValueError("win_point needs identically shaped arrays")
    ea, eb = np.abs(pred_a - target), np.abs(pred_b - target)
    a, b = int(np.sum(ea < eb)), int(np.sum(eb < ea))
    return WinPoint(a, b, target.size - a - b)
