"""SENG training step, learning-rate / damping schedules and an SGD baseline."""

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from .curvature import DEFAULT_THRESHOLD, CurvatureBlock, route_and_refresh
from .direction import SketchConfig, layer_direction
from .net import loss_and_grad


class TrainingDiverged(RuntimeError):
    def __init__(self, record):
        self.record = record
        super().__init__(f"non-finite loss at step {record.step}")


@dataclass
class TrainConfig:
    lr: float = 0.1
    lr_schedule: str = "constant"
    lr_min: float = 0.001
    decay_rate: float = 6.0
    warmup_epochs: float = 0.0
    warmup_lr: float = 0.01
    damping: float = 1.0
    damping_factor: float = 1.0
    damping_period: float = 10.0
    update_freq: int = 1
    threshold: int = DEFAULT_THRESHOLD
    routing: str = "threshold"
    compress: str = "factor"
    sketch: str = "uniform"
    sketch_size: Optional[int] = None
    sketch_a: Optional[int] = None
    sketch_g: Optional[int] = None
    sketch_replacement: bool = True
    sketch_scaling: str = "embedding"
    sketch_factors: bool = True
    rank: Optional[int] = None
    uc_mode: str = "averaged"
    batch_size: int = 32
    epochs: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    loss: str = "cross_entropy"
    workers: int = 1
    stale_coeffs: bool = False
    diagnostics: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if not self.damping > 0 or not self.damping_factor > 0:
            raise ValueError("damping and damping_factor must be positive")
        if self.update_freq < 1:
            raise ValueError("update_freq must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.workers > self.batch_size:
            raise ValueError("workers cannot exceed batch_size")
        if self.lr_schedule not in ("constant", "cosine", "exp"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def sketch_config(self):
        return SketchConfig(kind=self.sketch, q=self.sketch_size, zeta_A=self.sketch_a,
                            zeta_G=self.sketch_g, replacement=self.sketch_replacement,
                            scaling=self.sketch_scaling, sketch_factors=self.sketch_factors)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)


CSV_COLUMNS = ["step", "epoch", "train_loss", "grad_norm", "test_acc", "eta_est", "eps_est",
               "payload_bytes", "wall_ms"]


@dataclass
class MetricsRecord:
    step: int
    epoch: float
    train_loss: float
    grad_norm: float
    test_acc: Optional[float] = None
    eta_est: Optional[float] = None
    eps_est: Optional[float] = None
    payload_bytes: Optional[int] = None
    wall_ms: float = 0.0
    step_norm: Optional[float] = None
    step_bound: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def schedule_eval(config, epoch):
    """Step size and damping at (fractional) ``epoch``."""
    alpha0 = config.lr
    max_epoch = config.epochs
    warm = config.warmup_epochs
    if warm > 0 and epoch < warm:
        alpha = config.warmup_lr + (alpha0 - config.warmup_lr) * epoch / warm
    else:
        e, span = (epoch - warm, max_epoch - warm) if warm > 0 else (epoch, max_epoch)
        frac = min(max(e / span, 0.0), 1.0) if span > 0 else 1.0
        if config.lr_schedule == "constant":
            alpha = alpha0
        elif config.lr_schedule == "cosine":
            alpha = config.lr_min + 0.5 * (alpha0 - config.lr_min) * (1 + math.cos(frac * math.pi))
        else:
            alpha = alpha0 * (1 - frac) ** config.decay_rate
    lam = config.damping * config.damping_factor ** (epoch / config.damping_period)
    return alpha, lam


def _layer_norm(v):
    return float(np.sqrt(v @ v))


class SENG:
    """Layer-wise sketched empirical natural gradient optimizer for a :class:`Network`."""

    def __init__(self, net, config: TrainConfig):
        self.net = net
        self.config = config
        self.sketch = config.sketch_config()
        self.blocks = [CurvatureBlock(*layer.factor_dims) for layer in net.param_layers]
        self.prev_grads = None
        self.step_count = 0

    def _gradients(self, x, y):
        cfg = self.config
        out, cache = self.net.forward(x)
        loss, dout = loss_and_grad(out, y, cfg.loss)
        factors, grads = self.net.backward_factors(cache, dout)
        if cfg.weight_decay:
            grads = [g + cfg.weight_decay * w.reshape(-1) for g, w in zip(grads, self.net.params)]
        return loss, factors, grads

    def _rng(self, layer_index):
        return np.random.default_rng([self.config.seed, self.step_count, layer_index])

    def step(self, x, y, epoch=0.0):
        t0 = time.perf_counter()
        cfg = self.config
        loss, factors, grads = self._gradients(x, y)
        grad_norm = float(np.sqrt(sum(g @ g for g in grads)))
        record = MetricsRecord(self.step_count, epoch, loss, grad_norm)
        if not (np.isfinite(loss) and np.isfinite(grad_norm)):
            raise TrainingDiverged(record)
        alpha, lam = schedule_eval(cfg, epoch)
        dirs = self._directions(factors, grads, lam, record)
        self.prev_grads = grads
        self._apply(dirs, alpha)
        bound_terms = []
        for l, (res, g) in enumerate(zip(dirs, grads)):
            block = self.blocks[l]
            if block.mode == "explicit":
                curv = float(np.linalg.norm(block.U)) * _layer_norm(res.coeffs)
            else:
                curv = _layer_norm(lam * res.d + g)
            bound_terms.append(_layer_norm(g) + curv)
        record.step_norm = alpha * float(np.sqrt(sum(r.d @ r.d for r in dirs)))
        record.step_bound = alpha / lam * float(np.sqrt(sum(t * t for t in bound_terms)))
        record.wall_ms = 1e3 * (time.perf_counter() - t0)
        self.step_count += 1
        return record

    def _directions(self, factors, grads, lam, record):
        cfg = self.config
        dirs = []
        etas, epss = [], []
        for l, (f, g) in enumerate(zip(factors, grads)):
            self.blocks[l] = route_and_refresh(
                self.blocks[l], f, self.step_count, cfg.update_freq, cfg.threshold, cfg.rank,
                cfg.routing, cfg.compress)
            record.notes.extend(self.blocks[l].notes if self.blocks[l].last_refresh_step
                                == self.step_count else [])
            g_coef = self.prev_grads[l] if cfg.stale_coeffs and self.prev_grads else None
            res = layer_direction(self.blocks[l], g, lam, self.sketch, self._rng(l), cfg.uc_mode,
                                  diagnose=cfg.diagnostics, g_coef=g_coef)
            if res.eta is not None:
                etas.append(res.eta)
                epss.append(res.eps)
            dirs.append(res)
        if etas:
            record.eta_est = float(np.mean(etas))
            record.eps_est = float(np.mean(epss))
        return dirs

    def _apply(self, dirs, alpha):
        for layer, res in zip(self.net.param_layers, dirs):
            layer.W = layer.W + alpha * res.d.reshape(layer.W.shape)
        self.net.touch()


class SGD:
    """Heavy-ball SGD: ``v <- mu v + g + wd theta``, ``theta <- theta - alpha v``."""

    def __init__(self, net, config: TrainConfig):
        self.net = net
        self.config = config
        self.velocity = [np.zeros_like(w) for w in net.params]
        self.step_count = 0

    def step(self, x, y, epoch=0.0):
        t0 = time.perf_counter()
        cfg = self.config
        out, cache = self.net.forward(x)
        loss, dout = loss_and_grad(out, y, cfg.loss)
        _, grads = self.net.backward_factors(cache, dout)
        grad_norm = float(np.sqrt(sum(g @ g for g in grads)))
        record = MetricsRecord(self.step_count, epoch, loss, grad_norm)
        if not (np.isfinite(loss) and np.isfinite(grad_norm)):
            raise TrainingDiverged(record)
        alpha, _ = schedule_eval(cfg, epoch)
        for i, (layer, g) in enumerate(zip(self.net.param_layers, grads)):
            g = g.reshape(layer.W.shape)
            if cfg.weight_decay:
                g = g + cfg.weight_decay * layer.W
            self.velocity[i] = cfg.momentum * self.velocity[i] + g
            layer.W = layer.W - alpha * self.velocity[i]
        self.net.touch()
        record.wall_ms = 1e3 * (time.perf_counter() - t0)
        self.step_count += 1
        return record


def seng_step(net, batch, state: SENG, epoch=0.0):
    """Functional wrapper: one SENG update of ``net`` on ``batch = (x, y)``."""
    x, y = batch
    return state.step(x, y, epoch)


def sgd_step(net, batch, state: SGD, epoch=0.0):
    x, y = batch
    return state.step(x, y, epoch)


def full_batch_stats(net, x, y, loss="cross_entropy", weight_decay=0.0):
    """Full-data loss and gradient norm."""
    out, cache = net.forward(x)
    value, dout = loss_and_grad(out, y, loss)
    _, grads = net.backward_factors(cache, dout)
    if weight_decay:
        grads = [g + weight_decay * w.reshape(-1) for g, w in zip(grads, net.params)]
    return value, float(np.sqrt(sum(g @ g for g in grads)))
