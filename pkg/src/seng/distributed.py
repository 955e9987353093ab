"""In-process simulation of data-parallel SENG.

Workers own contiguous shards of the batch and their local curvature
blocks, scaled by 1/sqrt of the shard size. Each solves
``(lam I + U_i^T U_i) b_i = U_i^T g`` on its own block and the direction
uses the average of the ``U_i b_i``. Cross-worker data moves only through
:class:`SyncBuffer`, which averages tensors and logs the bytes a ring
all-reduce would move.
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .curvature import CurvatureBlock, averaged_factors, route_and_refresh, u_times_c, ut_z, utu
from .direction import explicit_operator, factor_operators, sketched_coeffs
from .linalg import spd_solve, vec
from .net import loss_and_grad
from .optimizer import MetricsRecord, TrainConfig, TrainingDiverged, schedule_eval
from .sketch import apply_sketch


class ProtocolError(RuntimeError):
    """A collective was called with missing or mismatched worker payloads."""


@dataclass
class WorkerShard:
    worker_id: int
    indices: np.ndarray
    grads: Optional[list] = None
    blocks: Optional[List[CurvatureBlock]] = None

    def __len__(self):
        return len(self.indices)


def shard_batch(batch, M):
    """Split ``batch`` (a size or an index array) into ``M`` contiguous shards
    whose sizes differ by at most one, larger shards first."""
    indices = np.arange(batch) if np.isscalar(batch) else np.asarray(batch)
    if M < 1:
        raise ValueError("need at least one worker")
    if M > len(indices):
        raise ValueError(f"{M} workers for a batch of {len(indices)}")
    return [WorkerShard(i, part) for i, part in enumerate(np.array_split(indices, M))]


@dataclass
class SyncRecord:
    step: int
    name: str
    payload_bytes: int
    ring_bytes: int


@dataclass
class SyncBuffer:
    """All-reduce (mean) across workers with ring traffic accounting.

    A ring all-reduce of ``P`` bytes over ``M`` workers takes ``2(M-1)``
    rounds in which every worker sends ``P/M`` bytes, i.e. ``2(M-1)P`` bytes
    in total.
    """

    workers: int
    log: List[SyncRecord] = field(default_factory=list)

    def allreduce(self, step, name, payloads):
        """``payloads[w]`` is the list of arrays worker ``w`` contributes."""
        if len(payloads) != self.workers or any(p is None for p in payloads):
            raise ProtocolError(f"{name}: expected {self.workers} worker payloads")
        shapes = [tuple(a.shape) for a in payloads[0]]
        for p in payloads[1:]:
            if [tuple(a.shape) for a in p] != shapes:
                raise ProtocolError(f"{name}: payload shapes differ across workers")
        nbytes = int(sum(a.size for a in payloads[0]) * 8)
        self.log.append(SyncRecord(step, name, nbytes, 2 * (self.workers - 1) * nbytes))
        return [np.mean([p[k] for p in payloads], axis=0) for k in range(len(shapes))]

    def step_traffic(self, step):
        """``(payload_bytes, num_syncs)`` logged for ``step``."""
        recs = [r for r in self.log if r.step == step]
        return sum(r.payload_bytes for r in recs), len(recs)


def local_coeffs(block, g_ref, lam, sketch, rng):
    """Worker coefficients ``(lam I + U_i^T U_i)^{-1} U_i^T g_ref`` on the
    worker's own (sketched) block."""
    p = block.n_samples
    if block.mode == "explicit":
        op = explicit_operator(block, sketch, rng)
        if op is None:
            return sketched_coeffs(block.U, g_ref, lam)
        return sketched_coeffs(apply_sketch(op, block.U), apply_sketch(op, g_ref), lam)
    ops = factor_operators(block, sketch, rng)
    return spd_solve(lam * np.eye(p) + utu(block, ops), ut_z(block, g_ref, ops))


def allreduce_combine(contributions, local_grads, lam):
    """``-(1/lam) mean(g_i) + (1/lam) mean(U_i b_i)``."""
    if any(c is None for c in contributions) or len(contributions) != len(local_grads):
        raise ProtocolError("missing worker contribution")
    g = np.mean(local_grads, axis=0)
    return (np.mean(contributions, axis=0) - g) / lam


def uc_partials(block, c):
    """Worker-side ``(G^c)_i`` and ``(A^c)_i`` with the local denominator; the
    block's 1/sqrt(|S_i|) scale is folded into ``c``."""
    return averaged_factors(block.G, block.A, block.scale * np.asarray(c))


def distributed_uc(blocks, coeffs):
    """Averaged-factor ``U c`` across workers: ``vec(sum G^c_i (sum A^c_i)^T) / M``."""
    parts = [uc_partials(b, c) for b, c in zip(blocks, coeffs)]
    Gs = sum(p[0] for p in parts)
    As = sum(p[1] for p in parts)
    return vec(Gs @ As.T) / len(blocks)


class DistributedSENG:
    """SENG with ``config.workers`` simulated workers.

    ``stale_coeffs`` computes worker coefficients against the previous step's
    gradient so the direction payload travels with the gradient in one sync;
    the first step falls back to the fresh two-sync protocol.
    """

    def __init__(self, net, config: TrainConfig):
        self.net = net
        self.config = config
        self.sketch = config.sketch_config()
        self.M = config.workers
        self.sync = SyncBuffer(self.M)
        dims = [layer.factor_dims for layer in net.param_layers]
        self.worker_blocks = [[CurvatureBlock(*d) for d in dims] for _ in range(self.M)]
        self.prev_grads = None
        self.step_count = 0

    def _rng(self, layer_index):
        return np.random.default_rng([self.config.seed, self.step_count, layer_index])

    def _local_pass(self, shard, x, y):
        out, cache = self.net.forward(x[shard.indices])
        loss, dout = loss_and_grad(out, y[shard.indices], self.config.loss)
        factors, grads = self.net.backward_factors(cache, dout)
        if self.config.weight_decay:
            grads = [g + self.config.weight_decay * w.reshape(-1)
                     for g, w in zip(grads, self.net.params)]
        return loss, factors, grads

    def step(self, x, y, epoch=0.0):
        t0 = time.perf_counter()
        cfg = self.config
        step = self.step_count
        shards = shard_batch(len(x), self.M)
        losses = []
        for shard in shards:
            loss, factors, grads = self._local_pass(shard, x, y)
            losses.append(loss * len(shard))
            shard.grads = grads
            blocks = self.worker_blocks[shard.worker_id]
            for l, f in enumerate(factors):
                blocks[l] = route_and_refresh(blocks[l], f, step, cfg.update_freq, cfg.threshold,
                                              cfg.rank, cfg.routing, cfg.compress)
            shard.blocks = blocks
        loss = float(sum(losses) / len(x))
        alpha, lam = schedule_eval(cfg, epoch)
        n_layers = len(self.net.param_layers)
        stale = cfg.stale_coeffs and self.prev_grads is not None

        if stale:
            parts = [self._contributions(s, self.prev_grads, lam) for s in shards]
            fused = self.sync.allreduce(
                step, "gradient+direction",
                [list(s.grads) + _flatten(parts[s.worker_id]) for s in shards])
            g_mean, c_flat = fused[:n_layers], fused[n_layers:]
        else:
            g_mean = self.sync.allreduce(step, "gradient", [list(s.grads) for s in shards])
            parts = [self._contributions(s, g_mean, lam) for s in shards]
            c_flat = self.sync.allreduce(step, "direction", [_flatten(p) for p in parts])
        c_mean = _unflatten(c_flat, [len(p) for p in parts[0]])

        grad_norm = float(np.sqrt(sum(g @ g for g in g_mean)))
        record = MetricsRecord(step, epoch, loss, grad_norm)
        if not (np.isfinite(loss) and np.isfinite(grad_norm)):
            raise TrainingDiverged(record)
        directions = []
        for l in range(n_layers):
            if len(c_mean[l]) == 2:
                Gc, Ac = c_mean[l]
                # the all-reduce averages; the product needs the sums
                uc = vec((self.M * Gc) @ (self.M * Ac).T) / self.M
            else:
                uc = c_mean[l][0]
            directions.append((uc - g_mean[l]) / lam)
        for layer, d in zip(self.net.param_layers, directions):
            layer.W = layer.W + alpha * d.reshape(layer.W.shape)
        self.net.touch()
        self.prev_grads = g_mean
        record.payload_bytes, _ = self.sync.step_traffic(step)
        record.step_norm = alpha * float(np.sqrt(sum(d @ d for d in directions)))
        record.wall_ms = 1e3 * (time.perf_counter() - t0)
        self.step_count += 1
        return record

    def _contributions(self, shard, g_refs, lam):
        """Per-layer payload of one worker: ``[U_i b_i]`` or ``[G^c_i, A^c_i]``."""
        out = []
        for l, block in enumerate(shard.blocks):
            b = local_coeffs(block, g_refs[l], lam, self.sketch, self._rng(l))
            if block.mode == "implicit" and self.config.uc_mode == "averaged":
                out.append(list(uc_partials(block, b)))
            else:
                out.append([u_times_c(block, b, "exact")])
        return out


def _flatten(nested):
    return [a for group in nested for a in group]


def _unflatten(flat, sizes):
    out, k = [], 0
    for size in sizes:
        out.append(flat[k:k + size])
        k += size
    return out
