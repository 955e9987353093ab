import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seng.curvature import CurvatureBlock, route_and_refresh, u_times_c
from seng.direction import SketchConfig, layer_direction, smw_exact
from seng.distributed import (DistributedSENG, ProtocolError, SyncBuffer, allreduce_combine,
                              distributed_uc, local_coeffs, shard_batch)
from seng.net import GradientFactors, mlp
from seng.optimizer import SENG, TrainConfig


def test_shard_examples():
    assert [len(s) for s in shard_batch(8, 1)] == [8]
    assert [len(s) for s in shard_batch(8, 4)] == [2, 2, 2, 2]
    assert [len(s) for s in shard_batch(10, 4)] == [3, 3, 2, 2]
    with pytest.raises(ValueError):
        shard_batch(3, 4)


@given(st.integers(1, 200), st.data())
def test_shards_partition_the_batch(size, data):
    M = data.draw(st.integers(1, size))
    shards = shard_batch(size, M)
    np.testing.assert_array_equal(np.concatenate([s.indices for s in shards]), np.arange(size))
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1 and [s.worker_id for s in shards] == list(range(M))


def _block(rng, p=6, n_g=4, n_a=5, kappa=2, threshold=10**9):
    f = GradientFactors(rng.standard_normal((p, n_g, kappa)), rng.standard_normal((p, n_a, kappa)))
    return route_and_refresh(CurvatureBlock(n_g, n_a), f, 0, threshold=threshold, rank=kappa)


def test_single_worker_coefficients_equal_serial():
    rng = np.random.default_rng(0)
    block = _block(rng)
    g = rng.standard_normal(block.n)
    b = local_coeffs(block, g, 0.4, SketchConfig.full(), rng)
    np.testing.assert_array_equal(b, smw_exact(block.U, g, 0.4).coeffs)
    assert not np.any(local_coeffs(block, np.zeros(block.n), 0.4, SketchConfig.full(), rng))


def test_block_diagonal_coefficients_deviation_recorded():
    rng = np.random.default_rng(1)
    block = _block(rng, p=8)
    g = rng.standard_normal(block.n)
    full = smw_exact(block.U, g, 0.4).coeffs
    parts = [local_coeffs(block.subset(s.indices), g, 0.4, SketchConfig.full(), rng)
             for s in shard_batch(8, 2)]
    rel = np.linalg.norm(np.concatenate(parts) - full) / np.linalg.norm(full)
    assert np.isfinite(rel) and rel > 0


def test_combine_single_worker_matches_layer_direction():
    rng = np.random.default_rng(2)
    block = _block(rng)
    g = rng.standard_normal(block.n)
    b = local_coeffs(block, g, 0.3, SketchConfig.full(), rng)
    d = allreduce_combine([block.U @ b], [g], 0.3)
    ref = layer_direction(block, g, 0.3, SketchConfig.full()).d
    np.testing.assert_allclose(d, ref, rtol=1e-12, atol=1e-14)


def test_identical_workers_match_single_worker():
    rng = np.random.default_rng(3)
    block = _block(rng)
    g = rng.standard_normal(block.n)
    b = local_coeffs(block, g, 0.3, SketchConfig.full(), rng)
    single = allreduce_combine([block.U @ b], [g], 0.3)
    np.testing.assert_allclose(allreduce_combine([block.U @ b] * 3, [g] * 3, 0.3), single,
                               rtol=1e-14)
    with pytest.raises(ProtocolError):
        allreduce_combine([None, block.U @ b], [g, g], 0.3)


def test_distributed_uc_single_sample_and_zero():
    rng = np.random.default_rng(4)
    block = _block(rng, p=1, threshold=0)
    c = np.array([0.7])
    np.testing.assert_allclose(distributed_uc([block], [c]), u_times_c(block, c, "averaged"),
                               rtol=1e-12)
    np.testing.assert_allclose(distributed_uc([block], [c]), u_times_c(block, c, "exact"),
                               rtol=1e-12)
    assert not np.any(distributed_uc([block], [np.zeros(1)]))


def test_distributed_uc_two_workers_deviation_recorded():
    rng = np.random.default_rng(5)
    block = _block(rng, p=6, threshold=0)
    c = rng.standard_normal(6)
    serial = u_times_c(block, c, "averaged")
    shards = shard_batch(6, 2)
    blocks = [block.subset(s.indices) for s in shards]
    dist = distributed_uc(blocks, [c[s.indices] for s in shards])
    rel = np.linalg.norm(dist - serial) / np.linalg.norm(serial)
    assert np.isfinite(rel)


def test_sync_buffer_accounting_and_protocol():
    buf = SyncBuffer(4)
    payloads = [[np.full(100, float(w))] for w in range(4)]
    (mean,) = buf.allreduce(0, "gradient", payloads)
    np.testing.assert_allclose(mean, 1.5)
    rec = buf.log[0]
    assert rec.payload_bytes == 800 and rec.ring_bytes == 2 * 3 * 800
    assert buf.step_traffic(0) == (800, 1)
    with pytest.raises(ProtocolError):
        buf.allreduce(1, "gradient", payloads[:3])
    with pytest.raises(ProtocolError):
        buf.allreduce(1, "gradient", payloads[:3] + [[np.zeros(5)]])


def _data(seed=0, n=32):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 6)), rng.integers(0, 2, n)


@pytest.mark.parametrize("kwargs", [{}, {"stale_coeffs": True},
                                    {"threshold": 0, "uc_mode": "averaged"},
                                    {"threshold": 0, "uc_mode": "exact"}])
def test_single_worker_equals_serial(kwargs):
    x, y = _data()
    cfg_s = TrainConfig(lr=0.4, damping=0.2, sketch_size=30, seed=3, **kwargs)
    cfg_d = TrainConfig(lr=0.4, damping=0.2, sketch_size=30, seed=3, workers=1, **kwargs)
    a, b = mlp(6, [8], 2, seed=1), mlp(6, [8], 2, seed=1)
    serial, dist = SENG(a, cfg_s), DistributedSENG(b, cfg_d)
    for k in range(4):
        ra, rb = serial.step(x, y), dist.step(x, y)
        assert abs(ra.train_loss - rb.train_loss) <= 1e-12
        np.testing.assert_allclose(b.flat_params(), a.flat_params(), rtol=0, atol=1e-12)


def test_fresh_traffic_two_gradient_sized_syncs():
    x, y = _data(1)
    net = mlp(6, [8], 2, seed=0)
    n = net.flat_params().size
    opt = DistributedSENG(net, TrainConfig(workers=4))
    for _ in range(3):
        rec = opt.step(x, y)
        assert opt.sync.step_traffic(rec.step) == (2 * n * 8, 2)
        assert rec.payload_bytes == 2 * n * 8
    assert [r.name for r in opt.sync.log[:2]] == ["gradient", "direction"]


def test_stale_traffic_single_fused_sync_after_first_step():
    x, y = _data(2)
    net = mlp(6, [8], 2, seed=0)
    opt = DistributedSENG(net, TrainConfig(workers=4, stale_coeffs=True))
    assert opt.step(x, y) and opt.sync.step_traffic(0)[1] == 2
    for k in range(1, 4):
        opt.step(x, y)
        assert opt.sync.step_traffic(k)[1] == 1
        assert [r.name for r in opt.sync.log if r.step == k] == ["gradient+direction"]


def test_distributed_runs_are_deterministic():
    x, y = _data(3)

    def run():
        net = mlp(6, [8], 2, seed=0)
        opt = DistributedSENG(net, TrainConfig(workers=3, sketch_size=20, seed=5))
        for _ in range(3):
            opt.step(x, y)
        return net.flat_params()

    assert run().tobytes() == run().tobytes()
