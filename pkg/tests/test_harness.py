import csv

import numpy as np
import pytest

from oracles import finite_difference_grad
from seng.harness.data import synthetic_classification
from seng.harness.ntk import (ResidualBlowup, residual_ratios, run_ntk_experiment, setup_ntk)
from seng.harness.sweep import (SUMMARY_COLUMNS, oracle_error_sweep, random_layer, sweep_cell,
                                write_rows, write_summary, zero_gradient_check)
from seng.harness.training import (CsvSink, ListSink, build_network, fit, save_model,
                                   write_config, write_traffic)
from seng.net import materialize_gradient
from seng.optimizer import CSV_COLUMNS, TrainConfig
from seng.sketch import SketchSpec


def test_ntk_zero_init_scale_gives_zero_outputs():
    p = setup_ntk(6, 4, 32, nu=0.0)
    assert not np.any(p.W) and not np.any(p.outputs())


def test_ntk_inputs_unit_norm_and_distinct():
    p = setup_ntk(20, 8, 64, seed=3)
    assert np.abs(np.linalg.norm(p.X, axis=1) - 1).max() <= 1e-12
    assert len({row.tobytes() for row in p.X}) == 20
    assert np.all(np.abs(p.y) <= 10)


def test_ntk_jacobian_matches_finite_differences_away_from_kinks():
    p = setup_ntk(5, 4, 16, seed=1)
    pre = p.X @ p.W.T
    assert np.abs(pre).min() > 1e-6
    J = p.jacobian()
    for i in range(5):
        fd = finite_difference_grad(lambda W, i=i: p.outputs(W)[i], p.W.copy(), 1e-7)
        np.testing.assert_allclose(J[i], fd.ravel(), atol=1e-5)


def test_ntk_fixed_point_and_zero_step():
    p = setup_ntk(8, 4, 64, seed=2)
    p.y = p.outputs()
    assert run_ntk_experiment(p, 0.5, 1e-3, 5) == [0.0] * 6
    p = setup_ntk(8, 4, 64, seed=2)
    res = run_ntk_experiment(p, 0.0, 1e-3, 5)
    assert all(r == res[0] for r in res)


def test_ntk_half_sketch_still_contracts():
    p = setup_ntk(20, 8, 512, seed=0)
    q = p.W.size // 2
    res = run_ntk_experiment(p, 0.5, 1e-3, 30, SketchSpec("uniform", q, replacement=False))
    ratios = residual_ratios(res)[:15]
    assert np.all(ratios < 1.0) and res[-1] < 1e-3 * res[0]


def test_ntk_efim_curvature_decreases_residual():
    # residual-weighted columns shrink with the residual, so the step needs more damping
    p = setup_ntk(20, 8, 512, seed=0)
    res = run_ntk_experiment(p, 0.1, 0.1, 30, curvature="efim")
    assert res[-1] < 1e-2 * res[0]
    with pytest.raises(ValueError):
        run_ntk_experiment(setup_ntk(4, 2, 8), 0.1, 0.1, 1, curvature="fisher")


def test_ntk_blowup_reported():
    p = setup_ntk(8, 4, 64, seed=0)
    with pytest.raises(ResidualBlowup) as info:
        run_ntk_experiment(p, -5.0, 1e-3, 50)
    assert info.value.residuals[-1] > 10 * info.value.residuals[0]


def test_sweep_full_sketch_is_exact_and_zero_gradient_is_zero():
    rng = np.random.default_rng(0)
    f = random_layer(4, 8, 2, 6, rng)
    U = materialize_gradient(f).T / np.sqrt(6)
    g = rng.standard_normal(32)
    row = sweep_cell(U, g, 1.0, 32, seed=0)
    assert row.b_err <= 1e-10 and row.d_err <= 1e-10 and row.eta <= 1e-10
    zero = zero_gradient_check(U, 1.0, 16)
    assert zero.b_err == 0.0 and zero.d_err == 0.0


def test_sweep_bound_holds_and_tables_written(tmp_path):
    rows, summary = oracle_error_sweep((8, 8, 2), batch=6, q_grid=(8, 16, 32, 64), seeds=range(8))
    assert all(r.bound_ok for r in rows)
    assert [s["q"] for s in summary] == [8, 16, 32, 64]
    write_rows(tmp_path / "rows.csv", rows)
    write_summary(tmp_path / "summary.csv", summary)
    with open(tmp_path / "summary.csv") as fh:
        assert next(csv.reader(fh)) == SUMMARY_COLUMNS
    with pytest.raises(ValueError):
        oracle_error_sweep((200, 100, 1))


def test_fit_emits_step_and_epoch_rows(tmp_path):
    data = synthetic_classification(n=64, n_test=32, seed=0)
    net = build_network(data, (8,), seed=0)
    cfg = TrainConfig(lr=0.5, damping=0.1, batch_size=16, epochs=2)
    sink = ListSink()
    last, opt = fit(net, data, cfg, "seng", sink)
    epoch_rows = [r for r in sink.records if r.test_acc is not None]
    assert len(sink.records) == 2 * 4 + 2 and len(epoch_rows) == 2
    assert last is epoch_rows[-1] and last.epoch == 2.0
    with CsvSink(tmp_path / "m.csv") as csv_sink:
        fit(build_network(data, (8,), seed=0), data, cfg, "sgd", csv_sink, max_steps=3)
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS and len(rows) == 1 + 3 + 1


def test_fit_rejects_oversized_batch():
    data = synthetic_classification(n=8, n_test=4)
    with pytest.raises(ValueError):
        fit(build_network(data), data, TrainConfig(batch_size=16), "sgd")


def test_conv_network_from_layer_specs():
    rng = np.random.default_rng(0)
    from seng.harness.data import Dataset
    data = Dataset(rng.standard_normal((16, 1, 6, 6)), rng.integers(0, 3, 16))
    net = build_network(data, layers=["conv:2:3:1:1", "relu"])
    last, _ = fit(net, data, TrainConfig(batch_size=8, epochs=1, damping=0.5), "seng")
    assert np.isfinite(last.train_loss)


def test_artifacts_written(tmp_path):
    data = synthetic_classification(n=64, n_test=32)
    net = build_network(data, (8,))
    cfg = TrainConfig(batch_size=16, epochs=1, workers=2)
    _, opt = fit(net, data, cfg, "seng")
    save_model(tmp_path / "model.npz", net)
    write_config(tmp_path / "config.json", cfg, {"optimizer": "seng"})
    write_traffic(tmp_path / "traffic.csv", opt.sync)
    with np.load(tmp_path / "model.npz") as saved:
        np.testing.assert_array_equal(saved["layer0"], net.params[0])
    with open(tmp_path / "traffic.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "payload_bytes", "num_syncs"] and len(rows) == 5
    assert '"workers": 2' in (tmp_path / "config.json").read_text()
