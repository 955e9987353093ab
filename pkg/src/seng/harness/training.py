"""Epoch loop, metrics sinks and end-of-run artifacts."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..distributed import DistributedSENG
from ..net import Network, accuracy, mlp
from ..optimizer import CSV_COLUMNS, SENG, SGD, MetricsRecord, TrainConfig, full_batch_stats


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvSink:
    """Writes :class:`MetricsRecord` rows with the fixed column set."""

    def __init__(self, path, columns=CSV_COLUMNS):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def write(self, record):
        self._writer.writerow([_fmt(getattr(record, c)) for c in self.columns])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ListSink:
    def __init__(self):
        self.records = []

    def write(self, record):
        self.records.append(record)


def make_optimizer(name, net, config):
    if name == "sgd":
        return SGD(net, config)
    if name == "seng":
        return DistributedSENG(net, config) if config.workers > 1 else SENG(net, config)
    raise ValueError(f"unknown optimizer {name!r}")


def build_network(dataset, hidden=(32,), layers=None, seed=0):
    if layers:
        net = Network.from_specs(list(layers) + [f"dense:{dataset.n_outputs}"],
                                 dataset.input_shape, seed=seed)
        return net
    return mlp(int(np.prod(dataset.input_shape)), list(hidden), dataset.n_outputs, seed=seed)


def fit(net, dataset, config: TrainConfig, optimizer="seng", sink=None, max_steps=None):
    """Train for ``config.epochs`` epochs of ``floor(N / batch_size)`` steps.

    Every step and every completed epoch emits a record to ``sink``; epoch
    rows carry full-batch loss and gradient norm plus test accuracy when a
    classification test split exists. Returns ``(last_epoch_record, optimizer)``.
    """
    sink = sink if sink is not None else ListSink()
    opt = make_optimizer(optimizer, net, config)
    x, y = dataset.x_train, dataset.y_train
    n = len(x)
    per_epoch = n // config.batch_size
    if per_epoch < 1:
        raise ValueError(f"batch size {config.batch_size} exceeds dataset size {n}")
    total = int(math.ceil(config.epochs * per_epoch))
    if max_steps is not None:
        total = min(total, max_steps)
    last = None
    step = 0
    epoch = 0
    while step < total:
        order = np.random.default_rng([config.seed, 17, epoch]).permutation(n)
        for j in range(per_epoch):
            if step >= total:
                break
            idx = order[j * config.batch_size:(j + 1) * config.batch_size]
            sink.write(opt.step(x[idx], y[idx], epoch=step / per_epoch))
            step += 1
        epoch += 1
        last = epoch_record(net, dataset, config, step, step / per_epoch)
        sink.write(last)
    return last, opt


def epoch_record(net, dataset, config, step, epoch):
    loss, gnorm = full_batch_stats(net, dataset.x_train, dataset.y_train, config.loss,
                                   config.weight_decay)
    acc = None
    if dataset.task == "classification" and dataset.x_test is not None:
        acc = accuracy(net.predict(dataset.x_test), dataset.y_test)
    return MetricsRecord(step, epoch, loss, gnorm, test_acc=acc)


def save_model(path, net):
    np.savez(path, **{f"layer{i}": w for i, w in enumerate(net.params)})


def write_traffic(path, sync_buffer):
    steps = sorted({r.step for r in sync_buffer.log})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "payload_bytes", "num_syncs"])
        for s in steps:
            writer.writerow([s, *sync_buffer.step_traffic(s)])


def write_config(path, config, extra=None):
    data = dict(config.to_dict())
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
