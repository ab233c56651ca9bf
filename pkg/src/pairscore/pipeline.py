"""Training loop, scoring, the repeated-split evaluation protocol and timing harnesses."""

from __future__ import annotations

import csv
import gc
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .batch import BatchGenerator, make_generator
from .dataset import ContextFeatureSet, DrugFeatureSet, LabeledTriples, train_test_split
from .errors import MissingCalibration, NonFiniteLoss, TooFewRepeats
from .metrics import MetricsReport, metrics_report
from .models import PairScorer, Prediction, build_model
from .neuro import AdamState, OptimizerConfig, adam_step, backward, bce_loss
from .synthetic import Workload, make_workload

__all__ = [
    "LossValue",
    "generator_for",
    "train",
    "predict",
    "ProtocolResult",
    "evaluate_protocol",
    "BenchmarkRecord",
    "benchmark_epoch",
    "batch_size_sweep",
    "InferenceCalibration",
    "calibrate_inference",
    "project_inference",
    "all_pairs",
    "time_all_pairs",
    "write_metrics_csv",
    "write_benchmark_csv",
    "write_projection_csv",
]

log = logging.getLogger(__name__)


@dataclass
class LossValue:
    """Losses of one epoch: per-batch means and sizes, and their summed cost."""

    epoch: int
    batch_means: list[float] = field(default_factory=list)
    batch_sizes: list[int] = field(default_factory=list)

    @property
    def cost(self) -> float:
        """Summed (not averaged) loss over every triple of the epoch."""
        return float(sum(b * m for b, m in zip(self.batch_sizes, self.batch_means)))

    @property
    def mean(self) -> float:
        n = sum(self.batch_sizes)
        return self.cost / n if n else 0.0


def generator_for(model: PairScorer, triples: LabeledTriples, drug_set: DrugFeatureSet,
                  context_set: ContextFeatureSet | None, batch_size: int, shuffle_seed: int | None) -> BatchGenerator:
    """Generator that collates exactly the batch fields ``model`` consumes."""
    return make_generator(
        triples,
        drug_set,
        context_set,
        batch_size,
        context_features="context_features" in model.uses,
        drug_features="drug_features" in model.uses,
        drug_molecules="drug_molecules" in model.uses,
        shuffle_seed=shuffle_seed,
    )


def train(model: PairScorer, gen: BatchGenerator, cfg: OptimizerConfig | None = None, seed: int = 0,
          state: AdamState | None = None) -> tuple[PairScorer, list[LossValue]]:
    """Fit ``model`` in place with Adam on mean binary cross-entropy.

    Epoch ``e`` draws its batches from ``gen.epoch(e)``; dropout in batch ``t``
    of epoch ``e`` is seeded by ``(seed, e, t)``.
    """
    cfg = cfg or OptimizerConfig()
    state = state or AdamState()
    trace = []
    for epoch in range(cfg.epochs):
        record = LossValue(epoch)
        for t, batch in enumerate(gen.epoch(epoch)):
            out = model.forward(batch, training=True, rng=np.random.default_rng([seed, epoch, t]))
            loss = bce_loss(out, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(epoch, t, value)
            grads = backward(loss, model.params)
            adam_step(model.params, grads, state, cfg)
            record.batch_means.append(value)
            record.batch_sizes.append(len(batch))
        log.debug("epoch %d mean loss %.5f", epoch, record.mean)
        trace.append(record)
    return model, trace


def predict(model: PairScorer, gen: BatchGenerator) -> Prediction:
    """Score every triple of ``gen`` in evaluation mode, in generator order."""
    values, index = [], []
    for batch in gen.epoch(0):
        p = model.score(batch, training=False)
        values.append(p.values)
        index.append(p.index)
    if not values:
        return Prediction(np.zeros(0), np.zeros(0, dtype=np.int64), gen.triples)
    return Prediction(np.concatenate(values), np.concatenate(index), gen.triples)


# --------------------------------------------------------------------------
# evaluation protocol


@dataclass
class ProtocolResult:
    model: str
    reports: list[MetricsReport]
    seeds: list[int]
    predictions: list[Prediction] = field(default_factory=list)

    @property
    def n_repeats(self) -> int:
        return len(self.reports)

    def summary(self) -> dict[str, tuple[float, float]]:
        """Metric name to ``(mean, standard error)``; standard error uses the sample deviation."""
        out = {}
        for metric in ("auroc", "aupr", "f1"):
            values = np.array([getattr(r, metric) for r in self.reports])
            out[metric] = (float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values))))
        return out


def _single_repeat(drug_set, context_set, triples, model_name, train_size, seed, cfg, overrides):
    train_set, test_set = train_test_split(triples, train_size=train_size, seed=seed)
    width = context_set.width if context_set is not None else 1
    model = build_model(model_name, width, dropout=cfg.dropout_rate, seed=seed, **overrides)
    gen = generator_for(model, train_set, drug_set, context_set, cfg.batch_size, shuffle_seed=seed)
    train(model, gen, cfg, seed=seed)
    test_gen = generator_for(model, test_set, drug_set, context_set, cfg.batch_size, shuffle_seed=None)
    pred = predict(model, test_gen)
    return metrics_report(pred.values, test_set.label[pred.index]), pred


def evaluate_protocol(drug_set: DrugFeatureSet, context_set: ContextFeatureSet | None, triples: LabeledTriples,
                      model_name: str, n_repeats: int = 10, train_size: float = 0.8, base_seed: int = 0,
                      cfg: OptimizerConfig | None = None, jobs: int = 1, **model_overrides) -> ProtocolResult:
    """Repeat split / train / score with seeds ``base_seed + r``."""
    if n_repeats < 2:
        raise TooFewRepeats(f"n_repeats={n_repeats}: a standard error needs at least 2 repeats")
    cfg = cfg or OptimizerConfig()
    seeds = [base_seed + r for r in range(n_repeats)]
    args = [(drug_set, context_set, triples, model_name, train_size, s, cfg, model_overrides) for s in seeds]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(lambda a: _single_repeat(*a), args))
    else:
        runs = [_single_repeat(*a) for a in args]
    return ProtocolResult(model_name, [r for r, _ in runs], seeds, [p for _, p in runs])


# --------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class BenchmarkRecord:
    model: str
    batch_size: int
    n_pairs: int
    seconds: float
    repeats: int


class _EpochTimer:
    """One model, generator and optimizer state, ready to time training epochs."""

    def __init__(self, model_name: str, workload: Workload, batch_size: int, cfg: OptimizerConfig | None, seed: int):
        self.cfg = replace(cfg or OptimizerConfig(), epochs=1, batch_size=batch_size)
        self.seed = seed
        self.model = build_model(model_name, workload.contexts.width, dropout=self.cfg.dropout_rate, seed=seed)
        self.gen = generator_for(self.model, workload.triples, workload.drugs, workload.contexts, batch_size,
                                 shuffle_seed=seed)
        self.state = AdamState()
        self.times: list[float] = []

    def run(self, timed: bool = True) -> None:
        start = time.perf_counter()
        train(self.model, self.gen, self.cfg, seed=self.seed + 1 + len(self.times), state=self.state)
        if timed:
            self.times.append(time.perf_counter() - start)

    def record(self, n_pairs: int) -> BenchmarkRecord:
        return BenchmarkRecord(self.model.name, self.cfg.batch_size, n_pairs, float(np.mean(self.times)), len(self.times))


def benchmark_epoch(model_name: str, n_pairs: int = 2**17, batch_size: int = 2**12, repeats: int = 10,
                    workload: Workload | None = None, cfg: OptimizerConfig | None = None, seed: int = 0,
                    warmup: bool = True) -> BenchmarkRecord:
    """Mean wall-clock seconds of one training epoch over ``n_pairs`` synthetic triples.

    One untimed warm-up epoch runs first.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if workload is None or len(workload.triples) != n_pairs:
        workload = make_workload(n_pairs, seed=seed)
    timer = _EpochTimer(model_name, workload, batch_size, cfg, seed)
    if warmup:
        timer.run(timed=False)
    for _ in range(repeats):
        timer.run()
    return timer.record(n_pairs)


def batch_size_sweep(model_name: str, batch_sizes: Sequence[int] = tuple(2**p for p in range(8, 13)),
                     n_pairs: int = 2**17, repeats: int = 10, workload: Workload | None = None,
                     cfg: OptimizerConfig | None = None, seed: int = 0) -> list[BenchmarkRecord]:
    """One record per batch size; repeats run round-robin over the sizes.

    Interleaving means a slow stretch of machine time lands on every batch
    size alike instead of on whichever size happened to be running.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if workload is None or len(workload.triples) != n_pairs:
        workload = make_workload(n_pairs, seed=seed)
    timers = [_EpochTimer(model_name, workload, b, cfg, seed) for b in batch_sizes]
    for t in timers:
        t.run(timed=False)
    for _ in range(repeats):
        for t in timers:
            t.run()
    return [t.record(n_pairs) for t in timers]


@dataclass(frozen=True)
class InferenceCalibration:
    model: str
    batch_size: int
    seconds_per_batch: float


_CALIBRATIONS: dict[tuple[str, int], InferenceCalibration] = {}


def calibrate_inference(model_name: str, batch_size: int = 2**12, n_batches: int = 8, repeats: int = 3,
                        workload: Workload | None = None, seed: int = 0) -> InferenceCalibration:
    """Measure evaluation-mode seconds per full batch and register the result."""
    n_pairs = batch_size * n_batches
    if workload is None or len(workload.triples) < n_pairs:
        workload = make_workload(n_pairs, seed=seed)
    triples = workload.triples.subset(np.arange(n_pairs))
    model = build_model(model_name, workload.contexts.width, seed=seed)
    gen = generator_for(model, triples, workload.drugs, workload.contexts, batch_size, shuffle_seed=None)
    predict(model, gen)  # warm-up
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        predict(model, gen)
        times.append((time.perf_counter() - start) / n_batches)
    cal = InferenceCalibration(model.name, batch_size, float(np.mean(times)))
    _CALIBRATIONS[(model.name, batch_size)] = cal
    return cal


def project_inference(model_name: str, n_drugs: int, batch_size: int = 2**12,
                      calibration: InferenceCalibration | float | None = None) -> float:
    """Estimated seconds to score all ``n_drugs**2`` ordered pairs in one context."""
    if calibration is None:
        from .models import model_class

        calibration = _CALIBRATIONS.get((model_class(model_name).name, batch_size))
        if calibration is None:
            raise MissingCalibration(
                f"no inference timing for {model_name!r} at batch size {batch_size}; run calibrate_inference first"
            )
    spb = calibration.seconds_per_batch if isinstance(calibration, InferenceCalibration) else float(calibration)
    return (n_drugs**2 / batch_size) * spb


def all_pairs(drug_ids: Sequence[str], context_id: str, tile: int | None = None) -> LabeledTriples:
    """Every ordered pair (self-pairs included) of ``drug_ids`` in one context, label 0.

    Pairs come row by row, or in ``tile x tile`` blocks when ``tile`` is
    given. With ``tile = isqrt(batch_size)`` each batch touches at most
    ``2 * tile`` distinct drugs, so per-batch encoder cost stays flat as the
    drug count grows.
    """
    ids = np.array(list(drug_ids), dtype=object)
    n = len(ids)
    rows, cols = np.divmod(np.arange(n * n), n)
    if tile:
        key = np.lexsort((cols, rows, cols // tile, rows // tile))
        rows, cols = rows[key], cols[key]
    return LabeledTriples(ids[rows], ids[cols], np.full(n * n, context_id, dtype=object), np.zeros(n * n))


def time_all_pairs(model: PairScorer, drug_set: DrugFeatureSet, context_set: ContextFeatureSet | None,
                   drug_ids: Sequence[str], context_id: str, batch_size: int = 2**12, repeats: int = 1) -> float:
    """Measured seconds (best of ``repeats``) to score every ordered pair of ``drug_ids``, tiled by batch."""
    triples = all_pairs(drug_ids, context_id, tile=math.isqrt(batch_size))
    gen = generator_for(model, triples, drug_set, context_set, batch_size, shuffle_seed=None)
    best = math.inf
    # like timeit: keep collector pauses out of the measurement
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            start = time.perf_counter()
            predict(model, gen)
            best = min(best, time.perf_counter() - start)
    finally:
        if enabled:
            gc.enable()
    return best


# --------------------------------------------------------------------------
# CSV emitters


def write_metrics_csv(result: ProtocolResult | Mapping[str, tuple[float, float]], path) -> None:
    summary = result.summary() if isinstance(result, ProtocolResult) else result
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "stderr"])
        for metric, (mean, stderr) in summary.items():
            writer.writerow([metric, repr(mean), repr(stderr)])


def write_benchmark_csv(records: Sequence[BenchmarkRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "batch_size", "n_pairs", "seconds"])
        for r in records:
            writer.writerow([r.model, r.batch_size, r.n_pairs, repr(r.seconds)])


def write_projection_csv(rows: Sequence[tuple[str, int, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n_drugs", "seconds"])
        for model, n, seconds in rows:
            writer.writerow([model, n, repr(seconds)])
