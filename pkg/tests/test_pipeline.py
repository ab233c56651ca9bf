import csv
import math

import numpy as np
import pytest

from pairscore.errors import MissingCalibration, NonFiniteLoss, TooFewRepeats
from pairscore.models import build_model
from pairscore.neuro import OptimizerConfig
from pairscore.pipeline import (
    InferenceCalibration,
    all_pairs,
    batch_size_sweep,
    benchmark_epoch,
    calibrate_inference,
    evaluate_protocol,
    generator_for,
    predict,
    project_inference,
    train,
    write_benchmark_csv,
    write_metrics_csv,
    write_projection_csv,
)
from pairscore.synthetic import make_workload, planted_signal_dataset


@pytest.fixture(scope="module")
def planted():
    return planted_signal_dataset(128, seed=1)


def small_cfg(**kw):
    base = dict(batch_size=32, epochs=3)
    base.update(kw)
    return OptimizerConfig(**base)


def test_zero_epochs_leaves_parameters(planted):
    m = build_model("deepsynergy", planted.contexts.width)
    before = m.params.state()
    gen = generator_for(m, planted.triples, planted.drugs, planted.contexts, 32, shuffle_seed=0)
    _, trace = train(m, gen, small_cfg(epochs=0))
    assert trace == []
    for k, v in m.params.state().items():
        assert np.array_equal(v, before[k])


@pytest.mark.parametrize("name", ["deepsynergy", "epgcnds"])
def test_training_deterministic(name, planted):
    runs = []
    for _ in range(2):
        m = build_model(name, planted.contexts.width, seed=4)
        gen = generator_for(m, planted.triples, planted.drugs, planted.contexts, 32, shuffle_seed=4)
        _, trace = train(m, gen, small_cfg(), seed=4)
        runs.append(([t.batch_means for t in trace], m.params.state()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_epoch_cost_is_sum_of_batch_costs(planted):
    m = build_model("deepddi", 1)
    gen = generator_for(m, planted.triples, planted.drugs, None, 50, shuffle_seed=0)
    _, trace = train(m, gen, small_cfg(epochs=2, batch_size=50))
    for rec in trace:
        assert rec.batch_sizes == [50, 50, 28]
        assert rec.cost == pytest.approx(sum(b * l for b, l in zip(rec.batch_sizes, rec.batch_means)), rel=1e-15)
        assert rec.mean == pytest.approx(rec.cost / 128, rel=1e-15)
        assert rec.cost >= 0


def test_separable_training_lowers_loss():
    data = planted_signal_dataset(128, seed=3)
    m = build_model("deepsynergy", data.contexts.width, seed=0)
    gen = generator_for(m, data.triples, data.drugs, data.contexts, 64, shuffle_seed=0)
    _, trace = train(m, gen, OptimizerConfig(batch_size=64, epochs=200), seed=0)
    assert len(trace) == 200
    assert trace[-1].mean < trace[0].mean


def test_non_finite_loss_reports_position(planted):
    m = build_model("deepddi", 1)
    m.params["head.0.bias"].data[:] = np.nan
    gen = generator_for(m, planted.triples, planted.drugs, None, 32, shuffle_seed=0)
    with pytest.raises(NonFiniteLoss) as info:
        train(m, gen, small_cfg())
    assert (info.value.epoch, info.value.batch) == (0, 0)


def test_predict_covers_every_row_in_order(planted):
    m = build_model("matchmaker", planted.contexts.width)
    gen = generator_for(m, planted.triples, planted.drugs, planted.contexts, 30, shuffle_seed=None)
    p = predict(m, gen)
    assert len(p) == 128
    np.testing.assert_array_equal(p.index, np.arange(128))


def test_protocol_determinism(planted, tmp_path):
    cfg = small_cfg()
    a = evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepsynergy", n_repeats=3, base_seed=5, cfg=cfg)
    b = evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepsynergy", n_repeats=3, base_seed=5, cfg=cfg)
    assert a.seeds == [5, 6, 7]
    assert a.reports == b.reports
    assert a.summary() == b.summary()
    for pa, pb in zip(a.predictions, b.predictions):
        assert np.array_equal(pa.values, pb.values)
    write_metrics_csv(a, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["metric", "mean", "stderr"]
    assert [r[0] for r in rows[1:]] == ["auroc", "aupr", "f1"]
    assert float(rows[1][1]) == a.summary()["auroc"][0]


def test_protocol_standard_error(planted):
    res = evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepddi", n_repeats=3, cfg=small_cfg())
    values = np.array([r.auroc for r in res.reports])
    mean, se = res.summary()["auroc"]
    assert mean == pytest.approx(values.mean())
    assert se == pytest.approx(values.std(ddof=1) / math.sqrt(3))


def test_protocol_parallel_matches_serial(planted):
    cfg = small_cfg(epochs=2)
    a = evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepddi", n_repeats=2, cfg=cfg)
    b = evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepddi", n_repeats=2, cfg=cfg, jobs=2)
    assert a.reports == b.reports


def test_protocol_needs_two_repeats(planted):
    with pytest.raises(TooFewRepeats):
        evaluate_protocol(planted.drugs, planted.contexts, planted.triples, "deepddi", n_repeats=1)


# --------------------------------------------------------------------------
# timing


def test_benchmark_sweep(tmp_path):
    w = make_workload(256, n_drugs=30, n_contexts=4, context_width=4, seed=0)
    records = batch_size_sweep("deepddi", batch_sizes=[16, 32, 64, 128, 256], n_pairs=256, repeats=1, workload=w)
    assert [r.batch_size for r in records] == [16, 32, 64, 128, 256]
    assert all(r.seconds > 0 and r.repeats == 1 and r.n_pairs == 256 for r in records)
    write_benchmark_csv(records, tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["model", "batch_size", "n_pairs", "seconds"] and len(rows) == 6
    with pytest.raises(ValueError):
        benchmark_epoch("deepddi", 256, 32, repeats=0, workload=w)


def test_projection_square_law(tmp_path):
    cal = InferenceCalibration("deepddi", 4096, 0.25)
    assert project_inference("deepddi", 64, calibration=cal) == 0.25
    for n in (512, 1024, 2048):
        assert project_inference("deepddi", 2 * n, calibration=cal) == 4 * project_inference("deepddi", n, calibration=cal)
    assert project_inference("deepddi", 100, batch_size=100, calibration=0.5) == 50.0
    write_projection_csv([("deepddi", n, project_inference("deepddi", n, calibration=cal)) for n in (512, 1024)],
                         tmp_path / "p.csv")
    assert len(list(csv.reader(open(tmp_path / "p.csv")))) == 3


def test_projection_needs_calibration():
    with pytest.raises(MissingCalibration):
        project_inference("matchmaker", 512, batch_size=12345)
    w = make_workload(64, n_drugs=20, n_contexts=2, context_width=2)
    cal = calibrate_inference("matchmaker", batch_size=16, n_batches=2, repeats=1, workload=w)
    assert cal.seconds_per_batch > 0
    assert project_inference("matchmaker", 16, batch_size=16) == pytest.approx(16 * cal.seconds_per_batch)


def test_all_pairs():
    y = all_pairs(["a", "b", "c"], "x")
    assert len(y) == 9
    assert list(y)[1] == ("a", "b", "x", 0.0)
    assert set(y.context) == {"x"}


def test_all_pairs_tiled():
    ids = [f"d{k}" for k in range(6)]
    plain, tiled = all_pairs(ids, "x"), all_pairs(ids, "x", tile=2)
    assert sorted(plain.keys()) == sorted(tiled.keys())
    # each run of 4 rows is one 2 x 2 block: at most 4 distinct drugs
    for start in range(0, 36, 4):
        block = tiled.subset(np.arange(start, start + 4))
        assert len(set(block.drug_1)) == 2 and len(set(block.drug_2)) == 2
