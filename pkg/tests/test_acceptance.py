"""The ten acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``criterion N: PASS|FAIL`` line; the lines are
repeated in the terminal summary. Criterion 7 times full training epochs and
takes a few minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from oracles import MOLECULES, aupr_sweep, auroc_pairs, environment_count_bounds, gradient_errors
from pairscore.batch import make_generator, pack_graphs
from pairscore.dataset import ContextFeatureSet, DrugFeatureSet, DrugRecord, featurize, train_test_split
from pairscore.metrics import aupr, auroc
from pairscore.models import MODEL_NAMES, build_model, load_model
from pairscore.molio import atom_features, bond_features, morgan_fingerprint, parse_smiles, permute_atoms
from pairscore.neuro import (
    OptimizerConfig,
    Parameter,
    Tensor,
    add,
    backward,
    bce_loss,
    concat,
    dropout,
    gcn_conv,
    linear,
    mean_pool,
    relu,
    sigmoid,
    take_rows,
)
from pairscore.pipeline import batch_size_sweep, evaluate_protocol, generator_for, predict, time_all_pairs, train
from pairscore.synthetic import make_workload, planted_signal_dataset, random_triples

GRAD_TOL = 1e-4


def toy_set():
    drugs = DrugFeatureSet.from_smiles({f"M{k:02d}": s for k, s in enumerate(MOLECULES)})
    contexts = ContextFeatureSet({f"c{k}": np.random.default_rng(k).normal(size=6) for k in range(3)})
    return drugs, contexts


# --------------------------------------------------------------------------
# 1. gradients


def _head(t: Tensor, seed: int) -> Tensor:
    rng = np.random.default_rng(seed)
    r = Tensor(0.3 / np.sqrt(t.shape[1]) * rng.normal(size=(t.shape[1], 1)))
    y = rng.integers(0, 2, size=t.shape[0]).astype(float)
    return bce_loss(sigmoid(linear(t, r)), y)


def _op_cases():
    rng = np.random.default_rng(0)

    def param(*shape, margin=0.0):
        a = rng.normal(size=shape)
        return Parameter(np.where(a >= 0, a + margin, a - margin))

    pg = pack_graphs([(r.graph, r.atom_features, r.bond_features) for r in map(featurize, ["CCO", "c1ccccc1", "CC(=O)N"])])
    cases = {}

    x, W, b = param(5, 4), param(4, 3), param(3)
    cases["linear"] = ({"x": x, "W": W, "b": b}, lambda: _head(linear(x, W, b), 1))
    x2 = param(6, 4, margin=0.05)
    cases["relu"] = ({"x": x2}, lambda: _head(relu(x2), 2))
    x3 = param(6, 4)
    cases["sigmoid"] = ({"x": x3}, lambda: _head(sigmoid(x3), 3))
    x4 = param(6, 5)
    cases["dropout"] = ({"x": x4}, lambda: _head(dropout(x4, 0.5, True, rng=np.random.default_rng(7)), 4))
    a, c = param(4, 3), param(4, 2)
    cases["concat"] = ({"a": a, "c": c}, lambda: _head(concat([a, c], axis=1), 5))
    p, q = param(4, 3), param(4, 3)
    cases["add"] = ({"p": p, "q": q}, lambda: _head(add(p, q), 6))
    H, Wg = param(pg.n_nodes, 5), param(5, 4)
    cases["gcn_conv"] = ({"H": H, "W": Wg}, lambda: _head(gcn_conv(pg, H, Wg), 7))
    Hp = param(pg.n_nodes, 4)
    cases["mean_pool"] = ({"H": Hp}, lambda: _head(mean_pool(pg, Hp), 8))
    xt = param(4, 3)
    idx = np.array([2, 0, 2, 3, 3, 1])
    cases["take_rows"] = ({"x": xt}, lambda: _head(take_rows(xt, idx), 9))
    logits = param(7, 1)
    y = rng.integers(0, 2, size=7).astype(float)
    cases["bce_loss"] = ({"z": logits}, lambda: bce_loss(sigmoid(logits), y))
    return cases


def test_criterion_1_gradients(criterion):
    start = time.perf_counter()
    worst = {}
    for name, (params, build) in _op_cases().items():
        errors = gradient_errors(params, build, lambda loss, p=params: backward(loss, p))
        worst[name] = max(errors.values())
    drugs, contexts = toy_set()
    triples = random_triples(sorted(drugs), sorted(contexts), 4, seed=1)
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    for name in MODEL_NAMES:
        m = build_model(name, contexts.width, seed=11)
        b = next(iter(generator_for(m, triples, drugs, contexts, 4, shuffle_seed=None).epoch(0)))
        # a fixed dropout mask per evaluation keeps the loss a smooth function of the parameters
        errors = gradient_errors(
            m.params,
            lambda: bce_loss(m.forward(b, training=True, rng=np.random.default_rng(3)), labels),
            lambda loss: backward(loss, m.params),
            h=1e-6,
            max_entries=40,
        )
        worst[name] = max(errors.values())
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = all(v <= GRAD_TOL for v in worst.values()) and elapsed < 30
    criterion(1, ok, f"{len(worst)} checks, max rel err {worst[top]:.2e} ({top}) <= 1e-4, {elapsed:.1f} s < 30 s")


# --------------------------------------------------------------------------
# 2. planted signal


@pytest.mark.slow
def test_criterion_2_planted_signal(criterion):
    data = planted_signal_dataset(512, n_drugs=20, n_contexts=2, seed=0)
    train_set, test_set = train_test_split(data.triples, 0.8, seed=0)
    cfg = OptimizerConfig(batch_size=64, epochs=200)
    results, ok = [], True
    for name in MODEL_NAMES:
        start = time.perf_counter()
        m = build_model(name, data.contexts.width, dropout=cfg.dropout_rate, seed=0)
        train(m, generator_for(m, train_set, data.drugs, data.contexts, 64, shuffle_seed=0), cfg, seed=0)
        scores = []
        for part in (train_set, test_set):
            p = predict(m, generator_for(m, part, data.drugs, data.contexts, 64, shuffle_seed=None))
            scores.append(auroc(p.values, part.label[p.index]))
        elapsed = time.perf_counter() - start
        ok &= scores[0] >= 0.95 and scores[1] >= 0.85 and elapsed < 120
        results.append(f"{name} {scores[0]:.3f}/{scores[1]:.3f} {elapsed:.0f}s")
    criterion(2, ok, "train/test AUROC: " + ", ".join(results))


# --------------------------------------------------------------------------
# 3. metric oracles


def test_criterion_3_metric_oracles(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        s = rng.integers(0, int(rng.integers(2, 12)), size=n) / 10.0
        y = rng.integers(0, 2, size=n)
        y[0], y[-1] = 1, 0
        y = rng.permutation(y)
        worst = max(worst, abs(auroc(s, y) - auroc_pairs(s, y)), abs(aupr(s, y) - aupr_sweep(s, y)))
    elapsed = time.perf_counter() - start
    criterion(3, worst <= 1e-12 and elapsed < 5, f"1000 instances, max |diff| {worst:.1e} <= 1e-12, {elapsed:.2f} s < 5 s")


# --------------------------------------------------------------------------
# 4. fingerprints


def test_criterion_4_fingerprint_oracle(criterion):
    mismatches, folded, relabel_fail = [], 0, []
    rng = np.random.default_rng(0)
    for smiles in MOLECULES:
        g = parse_smiles(smiles)
        lo, hi = environment_count_bounds(g)
        # at 2^24 bits folding collisions are negligible, so popcount counts environments
        wide = morgan_fingerprint(g, n_bits=2**24).popcount
        if not lo <= wide <= hi:
            mismatches.append(smiles)
        folded += morgan_fingerprint(g).popcount < wide
        for _ in range(5):
            h = permute_atoms(g, rng.permutation(g.n_atoms))
            if morgan_fingerprint(h) != morgan_fingerprint(g):
                relabel_fail.append(smiles)
    same = morgan_fingerprint(parse_smiles("CCO")) == morgan_fingerprint(parse_smiles("OCC"))
    ok = not mismatches and not relabel_fail and same
    criterion(4, ok, f"{50 - len(mismatches)}/50 popcounts match enumeration ({folded} lose bits to 256-bit folding), "
                     f"CCO==OCC {same}, relabelings identical {not relabel_fail}")


# --------------------------------------------------------------------------
# 5. protocol determinism


@pytest.mark.slow
def test_criterion_5_protocol_determinism(criterion):
    data = planted_signal_dataset(512, seed=4)
    same = []
    for name in MODEL_NAMES:
        runs = [evaluate_protocol(data.drugs, data.contexts, data.triples, name, n_repeats=10, base_seed=17) for _ in range(2)]
        same.append(runs[0].reports == runs[1].reports and repr(runs[0].summary()) == repr(runs[1].summary()))
    criterion(5, all(same), f"10-repeat protocol twice per model, identical reports for {sum(same)}/5 models")


# --------------------------------------------------------------------------
# 6. epoch coverage


def test_criterion_6_epoch_coverage(criterion):
    drugs = DrugFeatureSet.from_smiles({f"M{k:02d}": s for k, s in enumerate(MOLECULES[:15])})
    ctx = ContextFeatureSet({"a": [1.0], "b": [0.0]})
    rng = np.random.default_rng(6)
    good = 0
    for k in range(100):
        n = int(rng.integers(1, 400))
        bs = int(rng.integers(1, 2 * n + 2))
        y = random_triples(sorted(drugs), sorted(ctx), n, seed=k)
        gen = make_generator(y, drugs, ctx, bs, shuffle_seed=k)
        ok = True
        for epoch in range(2):
            batches = list(gen.epoch(epoch))
            seen = np.sort(np.concatenate([b.index for b in batches]))
            ok &= len(batches) == math.ceil(n / bs) and np.array_equal(seen, np.arange(n))
        good += ok
    criterion(6, good == 100, f"{good}/100 (|Y|, B) combinations emit every triple once in ceil(|Y|/B) batches")


# --------------------------------------------------------------------------
# 7. runtime trend


@pytest.mark.slow
def test_criterion_7_runtime_trend(criterion):
    workload = make_workload(2**15, seed=0)
    sizes = [2**p for p in range(8, 13)]
    secs = {}
    for name in ("deepsynergy", "epgcnds"):
        records = batch_size_sweep(name, sizes, n_pairs=2**15, repeats=10, workload=workload)
        secs[name] = [r.seconds for r in records]
    ff, gcn = secs["deepsynergy"], secs["epgcnds"]
    monotone = all(all(a >= b for a, b in zip(s, s[1:])) for s in (ff, gcn))
    slower = all(g > f for g, f in zip(gcn, ff))
    table = "; ".join(f"B={b}: {f:.2f}s vs {g:.2f}s" for b, f, g in zip(sizes, ff, gcn))
    criterion(7, monotone and slower, f"non-increasing {monotone}, GCN slower everywhere {slower} [{table}]")


# --------------------------------------------------------------------------
# 8. inference scaling


@pytest.mark.slow
def test_criterion_8_inference_scaling(criterion):
    workload = make_workload(16, n_drugs=256, n_contexts=4, context_width=4, seed=0)
    ids = sorted(workload.drugs)
    ns = np.array([64, 128, 256])
    fits, ok = [], True
    for name in MODEL_NAMES:
        m = build_model(name, workload.contexts.width)
        # sizes are timed in turn, best of 7, so machine drift hits all of them alike
        t = np.full(len(ns), np.inf)
        for _ in range(7):
            for k, n in enumerate(ns):
                t[k] = min(t[k], time_all_pairs(m, workload.drugs, workload.contexts, ids[:n], "C000"))
        x = ns.astype(float) ** 2
        c = float(x @ t / (x @ x))
        r2 = 1.0 - float(np.sum((t - c * x) ** 2) / np.sum((t - t.mean()) ** 2))
        ok &= r2 >= 0.98
        fits.append(f"{name} {r2:.4f}")
    criterion(8, ok, "t = c n^2 fit R^2 >= 0.98: " + ", ".join(fits))


# --------------------------------------------------------------------------
# 9. invariants


def _relabeled(drugs, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for d, rec in drugs.items():
        g = permute_atoms(rec.graph, rng.permutation(rec.graph.n_atoms))
        out[d] = DrugRecord(rec.smiles, morgan_fingerprint(g), g, atom_features(g), bond_features(g))
    return DrugFeatureSet(out)


def test_criterion_9_invariants(criterion):
    drugs, contexts = toy_set()
    pairs = random_triples(sorted(drugs), sorted(contexts), 100, seed=9)
    m = build_model("epgcnds", contexts.width, seed=2)
    b = next(iter(generator_for(m, pairs, drugs, contexts, 100, shuffle_seed=None).epoch(0)))
    swap_equal = bool(np.array_equal(m.score(b).values, m.score(b.swapped()).values))
    delta = 0.0
    for name in ("epgcnds", "deepdds"):
        m = build_model(name, contexts.width, seed=3)
        base = predict(m, generator_for(m, pairs, drugs, contexts, 100, shuffle_seed=None)).values
        for seed in range(5):
            moved = predict(m, generator_for(m, pairs, _relabeled(drugs, seed), contexts, 100, shuffle_seed=None)).values
            delta = max(delta, float(np.max(np.abs(moved - base))))
    criterion(9, swap_equal and delta <= 1e-10,
              f"EPGCN-DS swap equality on 100 pairs {swap_equal}, relabeling max |d score| {delta:.1e} <= 1e-10")


# --------------------------------------------------------------------------
# 10. checkpoint round trip


def test_criterion_10_checkpoint_round_trip(criterion, tmp_path):
    drugs, contexts = toy_set()
    triples = random_triples(sorted(drugs), sorted(contexts), 1000, seed=10)
    identical = 0
    for name in MODEL_NAMES:
        m = build_model(name, contexts.width, seed=5)
        train(m, generator_for(m, triples, drugs, contexts, 256, shuffle_seed=0), OptimizerConfig(epochs=1, batch_size=256))
        m.save(tmp_path / f"{name}.psck")
        before = predict(m, generator_for(m, triples, drugs, contexts, 256, shuffle_seed=None)).values
        m2 = load_model(tmp_path / f"{name}.psck")
        after = predict(m2, generator_for(m2, triples, drugs, contexts, 256, shuffle_seed=None)).values
        identical += bool(np.array_equal(before, after))
    criterion(10, identical == 5, f"save/load predictions bit-identical on 1000 triples for {identical}/5 models")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
