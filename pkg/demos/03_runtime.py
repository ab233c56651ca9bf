#!/usr/bin/env python3
"""Epoch time against batch size, and the all-pairs inference projection.

Scaled down so it finishes in about a minute on one core; the CLI's
``benchmark`` command runs the full-size version.

Run: python3 demos/03_runtime.py
"""

from pairscore.models import build_model
from pairscore.pipeline import batch_size_sweep, calibrate_inference, project_inference, time_all_pairs
from pairscore.synthetic import make_workload

workload = make_workload(2**13, seed=0)
print(f"workload: {len(workload.triples)} triples over {len(workload.drugs)} drugs")

# Larger batches amortize per-batch overhead, so an epoch gets cheaper.
for name in ("deepsynergy", "epgcnds"):
    records = batch_size_sweep(name, [2**8, 2**10, 2**12], n_pairs=2**13, repeats=2, workload=workload)
    print(name, "  ".join(f"B={r.batch_size}: {r.seconds:.2f}s" for r in records))

# Scoring every pair of n drugs takes n^2 rows, so time grows with n^2.
model = build_model("deepsynergy", workload.contexts.width)
ids = sorted(workload.drugs)
context = sorted(workload.contexts)[0]
for n in (64, 128, 256):
    t = time_all_pairs(model, workload.drugs, workload.contexts, ids[:n], context, repeats=3)
    print(f"all pairs of {n:3d} drugs: {t:.3f}s")

# Projection from a measured per-batch time, out to thousands of drugs.
cal = calibrate_inference("deepsynergy", batch_size=2**12, n_batches=2, workload=workload)
for n in (2**9, 2**10, 2**11, 2**12):
    print(f"projected {n:5d} drugs: {project_inference('deepsynergy', n, calibration=cal):8.1f}s")
