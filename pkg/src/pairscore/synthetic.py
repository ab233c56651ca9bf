"""Synthetic drugs, contexts and triples for tests, demos and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ContextFeatureSet, DrugFeatureSet, LabeledTriples

__all__ = [
    "random_smiles",
    "random_drug_set",
    "random_context_set",
    "random_triples",
    "PlantedSignal",
    "planted_signal_dataset",
    "Workload",
    "make_workload",
]

# each fragment bonds to the previous one through its first atom and to the
# next one through its last atom
_FRAGMENTS = (
    "C", "CC", "N", "O", "C(=O)", "C(C)", "c1ccccc1", "C1CCCCC1", "C1CCNCC1",
    "S", "C(F)", "C(Cl)", "c1ccncc1", "C#C", "C=C", "N(C)", "c1ccsc1", "C(O)",
    "P(=O)(O)", "C(Br)", "B(O)",
)
_CAPS = ("", "", "F", "Cl", "O", "N", "C(=O)O", "I")


def random_smiles(rng: np.random.Generator, min_fragments: int = 1, max_fragments: int = 4) -> str:
    k = int(rng.integers(min_fragments, max_fragments + 1))
    parts = [_FRAGMENTS[int(i)] for i in rng.integers(0, len(_FRAGMENTS), size=k)]
    parts.append(_CAPS[int(rng.integers(0, len(_CAPS)))])
    return "".join(parts)


def random_drug_set(n_drugs: int, seed: int = 0, min_fragments: int = 1, max_fragments: int = 4,
                    n_bits: int = 256) -> DrugFeatureSet:
    """``n_drugs`` distinct random molecules named ``D0000``, ``D0001``, ..."""
    rng = np.random.default_rng(seed)
    smiles: dict[str, str] = {}
    seen = set()
    while len(smiles) < n_drugs:
        s = random_smiles(rng, min_fragments, max_fragments)
        if s in seen:
            continue
        seen.add(s)
        smiles[f"D{len(smiles):04d}"] = s
    return DrugFeatureSet.from_smiles(smiles, n_bits=n_bits)


def random_context_set(n_contexts: int, width: int, seed: int = 0) -> ContextFeatureSet:
    rng = np.random.default_rng(seed)
    return ContextFeatureSet({f"C{k:03d}": rng.normal(size=width) for k in range(n_contexts)})


def random_triples(drug_ids, context_ids, n: int, seed: int = 0, allow_self: bool = False) -> LabeledTriples:
    """``n`` distinct random ``(d, d', c)`` rows with coin-flip labels."""
    drug_ids, context_ids = list(drug_ids), list(context_ids)
    space = len(drug_ids) * (len(drug_ids) - (0 if allow_self else 1)) * len(context_ids)
    if n > space:
        raise ValueError(f"cannot draw {n} distinct triples from a space of {space}")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int, int]] = set()
    rows = []
    while len(rows) < n:
        a, b, c = (int(v) for v in rng.integers(0, [len(drug_ids), len(drug_ids), len(context_ids)]))
        if (a == b and not allow_self) or (a, b, c) in seen:
            continue
        seen.add((a, b, c))
        rows.append((drug_ids[a], drug_ids[b], context_ids[c], float(rng.integers(0, 2))))
    return LabeledTriples.from_records(rows)


@dataclass
class PlantedSignal:
    drugs: DrugFeatureSet
    contexts: ContextFeatureSet
    triples: LabeledTriples
    bit_a: int
    bit_b: int
    context_on: str


def _closest_bit(fps: np.ndarray, target: float, exclude=()) -> int:
    freq = fps.mean(axis=0)
    order = np.argsort(np.abs(freq - target), kind="mergesort")
    for b in order:
        if int(b) not in exclude:
            return int(b)
    raise ValueError("no usable fingerprint bit")


def planted_signal_dataset(n_triples: int = 512, n_drugs: int = 20, n_contexts: int = 2, context_width: int = 8,
                           seed: int = 0) -> PlantedSignal:
    """Triples whose label is a fixed rule over two fingerprint bits and the context.

    With ``a(d)``, ``b(d)`` the two chosen bits of drug ``d``::

        label = a(d) or a(d')                          in every context
                or (b(d) and b(d'))                    only in ``context_on``

    The rule is symmetric in the drug pair. Bit ``a`` is picked with a
    frequency near 0.4 among the drugs and bit ``b`` near 0.3, so the
    context-dependent cell is a small share of all rows.
    """
    drugs = random_drug_set(n_drugs, seed=seed, min_fragments=2, max_fragments=4)
    ids = sorted(drugs)
    fps = np.stack([drugs[d].fingerprint.bits for d in ids]).astype(np.float64)
    bit_a = _closest_bit(fps, 0.4)
    bit_b = _closest_bit(fps, 0.3, exclude={bit_a})
    a = {d: bool(drugs[d].fingerprint.bits[bit_a]) for d in ids}
    b = {d: bool(drugs[d].fingerprint.bits[bit_b]) for d in ids}
    contexts = random_context_set(n_contexts, context_width, seed=seed + 1)
    ctx_ids = sorted(contexts)
    context_on = ctx_ids[-1]
    unlabeled = random_triples(ids, ctx_ids, n_triples, seed=seed + 2)
    rows = []
    for d1, d2, c, _ in unlabeled:
        label = a[d1] or a[d2] or (c == context_on and b[d1] and b[d2])
        rows.append((d1, d2, c, float(label)))
    return PlantedSignal(drugs, contexts, LabeledTriples.from_records(rows), bit_a, bit_b, context_on)


@dataclass
class Workload:
    drugs: DrugFeatureSet
    contexts: ContextFeatureSet
    triples: LabeledTriples


def make_workload(n_pairs: int, n_drugs: int = 1706, n_contexts: int = 86, context_width: int = 86,
                  seed: int = 0) -> Workload:
    """Random drugs, contexts and ``n_pairs`` distinct triples for timing runs.

    Default cardinalities follow the DrugBank DDI interaction set (1706 drugs,
    86 interaction types); contexts are one-hot rows when
    ``context_width == n_contexts``.
    """
    drugs = random_drug_set(n_drugs, seed=seed, min_fragments=2, max_fragments=6)
    if context_width == n_contexts:
        contexts = ContextFeatureSet({f"C{k:03d}": np.eye(n_contexts)[k] for k in range(n_contexts)})
    else:
        contexts = random_context_set(n_contexts, context_width, seed=seed + 1)
    triples = random_triples(sorted(drugs), sorted(contexts), n_pairs, seed=seed + 2)
    return Workload(drugs, contexts, triples)
