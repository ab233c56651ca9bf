"""Drug and context feature sets, labeled triples, and their CSV loaders.

File formats (UTF-8, header row required):

* drugs: ``drug_id,smiles``
* contexts: ``context_id,f_1,...,f_k``
* triples: ``drug_1,drug_2,context,label``
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    DegenerateSplit,
    DuplicateKey,
    DuplicateTriple,
    EmptyDataset,
    FileNotFound,
    InsufficientSpace,
    LabelOutOfRange,
    MalformedHeader,
    MalformedRow,
    RaggedRows,
    SmilesError,
)
from .molio import (
    Fingerprint,
    MolecularGraph,
    atom_features,
    bond_features,
    morgan_fingerprint,
    parse_smiles,
)

__all__ = [
    "DrugRecord",
    "DrugFeatureSet",
    "ContextFeatureSet",
    "LabeledTriples",
    "featurize",
    "load_drug_set",
    "load_context_set",
    "load_triples",
    "train_test_split",
    "sample_negatives",
]

log = logging.getLogger(__name__)

DRUG_HEADER = ["drug_id", "smiles"]
TRIPLE_HEADER = ["drug_1", "drug_2", "context", "label"]


@dataclass(frozen=True)
class DrugRecord:
    smiles: str
    fingerprint: Fingerprint
    graph: MolecularGraph
    atom_features: np.ndarray
    bond_features: np.ndarray


def featurize(smiles: str, radius: int = 2, n_bits: int = 256) -> DrugRecord:
    graph = parse_smiles(smiles)
    return DrugRecord(
        smiles=smiles,
        fingerprint=morgan_fingerprint(graph, radius=radius, n_bits=n_bits),
        graph=graph,
        atom_features=atom_features(graph),
        bond_features=bond_features(graph),
    )


class DrugFeatureSet(Mapping[str, DrugRecord]):
    """Drug id to featurized drug record.

    ``dropped`` maps ids whose SMILES failed to parse to the error message.
    """

    def __init__(self, records: Mapping[str, DrugRecord], dropped: Mapping[str, str] | None = None):
        self._records = dict(records)
        self.dropped = dict(dropped or {})
        widths = {len(r.fingerprint) for r in self._records.values()}
        if len(widths) > 1:
            raise RaggedRows(f"fingerprints of different lengths: {sorted(widths)}")
        self.n_bits = widths.pop() if widths else 0

    @classmethod
    def from_smiles(cls, smiles: Mapping[str, str] | Iterable[tuple[str, str]], radius: int = 2, n_bits: int = 256):
        """Featurize ``(drug_id, smiles)`` pairs; unparseable SMILES are dropped."""
        items = smiles.items() if isinstance(smiles, Mapping) else smiles
        records, dropped = {}, {}
        for drug_id, text in items:
            if drug_id in records or drug_id in dropped:
                raise DuplicateKey(f"duplicate drug id {drug_id!r}")
            try:
                records[drug_id] = featurize(text, radius=radius, n_bits=n_bits)
            except SmilesError as exc:
                dropped[drug_id] = f"{type(exc).__name__}: {exc}"
        return cls(records, dropped)

    def __getitem__(self, drug_id: str) -> DrugRecord:
        return self._records[drug_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def drop_count(self) -> int:
        return len(self.dropped)

    def __eq__(self, other):
        if not isinstance(other, DrugFeatureSet):
            return NotImplemented
        if self._records.keys() != other._records.keys() or self.dropped != other.dropped:
            return False
        return all(
            a.smiles == b.smiles and a.fingerprint == b.fingerprint and a.graph == b.graph
            for a, b in ((self[k], other[k]) for k in self)
        )


class ContextFeatureSet(Mapping[str, np.ndarray]):
    """Context id to a fixed-width float vector."""

    def __init__(self, vectors: Mapping[str, Iterable[float]]):
        self._vectors = {}
        width = None
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64).reshape(-1)
            if width is None:
                width = arr.shape[0]
            elif arr.shape[0] != width:
                raise RaggedRows(f"context {key!r} has {arr.shape[0]} features, expected {width}")
            arr.setflags(write=False)
            self._vectors[key] = arr
        if width == 0:
            raise RaggedRows("context vectors must have at least one feature")
        self.width = width or 0

    def __getitem__(self, context_id: str) -> np.ndarray:
        return self._vectors[context_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._vectors)

    def __len__(self) -> int:
        return len(self._vectors)

    def __eq__(self, other):
        if not isinstance(other, ContextFeatureSet):
            return NotImplemented
        return self._vectors.keys() == other._vectors.keys() and all(
            np.array_equal(self[k], other[k]) for k in self
        )


class LabeledTriples:
    """Columnar ``(drug_1, drug_2, context, label)`` records."""

    def __init__(self, drug_1, drug_2, context, label):
        self.drug_1 = np.asarray(drug_1, dtype=object).reshape(-1)
        self.drug_2 = np.asarray(drug_2, dtype=object).reshape(-1)
        self.context = np.asarray(context, dtype=object).reshape(-1)
        self.label = np.asarray(label, dtype=np.float64).reshape(-1)
        n = self.label.shape[0]
        if not (self.drug_1.shape[0] == self.drug_2.shape[0] == self.context.shape[0] == n):
            raise RaggedRows("triple columns have different lengths")
        bad = ~((self.label >= 0.0) & (self.label <= 1.0))
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise LabelOutOfRange(f"row {k}: label {self.label[k]!r} outside [0, 1]")
        seen = set()
        for k, key in enumerate(zip(self.drug_1, self.drug_2, self.context)):
            if key in seen:
                raise DuplicateTriple(f"row {k}: repeated triple {key}")
            seen.add(key)

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, str, float]]) -> "LabeledTriples":
        records = list(records)
        if not records:
            return cls([], [], [], [])
        d1, d2, c, y = zip(*records)
        return cls(d1, d2, c, y)

    def __len__(self) -> int:
        return int(self.label.shape[0])

    def __iter__(self) -> Iterator[tuple[str, str, str, float]]:
        return zip(self.drug_1, self.drug_2, self.context, self.label.tolist())

    def __eq__(self, other):
        if not isinstance(other, LabeledTriples):
            return NotImplemented
        return (
            list(self.drug_1) == list(other.drug_1)
            and list(self.drug_2) == list(other.drug_2)
            and list(self.context) == list(other.context)
            and np.array_equal(self.label, other.label)
        )

    def __repr__(self) -> str:
        return f"LabeledTriples(n={len(self)}, positives={int((self.label >= 0.5).sum())})"

    def subset(self, index) -> "LabeledTriples":
        index = np.asarray(index, dtype=np.int64)
        return LabeledTriples(self.drug_1[index], self.drug_2[index], self.context[index], self.label[index])

    def keys(self) -> list[tuple[str, str, str]]:
        return list(zip(self.drug_1, self.drug_2, self.context))

    def drugs(self) -> list[str]:
        return sorted(set(self.drug_1) | set(self.drug_2))

    def contexts(self) -> list[str]:
        return sorted(set(self.context))

    def train_test_split(self, train_size: float = 0.8, seed: int = 42):
        return train_test_split(self, train_size=train_size, seed=seed)

    def to_csv(self, path, predictions=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = list(TRIPLE_HEADER)
            if predictions is not None:
                header.append("prediction")
            writer.writerow(header)
            for k, (d1, d2, c, y) in enumerate(self):
                row = [d1, d2, c, _fmt(y)]
                if predictions is not None:
                    row.append(repr(float(predictions[k])))
                writer.writerow(row)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# --------------------------------------------------------------------------
# loading


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFound(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyDataset(f"{path}: file is empty")
    header = [cell.strip() for cell in rows[0]]
    return header, [[cell.strip() for cell in row] for row in rows[1:]]


def load_drug_set(path, radius: int = 2, n_bits: int = 256) -> DrugFeatureSet:
    """Load and featurize ``drug_id,smiles`` rows; bad SMILES are dropped and counted."""
    header, rows = _read_csv(path)
    if header != DRUG_HEADER:
        raise MalformedHeader(f"{path}: expected header {','.join(DRUG_HEADER)}, got {','.join(header)}")
    pairs = []
    for line, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise MalformedRow(f"{path}:{line}: expected 2 fields, got {len(row)}")
        pairs.append((row[0], row[1]))
    drugs = DrugFeatureSet.from_smiles(pairs, radius=radius, n_bits=n_bits)
    if drugs.dropped:
        log.warning("%s: dropped %d drug(s) with unparseable SMILES", path, drugs.drop_count)
    if not len(drugs):
        raise EmptyDataset(f"{path}: no drug survived SMILES parsing")
    return drugs


def load_context_set(path) -> ContextFeatureSet:
    header, rows = _read_csv(path)
    if len(header) < 2 or header[0] != "context_id":
        raise MalformedHeader(f"{path}: expected header context_id,f_1,...,f_k")
    if not rows:
        raise EmptyDataset(f"{path}: no context rows")
    width = len(header) - 1
    vectors = {}
    for line, row in enumerate(rows, start=2):
        if len(row) - 1 != width:
            raise RaggedRows(f"{path}:{line}: {len(row) - 1} features, expected {width}")
        if row[0] in vectors:
            raise DuplicateKey(f"{path}:{line}: duplicate context id {row[0]!r}")
        try:
            vectors[row[0]] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise MalformedRow(f"{path}:{line}: {exc}") from None
    return ContextFeatureSet(vectors)


def load_triples(path) -> LabeledTriples:
    header, rows = _read_csv(path)
    if header != TRIPLE_HEADER:
        raise MalformedHeader(f"{path}: expected header {','.join(TRIPLE_HEADER)}, got {','.join(header)}")
    records = []
    for line, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise MalformedRow(f"{path}:{line}: expected 4 fields, got {len(row)}")
        try:
            label = float(row[3])
        except ValueError:
            raise MalformedRow(f"{path}:{line}: label {row[3]!r} is not a number") from None
        if not 0.0 <= label <= 1.0:
            raise LabelOutOfRange(f"{path}:{line}: label {label!r} outside [0, 1]")
        records.append((row[0], row[1], row[2], label))
    try:
        return LabeledTriples.from_records(records)
    except DuplicateTriple as exc:
        raise DuplicateTriple(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# splitting and negative sampling


def train_test_split(y: LabeledTriples, train_size: float = 0.8, seed: int = 42):
    """Seeded random partition into ``(train, test)``.

    The train side gets ``round(train_size * len(y))`` rows (halves round up);
    both sides keep the original row order.
    """
    if not 0.0 < train_size < 1.0:
        raise ValueError(f"train_size must lie in (0, 1), got {train_size}")
    n = len(y)
    n_train = int(np.floor(train_size * n + 0.5))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"{n} triples with train_size={train_size} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return y.subset(np.sort(perm[:n_train])), y.subset(np.sort(perm[n_train:]))


def sample_negatives(y: LabeledTriples, seed: int = 42, drug_ids: Iterable[str] | None = None) -> LabeledTriples:
    """Append as many label-0 triples as there are positives.

    Candidates ``(d, d', c)`` are drawn uniformly from drugs x drugs x
    contexts; self-pairs and any draw whose unordered drug pair already
    occurs in the same context (as a positive or an earlier negative) are
    rejected. The drug pool is the drugs seen in ``y`` plus ``drug_ids``
    (for instance every drug of a :class:`DrugFeatureSet`).
    """
    if len(y) == 0:
        raise EmptyDataset("no positive triples to sample against")
    if not np.all(y.label == 1.0):
        raise ValueError("negative sampling expects every input label to be 1")
    drugs = sorted(set(y.drugs()) | set(drug_ids or ()))
    contexts = y.contexts()
    n_drugs, n_ctx = len(drugs), len(contexts)
    drug_index = {d: k for k, d in enumerate(drugs)}
    ctx_index = {c: k for k, c in enumerate(contexts)}

    taken: set[tuple[int, int, int]] = set()
    for d1, d2, c in y.keys():
        a, b = drug_index[d1], drug_index[d2]
        taken.add((min(a, b), max(a, b), ctx_index[c]))
    # self-pairs among the positives do not consume candidate space
    capacity = n_ctx * n_drugs * (n_drugs - 1) // 2 - sum(1 for a, b, _ in taken if a != b)
    needed = len(y)
    if n_drugs < 2 or capacity < needed:
        raise InsufficientSpace(
            f"{needed} negatives requested but only {max(capacity, 0)} collision-free candidates exist"
        )

    rng = np.random.default_rng(seed)
    chosen: list[tuple[int, int, int]] = []
    while len(chosen) < needed:
        draw = max(64, 2 * (needed - len(chosen)))
        left = rng.integers(0, n_drugs, size=draw)
        right = rng.integers(0, n_drugs, size=draw)
        ctx = rng.integers(0, n_ctx, size=draw)
        for a, b, c in zip(left.tolist(), right.tolist(), ctx.tolist()):
            if a == b:
                continue
            key = (min(a, b), max(a, b), c)
            if key in taken:
                continue
            taken.add(key)
            chosen.append((a, b, c))
            if len(chosen) == needed:
                break

    neg = [(drugs[a], drugs[b], contexts[c], 0.0) for a, b, c in chosen]
    pos = list(y)
    return LabeledTriples.from_records(pos + neg)
