"""Packed molecular graphs and the drug pair batch generator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .dataset import ContextFeatureSet, DrugFeatureSet, LabeledTriples
from .errors import UnresolvableIdentifier
from .molio import MolecularGraph, N_BOND_FEATURES

__all__ = ["PackedGraph", "DrugPairBatch", "BatchGenerator", "pack_graphs", "make_generator"]


@dataclass(eq=False)
class PackedGraph:
    """Several molecular graphs stacked into one block-diagonal graph.

    ``edge_index`` holds each bond once as global node indices (already
    shifted by the owning graph's offset).
    """

    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    graph_offsets: np.ndarray
    graph_sizes: np.ndarray
    graphs: tuple[MolecularGraph, ...] | None = None
    edge_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.edge_counts is None:
            # derive per-graph bond counts from the owner of each edge's source node
            owner = np.repeat(np.arange(len(self.graph_sizes)), self.graph_sizes)
            src = self.edge_index[0]
            self.edge_counts = np.bincount(owner[src], minlength=len(self.graph_sizes)).astype(np.int64)

    @property
    def n_nodes(self) -> int:
        return int(self.node_features.shape[0])

    @property
    def n_graphs(self) -> int:
        return int(self.graph_sizes.shape[0])

    def node_owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_graphs), self.graph_sizes)

    def unpack(self) -> list[tuple[MolecularGraph | None, np.ndarray, np.ndarray]]:
        """Split back into ``(graph, atom_features, bond_features)`` per molecule."""
        out = []
        edge_start = np.concatenate([[0], np.cumsum(self.edge_counts)])
        for g in range(self.n_graphs):
            lo, n = int(self.graph_offsets[g]), int(self.graph_sizes[g])
            e0, e1 = int(edge_start[g]), int(edge_start[g + 1])
            graph = self.graphs[g] if self.graphs is not None else None
            out.append((graph, self.node_features[lo : lo + n], self.edge_features[e0:e1]))
        return out

    def local_edge_index(self, g: int) -> np.ndarray:
        edge_start = np.concatenate([[0], np.cumsum(self.edge_counts)])
        return self.edge_index[:, edge_start[g] : edge_start[g + 1]] - self.graph_offsets[g]

    def select(self, idx) -> "PackedGraph":
        """A new packed graph holding graphs ``idx`` (repeats allowed), in that order."""
        idx = np.asarray(idx, dtype=np.int64)
        sizes = self.graph_sizes[idx]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        node_rows = np.repeat(self.graph_offsets[idx] - offsets, sizes) + np.arange(int(sizes.sum()))
        n_edges = self.edge_counts[idx]
        edge_start = np.concatenate([[0], np.cumsum(self.edge_counts)[:-1]])
        edge_offsets = np.concatenate([[0], np.cumsum(n_edges)[:-1]])
        edge_cols = np.repeat(edge_start[idx] - edge_offsets, n_edges) + np.arange(int(n_edges.sum()))
        shift = np.repeat(offsets - self.graph_offsets[idx], n_edges)
        return PackedGraph(
            node_features=self.node_features[node_rows],
            edge_index=self.edge_index[:, edge_cols] + shift,
            edge_features=self.edge_features[edge_cols],
            graph_offsets=offsets,
            graph_sizes=sizes,
            graphs=tuple(self.graphs[i] for i in idx.tolist()) if self.graphs is not None else None,
            edge_counts=n_edges,
        )


def pack_graphs(items: Sequence[tuple[MolecularGraph, np.ndarray, np.ndarray]]) -> PackedGraph:
    """Pack ``(graph, X_N, X_E)`` triples in input order."""
    if not items:
        raise ValueError("pack_graphs needs at least one graph")
    graphs = tuple(g for g, _, _ in items)
    sizes = np.array([g.n_atoms for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    edges = [g.edge_index() + off for g, off in zip(graphs, offsets)]
    return PackedGraph(
        node_features=np.concatenate([np.asarray(x, dtype=np.float64) for _, x, _ in items], axis=0),
        edge_index=np.concatenate(edges, axis=1) if edges else np.zeros((2, 0), dtype=np.int64),
        edge_features=np.concatenate(
            [np.asarray(e, dtype=np.float64).reshape(-1, N_BOND_FEATURES) for _, _, e in items], axis=0
        ),
        graph_offsets=offsets,
        graph_sizes=sizes,
        graphs=graphs,
        edge_counts=np.array([g.n_bonds for g in graphs], dtype=np.int64),
    )


class DrugPairBatch:
    """One generator emission. Fields whose flag is off are ``None``.

    Besides the per-row matrices, a batch can carry the distinct drugs and
    contexts it touches (``unique_*``) with each row's position among them
    (``left_pos``, ``right_pos``, ``context_pos``), so encoders can run once
    per distinct drug. Per-row packed graphs are then built on first access.
    """

    def __init__(self, labels, index, triples: LabeledTriples, context_features=None, drug_features_left=None,
                 drug_features_right=None, graphs_left: PackedGraph | None = None,
                 graphs_right: PackedGraph | None = None, unique_drug_features=None,
                 unique_graphs: PackedGraph | None = None, left_pos=None, right_pos=None,
                 unique_context_features=None, context_pos=None):
        self.labels = np.asarray(labels, dtype=np.float64)
        self.index = np.asarray(index, dtype=np.int64)
        self.triples = triples
        self.context_features = context_features
        self.drug_features_left = drug_features_left
        self.drug_features_right = drug_features_right
        self._graphs_left = graphs_left
        self._graphs_right = graphs_right
        self.unique_drug_features = unique_drug_features
        self.unique_graphs = unique_graphs
        self.left_pos = left_pos
        self.right_pos = right_pos
        self.unique_context_features = unique_context_features
        self.context_pos = context_pos

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __repr__(self) -> str:
        return f"DrugPairBatch(size={len(self)})"

    @property
    def has_molecules(self) -> bool:
        return self.unique_graphs is not None or (self._graphs_left is not None and self._graphs_right is not None)

    @property
    def graphs_left(self) -> PackedGraph | None:
        if self._graphs_left is None and self.unique_graphs is not None:
            self._graphs_left = self.unique_graphs.select(self.left_pos)
        return self._graphs_left

    @property
    def graphs_right(self) -> PackedGraph | None:
        if self._graphs_right is None and self.unique_graphs is not None:
            self._graphs_right = self.unique_graphs.select(self.right_pos)
        return self._graphs_right

    @property
    def identifiers(self) -> LabeledTriples:
        """The source triple rows, in batch order."""
        return self.triples.subset(self.index)

    def swapped(self) -> "DrugPairBatch":
        """The same rows with left and right drugs exchanged."""
        return DrugPairBatch(
            labels=self.labels,
            index=self.index,
            triples=LabeledTriples(
                self.triples.drug_2, self.triples.drug_1, self.triples.context, self.triples.label
            ),
            context_features=self.context_features,
            drug_features_left=self.drug_features_right,
            drug_features_right=self.drug_features_left,
            graphs_left=self._graphs_right,
            graphs_right=self._graphs_left,
            unique_drug_features=self.unique_drug_features,
            unique_graphs=self.unique_graphs,
            left_pos=self.right_pos,
            right_pos=self.left_pos,
            unique_context_features=self.unique_context_features,
            context_pos=self.context_pos,
        )


class _DrugTable:
    """Features of every drug a generator can emit, packed once."""

    def __init__(self, drug_set: DrugFeatureSet, ids: Sequence[str]):
        self.ids = list(ids)
        records = [drug_set[d] for d in self.ids]
        self.fingerprints = np.stack([r.fingerprint.bits for r in records]).astype(np.float64)
        self.packed = pack_graphs([(r.graph, r.atom_features, r.bond_features) for r in records])

    def pack(self, idx: np.ndarray) -> PackedGraph:
        return self.packed.select(idx)


class BatchGenerator:
    """Iterates drug pair batches over a labeled triple set.

    Each ``iter()`` is one epoch. With ``shuffle`` the rows of epoch ``e``
    follow ``default_rng([seed, e])``'s permutation; otherwise rows come in
    file order. The last, possibly partial, batch is always emitted.
    """

    def __init__(
        self,
        triples: LabeledTriples,
        drug_set: DrugFeatureSet,
        context_set: ContextFeatureSet | None,
        batch_size: int,
        context_features: bool = True,
        drug_features: bool = True,
        drug_molecules: bool = False,
        shuffle: bool = True,
        seed: int = 0,
    ):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.triples = triples
        self.batch_size = int(batch_size)
        self.context_features = context_features
        self.drug_features = drug_features
        self.drug_molecules = drug_molecules
        self.shuffle = shuffle
        self.seed = seed
        self.epochs_started = 0

        drug_ids = sorted(set(triples.drug_1) | set(triples.drug_2))
        for d in drug_ids:
            if d not in drug_set:
                raise UnresolvableIdentifier(f"drug id {d!r} not in the drug feature set")
        self._drugs = _DrugTable(drug_set, drug_ids) if drug_ids else None
        lookup = {d: k for k, d in enumerate(drug_ids)}
        self._left = np.array([lookup[d] for d in triples.drug_1], dtype=np.int64)
        self._right = np.array([lookup[d] for d in triples.drug_2], dtype=np.int64)

        self._contexts = None
        if context_features:
            if context_set is None:
                raise UnresolvableIdentifier("context features requested but no context set given")
            ctx_ids = sorted(set(triples.context))
            for c in ctx_ids:
                if c not in context_set:
                    raise UnresolvableIdentifier(f"context id {c!r} not in the context feature set")
            cl = {c: k for k, c in enumerate(ctx_ids)}
            self._contexts = np.stack([context_set[c] for c in ctx_ids]) if ctx_ids else None
            self._ctx = np.array([cl[c] for c in triples.context], dtype=np.int64)

    def __len__(self) -> int:
        return math.ceil(len(self.triples) / self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        n = len(self.triples)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([self.seed, epoch]).permutation(n)

    def epoch(self, epoch: int) -> Iterator[DrugPairBatch]:
        order = self.order(epoch)
        for start in range(0, len(order), self.batch_size):
            yield self.collate(order[start : start + self.batch_size])

    def __iter__(self) -> Iterator[DrugPairBatch]:
        e = self.epochs_started
        self.epochs_started += 1
        return self.epoch(e)

    def collate(self, index: np.ndarray) -> DrugPairBatch:
        index = np.asarray(index, dtype=np.int64)
        batch = DrugPairBatch(labels=self.triples.label[index], index=index, triples=self.triples)
        left, right = self._left[index], self._right[index]
        if self.drug_features or self.drug_molecules:
            # sorted distinct drugs: a swapped batch sees the identical set and order
            drugs, pos = np.unique(np.concatenate([left, right]), return_inverse=True)
            batch.left_pos, batch.right_pos = pos[: len(index)], pos[len(index) :]
        if self.context_features:
            ctx = self._ctx[index]
            batch.context_features = self._contexts[ctx]
            contexts, batch.context_pos = np.unique(ctx, return_inverse=True)
            batch.unique_context_features = self._contexts[contexts]
        if self.drug_features:
            batch.drug_features_left = self._drugs.fingerprints[left]
            batch.drug_features_right = self._drugs.fingerprints[right]
            batch.unique_drug_features = self._drugs.fingerprints[drugs]
        if self.drug_molecules:
            batch.unique_graphs = self._drugs.pack(drugs)
        return batch


def make_generator(
    triples: LabeledTriples,
    drug_set: DrugFeatureSet,
    context_set: ContextFeatureSet | None,
    batch_size: int,
    context_features: bool = True,
    drug_features: bool = True,
    drug_molecules: bool = False,
    shuffle_seed: int | None = 0,
) -> BatchGenerator:
    """Training-mode generator when ``shuffle_seed`` is given, evaluation order otherwise."""
    return BatchGenerator(
        triples,
        drug_set,
        context_set,
        batch_size,
        context_features=context_features,
        drug_features=drug_features,
        drug_molecules=drug_molecules,
        shuffle=shuffle_seed is not None,
        seed=0 if shuffle_seed is None else shuffle_seed,
    )
