"""Pair scoring networks.

Every model follows the same three-part wiring: a drug encoder applied to
both drugs with shared weights, an optional context encoder, and a scoring
head that ends in a sigmoid. Parameter names are prefixed by their group
(``drug.``, ``context.``, ``head.``).

Parameter counts below use ``D`` for the fingerprint width (256), ``k`` for
the context width and ``A`` for the atom feature width (23); a dense layer
``a -> b`` holds ``a*b + b`` numbers, a graph convolution ``a -> b`` holds
``a*b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .batch import DrugPairBatch
from .dataset import LabeledTriples
from .errors import MissingBatchField, UnknownModel, WidthMismatch
from .molio import N_ATOM_FEATURES
from .neuro import (
    ParameterStore,
    Tensor,
    add,
    concat,
    dropout,
    gcn_conv,
    init_params,
    linear,
    load_checkpoint,
    mean_pool,
    relu,
    take_rows,
    save_checkpoint,
    sigmoid,
)

__all__ = [
    "MODEL_NAMES",
    "Prediction",
    "PairScorer",
    "DeepDDI",
    "DeepSynergy",
    "MatchMaker",
    "EPGCNDS",
    "DeepDDS",
    "build_model",
    "load_model",
]

FINGERPRINT_WIDTH = 256


@dataclass(eq=False)
class Prediction:
    values: np.ndarray
    index: np.ndarray
    triples: LabeledTriples

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def identifiers(self) -> LabeledTriples:
        return self.triples.subset(self.index)


def _dense_layers(prefix: str, widths: Sequence[int], group: str) -> list[tuple]:
    layers = []
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append((f"{prefix}.{k}.weight", (a, b), group))
        layers.append((f"{prefix}.{k}.bias", (b,), group))
    return layers


class PairScorer:
    """Base class: holds parameters, hyperparameters and the batch fields used.

    Subclasses declare ``uses`` (batch fields consumed), build their layer
    list in ``_layers`` and implement ``forward``.
    """

    name: str = ""
    uses: frozenset[str] = frozenset()

    def __init__(self, context_width: int, drug_width: int = FINGERPRINT_WIDTH, atom_width: int = N_ATOM_FEATURES,
                 dropout: float = 0.5, seed: int = 0):
        for label, width in (("context_width", context_width), ("drug_width", drug_width), ("atom_width", atom_width)):
            if int(width) < 1:
                raise WidthMismatch(f"{label} must be >= 1, got {width}")
        self.context_width = int(context_width)
        self.drug_width = int(drug_width)
        self.atom_width = int(atom_width)
        self.dropout = float(dropout)
        self.seed = int(seed)
        self.params: ParameterStore = init_params(self._layers(), seed=self.seed)

    # -- structure -------------------------------------------------------------

    def _layers(self) -> list[tuple]:
        raise NotImplementedError

    def channel_settings(self) -> dict:
        return {}

    @property
    def hyperparameters(self) -> dict:
        record = {
            "context_width": self.context_width,
            "drug_width": self.drug_width,
            "atom_width": self.atom_width,
            "dropout": self.dropout,
            "seed": self.seed,
        }
        record.update({k: list(v) if isinstance(v, (list, tuple)) else v for k, v in self.channel_settings().items()})
        return record

    def expected_parameter_count(self) -> int:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(params={self.params.count()}, uses={sorted(self.uses)})"

    # -- computation -----------------------------------------------------------

    def _dense(self, x: Tensor, prefix: str, n_layers: int, training: bool, rng, last_linear: bool) -> Tensor:
        for k in range(n_layers):
            x = linear(x, self.params[f"{prefix}.{k}.weight"], self.params[f"{prefix}.{k}.bias"])
            if last_linear and k == n_layers - 1:
                break
            x = relu(x)
            x = dropout(x, self.dropout, training, rng=rng)
        return x

    def _gcn_encoder(self, pg, training: bool, rng) -> Tensor:
        h = gcn_conv(pg, Tensor(pg.node_features), self.params["drug.conv0.weight"])
        h = dropout(relu(h), self.dropout, training, rng=rng)
        h = gcn_conv(pg, h, self.params["drug.conv1.weight"])
        return mean_pool(pg, h)

    def _encode_graphs(self, batch: DrugPairBatch, training: bool, rng) -> tuple[Tensor, Tensor]:
        """Graph embeddings of the left and right drugs, one encoder pass per distinct drug."""
        if batch.unique_graphs is not None:
            h = self._gcn_encoder(batch.unique_graphs, training, rng)
            return take_rows(h, batch.left_pos), take_rows(h, batch.right_pos)
        return self._gcn_encoder(batch.graphs_left, training, rng), self._gcn_encoder(batch.graphs_right, training, rng)

    def _encode_rows(self, unique, pos, rows, prefix: str, n_layers: int, training: bool, rng) -> Tensor:
        """Dense encoder over distinct inputs, gathered back to rows.

        Dropout after the last layer is drawn per row, as if every row had
        been encoded on its own.
        """
        if unique is not None and pos is not None:
            h = self._dense(Tensor(unique), prefix, n_layers - 1, training, rng, last_linear=False)
            h = relu(linear(h, self.params[f"{prefix}.{n_layers - 1}.weight"], self.params[f"{prefix}.{n_layers - 1}.bias"]))
            return dropout(take_rows(h, pos), self.dropout, training, rng=rng)
        return self._dense(Tensor(rows), prefix, n_layers, training, rng, last_linear=False)

    def forward(self, batch: DrugPairBatch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def _check_batch(self, batch: DrugPairBatch) -> None:
        fields = {
            "context_features": batch.context_features,
            "drug_features": batch.drug_features_left,
            "drug_molecules": True if batch.has_molecules else None,
        }
        for f in sorted(self.uses):
            if fields[f] is None:
                raise MissingBatchField(f"{self.name} needs batch field {f!r}, which is empty")
        if "drug_features" in self.uses:
            for side in (batch.drug_features_left, batch.drug_features_right):
                if side is None or side.shape[1] != self.drug_width:
                    raise WidthMismatch(f"{self.name}: drug features must have width {self.drug_width}")
        if "context_features" in self.uses and batch.context_features.shape[1] != self.context_width:
            raise WidthMismatch(
                f"{self.name}: context features have width {batch.context_features.shape[1]}, "
                f"model expects {self.context_width}"
            )
        if "drug_molecules" in self.uses:
            pgs = [batch.unique_graphs] if batch.unique_graphs is not None else [batch.graphs_left, batch.graphs_right]
            for pg in pgs:
                if pg.node_features.shape[1] != self.atom_width:
                    raise WidthMismatch(f"{self.name}: atom features must have width {self.atom_width}")

    def score(self, batch: DrugPairBatch, training: bool = False, seed=None) -> Prediction:
        """Probabilities for every batch row. Deterministic when ``training`` is false."""
        self._check_batch(batch)
        rng = np.random.default_rng(seed) if training else None
        out = self.forward(batch, training=training, rng=rng)
        return Prediction(values=out.data.reshape(-1).copy(), index=batch.index, triples=batch.triples)

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.name, self.hyperparameters, self.params)


class DeepDDI(PairScorer):
    """Concatenated fingerprints through four ReLU layers; context unused.

    Parameters: ``(2D+1)*h1 + sum (h_i+1)*h_{i+1} + (h4+1)``.
    """

    name = "deepddi"
    uses = frozenset({"drug_features"})

    def __init__(self, context_width: int, hidden_channels: Sequence[int] = (32, 32, 32, 32), **kw):
        self.hidden_channels = tuple(int(h) for h in hidden_channels)
        super().__init__(context_width, **kw)

    def channel_settings(self):
        return {"hidden_channels": self.hidden_channels}

    def _layers(self):
        return _dense_layers("head", (2 * self.drug_width, *self.hidden_channels, 1), "head")

    def expected_parameter_count(self) -> int:
        widths = (2 * self.drug_width, *self.hidden_channels, 1)
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))

    def forward(self, batch, training=False, rng=None):
        x = concat([batch.drug_features_left, batch.drug_features_right], axis=1)
        return sigmoid(self._dense(x, "head", len(self.hidden_channels) + 1, training, rng, last_linear=True))


class DeepSynergy(PairScorer):
    """Dense drug and context encoders, concatenated into a dense head.

    Parameters: ``(D+1)*d + (k+1)*c + (2d+c+1)*h1 + sum (h_i+1)*h_{i+1} + (h_last+1)``.
    """

    name = "deepsynergy"
    uses = frozenset({"drug_features", "context_features"})

    def __init__(self, context_width: int, drug_encoder_channels: int = 128, context_encoder_channels: int = 128,
                 hidden_channels: Sequence[int] = (32, 32, 32), **kw):
        self.drug_encoder_channels = int(drug_encoder_channels)
        self.context_encoder_channels = int(context_encoder_channels)
        self.hidden_channels = tuple(int(h) for h in hidden_channels)
        super().__init__(context_width, **kw)

    def channel_settings(self):
        return {
            "drug_encoder_channels": self.drug_encoder_channels,
            "context_encoder_channels": self.context_encoder_channels,
            "hidden_channels": self.hidden_channels,
        }

    def _head_widths(self):
        return (2 * self.drug_encoder_channels + self.context_encoder_channels, *self.hidden_channels, 1)

    def _layers(self):
        return (
            _dense_layers("drug", (self.drug_width, self.drug_encoder_channels), "drug")
            + _dense_layers("context", (self.context_width, self.context_encoder_channels), "context")
            + _dense_layers("head", self._head_widths(), "head")
        )

    def expected_parameter_count(self) -> int:
        head = self._head_widths()
        return (
            (self.drug_width + 1) * self.drug_encoder_channels
            + (self.context_width + 1) * self.context_encoder_channels
            + sum(a * b + b for a, b in zip(head[:-1], head[1:]))
        )

    def forward(self, batch, training=False, rng=None):
        u = batch.unique_drug_features
        h_left = self._encode_rows(u, batch.left_pos, batch.drug_features_left, "drug", 1, training, rng)
        h_right = self._encode_rows(u, batch.right_pos, batch.drug_features_right, "drug", 1, training, rng)
        h_ctx = self._encode_rows(batch.unique_context_features, batch.context_pos, batch.context_features,
                                  "context", 1, training, rng)
        x = concat([h_left, h_right, h_ctx], axis=1)
        return sigmoid(self._dense(x, "head", len(self.hidden_channels) + 1, training, rng, last_linear=True))


class MatchMaker(PairScorer):
    """Shared encoder over ``[fingerprint, context]`` for each drug; dense head.

    Parameters: ``(D+k+1)*e1 + (e1+1)*e2 + (2*e2+1)*h1 + (h1+1)*h2 + (h2+1)``.
    """

    name = "matchmaker"
    uses = frozenset({"drug_features", "context_features"})

    def __init__(self, context_width: int, drug_encoder_channels: Sequence[int] = (32, 32),
                 hidden_channels: Sequence[int] = (64, 32), **kw):
        self.drug_encoder_channels = tuple(int(c) for c in drug_encoder_channels)
        self.hidden_channels = tuple(int(h) for h in hidden_channels)
        super().__init__(context_width, **kw)

    def channel_settings(self):
        return {"drug_encoder_channels": self.drug_encoder_channels, "hidden_channels": self.hidden_channels}

    def _encoder_widths(self):
        return (self.drug_width + self.context_width, *self.drug_encoder_channels)

    def _head_widths(self):
        return (2 * self.drug_encoder_channels[-1], *self.hidden_channels, 1)

    def _layers(self):
        return _dense_layers("drug", self._encoder_widths(), "drug") + _dense_layers("head", self._head_widths(), "head")

    def expected_parameter_count(self) -> int:
        total = 0
        for widths in (self._encoder_widths(), self._head_widths()):
            total += sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        return total

    def forward(self, batch, training=False, rng=None):
        n_enc = len(self.drug_encoder_channels)
        left = concat([batch.drug_features_left, batch.context_features], axis=1)
        right = concat([batch.drug_features_right, batch.context_features], axis=1)
        h_left = self._dense(left, "drug", n_enc, training, rng, last_linear=False)
        h_right = self._dense(right, "drug", n_enc, training, rng, last_linear=False)
        x = concat([h_left, h_right], axis=1)
        return sigmoid(self._dense(x, "head", len(self.hidden_channels) + 1, training, rng, last_linear=True))


class EPGCNDS(PairScorer):
    """Two graph convolutions with mean pooling; drug embeddings are summed.

    The sum makes the score exactly symmetric in the two drugs. Context is
    unused. Parameters: ``A*g + g*g + (g+1)*h1 + (h1+1)*h2 + (h2+1)``.
    """

    name = "epgcnds"
    uses = frozenset({"drug_molecules"})

    def __init__(self, context_width: int, drug_encoder_channels: int = 128, hidden_channels: Sequence[int] = (32, 32), **kw):
        self.drug_encoder_channels = int(drug_encoder_channels)
        self.hidden_channels = tuple(int(h) for h in hidden_channels)
        super().__init__(context_width, **kw)

    def channel_settings(self):
        return {"drug_encoder_channels": self.drug_encoder_channels, "hidden_channels": self.hidden_channels}

    def _head_widths(self):
        return (self.drug_encoder_channels, *self.hidden_channels, 1)

    def _layers(self):
        g = self.drug_encoder_channels
        return [
            ("drug.conv0.weight", (self.atom_width, g), "drug"),
            ("drug.conv1.weight", (g, g), "drug"),
        ] + _dense_layers("head", self._head_widths(), "head")

    def expected_parameter_count(self) -> int:
        g = self.drug_encoder_channels
        head = self._head_widths()
        return self.atom_width * g + g * g + sum(a * b + b for a, b in zip(head[:-1], head[1:]))

    def forward(self, batch, training=False, rng=None):
        h = add(*self._encode_graphs(batch, training, rng))
        return sigmoid(self._dense(h, "head", len(self.hidden_channels) + 1, training, rng, last_linear=True))


class DeepDDS(PairScorer):
    """Graph convolution drug encoder (GCN variant), dense context encoder, dense head.

    Parameters: ``A*g + g*g + (k+1)*c1 + (c1+1)*c2 + (c2+1)*c3
    + (2g+c3+1)*h1 + (h1+1)*h2 + (h2+1)``.
    """

    name = "deepdds"
    uses = frozenset({"drug_molecules", "context_features"})

    def __init__(self, context_width: int, drug_encoder_channels: int = 128, context_encoder_channels: Sequence[int] = (512, 256, 128),
                 hidden_channels: Sequence[int] = (512, 128), **kw):
        self.drug_encoder_channels = int(drug_encoder_channels)
        self.context_encoder_channels = tuple(int(c) for c in context_encoder_channels)
        self.hidden_channels = tuple(int(h) for h in hidden_channels)
        super().__init__(context_width, **kw)

    def channel_settings(self):
        return {
            "drug_encoder_channels": self.drug_encoder_channels,
            "context_encoder_channels": self.context_encoder_channels,
            "hidden_channels": self.hidden_channels,
        }

    def _context_widths(self):
        return (self.context_width, *self.context_encoder_channels)

    def _head_widths(self):
        return (2 * self.drug_encoder_channels + self.context_encoder_channels[-1], *self.hidden_channels, 1)

    def _layers(self):
        g = self.drug_encoder_channels
        return (
            [("drug.conv0.weight", (self.atom_width, g), "drug"), ("drug.conv1.weight", (g, g), "drug")]
            + _dense_layers("context", self._context_widths(), "context")
            + _dense_layers("head", self._head_widths(), "head")
        )

    def expected_parameter_count(self) -> int:
        g = self.drug_encoder_channels
        total = self.atom_width * g + g * g
        for widths in (self._context_widths(), self._head_widths()):
            total += sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        return total

    def forward(self, batch, training=False, rng=None):
        h_left, h_right = self._encode_graphs(batch, training, rng)
        h_ctx = self._encode_rows(batch.unique_context_features, batch.context_pos, batch.context_features,
                                  "context", len(self.context_encoder_channels), training, rng)
        x = concat([h_left, h_right, h_ctx], axis=1)
        return sigmoid(self._dense(x, "head", len(self.hidden_channels) + 1, training, rng, last_linear=True))


_REGISTRY = {cls.name: cls for cls in (DeepDDI, DeepSynergy, MatchMaker, EPGCNDS, DeepDDS)}
MODEL_NAMES = tuple(_REGISTRY)


def _canonical(name: str) -> str:
    return name.lower().replace("-", "").replace("_", "")


def model_class(name: str) -> type[PairScorer]:
    try:
        return _REGISTRY[_canonical(name)]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}") from None


def build_model(name: str, context_width: int, **overrides) -> PairScorer:
    """Construct a model by name with its default widths, optionally overridden.

    ``context_channels`` and ``drug_channels`` name the input widths (context
    vector length and fingerprint length); ``context_channels`` must agree
    with ``context_width``. Encoder and head widths are overridden with the
    constructor keywords (``drug_encoder_channels``, ``hidden_channels``, ...).
    """
    cls = model_class(name)
    overrides = dict(overrides)
    if "context_channels" in overrides:
        declared = int(overrides.pop("context_channels"))
        if declared != int(context_width):
            raise WidthMismatch(f"context_channels={declared} but the context set has width {context_width}")
    if "drug_channels" in overrides:
        overrides["drug_width"] = int(overrides.pop("drug_channels"))
    try:
        return cls(context_width, **overrides)
    except TypeError as exc:
        raise WidthMismatch(f"{cls.name}: {exc}") from None


def load_model(path) -> PairScorer:
    name, hyper, store = load_checkpoint(path)
    hyper = dict(hyper)
    context_width = hyper.pop("context_width")
    model = build_model(name, context_width, **hyper)
    model.params.load_state(store.state())
    return model
