"""A small reverse-mode autodiff core on numpy.

Only the operations the pair-scoring networks need are provided: dense layers,
ReLU, sigmoid, dropout, concatenation, elementwise sum, graph convolution over
packed molecular graphs, mean pooling and binary cross-entropy. Everything is
64-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import CheckpointError, DisconnectedParameter, FileNotFound, ShapeMismatch

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterStore",
    "OptimizerConfig",
    "AdamState",
    "linear",
    "relu",
    "sigmoid",
    "dropout",
    "concat",
    "add",
    "gcn_conv",
    "mean_pool",
    "take_rows",
    "bce_loss",
    "backward",
    "adam_step",
    "init_params",
    "glorot_bound",
    "save_checkpoint",
    "load_checkpoint",
]

BCE_CLAMP = 1e-7
# keeps sigmoid outputs strictly inside (0, 1) in float64
_SIGMOID_EPS = np.finfo(np.float64).eps / 2


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name", "requires_grad")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = any(p.requires_grad for p in parents)
        # constants and subgraphs that no parameter feeds into need no backward pass
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward_fn if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, name=name)
        self.requires_grad = True


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if callable(g):
        g = g()
    # never in place: an upstream gradient array may be shared between parents
    t.grad = g if t.grad is None else t.grad + g


# --------------------------------------------------------------------------
# operations


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (B, in), ``W`` (in, out), ``b`` (out,)."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeMismatch(f"linear: bias {b.shape} does not match weight {W.shape}")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward_fn(g):
        _accumulate(x, lambda: g @ W.data.T)
        _accumulate(W, lambda: x.data.T @ g)
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    return Tensor(out, parents, backward_fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    # np.maximum keeps NaN, so a diverged network still trips the loss check
    return Tensor(np.maximum(x.data, 0.0), (x,), lambda g: _accumulate(x, g * mask))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = np.clip(expit(x.data), _SIGMOID_EPS, 1.0 - _SIGMOID_EPS)
    return Tensor(s, (x,), lambda g: _accumulate(x, g * s * (1.0 - s)))


def dropout(x, rate: float, training: bool, seed=None, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``.

    Identity (the same tensor object) when ``training`` is false or
    ``rate == 0``. Randomness comes from ``rng`` when given, else from
    ``np.random.default_rng(seed)``.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng(seed)
    keep = (rng.random(x.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return Tensor(x.data * keep, (x,), lambda g: _accumulate(x, g * keep))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat: nothing to concatenate")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        for x, piece in zip(xs, np.split(g, splits, axis=axis)):
            _accumulate(x, piece)

    return Tensor(out, xs, backward_fn)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} differ")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Tensor(a.data + b.data, (a, b), backward_fn)


def normalized_adjacency(pg) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` for a packed graph, cached on the graph."""
    cached = getattr(pg, "_norm_adj", None)
    if cached is not None:
        return cached
    n = pg.n_nodes
    src, dst = pg.edge_index
    rows = np.concatenate([src, dst, np.arange(n)])
    cols = np.concatenate([dst, src, np.arange(n)])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    try:
        object.__setattr__(pg, "_norm_adj", adj)
    except AttributeError:
        pass
    return adj


def gcn_conv(pg, H, W: Tensor) -> Tensor:
    """Graph convolution ``Â H W`` with self-loops and symmetric normalization.

    ``pg`` is a packed graph (block-diagonal adjacency), so nodes of different
    molecules never exchange messages.
    """
    H = _as_tensor(H)
    if H.data.ndim != 2 or H.shape[0] != pg.n_nodes:
        raise ShapeMismatch(f"gcn_conv: {H.shape} node matrix for {pg.n_nodes} packed nodes")
    if W.data.ndim != 2 or W.shape[0] != H.shape[1]:
        raise ShapeMismatch(f"gcn_conv: weight {W.shape} incompatible with features {H.shape}")
    adj = normalized_adjacency(pg)
    AH = adj @ H.data
    out = AH @ W.data

    def backward_fn(g):
        _accumulate(W, lambda: AH.T @ g)
        # Â is symmetric
        _accumulate(H, lambda: adj @ (g @ W.data.T))

    return Tensor(out, (H, W), backward_fn)


def mean_pool(pg, H) -> Tensor:
    """Average node rows per graph: ``(n_nodes, F) -> (n_graphs, F)``."""
    H = _as_tensor(H)
    if H.data.ndim != 2 or H.shape[0] != pg.n_nodes:
        raise ShapeMismatch(f"mean_pool: {H.shape} node matrix for {pg.n_nodes} packed nodes")
    sizes = np.asarray(pg.graph_sizes)
    owner = np.repeat(np.arange(len(sizes)), sizes)
    pool = sp.csr_matrix(
        (1.0 / sizes[owner], (owner, np.arange(pg.n_nodes))), shape=(len(sizes), pg.n_nodes)
    )
    return Tensor(pool @ H.data, (H,), lambda g: _accumulate(H, lambda: pool.T @ g))


def take_rows(x, index) -> Tensor:
    """Rows ``x[index]``; repeated indices accumulate their gradients."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def backward_fn(g):
        def scatter():
            n = index.shape[0]
            s = sp.csr_matrix((np.ones(n), (index, np.arange(n))), shape=(x.shape[0], n))
            return s @ g

        _accumulate(x, scatter)

    return Tensor(x.data[index], (x,), backward_fn)


def bce_loss(pred, y) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    pred = _as_tensor(pred)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p_raw = pred.data.reshape(-1)
    if p_raw.shape != y.shape:
        raise ShapeMismatch(f"bce_loss: {p_raw.shape[0]} predictions for {y.shape[0]} labels")
    p = np.clip(p_raw, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = y.shape[0]
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (p_raw > BCE_CLAMP) & (p_raw < 1.0 - BCE_CLAMP)

    def backward_fn(g):
        dp = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        _accumulate(pred, (g * dp * inside).reshape(pred.shape))

    return Tensor(value, (pred,), backward_fn)


# --------------------------------------------------------------------------
# parameters and gradients


class ParameterStore(Mapping[str, Parameter]):
    """Named parameters, each tagged with the group it belongs to.

    Groups are ``"drug"``, ``"context"`` and ``"head"`` (drug encoder,
    context encoder and scoring head).
    """

    GROUPS = ("drug", "context", "head")

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value, group: str) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if group not in self.GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        p = Parameter(np.array(value, dtype=np.float64), name=name)
        self._params[name] = p
        self._groups[name] = group
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def group(self, group: str) -> dict[str, Parameter]:
        return {k: p for k, p in self._params.items() if self._groups[k] == group}

    def count(self, group: str | None = None) -> int:
        return sum(p.data.size for k, p in self._params.items() if group is None or self._groups[k] == group)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise ShapeMismatch(f"parameter names differ (missing {sorted(missing)}, extra {sorted(extra)})")
        for k, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[k].shape:
                raise ShapeMismatch(f"{k}: expected {self._params[k].shape}, got {value.shape}")
            self._params[k].data = value.copy()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients keyed by parameter name. Every parameter in ``params``
    must be reachable from ``loss``, otherwise :class:`DisconnectedParameter`.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is None:
        return {}
    reached = {id(n) for n in order}
    grads = {}
    for name, p in params.items():
        if id(p) not in reached:
            raise DisconnectedParameter(f"parameter {name!r} does not influence the loss")
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    # free the graph held by intermediate nodes
    for node in order:
        if not isinstance(node, Parameter):
            node.grad = None
    return grads


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerConfig:
    """Training defaults: Adam with L2 weight decay, dropout 0.5, 50 epochs."""

    learning_rate: float = 1e-2
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-7
    dropout_rate: float = 0.5
    batch_size: int = 2**12
    epochs: int = 50

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if not 0.0 <= self.weight_decay < 1.0:
            raise ValueError(f"weight_decay must lie in [0, 1), got {self.weight_decay}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, cfg: OptimizerConfig) -> AdamState:
    """One Adam update, in place on ``params``; weight decay is added to the gradient."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} for parameter {p.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# --------------------------------------------------------------------------
# initialization


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(layers: Iterable[tuple], seed: int) -> ParameterStore:
    """Build a :class:`ParameterStore` from ``(name, shape, group)`` entries.

    2-D shapes are weights drawn Glorot-uniform; 1-D shapes are zero biases.
    Draws happen in entry order from one seeded generator.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for name, shape, group in layers:
        shape = tuple(int(s) for s in shape)
        if len(shape) == 2:
            bound = glorot_bound(*shape)
            value = rng.uniform(-bound, bound, size=shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            raise ShapeMismatch(f"{name}: only 1-D and 2-D parameters are supported, got {shape}")
        store.add(name, value, group)
    return store


# --------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   b"PSCK" | u16 version | u32 header length | header JSON (utf-8)
#   then per parameter: u16 name length | name | u8 group | u8 ndim | u32 dims... | f8 data
# the header carries the model name and its hyperparameters

_MAGIC = b"PSCK"
_VERSION = 1


def save_checkpoint(path, model_name: str, hyperparameters: Mapping, params: ParameterStore) -> None:
    header = json.dumps(
        {"model": model_name, "hyperparameters": dict(hyperparameters), "n_parameters": len(params)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<HI", _VERSION, len(header)), header]
    for name in params:
        p = params[name]
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BB", ParameterStore.GROUPS.index(params.group_of(name)), p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[str, dict, ParameterStore]:
    """Inverse of :func:`save_checkpoint`: ``(model_name, hyperparameters, store)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFound(f"{path}: no such checkpoint")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC or len(blob) < 10:
        raise CheckpointError(f"{path}: not a pairscore checkpoint")
    version, hlen = struct.unpack_from("<HI", blob, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    pos += hlen
    store = ParameterStore()
    try:
        for _ in range(header["n_parameters"]):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            group, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            store.add(name, data.astype(np.float64), ParameterStore.GROUPS[group])
    except (struct.error, ValueError, IndexError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return header["model"], header["hyperparameters"], store
