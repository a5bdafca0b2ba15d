"""Forward passes for dense, LSTM and GRU layers.

The same layer code runs on two backends: :data:`NUMPY` evaluates plain
arrays (optionally batched along a leading axis) and :class:`TapeOps` records
every step on an autodiff tape for training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import LayerSpec, NetworkGraph, RECURRENT_KINDS

__all__ = [
    "RecurrentState",
    "NumpyOps",
    "TapeOps",
    "NUMPY",
    "INVERSE_SIGMOID_CLAMP",
    "activate",
    "dense_forward",
    "lstm_step",
    "gru_step",
    "initial_state",
    "network_forward",
    "forward_batch",
]

INVERSE_SIGMOID_CLAMP = 1e-12


def _np_logistic(z):
    return ad._sigmoid(z)


_NP_ACTS = {
    "tanh": np.tanh,
    "logistic": _np_logistic,
    "relu": lambda z: np.maximum(z, 0.0),
    "identity": lambda z: z,
}


class NumpyOps:
    """Plain array evaluation; vectors may carry a leading batch axis."""

    def asarray(self, x):
        return np.asarray(x, dtype=np.float64)

    def matvec(self, w, x):
        if w.shape[1] != x.shape[-1]:
            raise ad.ShapeError("matvec", w.shape, x.shape)
        return x @ w.T

    def add(self, a, b):
        return a + b

    def mul(self, a, b):
        return a * b

    def one_minus(self, a):
        return 1.0 - a

    def concat(self, parts):
        return np.concatenate(parts, axis=-1)

    def take(self, x, start, stop):
        return x[..., start:stop]

    def act(self, name, z):
        try:
            return _NP_ACTS[name](z)
        except KeyError:
            raise ValueError(f"unknown activation {name!r}") from None

    def logit(self, x, clamp_log: Optional[list] = None, where=None):
        xc = np.clip(x, INVERSE_SIGMOID_CLAMP, 1.0 - INVERSE_SIGMOID_CLAMP)
        if clamp_log is not None:
            n = int(np.count_nonzero(xc != x))
            if n:
                clamp_log.append((where, n))
        return np.log(xc) - np.log1p(-xc)

    def zeros(self, n):
        return np.zeros(n)


NUMPY = NumpyOps()


class TapeOps:
    """Records operations on ``tape``; plain arrays are lifted to constants."""

    def __init__(self, tape: ad.Tape):
        self.tape = tape

    def asarray(self, x):
        return x if isinstance(x, ad.Value) else self.tape.const(x)

    def matvec(self, w, x):
        return ad.matvec(self.asarray(w), self.asarray(x))

    def add(self, a, b):
        return ad.add(self.asarray(a), self.asarray(b))

    def mul(self, a, b):
        return ad.mul(self.asarray(a), self.asarray(b))

    def one_minus(self, a):
        return ad.sub(self.tape.const(1.0), self.asarray(a))

    def concat(self, parts):
        return ad.concat([self.asarray(p) for p in parts])

    def take(self, x, start, stop):
        return ad.take(self.asarray(x), start, stop)

    def act(self, name, z):
        z = self.asarray(z)
        if name == "identity":
            return z
        fn = {"tanh": ad.tanh, "logistic": ad.logistic, "relu": ad.relu}.get(name)
        if fn is None:
            raise ValueError(f"unknown activation {name!r}")
        return fn(z)

    def logit(self, x, clamp_log: Optional[list] = None, where=None):
        x = self.asarray(x)
        if clamp_log is not None:
            d = x.data
            n = int(np.count_nonzero((d < INVERSE_SIGMOID_CLAMP) | (d > 1.0 - INVERSE_SIGMOID_CLAMP)))
            if n:
                clamp_log.append((where, n))
        return ad.logit(x, INVERSE_SIGMOID_CLAMP)

    def zeros(self, n):
        return self.tape.const(np.zeros(n))


@dataclass
class RecurrentState:
    hidden: object
    cell: Optional[object] = None


def initial_state(layer: LayerSpec, ops=NUMPY) -> RecurrentState:
    q = layer.out_dim
    return RecurrentState(ops.zeros(q), ops.zeros(q) if layer.kind == "lstm_cell" else None)


def activate(name: str, z, ops=NUMPY):
    return ops.act(name, z)


def _dim(x) -> int:
    return (x.data if isinstance(x, ad.Value) else np.asarray(x)).shape[-1]


def _check_in(layer: LayerSpec, x):
    if _dim(x) != layer.in_dim:
        raise ad.ShapeError(layer.kind, (layer.in_dim,), (_dim(x),))


def dense_forward(layer: LayerSpec, x, params=None, ops=NUMPY, clamp_log=None, where=None):
    """``activation(W x + b)``; pointwise kinds apply only the activation."""
    _check_in(layer, x)
    x = ops.asarray(x)
    if layer.kind == "inverse_sigmoid":
        return ops.logit(x, clamp_log, where)
    if layer.kind == "pointwise_activation":
        return ops.act(layer.activation.name, x)
    if layer.kind in RECURRENT_KINDS:
        raise ValueError(f"dense_forward cannot run {layer.kind}")
    w, b = params if params is not None else (layer.weights, layer.bias)
    return ops.act(layer.activation.name, ops.add(ops.matvec(w, x), b))


def lstm_step(layer: LayerSpec, x, state: RecurrentState, params=None, ops=NUMPY):
    """One LSTM step; returns ``(h', state')``."""
    if layer.kind != "lstm_cell":
        raise ValueError(f"lstm_step needs an lstm_cell, got {layer.kind}")
    _check_in(layer, x)
    q = layer.out_dim
    if _dim(state.hidden) != q or state.cell is None or _dim(state.cell) != q:
        raise ad.ShapeError("lstm_step", (q,), (_dim(state.hidden),))
    w, b = params if params is not None else (layer.weights, layer.bias)
    gate, cand = layer.gate_activation.name, layer.activation.name
    z = ops.add(ops.matvec(w, ops.concat([ops.asarray(x), state.hidden])), b)
    i = ops.act(gate, ops.take(z, 0, q))
    f = ops.act(gate, ops.take(z, q, 2 * q))
    g = ops.act(cand, ops.take(z, 2 * q, 3 * q))
    o = ops.act(gate, ops.take(z, 3 * q, 4 * q))
    c = ops.add(ops.mul(f, state.cell), ops.mul(i, g))
    h = ops.mul(o, ops.act(cand, c))
    return h, RecurrentState(h, c)


def gru_step(layer: LayerSpec, x, state: RecurrentState, params=None, ops=NUMPY):
    """One GRU step; returns ``(h', state')`` with ``h' = (1-z) h~ + z h``."""
    if layer.kind != "gru_cell":
        raise ValueError(f"gru_step needs a gru_cell, got {layer.kind}")
    _check_in(layer, x)
    q = layer.out_dim
    if _dim(state.hidden) != q:
        raise ad.ShapeError("gru_step", (q,), (_dim(state.hidden),))
    w, b = params if params is not None else (layer.weights, layer.bias)
    gate, cand = layer.gate_activation.name, layer.activation.name
    x = ops.asarray(x)
    h = state.hidden
    a = ops.add(ops.matvec(w, ops.concat([x, h])), b)
    z = ops.act(gate, ops.take(a, 0, q))
    r = ops.act(gate, ops.take(a, q, 2 * q))
    # candidate block sees the reset-gated state
    a2 = ops.add(ops.matvec(w, ops.concat([x, ops.mul(r, h)])), b)
    h_cand = ops.act(cand, ops.take(a2, 2 * q, 3 * q))
    h_new = ops.add(ops.mul(ops.one_minus(z), h_cand), ops.mul(z, h))
    return h_new, RecurrentState(h_new)


def _layer_params(graph: NetworkGraph, params):
    """Split a flat parameter list (``graph.parameters()`` order) per layer/edge."""
    if params is None:
        return ([None] * len(graph.layers),
                [e.projection for e in graph.skip_edges])
    it = iter(params)
    per_layer = [(next(it), next(it)) if layer.weights is not None else None for layer in graph.layers]
    per_edge = [next(it) if e.projection is not None else None for e in graph.skip_edges]
    return per_layer, per_edge


def _apply_skips(graph, target, out, inputs, edge_params, ops):
    for e, proj in zip(graph.skip_edges, edge_params):
        if e.target == target:
            src = inputs[e.source]
            out = ops.add(out, src if proj is None else ops.matvec(proj, src))
    return out


def _run(graph: NetworkGraph, w, ops, params, clamp_log, collect=None):
    # w: (input_dim,) / (batch, input_dim), or (lookback, d) / (batch, lookback, d)
    layer_params, edge_params = _layer_params(graph, params)
    layers = graph.layers
    inputs: list = [None] * len(layers)
    r = graph.recurrent_index

    def feed(i, x):
        inputs[i] = x
        out = dense_forward(layers[i], x, layer_params[i], ops, clamp_log, i)
        out = _apply_skips(graph, i, out, inputs, edge_params, ops)
        if collect is not None:
            collect[i] = out
        return out

    if r is None:
        x = ops.asarray(w)
        for i in range(len(layers)):
            x = feed(i, x)
        return x

    cell = layers[r]
    step = lstm_step if cell.kind == "lstm_cell" else gru_step
    state = initial_state(cell, ops)
    if isinstance(ops, NumpyOps) and w.ndim == 3:
        state = RecurrentState(np.zeros((w.shape[0], cell.out_dim)),
                               None if state.cell is None else np.zeros((w.shape[0], cell.out_dim)))
    for t in range(graph.lookback):
        x = ops.asarray(w[..., t, :])
        for i in range(r):
            x = feed(i, x)
        inputs[r] = x
        h, state = step(cell, x, state, layer_params[r], ops)
    x = _apply_skips(graph, r, h, inputs, edge_params, ops)
    if collect is not None:
        collect[r] = x
    for i in range(r + 1, len(layers)):
        x = feed(i, x)
    return x


def network_forward(graph: NetworkGraph, window, *, ops=NUMPY, params=None, clamp_log=None):
    """Predict the next value from one lookback window.

    Recurrent graphs unroll the cell over the window from a zero state and
    read out the final hidden state; MLPs take the flattened window.
    ``params`` optionally overrides the graph's weights (e.g. tape leaves).
    ``clamp_log`` collects ``(layer_index, n_clamped)`` for inverse-sigmoid
    layers whose input was clamped.
    """
    w = np.asarray(window, dtype=np.float64)
    if graph.is_recurrent:
        shape = (graph.lookback, graph.input_dim)
    else:
        shape = (graph.input_dim,)
    if w.size != int(np.prod(shape)) or (w.ndim and w.shape[0] != shape[0]):
        raise ValueError(f"window of shape {w.shape} does not match lookback {shape[0]}")
    return _run(graph, w.reshape(shape), ops, params, clamp_log)


def forward_batch(graph: NetworkGraph, windows, clamp_log=None, collect=None) -> np.ndarray:
    """Evaluate many windows at once with numpy; returns ``(batch, output_dim)``.

    If ``collect`` is a dict it receives every layer's output keyed by index
    (per-step layers of a recurrent network report the final step).
    """
    w = np.asarray(windows, dtype=np.float64)
    if graph.is_recurrent:
        if graph.input_dim == 1 and w.ndim == 2:
            w = w[..., None]
        if w.ndim != 3 or w.shape[1:] != (graph.lookback, graph.input_dim):
            raise ValueError(f"recurrent batch shape {w.shape} does not match lookback {graph.lookback}")
    elif w.ndim != 2 or w.shape[1] != graph.input_dim:
        raise ValueError(f"feed-forward batch shape {w.shape} does not match input size {graph.input_dim}")
    out = _run(graph, w, NUMPY, None, clamp_log, collect)
    return np.asarray(out).reshape(w.shape[0], graph.output_dim)
