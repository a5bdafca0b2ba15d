"""Network description: a layer chain with optional additive skip edges.

A network is ``output_linear . h_k . ... . h_1 . input_linear``.  Recurrent
cells store their input and recurrent weights as one stacked matrix acting on
``concat(x, h)``:

* ``lstm_cell``: weights ``(4q, p + q)``, gate blocks ordered i, f, g, o
* ``gru_cell``: weights ``(3q, p + q)``, blocks ordered z, r, candidate

Skip edge ``(s, t, P)`` adds ``P @ input_of_layer_s`` to the output of layer
``t``; ``P is None`` means identity.  In recurrent networks a source at or
before the cell contributes its value at the final time step.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "ActivationSpec",
    "LayerSpec",
    "SkipEdge",
    "NetworkGraph",
    "GraphError",
    "ModelFileError",
    "LAYER_KINDS",
    "VARIANTS",
    "builtin_activation",
    "build_reference_model",
    "dumps",
    "loads",
    "save",
    "load",
]

LAYER_KINDS = (
    "input_linear",
    "dense",
    "lstm_cell",
    "gru_cell",
    "output_linear",
    "pointwise_activation",
    "inverse_sigmoid",
)
RECURRENT_KINDS = ("lstm_cell", "gru_cell")
POINTWISE_KINDS = ("pointwise_activation", "inverse_sigmoid")
GATE_BLOCKS = {"lstm_cell": 4, "gru_cell": 3}

VARIANTS = (
    "mlp_bottleneck",
    "mlp_linear",
    "lstm_standard",
    "lstm_linear",
    "gru_standard",
    "gru_linear",
)

LOOKBACK = 10
RECURRENT_UNITS = 10


class GraphError(ValueError):
    """A network description violates a structural invariant."""


class ModelFileError(GraphError):
    """A model file could not be parsed."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    image_bounds: Optional[tuple[float, float]] = None
    lipschitz_constant: Optional[float] = None
    nondecreasing: bool = True
    limit_neg: Optional[float] = None
    limit_pos: Optional[float] = None

    def __post_init__(self):
        if self.image_bounds is not None:
            lo, hi = self.image_bounds
            if not lo <= hi:
                raise GraphError(f"activation {self.name}: image bounds {lo} > {hi}")
        if self.lipschitz_constant is not None and not self.lipschitz_constant > 0:
            raise GraphError(f"activation {self.name}: Lipschitz constant must be positive")
        if (self.nondecreasing and self.limit_neg is not None and self.limit_pos is not None
                and self.limit_neg > self.limit_pos):
            raise GraphError(f"activation {self.name}: limits out of order")


_BUILTINS = {
    "tanh": ActivationSpec("tanh", (-1.0, 1.0), 1.0, True, -1.0, 1.0),
    "logistic": ActivationSpec("logistic", (0.0, 1.0), 0.25, True, 0.0, 1.0),
    "relu": ActivationSpec("relu", None, 1.0, True, 0.0, None),
    "identity": ActivationSpec("identity", None, 1.0, True, None, None),
    # only used by inverse_sigmoid layers; neither bounded nor globally Lipschitz
    "logit": ActivationSpec("logit", None, None, True, None, None),
}


def builtin_activation(name: str) -> ActivationSpec:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise GraphError(f"unknown activation {name!r}") from None


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    activations: tuple[ActivationSpec, ...] = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")
        if not (isinstance(self.in_dim, int) and isinstance(self.out_dim, int)
                and self.in_dim > 0 and self.out_dim > 0):
            raise GraphError(f"{self.kind}: dims must be positive integers")
        if self.kind in POINTWISE_KINDS:
            if self.in_dim != self.out_dim:
                raise GraphError(f"{self.kind}: pointwise layer must preserve dimension")
            if self.weights is not None or self.bias is not None:
                raise GraphError(f"{self.kind}: pointwise layer has no weights")
        else:
            if self.weights is None or self.bias is None:
                raise GraphError(f"{self.kind}: weights and bias are required")
            w = np.array(self.weights, dtype=np.float64)
            b = np.array(self.bias, dtype=np.float64)
            if w.shape != self.weight_shape:
                raise GraphError(f"{self.kind}: weights shape {w.shape}, expected {self.weight_shape}")
            if b.shape != (self.weight_shape[0],):
                raise GraphError(f"{self.kind}: bias shape {b.shape}, expected {(self.weight_shape[0],)}")
            w.setflags(write=False)
            b.setflags(write=False)
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "bias", b)
        need = 2 if self.kind in RECURRENT_KINDS else 1
        if self.kind == "inverse_sigmoid" and not self.activations:
            object.__setattr__(self, "activations", (builtin_activation("logit"),))
        if len(self.activations) != need:
            raise GraphError(f"{self.kind}: expected {need} activation(s), got {len(self.activations)}")

    @property
    def weight_shape(self) -> tuple[int, int]:
        if self.kind in RECURRENT_KINDS:
            q = self.out_dim
            return (GATE_BLOCKS[self.kind] * q, self.in_dim + q)
        return (self.out_dim, self.in_dim)

    @property
    def activation(self) -> ActivationSpec:
        """The activation producing the layer output (candidate/output for cells)."""
        return self.activations[-1]

    @property
    def gate_activation(self) -> ActivationSpec:
        if self.kind not in RECURRENT_KINDS:
            raise GraphError(f"{self.kind} has no gate activation")
        return self.activations[0]

    @property
    def n_params(self) -> int:
        return 0 if self.weights is None else self.weights.size + self.bias.size

    def with_params(self, weights, bias) -> "LayerSpec":
        return replace(self, weights=weights, bias=bias)

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (self.kind == other.kind and self.in_dim == other.in_dim
                and self.out_dim == other.out_dim and self.activations == other.activations
                and self.extra == other.extra
                and _arr_eq(self.weights, other.weights) and _arr_eq(self.bias, other.bias))


def _arr_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class SkipEdge:
    source: int
    target: int
    projection: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.projection is not None:
            p = np.array(self.projection, dtype=np.float64)
            if p.ndim != 2:
                raise GraphError("skip projection must be a matrix")
            p.setflags(write=False)
            object.__setattr__(self, "projection", p)

    def __eq__(self, other):
        if not isinstance(other, SkipEdge):
            return NotImplemented
        return (self.source == other.source and self.target == other.target
                and _arr_eq(self.projection, other.projection))


@dataclass(frozen=True)
class NetworkGraph:
    layers: tuple[LayerSpec, ...]
    skip_edges: tuple[SkipEdge, ...] = ()
    input_dim: int = 0
    output_dim: int = 0
    lookback: int = LOOKBACK

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "skip_edges", tuple(self.skip_edges))
        self.validate()

    def validate(self) -> None:
        layers = self.layers
        if len(layers) < 2:
            raise GraphError("a network needs at least an input and an output layer")
        if layers[0].kind != "input_linear":
            raise GraphError("first layer must be input_linear")
        if layers[-1].kind != "output_linear":
            raise GraphError("last layer must be output_linear")
        for i, layer in enumerate(layers[1:-1], start=1):
            if layer.kind in ("input_linear", "output_linear"):
                raise GraphError(f"layer {i}: {layer.kind} only allowed at the ends")
        if self.input_dim != layers[0].in_dim:
            raise GraphError(f"input_dim {self.input_dim} != first layer in_dim {layers[0].in_dim}")
        if self.output_dim != layers[-1].out_dim:
            raise GraphError(f"output_dim {self.output_dim} != last layer out_dim {layers[-1].out_dim}")
        for i in range(1, len(layers)):
            if layers[i - 1].out_dim != layers[i].in_dim:
                raise GraphError(
                    f"layer {i}: in_dim {layers[i].in_dim} != previous out_dim {layers[i - 1].out_dim}")
        n_rec = sum(layer.kind in RECURRENT_KINDS for layer in layers)
        if n_rec > 1:
            raise GraphError("at most one recurrent cell is supported")
        if not (isinstance(self.lookback, int) and self.lookback > 0):
            raise GraphError("lookback must be a positive integer")
        for e in self.skip_edges:
            if not (0 <= e.source < len(layers) and 0 <= e.target < len(layers)):
                raise GraphError(f"skip edge ({e.source}, {e.target}) out of range")
            if e.target <= e.source:
                raise GraphError(f"skip edge ({e.source}, {e.target}) must point to a strictly later layer")
            src_dim = layers[e.source].in_dim
            dst_dim = layers[e.target].out_dim
            if e.projection is None:
                if src_dim != dst_dim:
                    raise GraphError(f"skip edge ({e.source}, {e.target}) needs a projection for {src_dim}->{dst_dim}")
            elif e.projection.shape != (dst_dim, src_dim):
                raise GraphError(
                    f"skip edge ({e.source}, {e.target}): projection shape {e.projection.shape}, "
                    f"expected {(dst_dim, src_dim)}")

    @property
    def recurrent_index(self) -> Optional[int]:
        for i, layer in enumerate(self.layers):
            if layer.kind in RECURRENT_KINDS:
                return i
        return None

    @property
    def is_recurrent(self) -> bool:
        return self.recurrent_index is not None

    @property
    def hidden_indices(self) -> range:
        return range(1, len(self.layers) - 1)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers) + sum(
            e.projection.size for e in self.skip_edges if e.projection is not None)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: per-layer (W, b), then skip projections."""
        out = []
        for layer in self.layers:
            if layer.weights is not None:
                out += [layer.weights, layer.bias]
        out += [e.projection for e in self.skip_edges if e.projection is not None]
        return out

    def with_parameters(self, params) -> "NetworkGraph":
        params = list(params)
        it = iter(params)
        layers = []
        for layer in self.layers:
            if layer.weights is not None:
                layers.append(layer.with_params(next(it), next(it)))
            else:
                layers.append(layer)
        edges = [replace(e, projection=next(it)) if e.projection is not None else e
                 for e in self.skip_edges]
        return replace(self, layers=tuple(layers), skip_edges=tuple(edges))


# -- reference models --------------------------------------------------------

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    k = math.sqrt(1.0 / fan_in)
    return rng.uniform(-k, k, size=shape)


def _layer(kind, p, q, acts, rng, fan_in=None):
    probe = LayerSpec(kind, p, q, np.zeros(_shape(kind, p, q)), np.zeros(_shape(kind, p, q)[0]),
                      tuple(builtin_activation(a) for a in acts))
    fan = fan_in if fan_in is not None else p
    w = _uniform(rng, probe.weight_shape, fan)
    b = _uniform(rng, (probe.weight_shape[0],), fan)
    return probe.with_params(w, b)


def _shape(kind, p, q):
    if kind in RECURRENT_KINDS:
        return (GATE_BLOCKS[kind] * q, p + q)
    return (q, p)


def build_reference_model(variant: str, seed: int = 0) -> NetworkGraph:
    """One of the six straight-line forecasting models, with seeded weights.

    MLPs take the flattened lookback window; recurrent models take one value
    per step and read out the final hidden state.
    """
    if variant not in VARIANTS:
        raise GraphError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    family, flavour = variant.split("_")
    streams = np.random.SeedSequence([seed, VARIANTS.index(variant)]).spawn(4)
    rngs = [np.random.default_rng(s) for s in streams]
    if family == "mlp":
        acts = ("tanh", "logistic") if flavour == "bottleneck" else ("identity", "identity")
        layers = [
            _layer("input_linear", LOOKBACK, 1, ("identity",), rngs[0]),
            _layer("dense", 1, 1, (acts[0],), rngs[1]),
            _layer("dense", 1, 1, (acts[1],), rngs[2]),
            _layer("output_linear", 1, 1, ("identity",), rngs[3]),
        ]
        return NetworkGraph(tuple(layers), (), LOOKBACK, 1, LOOKBACK)
    kind = "lstm_cell" if family == "lstm" else "gru_cell"
    cand = "tanh" if flavour == "standard" else "identity"
    u = RECURRENT_UNITS
    layers = [
        _layer("input_linear", 1, 1, ("identity",), rngs[0]),
        # framework convention: cell weights scale with the hidden size
        _layer(kind, 1, u, ("logistic", cand), rngs[1], fan_in=u),
        _layer("output_linear", u, 1, ("identity",), rngs[2]),
    ]
    return NetworkGraph(tuple(layers), (), 1, 1, LOOKBACK)


# -- model files -------------------------------------------------------------

FORMAT_VERSION = 1
_TOP_FIELDS = {"format", "input_dim", "output_dim", "lookback", "layers", "skip_edges"}
_LAYER_FIELDS = {"kind", "in_dim", "out_dim", "activations", "weights", "bias", "extra"}
_EDGE_FIELDS = {"source", "target", "projection"}


def _act_to_dict(a: ActivationSpec):
    if a == _BUILTINS.get(a.name):
        return a.name
    return {
        "name": a.name,
        "image_bounds": list(a.image_bounds) if a.image_bounds is not None else None,
        "lipschitz_constant": a.lipschitz_constant,
        "nondecreasing": a.nondecreasing,
        "limit_neg": a.limit_neg,
        "limit_pos": a.limit_pos,
    }


def to_dict(graph: NetworkGraph) -> dict:
    layers = []
    for layer in graph.layers:
        rec = {
            "kind": layer.kind,
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "activations": [_act_to_dict(a) for a in layer.activations],
        }
        if layer.weights is not None:
            rec["weights"] = [float(v) for v in layer.weights.ravel()]
            rec["bias"] = [float(v) for v in layer.bias]
        if layer.extra:
            rec["extra"] = dict(layer.extra)
        layers.append(rec)
    edges = []
    for e in graph.skip_edges:
        edges.append({
            "source": e.source,
            "target": e.target,
            "projection": None if e.projection is None else [float(v) for v in e.projection.ravel()],
        })
    return {
        "format": FORMAT_VERSION,
        "input_dim": graph.input_dim,
        "output_dim": graph.output_dim,
        "lookback": graph.lookback,
        "layers": layers,
        "skip_edges": edges,
    }


def dumps(graph: NetworkGraph) -> str:
    return json.dumps(to_dict(graph), indent=1) + "\n"


def _require(rec: dict, allowed: set, required: set, where: str):
    if not isinstance(rec, dict):
        raise ModelFileError("expected an object", where)
    unknown = set(rec) - allowed
    if unknown:
        raise ModelFileError(f"unknown field(s) {sorted(unknown)}", where)
    missing = required - set(rec)
    if missing:
        raise ModelFileError(f"missing field(s) {sorted(missing)}", where)


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelFileError(f"expected integer, got {v!r}", where)
    return v


def _floats(v, where):
    if not isinstance(v, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ModelFileError("expected a list of numbers", where)
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ModelFileError("non-finite number", where)
    return arr


def _opt_float(v, where):
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFileError(f"expected number or null, got {v!r}", where)
    return float(v)


def _act_from(v, where) -> ActivationSpec:
    if isinstance(v, str):
        try:
            return builtin_activation(v)
        except GraphError as exc:
            raise ModelFileError(str(exc), where) from None
    _require(v, {"name", "image_bounds", "lipschitz_constant", "nondecreasing", "limit_neg", "limit_pos"},
             {"name"}, where)
    bounds = v.get("image_bounds")
    if bounds is not None:
        b = _floats(bounds, where + ".image_bounds")
        if b.shape != (2,):
            raise ModelFileError("image_bounds needs two numbers", where + ".image_bounds")
        bounds = (float(b[0]), float(b[1]))
    nondec = v.get("nondecreasing", True)
    if not isinstance(nondec, bool):
        raise ModelFileError("expected boolean", where + ".nondecreasing")
    try:
        return ActivationSpec(str(v["name"]), bounds,
                              _opt_float(v.get("lipschitz_constant"), where + ".lipschitz_constant"),
                              nondec,
                              _opt_float(v.get("limit_neg"), where + ".limit_neg"),
                              _opt_float(v.get("limit_pos"), where + ".limit_pos"))
    except GraphError as exc:
        raise ModelFileError(str(exc), where) from None


def from_dict(doc) -> NetworkGraph:
    _require(doc, _TOP_FIELDS, {"input_dim", "output_dim", "layers"}, "<root>")
    if doc.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format {doc.get('format')!r}", "format")
    if not isinstance(doc["layers"], list):
        raise ModelFileError("expected a list", "layers")
    layers = []
    for i, rec in enumerate(doc["layers"]):
        where = f"layers[{i}]"
        _require(rec, _LAYER_FIELDS, {"kind", "in_dim", "out_dim", "activations"}, where)
        kind = rec["kind"]
        p, q = _int(rec["in_dim"], where + ".in_dim"), _int(rec["out_dim"], where + ".out_dim")
        if not isinstance(rec["activations"], list):
            raise ModelFileError("expected a list", where + ".activations")
        acts = tuple(_act_from(a, f"{where}.activations[{j}]") for j, a in enumerate(rec["activations"]))
        w = b = None
        if "weights" in rec or "bias" in rec:
            if kind in RECURRENT_KINDS + ("dense", "input_linear", "output_linear"):
                if p <= 0 or q <= 0:
                    raise ModelFileError("dims must be positive", where)
                shape = _shape(kind, p, q)
                w = _floats(rec.get("weights"), where + ".weights")
                if w.size != shape[0] * shape[1]:
                    raise ModelFileError(f"weights has {w.size} entries, expected {shape[0]}x{shape[1]}",
                                         where + ".weights")
                w = w.reshape(shape)
            else:
                w = _floats(rec.get("weights", []), where + ".weights")
            b = _floats(rec.get("bias"), where + ".bias")
        extra = rec.get("extra", {})
        if not isinstance(extra, dict):
            raise ModelFileError("expected an object", where + ".extra")
        try:
            layers.append(LayerSpec(kind, p, q, w, b, acts, dict(extra)))
        except GraphError as exc:
            raise ModelFileError(str(exc), where) from None
    edges_doc = doc.get("skip_edges", [])
    if not isinstance(edges_doc, list):
        raise ModelFileError("expected a list", "skip_edges")
    edges = []
    for i, rec in enumerate(edges_doc):
        where = f"skip_edges[{i}]"
        _require(rec, _EDGE_FIELDS, {"source", "target"}, where)
        s, t = _int(rec["source"], where + ".source"), _int(rec["target"], where + ".target")
        proj = rec.get("projection")
        if proj is not None:
            if not (0 <= s < len(layers) and 0 <= t < len(layers)):
                raise ModelFileError(f"skip edge ({s}, {t}) out of range", where)
            proj = _floats(proj, where + ".projection")
            shape = (layers[t].out_dim, layers[s].in_dim)
            if proj.size != shape[0] * shape[1]:
                raise ModelFileError(f"projection has {proj.size} entries, expected {shape[0]}x{shape[1]}",
                                     where + ".projection")
            proj = proj.reshape(shape)
        edges.append(SkipEdge(s, t, proj))
    lookback = _int(doc.get("lookback", LOOKBACK), "lookback")
    try:
        return NetworkGraph(tuple(layers), tuple(edges), _int(doc["input_dim"], "input_dim"),
                            _int(doc["output_dim"], "output_dim"), lookback)
    except GraphError as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(str(exc)) from None


def loads(text: str) -> NetworkGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(exc.msg, line=exc.lineno) from None
    return from_dict(doc)


def save(graph: NetworkGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(graph))


def load(path) -> NetworkGraph:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
