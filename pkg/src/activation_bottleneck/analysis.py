"""Static detection of activation bottlenecks.

Every layer output is over-approximated by a per-coordinate interval box
whose bounds may be infinite (the box with all-infinite bounds is "top").  A
layer's image is certified bounded when its output activation has a bounded
image regardless of input, or when its input is bounded and the layer is
globally Lipschitz.  Once the output layer is certified bounded while the
target is unbounded and surjective, the worst-case approximation error of
the network is infinite.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cells
from .graph import ActivationSpec, LayerSpec, NetworkGraph, RECURRENT_KINDS, dumps

__all__ = [
    "Box",
    "DomainDescriptor",
    "LayerVerdict",
    "AnalysisReport",
    "AnalysisError",
    "GLOBALLY",
    "LOCALLY_ONLY",
    "UNKNOWN",
    "INFINITE",
    "INDETERMINATE",
    "is_sigmoidal",
    "epsilon_star_verdict",
    "layer_lipschitz",
    "layer_image_bounded",
    "lstm_gru_image_bounded",
    "analyze",
    "empirical_bound_check",
    "render_report",
]

GLOBALLY = "globally"
LOCALLY_ONLY = "locally_only"
UNKNOWN = "unknown"

INFINITE = "infinite"
INDETERMINATE = "indeterminate"

# outward widening applied after affine maps; covers summation-order rounding
_SLACK = 1e-12


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Box:
    """Closed per-coordinate interval ``[lo_i, hi_i]``; bounds may be infinite."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise AnalysisError(f"box bounds differ in shape: {lo.shape} vs {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise AnalysisError("box needs lo <= hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def top(cls, dim: int) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, lo, dtype=np.float64), np.full(dim, hi, dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def scaled(self, factor: float) -> "Box":
        """Box with the same centre and each half-width multiplied by ``factor``."""
        mid, rad = (self.lo + self.hi) / 2, (self.hi - self.lo) / 2
        return Box(mid - factor * rad, mid + factor * rad)

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"


@dataclass(frozen=True)
class DomainDescriptor:
    dim: int
    bounded: bool
    sample_box: Optional[Box] = None

    def __post_init__(self):
        if self.dim <= 0:
            raise AnalysisError("domain dimension must be positive")
        if self.bounded and (self.sample_box is None or not self.sample_box.bounded):
            raise AnalysisError("a bounded domain needs a finite sample box")
        if self.sample_box is not None and self.sample_box.dim != self.dim:
            raise AnalysisError("sample box dimension differs from domain dimension")

    @classmethod
    def unbounded(cls, dim: int) -> "DomainDescriptor":
        return cls(dim, False)

    @property
    def box(self) -> Box:
        return self.sample_box if self.bounded else Box.top(self.dim)


@dataclass(frozen=True)
class LayerVerdict:
    layer_index: int
    image_bounded: bool
    certified_interval: Optional[Box]
    lipschitz: str

    def __post_init__(self):
        if self.image_bounded and (self.certified_interval is None or not self.certified_interval.bounded):
            raise AnalysisError(f"layer {self.layer_index}: bounded verdict needs a finite interval")


@dataclass(frozen=True)
class AnalysisReport:
    per_layer: tuple[LayerVerdict, ...]
    bottleneck_layers: tuple[int, ...]
    network_image_bounded: bool
    network_output_interval: Optional[Box]
    epsilon_star: str
    target_bounded: bool = False
    target_surjective: bool = True
    graph_digest: str = field(default="", compare=False)

    @property
    def has_bottleneck(self) -> bool:
        return bool(self.bottleneck_layers)

    @property
    def last_bottleneck(self) -> Optional[int]:
        return self.bottleneck_layers[-1] if self.bottleneck_layers else None


def _digest(graph: NetworkGraph) -> str:
    return hashlib.sha256(dumps(graph).encode()).hexdigest()


def is_sigmoidal(act: ActivationSpec) -> bool:
    """Non-decreasing with finite limits at both infinities."""
    return (act.nondecreasing and act.limit_neg is not None and act.limit_pos is not None
            and bool(np.isfinite(act.limit_neg)) and bool(np.isfinite(act.limit_pos)))


def epsilon_star_verdict(image_bounded: bool, codomain_bounded: bool, surjective: bool) -> str:
    if image_bounded and not codomain_bounded and surjective:
        return INFINITE
    return INDETERMINATE


# -- interval transfer functions ---------------------------------------------

def _widen(lo, hi, scale):
    pad = _SLACK * (1.0 + scale)
    return lo - pad, hi + pad


def affine_box(w: np.ndarray, b: np.ndarray, box: Box) -> Box:
    """Tight image of a box under ``x -> W x + b``."""
    w = np.asarray(w, dtype=np.float64)
    wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
    with np.errstate(invalid="ignore"):
        # 0 * inf is taken as 0: a zero weight ignores an unbounded coordinate
        t_lo = np.where(wp != 0, wp * box.lo, 0.0) + np.where(wn != 0, wn * box.hi, 0.0)
        t_hi = np.where(wp != 0, wp * box.hi, 0.0) + np.where(wn != 0, wn * box.lo, 0.0)
    lo = b + t_lo.sum(axis=1)
    hi = b + t_hi.sum(axis=1)
    finite = np.isfinite(lo) & np.isfinite(hi)
    scale = np.abs(b) + np.where(finite, np.abs(t_lo).sum(axis=1) + np.abs(t_hi).sum(axis=1), 0.0)
    lo, hi = _widen(lo, hi, scale)
    return Box(lo, hi)


def _act_limits(act: ActivationSpec, box: Box):
    """Values of a monotone activation at the box ends (infinite ends use limits)."""
    def at(x, limit, default):
        out = np.empty_like(x)
        inf = ~np.isfinite(x)
        out[~inf] = cells.NUMPY.act(act.name, x[~inf]) if act.name in cells._NP_ACTS else np.nan
        out[inf] = limit if limit is not None else default
        return out

    return at(box.lo, act.limit_neg, -np.inf), at(box.hi, act.limit_pos, np.inf)


def activation_box(act: ActivationSpec, box: Box) -> Box:
    if act.nondecreasing and act.name in cells._NP_ACTS:
        lo, hi = _act_limits(act, box)
    else:
        lo, hi = np.full(box.dim, -np.inf), np.full(box.dim, np.inf)
    if act.image_bounds is not None:
        lo = np.maximum(lo, act.image_bounds[0])
        hi = np.minimum(hi, act.image_bounds[1])
    return Box(lo, hi)


def _mul_box(a: Box, b: Box) -> Box:
    with np.errstate(invalid="ignore"):
        prods = np.stack([a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi])
    prods = np.where(np.isnan(prods), 0.0, prods)  # 0 * inf
    return Box(prods.min(axis=0), prods.max(axis=0))


def _add_box(a: Box, b: Box) -> Box:
    with np.errstate(invalid="ignore"):
        lo, hi = a.lo + b.lo, a.hi + b.hi
    return Box(lo, hi)


def _hull(a: Box, b: Box) -> Box:
    return Box(np.minimum(a.lo, b.lo), np.maximum(a.hi, b.hi))


# -- per-layer verdicts ------------------------------------------------------

def layer_lipschitz(layer: LayerSpec) -> str:
    if layer.kind == "inverse_sigmoid":
        return LOCALLY_ONLY
    if layer.kind in RECURRENT_KINDS:
        gate, cand = layer.activations
        ok = (gate.lipschitz_constant is not None and cand.lipschitz_constant is not None
              and gate.image_bounds is not None and cand.image_bounds is not None)
        return GLOBALLY if ok else UNKNOWN
    return GLOBALLY if layer.activation.lipschitz_constant is not None else UNKNOWN


def _as_box(descriptor, dim: int) -> Box:
    if isinstance(descriptor, Box):
        box = descriptor
    elif isinstance(descriptor, DomainDescriptor):
        box = descriptor.box
    elif descriptor is None:
        box = Box.top(dim)
    else:
        raise TypeError(f"expected Box or DomainDescriptor, got {type(descriptor).__name__}")
    if box.dim != dim:
        raise AnalysisError(f"input descriptor has dim {box.dim}, layer expects {dim}")
    return box


def _layer_box(layer: LayerSpec, box: Box) -> Box:
    if layer.kind in RECURRENT_KINDS:
        return _cell_box(layer)
    if layer.kind == "inverse_sigmoid":
        return Box.top(layer.out_dim)
    if layer.kind == "pointwise_activation":
        return activation_box(layer.activation, box)
    return activation_box(layer.activation, affine_box(layer.weights, layer.bias, box))


def _cell_box(cell: LayerSpec) -> Box:
    q = cell.out_dim
    gate, cand = cell.activations
    gate_box = activation_box(gate, Box.top(q))
    # cell state / pre-activations are unbounded; only saturating activations bound them
    cand_box = activation_box(cand, Box.top(q))
    if cell.kind == "lstm_cell":
        return _mul_box(gate_box, cand_box)
    if gate_box.bounded and np.all(gate_box.lo >= 0.0) and np.all(gate_box.hi <= 1.0):
        # convex combination of candidate values and the zero initial state
        return _hull(cand_box, Box(np.zeros(q), np.zeros(q)))
    return Box.top(q)


def layer_image_bounded(layer: LayerSpec, input_descriptor=None, index: int = -1) -> LayerVerdict:
    """Certify (or not) that a layer's output stays in a bounded box.

    ``input_descriptor`` is a :class:`DomainDescriptor`, a :class:`Box`, or
    ``None`` for an unbounded input.
    """
    if layer.kind in RECURRENT_KINDS:
        return lstm_gru_image_bounded(layer, index)
    box_in = _as_box(input_descriptor, layer.in_dim)
    lip = layer_lipschitz(layer)
    out = _layer_box(layer, box_in)
    act_bounded = layer.activation.image_bounds is not None
    # a finite interval is itself a proof; the Lipschitz gate keeps non-Lipschitz layers unproven
    bounded = out.bounded and (act_bounded or lip == GLOBALLY)
    return LayerVerdict(index, bounded, out if bounded else None, lip)


def lstm_gru_image_bounded(cell: LayerSpec, index: int = -1) -> LayerVerdict:
    """Hidden-output box of a recurrent cell, independent of its inputs."""
    if cell.kind not in RECURRENT_KINDS:
        raise AnalysisError(f"expected lstm_cell or gru_cell, got {cell.kind}")
    out = _cell_box(cell)
    return LayerVerdict(index, out.bounded, out if out.bounded else None, layer_lipschitz(cell))


# -- whole-network analysis --------------------------------------------------

def _propagate(graph: NetworkGraph, input_domain=None):
    """Per-layer input boxes, raw output boxes, and verdicts (skip edges included)."""
    layers = graph.layers
    in_boxes: list[Box] = []
    out_boxes: list[Box] = []
    verdicts: list[LayerVerdict] = []
    box = _as_box(input_domain, graph.input_dim)
    for i, layer in enumerate(layers):
        in_boxes.append(box)
        v = layer_image_bounded(layer, box, i)
        out = v.certified_interval if v.image_bounded else _layer_box(layer, box)
        if layer.kind == "inverse_sigmoid" or v.lipschitz != GLOBALLY and not v.image_bounded:
            out = Box.top(layer.out_dim)
        skips_bounded = True
        for e in graph.skip_edges:
            if e.target != i:
                continue
            src = in_boxes[e.source]
            add = src if e.projection is None else affine_box(e.projection, np.zeros(e.projection.shape[0]), src)
            skips_bounded &= add.bounded
            out = _add_box(out, add)
        bounded = v.image_bounded and skips_bounded and out.bounded
        verdicts.append(LayerVerdict(i, bounded, out if bounded else None, v.lipschitz))
        out_boxes.append(out)
        box = out
    return in_boxes, out_boxes, verdicts


def analyze(graph: NetworkGraph, target_codomain: DomainDescriptor | None = None,
            target_surjective: bool = True, input_domain=None) -> AnalysisReport:
    """Locate bottlenecks and decide whether the network output is bounded.

    Skip edges are folded into the propagation, so an unbounded source that
    jumps past the last bottleneck leaves the output unbounded.
    """
    if target_codomain is None:
        target_codomain = DomainDescriptor.unbounded(graph.output_dim)
    _, out_boxes, verdicts = _propagate(graph, input_domain)
    bottlenecks = tuple(i for i in graph.hidden_indices if verdicts[i].image_bounded)
    final = verdicts[-1]
    eps = epsilon_star_verdict(final.image_bounded, target_codomain.bounded, target_surjective)
    return AnalysisReport(
        per_layer=tuple(verdicts),
        bottleneck_layers=bottlenecks,
        network_image_bounded=final.image_bounded,
        network_output_interval=final.certified_interval,
        epsilon_star=eps,
        target_bounded=target_codomain.bounded,
        target_surjective=target_surjective,
        graph_digest=_digest(graph),
    )


def _sample_inputs(graph: NetworkGraph, samples: int, input_box: Box, rng) -> np.ndarray:
    if graph.is_recurrent:
        shape = (samples, graph.lookback, graph.input_dim)
    else:
        shape = (samples, graph.input_dim)
    if input_box.dim != graph.input_dim:
        raise AnalysisError(f"input box has dim {input_box.dim}, network input is {graph.input_dim}")
    return rng.uniform(input_box.lo, input_box.hi, size=shape)


def empirical_bound_check(graph: NetworkGraph, report: AnalysisReport, samples: int,
                          input_box: Box, seed=0, layer_index: Optional[int] = None,
                          interval: Optional[Box] = None, chunk: int = 20000) -> int:
    """Count sampled outputs that escape the certified interval.

    Checks the network output by default, or the output of ``layer_index``
    (for a recurrent cell: its final hidden state).  ``interval`` overrides
    the certificate, which is how the checker itself is sanity-tested.
    """
    if report.graph_digest and report.graph_digest != _digest(graph):
        raise AnalysisError("report was produced from a different graph")
    if len(report.per_layer) != len(graph.layers):
        raise AnalysisError("report and graph have different layer counts")
    if samples <= 0:
        raise AnalysisError("samples must be positive")
    idx = len(graph.layers) - 1 if layer_index is None else layer_index
    if interval is None:
        interval = report.per_layer[idx].certified_interval
        if interval is None:
            raise AnalysisError(f"layer {idx} has no certified interval")
    rng = np.random.default_rng(seed)
    violations = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        x = _sample_inputs(graph, n, input_box, rng)
        if layer_index is None:
            y = cells.forward_batch(graph, x)
        else:
            collected: dict = {}
            cells.forward_batch(graph, x, collect=collected)
            y = collected[idx]
        violations += int(np.count_nonzero(~interval.contains(y)))
        done += n
    return violations


# -- rendering ---------------------------------------------------------------

def _fmt_box(box: Optional[Box]) -> str:
    if box is None:
        return "unbounded"
    return " x ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in zip(box.lo, box.hi))


def render_report(report: AnalysisReport, graph: Optional[NetworkGraph] = None, fmt: str = "text") -> str:
    """Human-readable table (``text``) or ``key=value`` lines (``machine``)."""
    if fmt == "machine":
        lines = [
            f"network_image_bounded={str(report.network_image_bounded).lower()}",
            f"bottleneck_layers={','.join(map(str, report.bottleneck_layers))}",
            f"epsilon_star={report.epsilon_star}",
            f"target_bounded={str(report.target_bounded).lower()}",
            f"target_surjective={str(report.target_surjective).lower()}",
        ]
        if report.network_output_interval is not None:
            b = report.network_output_interval
            lines.append("output_interval=" + ";".join(f"{float(lo)!r},{float(hi)!r}" for lo, hi in zip(b.lo, b.hi)))
        for v in report.per_layer:
            p = f"layer.{v.layer_index}"
            if graph is not None:
                lines.append(f"{p}.kind={graph.layers[v.layer_index].kind}")
            lines.append(f"{p}.image_bounded={str(v.image_bounded).lower()}")
            lines.append(f"{p}.lipschitz={v.lipschitz}")
            if v.certified_interval is not None:
                b = v.certified_interval
                lines.append(f"{p}.interval=" + ";".join(f"{float(lo)!r},{float(hi)!r}" for lo, hi in zip(b.lo, b.hi)))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = [f"{'layer':>5}  {'kind':<28} {'bounded':<8} {'lipschitz':<13} interval"]
    for v in report.per_layer:
        kind = graph.layers[v.layer_index].kind if graph is not None else "-"
        if graph is not None:
            acts = "/".join(a.name for a in graph.layers[v.layer_index].activations)
            kind = f"{kind}({acts})"
        rows.append(f"{v.layer_index:>5}  {kind:<28} {str(v.image_bounded).lower():<8} "
                    f"{v.lipschitz:<13} {_fmt_box(v.certified_interval)}")
    bl = ", ".join(map(str, report.bottleneck_layers)) or "none"
    rows += [
        "",
        f"bottleneck layers: {bl}",
        f"image_bounded: {str(report.network_image_bounded).lower()}",
        f"output interval: {_fmt_box(report.network_output_interval)}",
        f"epsilon_star: {report.epsilon_star}",
    ]
    return "\n".join(rows) + "\n"
