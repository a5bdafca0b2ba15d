"""Graph rewrites that remove the bounded-output verdict.

Three strategies: bypass the bottleneck with an additive skip edge, swap the
saturating activation for an unbounded one, or place an (unbounded, not
globally Lipschitz) inverse sigmoid after a layer whose outputs lie in (0, 1).
All rewrites return new graphs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .analysis import AnalysisReport, analyze, is_sigmoidal
from .graph import LayerSpec, NetworkGraph, RECURRENT_KINDS, SkipEdge, builtin_activation

__all__ = [
    "MitigationError",
    "MitigationResult",
    "STRATEGIES",
    "add_skip_bypass",
    "swap_activation",
    "append_inverse_sigmoid",
    "mitigate",
]

STRATEGIES = ("skip", "swap", "inverse-sigmoid")


class MitigationError(ValueError):
    """A rewrite's precondition does not hold."""


def add_skip_bypass(graph: NetworkGraph, bottleneck_index: Optional[int] = None, seed: int = 0) -> NetworkGraph:
    """Add a skip edge from the input of a bottleneck layer past the last bottleneck.

    Defaults to the first bottleneck.  When the dimensions differ the edge
    gets a projection matrix initialised uniformly in +-sqrt(1/fan_in).
    """
    report = analyze(graph)
    if not report.bottleneck_layers:
        raise MitigationError("graph has no activation bottleneck to bypass")
    if bottleneck_index is None:
        bottleneck_index = report.bottleneck_layers[0]
    if bottleneck_index not in report.bottleneck_layers:
        raise MitigationError(
            f"layer {bottleneck_index} is not a bottleneck (bottlenecks: {list(report.bottleneck_layers)})")
    target = report.bottleneck_layers[-1] + 1
    src_dim = graph.layers[bottleneck_index].in_dim
    dst_dim = graph.layers[target].out_dim
    proj = None
    if src_dim != dst_dim:
        k = math.sqrt(1.0 / src_dim)
        proj = np.random.default_rng(seed).uniform(-k, k, size=(dst_dim, src_dim))
    if any(e.source == bottleneck_index and e.target == target for e in graph.skip_edges):
        raise MitigationError(f"skip edge ({bottleneck_index}, {target}) already present")
    out = replace(graph, skip_edges=graph.skip_edges + (SkipEdge(bottleneck_index, target, proj),))
    if analyze(out).network_image_bounded:
        raise MitigationError(
            f"bypass from layer {bottleneck_index} starts at a bounded input; bypass an earlier bottleneck")
    return out


_POSITIONS = {"candidate": 1, "output": 1, "gate": 0}


def _swap_one(layer: LayerSpec, index: int, replacement: str, positions) -> LayerSpec:
    acts = list(layer.activations)
    if layer.kind in RECURRENT_KINDS:
        slots = set()
        for pos in positions:
            if pos not in _POSITIONS:
                raise MitigationError(f"unknown activation position {pos!r}")
            if pos == "gate":
                raise MitigationError(f"layer {index}: gate activations are not swapped")
            slots.add(_POSITIONS[pos])
    else:
        slots = {len(acts) - 1}
    for s in sorted(slots):
        if not is_sigmoidal(acts[s]):
            raise MitigationError(f"layer {index}: activation {acts[s].name!r} is not sigmoidal")
        acts[s] = builtin_activation(replacement)
    return replace(layer, activations=tuple(acts))


def swap_activation(graph: NetworkGraph, layer_index: Optional[int] = None, replacement: str = "identity",
                    positions=("candidate", "output")) -> NetworkGraph:
    """Replace a sigmoidal activation with ``relu`` or ``identity``.

    With ``layer_index=None`` every hidden layer whose output activation is
    sigmoidal is swapped.  Recurrent cells share one slot for candidate and
    output activations; gates are never touched.
    """
    if replacement not in ("relu", "identity"):
        raise MitigationError(f"replacement must be relu or identity, got {replacement!r}")
    layers = list(graph.layers)
    if layer_index is None:
        targets = [i for i in graph.hidden_indices if is_sigmoidal(layers[i].activation)]
        if not targets:
            raise MitigationError("no hidden layer has a sigmoidal activation")
    else:
        if layer_index not in graph.hidden_indices:
            raise MitigationError(f"layer {layer_index} is not a hidden layer")
        targets = [layer_index]
    for i in targets:
        layers[i] = _swap_one(layers[i], i, replacement, positions)
    return replace(graph, layers=tuple(layers))


def append_inverse_sigmoid(graph: NetworkGraph, after: Optional[int] = None) -> NetworkGraph:
    """Insert a logit layer after ``after`` (default: the last bottleneck).

    Refused unless the analyzer certifies that layer's outputs lie strictly
    inside (0, 1).
    """
    report = analyze(graph)
    if after is None:
        if not report.bottleneck_layers:
            raise MitigationError("graph has no activation bottleneck")
        after = report.bottleneck_layers[-1]
    if after not in graph.hidden_indices:
        raise MitigationError(f"layer {after} is not a hidden layer")
    box = report.per_layer[after].certified_interval
    if box is None or not (np.all(box.lo > 0.0) and np.all(box.hi < 1.0)):
        shown = "unbounded" if box is None else f"[{box.lo.min():.6g}, {box.hi.max():.6g}]"
        raise MitigationError(
            f"inverse sigmoid needs inputs inside (0, 1); layer {after} is certified in {shown}")
    q = graph.layers[after].out_dim
    layers = list(graph.layers)
    layers.insert(after + 1, LayerSpec("inverse_sigmoid", q, q))

    def shift(i):
        return i + 1 if i > after else i

    edges = tuple(replace(e, source=shift(e.source), target=shift(e.target)) for e in graph.skip_edges)
    return replace(graph, layers=tuple(layers), skip_edges=edges)


@dataclass(frozen=True)
class MitigationResult:
    strategy: str
    graph: NetworkGraph
    before: AnalysisReport
    after: AnalysisReport

    @property
    def transition(self) -> str:
        b = str(self.before.network_image_bounded).lower()
        a = str(self.after.network_image_bounded).lower()
        return f"image_bounded: {b} → {a}"

    @property
    def epsilon_transition(self) -> str:
        return f"epsilon_star: {self.before.epsilon_star} → {self.after.epsilon_star}"


def mitigate(graph: NetworkGraph, strategy: str, **kwargs) -> MitigationResult:
    """Apply one strategy by name and report the verdict before and after."""
    rewrite = {
        "skip": add_skip_bypass,
        "swap": swap_activation,
        "inverse-sigmoid": append_inverse_sigmoid,
    }.get(strategy)
    if rewrite is None:
        raise MitigationError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    out = rewrite(graph, **kwargs)
    return MitigationResult(strategy, out, analyze(graph), analyze(out))
