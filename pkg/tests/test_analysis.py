import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activation_bottleneck.analysis import (INDETERMINATE, INFINITE, AnalysisError, Box,
                                            DomainDescriptor, analyze, empirical_bound_check,
                                            epsilon_star_verdict, is_sigmoidal, layer_image_bounded,
                                            lstm_gru_image_bounded, render_report)
from activation_bottleneck.graph import (ActivationSpec, LayerSpec, NetworkGraph, SkipEdge,
                                         build_reference_model, builtin_activation)

BIG = Box.uniform(-1e6, 1e6, 1)


def unbounded(dim):
    return DomainDescriptor.unbounded(dim)


def _layer(kind, p, q, act, w=None, b=None):
    w = np.ones((q, p)) if w is None else np.asarray(w, dtype=float)
    b = np.zeros(q) if b is None else np.asarray(b, dtype=float)
    return LayerSpec(kind, p, q, w, b, (builtin_activation(act),))


class TestIsSigmoidal:
    @pytest.mark.parametrize("name,expected", [("tanh", True), ("logistic", True),
                                               ("relu", False), ("identity", False)])
    def test_builtins(self, name, expected):
        assert is_sigmoidal(builtin_activation(name)) is expected

    def test_needs_monotonicity(self):
        assert not is_sigmoidal(ActivationSpec("bump", (0.0, 1.0), 1.0, False, 0.0, 0.0))


class TestLayerImageBounded:
    def test_tanh_on_unbounded_input(self):
        v = layer_image_bounded(_layer("dense", 3, 2, "tanh"), unbounded(3))
        assert v.image_bounded
        np.testing.assert_array_equal(v.certified_interval.lo, [-1, -1])
        np.testing.assert_array_equal(v.certified_interval.hi, [1, 1])

    def test_affine_interval(self):
        v = layer_image_bounded(_layer("output_linear", 1, 1, "identity", [[2.0]], [1.0]), Box([0.0], [1.0]))
        assert v.image_bounded
        assert v.certified_interval.lo[0] == pytest.approx(1.0, abs=1e-9)
        assert v.certified_interval.hi[0] == pytest.approx(3.0, abs=1e-9)
        assert v.certified_interval.lo[0] <= 1.0 and v.certified_interval.hi[0] >= 3.0

    def test_negative_weights(self):
        v = layer_image_bounded(_layer("dense", 2, 1, "identity", [[-1.0, 2.0]], [0.5]),
                                Box([0.0, -1.0], [1.0, 1.0]))
        assert v.certified_interval.lo[0] == pytest.approx(-2.5)
        assert v.certified_interval.hi[0] == pytest.approx(2.5)

    def test_identity_on_unbounded_input(self):
        v = layer_image_bounded(_layer("dense", 1, 1, "identity"), unbounded(1))
        assert not v.image_bounded and v.certified_interval is None

    def test_zero_weight_ignores_unbounded_coordinate(self):
        v = layer_image_bounded(_layer("dense", 2, 1, "identity", [[0.0, 1.0]]), Box([-np.inf, 0.0], [np.inf, 2.0]))
        assert v.image_bounded

    def test_relu_on_unbounded(self):
        assert not layer_image_bounded(_layer("dense", 1, 1, "relu"), unbounded(1)).image_bounded

    def test_inverse_sigmoid_never_certified(self):
        v = layer_image_bounded(LayerSpec("inverse_sigmoid", 1, 1), Box([0.2], [0.8]))
        assert not v.image_bounded and v.lipschitz == "locally_only"

    def test_bounded_domain_descriptor_needs_box(self):
        with pytest.raises(AnalysisError):
            DomainDescriptor(1, True)


class TestRecurrentVerdicts:
    def test_lstm_standard(self):
        v = lstm_gru_image_bounded(build_reference_model("lstm_standard", 0).layers[1])
        assert v.image_bounded
        assert v.certified_interval == Box.uniform(-1.0, 1.0, 10)

    def test_lstm_linear(self):
        assert not lstm_gru_image_bounded(build_reference_model("lstm_linear", 0).layers[1]).image_bounded

    def test_gru_standard(self):
        v = lstm_gru_image_bounded(build_reference_model("gru_standard", 0).layers[1])
        assert v.image_bounded and v.certified_interval == Box.uniform(-1.0, 1.0, 10)

    def test_gru_linear(self):
        assert not lstm_gru_image_bounded(build_reference_model("gru_linear", 0).layers[1]).image_bounded

    def test_rejects_dense(self):
        with pytest.raises(AnalysisError):
            lstm_gru_image_bounded(_layer("dense", 1, 1, "tanh"))


class TestAnalyze:
    def test_mlp_bottleneck(self):
        r = analyze(build_reference_model("mlp_bottleneck", 0), unbounded(1), True)
        assert r.bottleneck_layers == (1, 2)
        assert r.network_image_bounded and r.network_output_interval is not None
        assert r.epsilon_star == INFINITE

    def test_mlp_linear(self):
        r = analyze(build_reference_model("mlp_linear", 0), unbounded(1), True)
        assert r.bottleneck_layers == ()
        assert not r.network_image_bounded
        assert r.epsilon_star == INDETERMINATE

    def test_skip_from_input_to_output_voids_bound(self):
        g = build_reference_model("mlp_bottleneck", 0)
        g = NetworkGraph(g.layers, (SkipEdge(0, 3, np.full((1, 10), 0.1)),), g.input_dim, g.output_dim)
        r = analyze(g, unbounded(1), True)
        assert r.bottleneck_layers == (1, 2)
        assert not r.network_image_bounded
        assert r.epsilon_star == INDETERMINATE

    def test_skip_from_bounded_source_keeps_bound(self):
        g = build_reference_model("mlp_bottleneck", 0)
        g = NetworkGraph(g.layers, (SkipEdge(2, 3),), g.input_dim, g.output_dim)
        assert analyze(g).network_image_bounded

    def test_recurrent(self):
        for v, bounded in [("lstm_standard", True), ("lstm_linear", False),
                           ("gru_standard", True), ("gru_linear", False)]:
            r = analyze(build_reference_model(v, 0))
            assert r.network_image_bounded is bounded
            assert r.bottleneck_layers == ((1,) if bounded else ())

    def test_bounded_target_gives_indeterminate(self):
        g = build_reference_model("mlp_bottleneck", 0)
        r = analyze(g, DomainDescriptor(1, True, Box([-5.0], [5.0])), True)
        assert r.network_image_bounded and r.epsilon_star == INDETERMINATE

    def test_report_invariants(self, variant):
        r = analyze(build_reference_model(variant, 1))
        assert set(r.bottleneck_layers) == {v.layer_index for v in r.per_layer[1:-1] if v.image_bounded}
        assert (not r.network_image_bounded) or r.network_output_interval is not None

    def test_render(self):
        g = build_reference_model("mlp_bottleneck", 0)
        r = analyze(g)
        text = render_report(r, g)
        assert "epsilon_star: infinite" in text and "bottleneck layers: 1, 2" in text
        machine = render_report(r, g, "machine")
        kv = dict(line.split("=", 1) for line in machine.splitlines())
        assert kv["epsilon_star"] == "infinite"
        assert kv["layer.1.image_bounded"] == "true"
        assert kv["layer.0.image_bounded"] == "false"
        lo, hi = map(float, kv["output_interval"].split(","))
        assert lo == r.network_output_interval.lo[0] and hi == r.network_output_interval.hi[0]


def test_epsilon_star_truth_table():
    for bounded, cod_bounded, surj in itertools.product([False, True], repeat=3):
        expected = INFINITE if (bounded and not cod_bounded and surj) else INDETERMINATE
        assert epsilon_star_verdict(bounded, cod_bounded, surj) == expected


class TestEmpiricalCheck:
    def test_mlp_bottleneck_sound(self):
        g = build_reference_model("mlp_bottleneck", 0)
        r = analyze(g)
        assert empirical_bound_check(g, r, 100_000, Box.uniform(-1e6, 1e6, 10), seed=1) == 0

    def test_lstm_hidden_outputs(self):
        g = build_reference_model("lstm_standard", 0)
        r = analyze(g)
        assert empirical_bound_check(g, r, 20_000, BIG, seed=2, layer_index=1) == 0

    def test_corrupted_interval_is_caught(self):
        g = build_reference_model("mlp_bottleneck", 0)
        r = analyze(g)
        shrunk = r.network_output_interval.scaled(0.01)
        assert empirical_bound_check(g, r, 10_000, Box.uniform(-1e6, 1e6, 10), seed=3, interval=shrunk) > 0

    def test_report_graph_mismatch(self):
        g = build_reference_model("mlp_bottleneck", 0)
        other = build_reference_model("mlp_bottleneck", 1)
        with pytest.raises(AnalysisError):
            empirical_bound_check(other, analyze(g), 10, Box.uniform(-1, 1, 10))

    def test_unbounded_layer_has_no_certificate(self):
        g = build_reference_model("mlp_linear", 0)
        with pytest.raises(AnalysisError):
            empirical_bound_check(g, analyze(g), 10, Box.uniform(-1, 1, 10))


# -- random small graphs ---------------------------------------------------------

ACTS = ["tanh", "logistic", "relu", "identity"]


@st.composite
def small_graphs(draw):
    n_in = draw(st.integers(1, 3))
    n_hidden = draw(st.integers(1, 3))
    dims = [n_in] + [draw(st.integers(1, 3)) for _ in range(n_hidden + 1)] + [1]
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    layers = []
    kinds = ["input_linear"] + ["dense"] * n_hidden + ["output_linear"]
    for i, kind in enumerate(kinds):
        act = "identity" if kind != "dense" else draw(st.sampled_from(ACTS))
        p, q = dims[i], dims[i + 1]
        scale = draw(st.sampled_from([0.5, 2.0, 10.0]))
        layers.append(LayerSpec(kind, p, q, rng.uniform(-scale, scale, (q, p)), rng.uniform(-scale, scale, q),
                                (builtin_activation(act),)))
    edges = []
    if draw(st.booleans()):
        s = draw(st.integers(0, len(layers) - 2))
        t = draw(st.integers(s + 1, len(layers) - 1))
        edges.append(SkipEdge(s, t, rng.uniform(-1, 1, (layers[t].out_dim, layers[s].in_dim))))
    return NetworkGraph(tuple(layers), tuple(edges), n_in, 1)


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.integers(0, 1000), st.sampled_from([1.0, 1e3, 1e6]))
def test_soundness_on_random_graphs(g, seed, radius):
    r = analyze(g)
    if not r.network_image_bounded:
        return
    box = Box.uniform(-radius, radius, g.input_dim)
    assert empirical_bound_check(g, r, 2000, box, seed=seed) == 0


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.sampled_from(["tanh", "logistic", "relu", "identity"]), st.integers(0, 100))
def test_appending_lipschitz_layer_keeps_bounded_verdict(g, act, seed):
    r = analyze(g)
    if not r.network_image_bounded:
        return
    rng = np.random.default_rng(seed)
    q = g.layers[-1].in_dim
    extra = LayerSpec("dense", q, q, rng.normal(size=(q, q)), rng.normal(size=q), (builtin_activation(act),))
    layers = g.layers[:-1] + (extra, g.layers[-1])
    edges = tuple(SkipEdge(e.source, e.target + (e.target == len(g.layers) - 1), e.projection)
                  for e in g.skip_edges)
    assert analyze(NetworkGraph(layers, edges, g.input_dim, g.output_dim)).network_image_bounded


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["tanh", "logistic"]), st.integers(1, 4), st.integers(1, 3),
       st.one_of(st.none(), st.floats(-1e3, 1e3)), st.integers(0, 100))
def test_sigmoidal_output_always_bounded(act, p, q, lo, seed):
    rng = np.random.default_rng(seed)
    layer = LayerSpec("dense", p, q, rng.normal(size=(q, p)) * 100, rng.normal(size=q), (builtin_activation(act),))
    desc = unbounded(p) if lo is None else Box.uniform(lo, lo + 1.0, p)
    assert layer_image_bounded(layer, desc).image_bounded
