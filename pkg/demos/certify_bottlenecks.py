"""
Certifying bounded outputs
==========================

Build the six reference forecasters and ask the interval analyzer which of
them can only ever produce outputs from a fixed interval.
"""

# %%
from activation_bottleneck import Box, analyze, build_reference_model, empirical_bound_check, render_report
from activation_bottleneck.graph import VARIANTS

# %%
# A single report: the tanh/logistic MLP.  Layers 1 and 2 are flagged, and
# the output interval is finite no matter how large the input gets.
g = build_reference_model("mlp_bottleneck", seed=0)
print(render_report(analyze(g), g))

# %%
# All six variants at once.  A target series that can grow without limit
# cannot be matched by a network whose image is bounded, which is what the
# "infinite" epsilon_star records.
for name in VARIANTS:
    rep = analyze(build_reference_model(name, 0))
    print(f"{name:15s} bounded={rep.network_image_bounded!s:5s} epsilon_star={rep.epsilon_star}")

# %%
# The certificate is a claim about every input, so throw a lot of very large
# random windows at the LSTM and count escapes.
g = build_reference_model("lstm_standard", 0)
rep = analyze(g)
escapes = empirical_bound_check(g, rep, 100_000, Box.uniform(-1e6, 1e6, g.input_dim), seed=1)
print("lstm_standard output interval:", rep.network_output_interval, "escapes:", escapes)

# %%
# Swapping tanh for identity in the candidate path is enough to lose the
# bound, even though the gates are still logistic.
rep = analyze(build_reference_model("lstm_linear", 0))
print("lstm_linear output interval:", rep.network_output_interval or "none (unbounded)")
print("per-layer lipschitz:", [v.lipschitz for v in rep.per_layer])
