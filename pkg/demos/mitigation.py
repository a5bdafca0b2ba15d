"""
Removing a bottleneck
=====================

Three rewrites, each applied to the tanh/logistic MLP: a skip edge around the
saturating layers, swapping the activations, and a logit layer after the
logistic one.
"""

# %%
import numpy as np

from activation_bottleneck import TrainConfig, build_reference_model, mitigate, run_experiment
from activation_bottleneck.mitigation import MitigationError

g = build_reference_model("mlp_bottleneck", 0)

# %%
results = {s: mitigate(g, s) for s in ("skip", "swap", "inverse-sigmoid")}
for s, r in results.items():
    print(f"{s:16s} {r.transition}   {r.epsilon_transition}")

# %%
# The verdict flipping is necessary, not sufficient: retrain each rewrite and
# look at the error on the far end of the line.  The logit simply undoes the
# logistic, and the argument of that logistic is an affine map of a tanh
# output.  So the true image is still bounded; the analyzer just can no
# longer prove it (the logit layer is treated as unbounded), and the
# retrained model extrapolates as badly as before.
for s, r in results.items():
    m = run_experiment(r.graph, config=TrainConfig(seed=0), name=s)
    err = np.abs(m.predictions[:, 2] - m.predictions[:, 1])
    print(f"{s:16s} max test error {err.max():.3f}")

# %%
# A logit only makes sense on (0, 1).  The GRU's output lives in [-1, 1], so
# that rewrite is refused and the message says why.
try:
    mitigate(build_reference_model("gru_standard", 0), "inverse-sigmoid")
except MitigationError as exc:
    print("refused:", exc)
