"""
Forecasting a straight line
===========================

Train every reference model on the middle of x_t = t - 20 and watch the
saturating ones flatten out once the line leaves the training range.
Writes prediction tables and two SVG panels to ``demo_output/``.
"""

# %%
from pathlib import Path

import numpy as np

from activation_bottleneck import TrainConfig, analyze, generate_line, run_experiment
from activation_bottleneck import figures
from activation_bottleneck.graph import VARIANTS

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
# 41 points from -20 to 20; windows of 10 values predict the next one, and
# only pairs whose target lies in [-10, 10] are used for fitting.
line = generate_line()
w, y, _ = line.train_pairs()
print(len(line.points), "points,", len(line.windows()[1]), "windows,", len(y), "used for training")

# %%
# 100 epochs of ADAM per model.  The recurrent ones take a few seconds each.
models = {name: run_experiment(name, line, TrainConfig(seed=0)) for name in VARIANTS}

# %%
for name, m in models.items():
    t, truth, pred = m.predictions.T
    box = analyze(m.graph).network_output_interval
    print(f"{name:15s} pred@20={pred[-1]:8.3f}  max err={np.abs(pred - truth).max():8.3f}  certified={box}")

# %%
# Same layout as the usual two-panel comparison: saturating models on the
# left, unbounded ones on the right.
for panel, members in figures.PANELS.items():
    rows = figures.panel_rows([models[m] for m in members])
    (out / f"figure_{panel}.svg").write_text(
        figures.render_svg(figures.TITLES[panel], rows, train_range=line.train_range))
    (out / f"figure_{panel}.csv").write_text(figures.csv_text(("model", "t", "x_true", "x_pred"), rows))
print("wrote", sorted(p.name for p in out.iterdir()))
