"""Sequence data, ADAM, and the straight-line forecasting experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .cells import TapeOps, forward_batch, network_forward
from .graph import LOOKBACK, NetworkGraph, build_reference_model

__all__ = [
    "SequenceDataset",
    "TrainConfig",
    "TrainingDiverged",
    "TrainedModel",
    "generate_line",
    "generate_unbounded",
    "adam_step",
    "loss_and_grads",
    "train",
    "predict",
    "run_experiment",
]


@dataclass(frozen=True, eq=False)
class SequenceDataset:
    kind: str
    t: np.ndarray
    x: np.ndarray
    train_range: tuple[float, float]
    lookback: int = LOOKBACK
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("line", "trend", "random_walk"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.t) != len(self.x):
            raise ValueError("t and x differ in length")
        if len(self.x) <= self.lookback:
            raise ValueError(f"need more than {self.lookback} points, got {len(self.x)}")

    @property
    def points(self) -> list[tuple[int, float]]:
        return list(zip(self.t.tolist(), self.x.tolist()))

    def windows(self):
        """All supervision pairs: ``(windows, targets, target_times)``."""
        k = self.lookback
        n = len(self.x) - k
        idx = np.arange(k)[None, :] + np.arange(n)[:, None]
        return self.x[idx], self.x[k:], self.t[k:]

    def train_pairs(self):
        """Pairs whose target value lies in ``train_range``."""
        w, y, t = self.windows()
        lo, hi = self.train_range
        keep = (y >= lo) & (y <= hi)
        return w[keep], y[keep], t[keep]

    def test_pairs(self):
        return self.windows()


def generate_line(start: float = -20.0, stop: float = 20.0, lookback: int = LOOKBACK,
                  train_range=(-10.0, 10.0)) -> SequenceDataset:
    """Straight line ``x_t = x_{t-1} + 1`` from ``start`` to ``stop``."""
    n = int(round(stop - start)) + 1
    x = start + np.arange(n, dtype=np.float64)
    return SequenceDataset("line", np.arange(n), x, tuple(map(float, train_range)), lookback, 0)


def generate_unbounded(kind: str, n: int, seed: int = 0, *, slope: float = 1.0, noise: float = 0.0,
                       step: float = 1.0, lookback: int = LOOKBACK, train_range=None) -> SequenceDataset:
    """Trend ``x_t = slope * (t - (n-1)/2) + noise`` or a +-``step`` random walk from 0.

    ``train_range`` defaults to the middle half of the observed value range.
    """
    if n <= lookback:
        raise ValueError(f"n must exceed lookback ({lookback}), got {n}")
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    if kind == "trend":
        x = slope * (t - (n - 1) / 2.0)
        if noise:
            x = x + rng.normal(0.0, noise, size=n)
    elif kind == "random_walk":
        steps = rng.choice(np.array([-step, step]), size=n - 1)
        x = np.concatenate([[0.0], np.cumsum(steps)])
    else:
        raise ValueError(f"unknown unbounded sequence kind {kind!r}")
    if train_range is None:
        lo, hi = float(x.min()), float(x.max())
        q = (hi - lo) / 4.0
        train_range = (lo + q, hi - q)
    return SequenceDataset(kind, t, x.astype(np.float64), tuple(map(float, train_range)), lookback, seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    batch_size: Optional[int] = 1

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("ADAM eps must be positive")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError("batch_size must be positive or None")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float, model: str = ""):
        self.epoch = epoch
        self.loss = loss
        self.model = model
        who = f"{model}: " if model else ""
        super().__init__(f"{who}training diverged at epoch {epoch} (loss={loss})")


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], moments, config: TrainConfig, t: int):
    """One bias-corrected ADAM update.

    ``moments`` is ``(m, v)`` (lists matching ``params``) or ``None`` for
    zeros.  Returns ``(new_params, (m, v))``; inputs are not modified.
    """
    if t < 1:
        raise ValueError("ADAM step index starts at 1")
    if moments is None:
        moments = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    m_old, v_old = moments
    b1, b2 = config.adam_beta1, config.adam_beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_old, v_old, strict=True):
        if p.shape != g.shape:
            raise ad.ShapeError("adam_step", p.shape, g.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, (new_m, new_v)


def loss_and_grads(graph: NetworkGraph, windows, targets, params=None):
    """Mean squared error over the given pairs and its gradient per parameter."""
    params = graph.parameters() if params is None else params
    tape = ad.Tape()
    ops = TapeOps(tape)
    leaves = [tape.leaf(p) for p in params]
    total = None
    for w, y in zip(windows, targets):
        pred = network_forward(graph, w, ops=ops, params=leaves)
        diff = ad.sub(pred, tape.const(np.atleast_1d(y)))
        sq = ad.total(ad.mul(diff, diff))
        total = sq if total is None else ad.add(total, sq)
    loss = ad.mul(total, tape.const(1.0 / len(targets)))
    ad.backward(tape, loss)
    return float(loss.data), [leaf.grad.copy() for leaf in leaves]


@dataclass
class TrainedModel:
    name: str
    graph: NetworkGraph
    losses: list[float] = field(default_factory=list)
    predictions: Optional[np.ndarray] = None  # columns t, x_true, x_pred

    def prediction_rows(self):
        return [(self.name, int(t), float(xt), float(xp)) for t, xt, xp in self.predictions]


def train(graph: NetworkGraph, dataset: SequenceDataset, config: TrainConfig, name: str = ""):
    """Fit ``graph`` to the training pairs; returns ``(trained_graph, epoch_losses)``.

    Each epoch visits every training pair once; with ``batch_size`` set the
    pairs are shuffled (seeded by ``config.seed``) and one ADAM step is taken
    per mini-batch.  The recorded loss is the mean over the epoch's batches.
    """
    w, y, _ = dataset.train_pairs()
    if len(y) == 0:
        raise ValueError("dataset has no training pairs")
    rng = np.random.default_rng([config.seed, 0x5EED])
    params = graph.parameters()
    moments = None
    step = 0
    losses = []
    bs = len(y) if config.batch_size is None else config.batch_size
    for epoch in range(1, config.epochs + 1):
        order = np.arange(len(y)) if config.batch_size is None else rng.permutation(len(y))
        epoch_loss = 0.0
        for start in range(0, len(y), bs):
            sel = order[start:start + bs]
            loss, grads = loss_and_grads(graph, w[sel], y[sel], params)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(epoch, loss, name)
            step += 1
            params, moments = adam_step(params, grads, moments, config, step)
            epoch_loss += loss * len(sel)
        epoch_loss /= len(y)
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss, name)
        losses.append(epoch_loss)
    return graph.with_parameters(params), losses


def predict(graph: NetworkGraph, dataset: SequenceDataset) -> np.ndarray:
    """One-step predictions for every test window: rows ``(t, x_true, x_pred)``."""
    w, y, t = dataset.test_pairs()
    pred = forward_batch(graph, w)[:, 0]
    return np.column_stack([t.astype(np.float64), y, pred])


def run_experiment(variant, dataset: Optional[SequenceDataset] = None,
                   config: Optional[TrainConfig] = None, name: Optional[str] = None) -> TrainedModel:
    """Build (or take) a model, train it on the train split, predict the test split.

    ``variant`` is a reference-model name or a ready :class:`NetworkGraph`;
    reference weights are initialised from ``config.seed``.
    """
    dataset = dataset if dataset is not None else generate_line()
    config = config if config is not None else TrainConfig()
    if isinstance(variant, NetworkGraph):
        graph, name = variant, name or "custom"
    else:
        graph, name = build_reference_model(variant, config.seed), name or variant
    trained, losses = train(graph, dataset, config, name)
    preds = predict(trained, dataset)
    if not np.all(np.isfinite(preds[:, 2])):
        raise TrainingDiverged(config.epochs, float("nan"), name)
    return TrainedModel(name, trained, losses, preds)
