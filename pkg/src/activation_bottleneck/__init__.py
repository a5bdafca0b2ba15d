"""Activation bottlenecks: detect bounded-image layers, certify output
bounds, and reproduce the straight-line forecasting experiment."""

from .analysis import (AnalysisReport, Box, DomainDescriptor, LayerVerdict, analyze,
                       empirical_bound_check, is_sigmoidal, layer_image_bounded,
                       lstm_gru_image_bounded, render_report)
from .cells import forward_batch, network_forward
from .graph import (VARIANTS, ActivationSpec, LayerSpec, NetworkGraph, SkipEdge,
                    build_reference_model, builtin_activation)
from .mitigation import add_skip_bypass, append_inverse_sigmoid, mitigate, swap_activation
from .training import (SequenceDataset, TrainConfig, generate_line, generate_unbounded,
                       run_experiment)

__version__ = "0.1.0"
