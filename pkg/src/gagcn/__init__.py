"""Gating-adjacency graph convolutional network (GAGCN) for skeleton motion prediction.

The package is layered bottom-up:

* :mod:`gagcn.numkernel` tensors, reverse-mode autodiff, seeded RNG, gradient oracle
* :mod:`gagcn.gating` adjacency banks and the gating network that blends them
* :mod:`gagcn.layers` Kronecker spatio-temporal layers and the encoder
* :mod:`gagcn.decoder` causal dilated TCN decoder and the full model
* :mod:`gagcn.motiondata` skeletons, windows, synthetic motions, CSV I/O
* :mod:`gagcn.trainer` metrics, Adam, training, horizon evaluation, ablations
* :mod:`gagcn.estimator` scikit-learn style ``fit``/``predict`` wrapper
* :mod:`gagcn.cli` the ``gagcn`` command
"""

from .decoder import GagcnModel, ModelConfig, TcnDecoder, build_model
from .estimator import GagcnForecaster
from .exceptions import (CheckpointError, ConfigurationError, ContractError, DimensionError,
                         DivergenceError, GagcnError, NumericError, OracleError, ParseError)
from .gating import AdjacencyBank, BlendingCoefficients, GatingNetwork, blend
from .layers import Encoder, GagcnLayer, StableLayer, st_apply
from .motiondata import (MotionSequence, Skeleton, WindowSet, load_coords_csv, load_expmap_csv,
                         make_windows, synth_dataset, synth_generate)
from .numkernel import Parameter, Rng, Tensor, finite_diff_check, no_grad
from .trainer import (AblationConfig, HorizonReport, TrainConfig, evaluate_horizons, mae, mpjpe,
                      run_ablation, train)

__version__ = "0.1.0"

__all__ = [
    "AblationConfig", "AdjacencyBank", "BlendingCoefficients", "CheckpointError", "ConfigurationError",
    "ContractError", "DimensionError", "DivergenceError", "Encoder", "GagcnError", "GagcnForecaster",
    "GagcnLayer", "GagcnModel", "GatingNetwork", "HorizonReport", "ModelConfig", "MotionSequence",
    "NumericError", "OracleError", "Parameter", "ParseError", "Rng", "Skeleton", "StableLayer",
    "TcnDecoder", "Tensor", "TrainConfig", "WindowSet", "blend", "build_model", "evaluate_horizons",
    "finite_diff_check", "load_coords_csv", "load_expmap_csv", "mae", "make_windows", "mpjpe",
    "no_grad", "run_ablation", "st_apply", "synth_dataset", "synth_generate", "train",
]
