"""Contextual contrastive anomaly detection for time series, on a small numpy autodiff core."""

from .data import TimeSeries, WindowSpec, load_csv, make_windows
from .encoder import Encoder, EncoderConfig
from .evaluation import best_f1_search, point_adjust, roc_auc, score_series
from .losses import LossConfig
from .model import Detector
from .synthgen import SynthSpec, generate
from .trainer import TrainConfig, train
from .transforms import TransformBank

__all__ = [
    "Detector",
    "Encoder",
    "EncoderConfig",
    "LossConfig",
    "SynthSpec",
    "TimeSeries",
    "TrainConfig",
    "TransformBank",
    "WindowSpec",
    "best_f1_search",
    "generate",
    "load_csv",
    "make_windows",
    "point_adjust",
    "roc_auc",
    "score_series",
    "train",
]
__version__ = "0.1.0"
