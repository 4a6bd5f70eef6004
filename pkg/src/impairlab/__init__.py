"""Desk-scale laboratory for a single-carrier radio link with front-end
impairments: waveform simulation, dataset generation, and a multi-task
neural estimator of the impairment parameters."""

from .sigproc import FrameConfig, SampleBuffer, SymbolFrame
from .impairments import ImpairmentParams, ImpairmentRanges, PARAM_NAMES
from .channel import ChannelRealization
from .receiver import SyncError, SyncResult
from .dataset import DatasetRecord, SplitSpec
from .neuralnet import AdamState, DenseLayer, MultiTaskMlp, SingleTaskMlp
from .trainlab import EvalReport, LossHistory, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ChannelRealization",
    "DatasetRecord",
    "DenseLayer",
    "EvalReport",
    "FrameConfig",
    "ImpairmentParams",
    "ImpairmentRanges",
    "LossHistory",
    "MultiTaskMlp",
    "PARAM_NAMES",
    "SampleBuffer",
    "SingleTaskMlp",
    "SplitSpec",
    "SymbolFrame",
    "SyncError",
    "SyncResult",
    "TrainConfig",
    "__version__",
]
