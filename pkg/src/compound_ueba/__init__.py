"""Insider-threat and compromised-account detection from audit logs.

Users are profiled per behavioral aspect with compound deviation matrices,
scored by per-aspect autoencoders and ordered for investigation by their
N-th best rank across aspects.
"""
from .deviation import CompoundMatrix, DeviationCube, DeviationParams, compute_sigma, compute_weight
from .errors import ConfigError, DataError, FormatError, GapError, StageError, TrainingDiverged, UebaError, UsageError
from .ingest import Aspect, AuditEvent, FrameConfig, MeasurementStore, extract_measurements, parse_event_stream
from .neuralnet import AutoencoderModel, TrainConfig, init_model, train
from .scoring import InvestigationList, prioritize, rank_users

__version__ = "0.1.0"

__all__ = [
    "Aspect", "AuditEvent", "AutoencoderModel", "CompoundMatrix", "ConfigError", "DataError",
    "DeviationCube", "DeviationParams", "FormatError", "FrameConfig", "GapError", "InvestigationList",
    "MeasurementStore", "StageError", "TrainConfig", "TrainingDiverged", "UebaError", "UsageError",
    "compute_sigma", "compute_weight", "extract_measurements", "init_model", "parse_event_stream",
    "prioritize", "rank_users", "train", "__version__",
]
