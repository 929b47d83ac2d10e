"""Channel estimation and MRC detection for OTFS over overspread channels."""

from .channel import (
    PROFILES,
    ChannelPath,
    ChannelProfile,
    ChannelRealization,
    apply_channel,
    generate_channel,
)
from .detector import DetectorConfig, mrc_detect
from .estimator import EstimatorConfig, PathEstimate, estimate
from .otfs_core import FrameGeometry, QamConstellation, dzt, idzt
from .training import TrainingFrame, build_training, training_from_snr

__version__ = "0.1.0"

__all__ = [
    "PROFILES",
    "ChannelPath",
    "ChannelProfile",
    "ChannelRealization",
    "DetectorConfig",
    "EstimatorConfig",
    "FrameGeometry",
    "PathEstimate",
    "QamConstellation",
    "TrainingFrame",
    "apply_channel",
    "build_training",
    "dzt",
    "estimate",
    "generate_channel",
    "idzt",
    "mrc_detect",
    "training_from_snr",
]
