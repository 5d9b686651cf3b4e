"""Multi-region ensemble of dual-input CNNs for facial expression recognition."""
from .checkpoint import load_checkpoint, save_checkpoint
from .ensemble import (PRESETS, ConfusionMatrix, EnsembleWeights, clip_average, confusion,
                       ensemble_predict, mean_diagonal)
from .estimators import MultiRegionEnsembleClassifier, RegionExtractor, SubNetworkClassifier
from .network import ArchSpec, SubNetwork, build_subnetwork, parameter_count
from .training import (OptimizerState, PairDataset, TrainConfig, sgd_step,
                       softmax_cross_entropy, train)

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "ArchSpec", "ConfusionMatrix", "EnsembleWeights", "MultiRegionEnsembleClassifier",
    "OptimizerState", "PairDataset", "RegionExtractor", "SubNetwork", "SubNetworkClassifier",
    "TrainConfig", "build_subnetwork", "clip_average", "confusion", "ensemble_predict",
    "load_checkpoint", "mean_diagonal", "parameter_count", "save_checkpoint", "sgd_step",
    "softmax_cross_entropy", "train",
]
