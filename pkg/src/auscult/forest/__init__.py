"""Tree ensembles: supervised random forest and unsupervised fair-cut forest."""

from .fcf import FcfConfig, average_path_length, fcf_fit, fcf_score, fit_fair_cut_forest
from .model import TrainedModel, load, predict, save
from .rf import RfConfig, fit_random_forest, oob_log_loss, rf_fit, rf_predict
from .tuning import TuningResult, rf_tune

__all__ = [
    "FcfConfig",
    "RfConfig",
    "TrainedModel",
    "TuningResult",
    "average_path_length",
    "fcf_fit",
    "fcf_score",
    "fit_fair_cut_forest",
    "fit_random_forest",
    "load",
    "oob_log_loss",
    "predict",
    "rf_fit",
    "rf_predict",
    "rf_tune",
    "save",
]
