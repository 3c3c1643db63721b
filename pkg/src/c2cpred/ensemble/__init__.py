"""Tree-ensemble regressors: bagged forests and boosted histogram trees."""

from .boosting import GbdtConfig, train_gbdt
from .forest import RfConfig, train_rf
from .model import (
    ColumnMismatchError,
    ForestModel,
    ModelFormatError,
    Tree,
    load_model,
    predict,
    save_model,
)

__all__ = [
    "ColumnMismatchError",
    "ForestModel",
    "GbdtConfig",
    "ModelFormatError",
    "RfConfig",
    "Tree",
    "load_model",
    "predict",
    "save_model",
    "train_gbdt",
    "train_rf",
]
