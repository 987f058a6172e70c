"""Multilabel classification through group testing, with data-dependent
(symNMF based) pooling matrices and a hierarchical label-block variant."""
from .classifier import TrainConfig
from .dataset_io import Dataset, IndexingConfig, load_dataset, make_dataset
from .gt_construct import GroupTestingMatrix
from .pipeline import GTConfig, fit, fit_hierarchical, predict, predict_hierarchical

__all__ = ["Dataset", "GTConfig", "GroupTestingMatrix", "IndexingConfig", "TrainConfig", "fit",
           "fit_hierarchical", "load_dataset", "make_dataset", "predict", "predict_hierarchical"]
__version__ = "0.1.0"
