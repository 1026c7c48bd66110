"""Conformal prediction aggregated over non-disclosing data sources."""

__version__ = "0.1.0"

from .aggregate import SourceEnsemble, aggregate_pvalues, ndcp_predict
from .conformal import PValuePair, PredictionRegion, TcpConfig, nonconformity, prediction_region, \
    smoothed_mondrian_pvalue, tcp_predict
from .dataset import Dataset, PartitionSpec, SplitSpec, load_csv, make_two_gaussians, partition, train_test_split
from .forest import ForestConfig, TrainedForest, predict_score, train_forest
from .metrics import calibration_curve, error_rate, observed_fuzziness, validity, wilcoxon_signed_rank

__all__ = [
    "Dataset", "SplitSpec", "PartitionSpec", "load_csv", "train_test_split", "partition", "make_two_gaussians",
    "ForestConfig", "TrainedForest", "train_forest", "predict_score",
    "PValuePair", "PredictionRegion", "TcpConfig", "nonconformity", "smoothed_mondrian_pvalue",
    "tcp_predict", "prediction_region",
    "SourceEnsemble", "aggregate_pvalues", "ndcp_predict",
    "error_rate", "calibration_curve", "validity", "observed_fuzziness", "wilcoxon_signed_rank",
]
