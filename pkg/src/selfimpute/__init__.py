"""Self-imputation anomaly detection for multivariate time series."""

from .core import AnomalyInterval, NormalizationStats, TimeSeries, denormalize, fit_normalizer, normalize
from .data import DataError, DatasetSpec, SyntheticSpec, generate_synthetic, load_csv, read_csv
from .detection import DetectionConfig, detect_points, detect_sequences
from .imputer import BIDIRECTIONAL, RECONSTRUCTION, ImputerModel, init_model
from .metrics import auprc, auroc, evaluate, point_prf
from .persistence import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .pipeline import detect, fit
from .scoring import dtw_distance, residual_score
from .training import TrainConfig, train

__version__ = "0.1.0"
