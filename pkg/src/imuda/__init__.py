"""Margin-increasing unsupervised domain adaptation with sliced Wasserstein alignment."""
__version__ = "0.1.0"

from .adapt import AdaptConfig, TrainReport, adapt_baseline_swd, adapt_imuda, pretrain, run_pipeline
from .config import RunConfig, load_run_config
from .data import Dataset, ShiftSpec, gen_blobs, gen_two_moons, load_csv, load_idx, save_csv
from .estimator import IMUDAClassifier
from .exceptions import (
    AlignmentBatchError,
    ConfigError,
    EstimationError,
    FormatError,
    GenerationError,
    ImudaError,
    InputError,
    NumericalError,
)
from .gmm import GmmModel, estimate_map, sample_gmm
from .metrics import bound_diagnostics, evaluate, pca2
from .nn import ArchSpec, ModelParams, forward_classifier, forward_encoder, init_model
from .pseudo import PseudoDataset, generate_pseudo
from .swd import exact_1d_w2_squared, exact_w2_squared_small, sample_projections, swd_empirical

