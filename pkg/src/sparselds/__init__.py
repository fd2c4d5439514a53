"""Sparse linear dynamical systems learned by MAP expectation-maximization."""

from .core import (ModelParams, ObservationSequence, StateSequence, ValidationReport,
                   random_sparse_model, simulate, simulate_dataset, spectral_radius,
                   stationary_covariance, validate_params)
from .data_io import (load_model, load_raw_series, load_sequences, resample_interpolate,
                      save_model, write_raw_csv, write_report)
from .evaluation import (BenchmarkResult, PredictionTask, amae, evaluate_tasks, run_benchmark,
                         sample_tasks)
from .exceptions import DataError, NumericalFailureError, RejectedInputError, SparseLDSError
from .forecasting import Forecast, forecast
from .inference import (FilterResult, SmoothedStats, brute_force_smoother_oracle, kalman_filter,
                        log_likelihood, rts_smooth)
from .learning import (FitConfig, FitDiagnostics, PooledStats, em_fit, init_params,
                       pool_stats, prox_gradient_A)

__version__ = "0.1.0"
