"""Cauchy-activation basis networks with a small autodiff core,
benchmark targets, a Poisson residual solver, and forecasting harnesses."""

__version__ = "0.1.0"

from .autodiff import (Dual, Node, ShapeError, backward, constant,
                       directional_derivative, parameter, record, tensor)
from .metrics import Metrics, RunReport, compute_metrics, emit_report
from .models import (BSplineFit1D, CauchyParams, LSTMCellParams, MLPModel,
                     XNetInit, XNetModel, bspline_fit, cauchy_eval,
                     lstm_step, load_checkpoint, mlp_forward, save_checkpoint,
                     sequence_forward, sequence_predict, xnet_forward)
from .optim import (AdamState, DivergenceError, TrainConfig, TrainingError,
                    TrainResult, adam_step, make_rng, split_rng, train)
from .pinn import (PinnLossParts, PinnProblem, exact_solution, pinn_loss,
                   poisson_rhs, sample_collocation, solve_poisson)
from .targets import (Dataset, SeriesSpec, TargetFunction, WindowDataset,
                      builtin_target, generate_series, load_csv_series,
                      make_windows, sample_dataset)
from .timeseries import (ForecastConfig, ForecastResult, compare_models,
                         run_forecast)
