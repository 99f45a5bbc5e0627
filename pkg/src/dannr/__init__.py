"""Domain adversarial neural network regression (DANN-R) on numpy."""
from .data import Dataset, FleetSpec, PlantDelta, apply_normalizer, fit_normalizer, generate_fleet, load_csv, save_csv
from .evaluation import EvalReport, mse, run_cell, run_experiment_matrix, transfer_ratio
from .model import DannrModel, init_model, load_checkpoint, objective, objective_gradients, save_checkpoint
from .train import LambdaSchedule, TrainConfig, train_baseline, train_dannr

__version__ = "0.1.0"
