"""Hierarchical sparse regression of trial-wise source activity on covariates
in a short-time Fourier dictionary, with a minimum-norm two-step baseline."""

from .stft import StftDictionary, analyze, build_dictionary, synthesize
from .forward import ForwardModel, TrialDataset
from .penalty import GroupTree, build_group_tree, penalty_value, prox
from .solver import SolverConfig, active_set_solve, fista, kkt_violation
from .refit import CvPlan, RefitConfig, cross_validate, l2_refit
from .inference import InferenceResult, averaged_absolute_t, residual_bootstrap
from .baseline import mne_bootstrap, mne_fit, mne_solve_trial
from .simulate import SimulationSpec, generate_dataset, prewhiten
from .metrics import mse_ratio, reconstruct_sources, rectified_mse

__version__ = "0.1.0"

__all__ = [
    "StftDictionary", "analyze", "build_dictionary", "synthesize",
    "ForwardModel", "TrialDataset",
    "GroupTree", "build_group_tree", "penalty_value", "prox",
    "SolverConfig", "active_set_solve", "fista", "kkt_violation",
    "CvPlan", "RefitConfig", "cross_validate", "l2_refit",
    "InferenceResult", "averaged_absolute_t", "residual_bootstrap",
    "mne_bootstrap", "mne_fit", "mne_solve_trial",
    "SimulationSpec", "generate_dataset", "prewhiten",
    "mse_ratio", "reconstruct_sources", "rectified_mse",
]
