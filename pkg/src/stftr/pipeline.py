"""End-to-end fitting and inference for both methods."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import cross_validate_mne, mne_bootstrap, mne_fit, mne_sources
from .config import RunConfig
from .forward import ForwardModel, TrialDataset
from .inference import (InferenceResult, choose_lambda2_two_fold, residual_bootstrap,
                        split_halves)
from .penalty import GroupTree, build_group_tree
from .refit import CvPlan, CvResult, RefitConfig, cross_validate, l2_refit, penalty_scales
from .solver import ActiveSetResult, SolverConfig, active_set_solve
from .stft import StftDictionary, analyze, build_dictionary

__all__ = ["StftrFit", "MnerFit", "dictionary_for", "solver_config", "fit_stftr",
           "fit_mner", "bootstrap_stftr", "bootstrap_mner", "hessian_scale", "mne_scale"]

logger = logging.getLogger(__name__)


def dictionary_for(data: TrialDataset, cfg: RunConfig) -> StftDictionary:
    fs = data.sampling_rate
    T0 = int(round(cfg.model.window_ms * fs / 1000))
    tau0 = int(round(cfg.model.step_ms * fs / 1000))
    return build_dictionary(data.T, T0, tau0, cfg.model.window_kind)


def solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(tol_z=s.tol_z, max_fista_iter=s.max_fista_iter, kkt_tol=s.kkt_tol,
                        active_batch=s.active_batch, max_outer_rounds=s.max_outer_rounds,
                        lipschitz_tol=s.lipschitz_tol)


def hessian_scale(model: ForwardModel) -> float:
    """Top eigenvalue of the data-fit Hessian (no safety factor)."""
    return model.lipschitz(safety=1.0)


def mne_scale(data: TrialDataset) -> float:
    return float(np.trace(data.G @ data.G.T) / data.n)


@dataclass
class StftrFit:
    Z: np.ndarray  # refit coefficients
    Z_l21: np.ndarray
    params: dict
    solve: ActiveSetResult
    cv: CvResult | None
    tree: GroupTree
    scales: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.solve.converged


@dataclass
class MnerFit:
    Z: np.ndarray
    lam: float
    cv_table: list
    scale: float


def fit_stftr(data: TrialDataset, d: StftDictionary, rois, cfg: RunConfig,
              initial_J=None) -> StftrFit:
    """Tune by cross-validation (unless all penalties are fixed), fit, refit.

    ``initial_J`` is the starting active set (first-level group indices);
    ``None`` starts from all ROI groups.
    """
    model = ForwardModel(data, d)
    tree = build_group_tree(rois, data.m, d.s, data.p, 0.0, 0.0, 0.0,
                            cfg.penalty.weight_policy)
    scales = penalty_scales(model, tree)
    scales["hessian"] = hessian_scale(model)
    pen, cv = cfg.penalty, cfg.cv
    a_scale = scales["alpha_max"] if scales["alpha_max"] > 0 else 1.0
    b_scale = scales["beta_max"]
    alpha_grid = [pen.alpha * a_scale] if pen.alpha is not None else [f * a_scale for f in cv.alpha_grid]
    beta_grid = [pen.beta * b_scale] if pen.beta is not None else [f * b_scale for f in cv.beta_grid]
    lam2_grid = [f * scales["hessian"] for f in cv.lambda2_grid]
    if pen.gamma is not None:
        gamma_policy, gamma_grid = "tuned", [pen.gamma * b_scale]
    elif cv.gamma_policy == "tuned":
        gamma_policy, gamma_grid = "tuned", [f * b_scale for f in cv.gamma_grid]
    else:
        gamma_policy, gamma_grid = "fixed-small", []
    plan = CvPlan(n_folds=cv.n_folds, alpha_grid=tuple(alpha_grid), beta_grid=tuple(beta_grid),
                  gamma_grid=tuple(gamma_grid), lambda2_grid=tuple(lam2_grid),
                  gamma_policy=gamma_policy, gamma_ratio=cv.gamma_ratio)
    scfg = solver_config(cfg)
    rcfg = RefitConfig(tuple(lam2_grid), cv.cg_tol, cv.cg_max_iter)
    points = plan.penalty_points()
    cv_result = None
    if len(points) * len(lam2_grid) > 1:
        cv_result = cross_validate(data, d, tree, plan, scfg, rcfg, initial_J=initial_J)
        best = cv_result.best
    else:
        a, b, g = points[0]
        best = {"alpha": a, "beta": b, "gamma": g, "lambda2": lam2_grid[0]}
    t = tree.with_params(best["alpha"], best["beta"], best["gamma"])
    solve = active_set_solve(data, d, t, scfg, initial_J=initial_J, model=model)
    mask = solve.z != 0
    if mask.any():
        Z = l2_refit(mask, data, d, best["lambda2"], rcfg, model=model).z
    else:
        Z = solve.z.copy()
    return StftrFit(Z, solve.z, dict(best), solve, cv_result, t, scales)


def fit_mner(data: TrialDataset, d: StftDictionary, cfg: RunConfig) -> MnerFit:
    scale = mne_scale(data)
    grid = [f * scale for f in cfg.cv.mne_lambda_grid]
    if len(grid) > 1:
        lam, table = cross_validate_mne(data, d, grid, cfg.cv.n_folds)
    else:
        lam, table = grid[0], []
    Z, _ = mne_fit(data, d, lam)
    return MnerFit(Z, lam, table, scale)


def bootstrap_stftr(data: TrialDataset, d: StftDictionary, tree: GroupTree, params: dict,
                    cfg: RunConfig, lambda2_grid=None) -> tuple[InferenceResult, dict]:
    """Data-splitting bootstrap.

    The sparse fit on the first half (trials 0, 2, 4, ...) fixes the
    support; the other half gives the ridge refit (parameter by 2-fold CV) whose residuals are
    bootstrapped.  ``lambda2_grid`` is absolute.
    """
    first, second = split_halves(data)
    scfg = solver_config(cfg)
    t = tree.with_params(params["alpha"], params["beta"], params["gamma"])
    solve = active_set_solve(first, d, t, scfg)
    mask = solve.z != 0
    if lambda2_grid is None:
        lambda2_grid = [params["lambda2"]]
    rcfg = RefitConfig(tuple(lambda2_grid), cfg.cv.cg_tol, cfg.cv.cg_max_iter)
    info = {"support_size": int(mask.sum()), "first_half_converged": bool(solve.converged)}
    if not mask.any():
        zeros = np.zeros(mask.shape + (2,))
        testable = np.stack([d.real_identifiable, d.imag_identifiable], axis=-1)
        res = InferenceResult(solve.z, zeros, zeros.copy(), mask, zeros.astype(bool),
                              testable, cfg.bootstrap.B)
        return res, info
    lam2 = choose_lambda2_two_fold(mask, second, d, rcfg)
    Z2 = l2_refit(mask, second, d, lam2, rcfg).z
    info["lambda2_second_half"] = lam2
    res = residual_bootstrap(second, d, mask, Z2, cfg.bootstrap.B, rcfg, cfg.bootstrap.seed)
    return res, info


def bootstrap_mner(data: TrialDataset, d: StftDictionary, lam: float,
                   cfg: RunConfig) -> InferenceResult:
    coefs = analyze(mne_sources(data, lam), d)
    return mne_bootstrap(coefs, data.X, d, cfg.bootstrap.B, cfg.bootstrap.seed)
