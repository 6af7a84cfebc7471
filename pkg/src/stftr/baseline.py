"""Two-step baseline: per-trial minimum-norm estimates, then per-component OLS."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .forward import TrialDataset
from .inference import (DEFAULT_B, InferenceResult, bootstrap_sample, leverage,
                        replicate_rngs, replicate_sd, t_statistics)
from .refit import fit_train_test, heldout_error, interleaved_folds
from .stft import StftDictionary, analyze

__all__ = ["MneConfig", "MneSolver", "mne_solve_trial", "mne_regress", "mne_bootstrap",
           "mne_sources", "cross_validate_mne", "mne_fit"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MneConfig:
    lambda_mne_grid: tuple = (1.0,)
    n_folds: int = 5
    B: int = DEFAULT_B

    def __post_init__(self):
        if not self.lambda_mne_grid:
            raise ValueError("lambda_mne_grid must not be empty")


class MneSolver:
    """Tikhonov minimum-norm inverse ``G^T (G G^T + lambda I)^{-1}``.

    The Cholesky factor of the ``n x n`` system is computed once and reused
    for every trial.
    """

    def __init__(self, G: np.ndarray, lam: float):
        G = np.asarray(G, dtype=float)
        n = G.shape[0]
        self.G = G
        self.lam = float(lam)
        gram = G @ G.T + self.lam * np.eye(n)
        try:
            self._factor = linalg.cho_factor(gram, lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"G G^T + {lam} I is singular; use lambda > 0") from exc

    def __call__(self, M: np.ndarray) -> np.ndarray:
        """Source estimates for sensor data ``M`` of shape (n, T) or (q, n, T)."""
        M = np.asarray(M, dtype=float)
        if M.ndim == 2:
            return self.G.T @ linalg.cho_solve(self._factor, M)
        q, n, T = M.shape
        flat = np.moveaxis(M, 0, 1).reshape(n, q * T)
        sol = self.G.T @ linalg.cho_solve(self._factor, flat)
        return np.moveaxis(sol.reshape(-1, q, T), 1, 0)


def mne_solve_trial(M_r: np.ndarray, G: np.ndarray, lam: float) -> np.ndarray:
    """Minimum-norm source estimate ``G^T (G G^T + lam I)^{-1} M_r``, shape (m, T)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return MneSolver(G, lam)(M_r)


def _ols(C: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-component OLS of ``C`` (q, m, s) on ``X`` (q, p) -> (m, s, p)."""
    X = np.asarray(X, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("X^T X is singular")
    coef = np.linalg.solve(X.T @ X, X.T @ C.reshape(C.shape[0], -1))
    return np.moveaxis(coef.reshape((X.shape[1],) + C.shape[1:]), 0, -1)


def mne_regress(sources: np.ndarray, d: StftDictionary, X: np.ndarray):
    """STFT-analyze per-trial sources (q, m, T) and regress every component on ``X``.

    Returns ``(Z, residuals)`` with ``Z`` of shape (m, s, p) and the complex
    regression residuals of shape (q, m, s).
    """
    C = analyze(sources, d)  # (q, m, s)
    Z = _ols(C, X)
    resid = C - np.einsum("rk,msk->rms", X, Z)
    return Z, resid


def mne_sources(data: TrialDataset, lam: float) -> np.ndarray:
    return MneSolver(data.G, lam)(data.M)


def cross_validate_mne(data: TrialDataset, d: StftDictionary, grid, n_folds: int = 5):
    """Choose the minimum-norm parameter by held-out sensor-space error.

    Returns ``(best_lambda, table)`` where ``table`` rows hold
    ``lambda``, ``fold`` and ``error``.
    """
    folds = interleaved_folds(data.q, n_folds)
    table = []
    for fold in np.unique(folds):
        tr, test, X_test = fit_train_test(data, folds, fold)
        for lam in grid:
            Z, _ = mne_regress(mne_sources(tr, lam), d, tr.X)
            table.append({"lambda": float(lam), "fold": int(fold),
                          "error": heldout_error(Z, data, d, test, X_test)})
    means = {}
    for row in table:
        means.setdefault(row["lambda"], []).append(row["error"])
    best = min(means, key=lambda lam: (np.mean(means[lam]), lam))
    return float(best), table


def mne_fit(data: TrialDataset, d: StftDictionary, lam: float):
    """Dense coefficients of the two-step method on all trials."""
    return mne_regress(mne_sources(data, lam), d, data.X)


def mne_bootstrap(coefs: np.ndarray, X: np.ndarray, d: StftDictionary,
                  B: int = DEFAULT_B, seed: int = 0) -> InferenceResult:
    """Residual bootstrap of the per-component regressions.

    ``coefs`` holds the STFT coefficients of the per-trial source estimates,
    shape (q, m, s).  Residuals are leverage-rescaled exactly as in the
    sparse method, resampled by whole trials and refit by OLS.
    """
    if B < 2:
        raise ValueError("need B >= 2 replicates")
    coefs = np.asarray(coefs, dtype=complex)
    Z = _ols(coefs, X)
    fitted = np.einsum("rk,msk->rms", X, Z)
    h = leverage(X)
    scaled = (coefs - fitted) / np.sqrt(1.0 - h)[:, None, None]
    draws = np.zeros((B,) + Z.shape, complex)
    for b, rng in enumerate(replicate_rngs(seed, B)):
        idx = rng.integers(0, coefs.shape[0], size=coefs.shape[0])
        draws[b] = _ols(bootstrap_sample(fitted, scaled, idx), X)
    se = np.stack([replicate_sd(draws.real), replicate_sd(draws.imag)], axis=-1)
    testable = np.stack([d.real_identifiable, d.imag_identifiable], axis=-1)
    # parts that never reach the data carry no estimate
    Z = Z.real + 1j * (Z.imag * d.imag_identifiable[None, :, None])
    support = np.ones(Z.shape, bool)
    t, degenerate = t_statistics(Z, se, support, testable)
    if degenerate.any():
        logger.warning("%d coefficient parts have zero bootstrap spread", int(degenerate.sum()))
    return InferenceResult(Z, se, t, support, degenerate, testable, B, [], method="mne-r",
                           draws=draws.reshape(B, -1))
