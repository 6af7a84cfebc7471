"""Reconstruction and sign-insensitive error metrics."""

from __future__ import annotations

import numpy as np

from .stft import StftDictionary, synthesize

__all__ = ["reconstruct_sources", "reconstruct_all", "rectified_mse", "mse_ratio",
           "summarize_ratios"]


def reconstruct_sources(Z: np.ndarray, X: np.ndarray, d: StftDictionary, r: int) -> np.ndarray:
    """Source series of trial ``r``: ``synthesize(sum_k X[r, k] Z[:, :, k])``, shape (m, T)."""
    Z = np.asarray(Z)
    X = np.asarray(X)
    if Z.ndim != 3 or Z.shape[1] != d.s or Z.shape[2] != X.shape[1]:
        raise ValueError(f"Z shape {Z.shape} incompatible with s={d.s}, p={X.shape[1]}")
    return reconstruct_all(Z, X[r:r + 1], d)[0]


def reconstruct_all(Z: np.ndarray, X: np.ndarray, d: StftDictionary) -> np.ndarray:
    """Source series of every trial, shape (q, m, T)."""
    Z = np.asarray(Z)
    if Z.ndim != 3 or Z.shape[1] != d.s or Z.shape[2] != np.shape(X)[1]:
        raise ValueError(f"Z shape {Z.shape} incompatible with s={d.s}, p={np.shape(X)[1]}")
    return synthesize(np.einsum("rk,msk->rms", X, Z), d, check=False)


def rectified_mse(est: np.ndarray, true: np.ndarray, scope=None) -> float:
    """Mean of ``(|est| - |true|)**2`` over trials, ``scope`` sources and time.

    Arrays have shape (q, m, T); ``scope`` indexes the source axis (all
    sources when omitted).
    """
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {true.shape}")
    if scope is not None:
        scope = np.asarray(scope, dtype=int)
        if scope.size == 0:
            raise ValueError("empty scope")
        est = est[:, scope]
        true = true[:, scope]
    diff = np.abs(est) - np.abs(true)
    return float(np.mean(diff * diff))


def mse_ratio(stftr_mse: float, mner_mse: float) -> float:
    if mner_mse <= 0:
        raise ZeroDivisionError("baseline MSE is zero")
    return float(stftr_mse) / float(mner_mse)


def summarize_ratios(ratios) -> tuple[float, float]:
    """Mean and standard error of the mean across runs."""
    r = np.asarray(ratios, dtype=float)
    if r.size == 0:
        raise ValueError("no ratios")
    se = float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0
    return float(r.mean()), se
