"""Multi-trial linear model, squared-error objective and its gradient.

Coefficient tensors are complex arrays ``Z`` of shape ``(m, s, p)``: source
point, STFT component, covariate.  Trial ``r`` is predicted as

    G @ synthesize(sum_k X[r, k] * Z[:, :, k])

and the data-fit term is half the summed squared Frobenius error over trials.
Gradients treat real and imaginary parts as independent real coordinates:
``grad.real`` holds the derivatives with respect to ``Z.real`` and
``grad.imag`` those with respect to ``Z.imag``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .stft import StftDictionary, analyze, synthesize

__all__ = [
    "TrialDataset", "ForwardModel", "predict_trial", "objective", "gradient",
    "lipschitz_constant", "power_iteration", "support_indices", "LIPSCHITZ_SAFETY",
]

LIPSCHITZ_SAFETY = 1.05
CENTER_TOL = 1e-12


@dataclass(frozen=True)
class TrialDataset:
    """Sensor recordings of ``q`` trials with their forward and design matrices.

    Attributes
    ----------
    M : ndarray, shape (q, n, T)
    G : ndarray, shape (n, m)
    X : ndarray, shape (q, p)
        First column all ones, other columns centered across trials.
    sampling_rate : float
        In Hz.
    whitened : bool
    """

    M: np.ndarray
    G: np.ndarray
    X: np.ndarray
    sampling_rate: float = 100.0
    whitened: bool = False
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        G = np.asarray(self.G, dtype=float)
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "X", X)
        if M.ndim != 3 or G.ndim != 2 or X.ndim != 2:
            raise ValueError("expected M (q, n, T), G (n, m) and X (q, p)")
        q, n, _ = M.shape
        if G.shape[0] != n:
            raise ValueError(f"G has {G.shape[0]} rows but M has {n} sensors")
        if X.shape[0] != q:
            raise ValueError(f"X has {X.shape[0]} rows but M has {q} trials")
        if not self.validate:
            return
        if q < 2:
            raise ValueError("need at least two trials")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first column of X must be all ones")
        means = X[:, 1:].mean(axis=0)
        if np.any(np.abs(means) > CENTER_TOL * max(1.0, np.abs(X).max())):
            raise ValueError(f"covariate columns are not centered (means {means})")

    @property
    def q(self) -> int:
        return self.M.shape[0]

    @property
    def n(self) -> int:
        return self.M.shape[1]

    @property
    def T(self) -> int:
        return self.M.shape[2]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, trials, recenter: bool = True) -> tuple["TrialDataset", np.ndarray]:
        """Dataset restricted to ``trials``.

        With ``recenter`` the non-intercept columns are re-centered on the
        subset; the subtracted means are returned so that rows of other
        trials can be shifted identically.
        """
        trials = np.asarray(trials)
        X = self.X[trials].copy()
        shift = np.zeros(self.p)
        if recenter:
            shift[1:] = X[:, 1:].mean(axis=0)
            X -= shift
        return replace(self, M=self.M[trials], X=X), shift

    def with_M(self, M) -> "TrialDataset":
        return replace(self, M=np.asarray(M, dtype=float))


def support_indices(Z: np.ndarray) -> np.ndarray:
    """``(nnz, 3)`` array of the ``(i, j, k)`` triples where ``Z`` is nonzero."""
    return np.argwhere(Z != 0)


def _check_Z(Z, m, s, p):
    Z = np.asarray(Z)
    if Z.shape != (m, s, p):
        raise ValueError(f"coefficient tensor has shape {Z.shape}, expected {(m, s, p)}")
    return Z


class ForwardModel:
    """Cached cross-products for repeated gradient evaluation.

    The per-iteration cost of :meth:`gradient` does not depend on the number
    of trials: it only uses ``G^T G``, ``X^T X`` and the per-covariate
    back-projections ``G^T sum_r X[r, k] M[r]``.

    ``sources`` restricts the model to a subset of source points (columns of
    ``G``); coefficient tensors then have ``len(sources)`` rows.
    """

    def __init__(self, data: TrialDataset, d: StftDictionary, sources=None):
        if data.T != d.T:
            raise ValueError(f"dataset has T={data.T} but dictionary has T={d.T}")
        self.data = data
        self.dict = d
        self.sources = None if sources is None else np.asarray(sources, dtype=int)
        G = data.G if self.sources is None else data.G[:, self.sources]
        self.G = G
        self.GtG = G.T @ G
        self.XtX = data.X.T @ data.X
        # (p, m, T): G^T sum_r X[r, k] M[r]
        self.back = np.einsum("nm,rk,rnt->kmt", G, data.X, data.M, optimize=True)
        self.data_sq = float(np.sum(data.M ** 2))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.G.shape[1], self.dict.s, self.data.p)

    def restrict(self, sources) -> "ForwardModel":
        sources = np.asarray(sources, dtype=int)
        if self.sources is not None:
            sources = self.sources[sources]
        return ForwardModel(self.data, self.dict, sources)

    def source_series(self, Z: np.ndarray) -> np.ndarray:
        """Synthesized per-covariate source series, shape (p, m, T)."""
        return synthesize(np.moveaxis(Z, 2, 0), self.dict, check=False)

    def predict(self, Z: np.ndarray) -> np.ndarray:
        """Predictions for all trials, shape (q, n, T)."""
        Z = _check_Z(Z, *self.shape)
        A = self.source_series(Z)
        W = np.einsum("rk,kmt->rmt", self.data.X, A)
        return np.einsum("nm,rmt->rnt", self.G, W, optimize=True)

    def objective(self, Z: np.ndarray) -> float:
        R = self.data.M - self.predict(Z)
        return 0.5 * float(np.sum(R * R))

    def hessian_apply(self, Z: np.ndarray) -> np.ndarray:
        """Second derivative of the objective applied to ``Z``."""
        A = self.source_series(Z)
        B = self.GtG @ np.einsum("kl,lmt->kmt", self.XtX, A)
        return np.moveaxis(analyze(B, self.dict), 0, 2)

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        Z = _check_Z(Z, *self.shape)
        A = self.source_series(Z)
        B = self.GtG @ np.einsum("kl,lmt->kmt", self.XtX, A) - self.back
        return np.moveaxis(analyze(B, self.dict), 0, 2)

    def lipschitz(self, tol: float = 1e-6, max_iter: int = 500,
                  seed: int = 0, safety: float = LIPSCHITZ_SAFETY) -> float:
        value, converged, _ = power_iteration(self.hessian_apply, self.shape,
                                              tol=tol, max_iter=max_iter, seed=seed)
        if not converged:
            warnings.warn(f"power iteration did not converge in {max_iter} iterations; "
                          f"using estimate {value:.6g}", RuntimeWarning, stacklevel=2)
        return safety * value


def power_iteration(op, shape, tol: float = 1e-6, max_iter: int = 500,
                    seed: int = 0) -> tuple[float, bool, int]:
    """Largest eigenvalue of a symmetric positive semi-definite real-linear ``op``.

    Returns ``(estimate, converged, iterations)``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, max_iter + 1):
        w = op(v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0, True, it
        v = w / new
        if abs(new - est) <= tol * new:
            return new, True, it
        est = new
    return est, False, max_iter


def predict_trial(Z: np.ndarray, data: TrialDataset, d: StftDictionary, r: int) -> np.ndarray:
    """Noise-free prediction ``G (sum_k X[r, k] Z_k) Phi^H`` of trial ``r``, shape (n, T).

    Raises
    ------
    ValueError
        On dimension mismatch or when ``Z`` has non-negligible imaginary
        parts on the real-valued atoms (the discarded part of the synthesis
        exceeds ``1e-8`` relative).
    """
    Z = _check_Z(Z, data.m, d.s, data.p)
    if not 0 <= r < data.q:
        raise IndexError(f"trial {r} out of range for q={data.q}")
    W = np.tensordot(Z, data.X[r], axes=([2], [0]))  # (m, s)
    S, resid = synthesize(W, d, check=False, return_residual=True)
    if resid > 1e-8:
        raise ValueError(f"imaginary residual {resid:.2e} in synthesis: Z is not "
                         "conjugate-consistent on the real-valued atoms")
    return data.G @ S


def objective(Z: np.ndarray, data: TrialDataset, d: StftDictionary) -> float:
    """``0.5 * sum_r ||M[r] - predict_trial(Z, r)||_F^2``."""
    return ForwardModel(data, d).objective(Z)


def gradient(Z: np.ndarray, data: TrialDataset, d: StftDictionary) -> np.ndarray:
    return ForwardModel(data, d).gradient(Z)


def lipschitz_constant(data: TrialDataset, d: StftDictionary, tol: float = 1e-6,
                       max_iter: int = 500, seed: int = 0,
                       safety: float = LIPSCHITZ_SAFETY) -> float:
    """Power-iteration estimate of the gradient's Lipschitz constant.

    The estimate approaches the top eigenvalue from below, so it is
    multiplied by ``safety`` (1.05 by default) before being returned.
    """
    if not np.any(data.G) or not np.any(data.X):
        raise ValueError("degenerate data: G or X is identically zero")
    return ForwardModel(data, d).lipschitz(tol=tol, max_iter=max_iter, seed=seed,
                                           safety=safety)
