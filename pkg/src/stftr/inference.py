"""Data-splitting residual bootstrap and T-statistic summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardModel, TrialDataset
from .refit import RefitConfig, heldout_error, l2_refit, support_mask
from .stft import StftDictionary

__all__ = [
    "InferenceResult", "split_halves", "leverage", "residual_bootstrap",
    "averaged_absolute_t", "t_statistics", "replicate_rngs", "bootstrap_sample",
    "choose_lambda2_two_fold", "DEFAULT_B", "replicate_sd",
]

logger = logging.getLogger(__name__)

DEFAULT_B = 20


@dataclass
class InferenceResult:
    """Bootstrap standard errors and T-statistics.

    Attributes
    ----------
    estimate : ndarray (m, s, p), complex
        The coefficients being tested.
    se : ndarray (m, s, p, 2)
        Standard errors of the real (``[..., 0]``) and imaginary
        (``[..., 1]``) parts.
    t_stat : ndarray (m, s, p, 2)
        ``estimate / se`` part by part; 0 where ``se == 0``.
    support : ndarray (m, s, p), bool
    degenerate : ndarray (m, s, p, 2), bool
        On-support parts with zero standard error; their T-statistic is the
        sentinel 0.
    testable : ndarray (s, 2), bool
        Parts that reach the data (the imaginary part of real-valued atoms
        does not and is never tested).
    draws : ndarray (B, nnz), complex, optional
        Replicate estimates of the support entries (C order of the mask).
    """

    estimate: np.ndarray
    se: np.ndarray
    t_stat: np.ndarray
    support: np.ndarray
    degenerate: np.ndarray
    testable: np.ndarray
    B: int
    lambda2: list = field(default_factory=list)
    method: str = "stft-r"
    draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def any_degenerate(self) -> bool:
        return bool(self.degenerate.any())


def split_halves(data: TrialDataset) -> tuple[TrialDataset, TrialDataset]:
    """Split into odd trials (1st, 3rd, ...) and even trials, re-centering covariates."""
    if data.q < 4:
        raise ValueError(f"need at least 4 trials to split, got {data.q}")
    first, _ = data.subset(np.arange(0, data.q, 2), recenter=True)
    second, _ = data.subset(np.arange(1, data.q, 2), recenter=True)
    return first, second


def leverage(X: np.ndarray) -> np.ndarray:
    """Diagonal of the hat matrix ``X (X^T X)^{-1} X^T``.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``X^T X`` is singular; the message names the collinear columns.
    """
    X = np.asarray(X, dtype=float)
    q, p = X.shape
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        _, _, vt = np.linalg.svd(X)
        null = vt[-(p - rank):]
        cols = sorted(set(np.flatnonzero(np.abs(null).max(axis=0) > 1e-8).tolist()))
        raise np.linalg.LinAlgError(f"X^T X is singular; collinear columns {cols}")
    Q, _ = np.linalg.qr(X)
    return np.sum(Q * Q, axis=1)


def replicate_rngs(seed: int, B: int) -> list[np.random.Generator]:
    """Independent generators, one per replicate, derived from one seed."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(B)]


ROUNDOFF_RTOL = 256 * np.finfo(float).eps


def replicate_sd(x: np.ndarray) -> np.ndarray:
    """Sample standard deviation (ddof=1) over axis 0.

    Deviations are taken from the first replicate before averaging, which
    leaves the value unchanged mathematically but makes identical
    replicates give exactly zero.  Spreads below ``ROUNDOFF_RTOL`` times the
    largest replicate magnitude cannot be told apart from rounding in the
    refits and are reported as zero.
    """
    sd = (x - x[:1]).std(axis=0, ddof=1)
    floor = ROUNDOFF_RTOL * np.abs(x).max(initial=0.0)
    return np.where(sd <= floor, 0.0, sd)


def bootstrap_sample(pred: np.ndarray, scaled_resid: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Bootstrap recordings: prediction plus resampled rescaled residuals."""
    return pred + scaled_resid[idx]


def t_statistics(estimate: np.ndarray, se: np.ndarray, support: np.ndarray,
                 testable: np.ndarray):
    """T-statistics part by part, with the degenerate-entry mask."""
    parts = np.stack([estimate.real, estimate.imag], axis=-1)
    t = np.divide(parts, se, out=np.zeros_like(parts), where=se > 0)
    degenerate = (se == 0) & support[..., None] & testable[None, :, None, :]
    return t, degenerate


def choose_lambda2_two_fold(support, data: TrialDataset, d: StftDictionary,
                            config: RefitConfig) -> float:
    """Pick the ridge parameter by 2-fold (trial parity) cross-validation."""
    grid = config.lambda2_grid
    if len(grid) == 1:
        return grid[0]
    folds = np.arange(data.q) % 2
    errs = np.zeros(len(grid))
    for fold in (0, 1):
        train = np.flatnonzero(folds != fold)
        test = np.flatnonzero(folds == fold)
        tr, shift = data.subset(train, recenter=True)
        model = ForwardModel(tr, d)
        for g, lam2 in enumerate(grid):
            Z = l2_refit(support, tr, d, lam2, config, model=model).z
            errs[g] += heldout_error(Z, data, d, test, data.X[test] - shift)
    return float(grid[int(np.argmin(errs))])


def residual_bootstrap(data: TrialDataset, d: StftDictionary, support, Z_l2: np.ndarray,
                       B: int = DEFAULT_B, config: RefitConfig = RefitConfig(),
                       seed: int = 0) -> InferenceResult:
    """Residual bootstrap of the support-constrained ridge fit.

    Residuals of each trial are rescaled by ``(1 - h_r) ** -0.5`` with the
    design leverage ``h_r``.  Each replicate resamples whole-trial residual
    matrices with replacement, rebuilds the recordings around the fitted
    prediction, picks the ridge parameter by 2-fold cross-validation and
    refits on the support.  Standard errors are the replicate standard
    deviations of the real and imaginary parts.
    """
    if B < 2:
        raise ValueError("need B >= 2 replicates")
    Z_l2 = np.asarray(Z_l2, dtype=complex)
    model = ForwardModel(data, d)
    mask = support_mask(support, model.shape)
    if np.any(Z_l2[~mask] != 0):
        raise ValueError("Z_l2 has nonzero entries off the support")
    pred = model.predict(Z_l2)
    h = leverage(data.X)
    scaled = (data.M - pred) / np.sqrt(1.0 - h)[:, None, None]
    idx_mask = np.argwhere(mask)
    draws = np.zeros((B, len(idx_mask)), complex)
    lam2s = []
    for b, rng in enumerate(replicate_rngs(seed, B)):
        idx = rng.integers(0, data.q, size=data.q)
        boot = data.with_M(bootstrap_sample(pred, scaled, idx))
        lam2 = choose_lambda2_two_fold(mask, boot, d, config)
        lam2s.append(lam2)
        Zb = l2_refit(mask, boot, d, lam2, config).z
        draws[b] = Zb[mask]
    se = np.zeros(model.shape + (2,))
    se[mask, 0] = replicate_sd(draws.real)
    se[mask, 1] = replicate_sd(draws.imag)
    testable = np.stack([d.real_identifiable, d.imag_identifiable], axis=-1)
    t, degenerate = t_statistics(Z_l2, se, mask, testable)
    if degenerate.any():
        logger.warning("%d on-support coefficient parts have zero bootstrap spread",
                       int(degenerate.sum()))
    return InferenceResult(Z_l2, se, t, mask, degenerate, testable, B, lam2s, draws=draws)


def averaged_absolute_t(result: InferenceResult, roi, k: int, d: StftDictionary) -> np.ndarray:
    """ROI summary of |T| on the (frequency, window) grid for covariate ``k``.

    For each component: mean of |T| over the tested parts (real and
    imaginary), then mean over ROI source points with a nonzero coefficient
    there.  Components without such points are 0.
    """
    roi = np.asarray(roi, dtype=int)
    if roi.size == 0:
        raise ValueError("empty ROI")
    t = np.abs(result.t_stat[roi, :, k, :])  # (|roi|, s, 2)
    testable = result.testable.astype(float)  # (s, 2)
    per_point = (t * testable).sum(axis=-1) / np.maximum(testable.sum(axis=-1), 1.0)
    nz = result.estimate[roi, :, k] != 0
    counts = nz.sum(axis=0)
    total = np.where(nz, per_point, 0.0).sum(axis=0)
    avg = np.divide(total, counts, out=np.zeros_like(total), where=counts > 0)
    return d.as_grid(avg)
