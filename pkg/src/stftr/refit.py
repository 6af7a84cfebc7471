"""Support-constrained ridge refit and cross-validated tuning."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardModel, TrialDataset
from .penalty import GroupTree
from .solver import SolverConfig, active_set_solve
from .stft import StftDictionary, synthesize

__all__ = [
    "RefitConfig", "RefitResult", "CvPlan", "CvResult", "l2_refit",
    "support_mask", "cross_validate", "interleaved_folds", "heldout_error",
    "penalty_scales", "fit_train_test",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefitConfig:
    lambda2_grid: tuple = (0.0,)
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda2_grid)
        if not grid:
            raise ValueError("lambda2_grid must not be empty")
        if any(v < 0 for v in grid):
            raise ValueError("lambda2 values must be nonnegative")
        object.__setattr__(self, "lambda2_grid", tuple(sorted(grid)))


@dataclass
class RefitResult:
    z: np.ndarray
    converged: bool
    residual: float
    n_iter: int


def _rdot(a, b) -> float:
    return float(np.sum(a.real * b.real) + np.sum(a.imag * b.imag))


def support_mask(support, shape) -> np.ndarray:
    """Boolean mask from a mask or an ``(nnz, 3)`` index array."""
    support = np.asarray(support)
    if support.dtype == bool:
        if support.shape != tuple(shape):
            raise ValueError(f"support mask shape {support.shape} != {tuple(shape)}")
        return support
    mask = np.zeros(shape, bool)
    if support.size:
        support = support.reshape(-1, 3)
        mask[support[:, 0], support[:, 1], support[:, 2]] = True
    return mask


def l2_refit(support, data: TrialDataset | None, d: StftDictionary, lambda2: float,
             config: RefitConfig = RefitConfig(), model: ForwardModel | None = None,
             z0=None) -> RefitResult:
    """Ridge solution constrained to ``support``.

    Minimizes ``f(Z) + lambda2 / 2 * ||Z||^2`` over tensors vanishing off
    ``support`` by preconditioned conjugate gradient on the restricted
    normal equations.  The preconditioner is the diagonal of the restricted
    normal operator.  Imaginary parts on the real-valued atoms do not reach
    the data and are held at zero.

    Raises
    ------
    ValueError
        If ``support`` is empty or ``lambda2 < 0``.
    """
    if model is None:
        model = ForwardModel(data, d)
    m, s, p = model.shape
    mask = support_mask(support, (m, s, p))
    if not mask.any():
        raise ValueError("empty support")
    if lambda2 < 0:
        raise ValueError("lambda2 must be nonnegative")
    rows = np.flatnonzero(mask.any(axis=(1, 2)))
    sub = model.restrict(rows)
    mk = mask[rows]
    mask_re = mk
    mask_im = mk & d.imag_identifiable[None, :, None]

    def project(v):
        return v.real * mask_re + 1j * (v.imag * mask_im)

    def apply(v):
        return project(sub.hessian_apply(v) + lambda2 * v)

    zero = np.zeros(mk.shape, complex)
    b = project(-sub.gradient(zero))
    gdiag = np.diag(sub.GtG)[:, None, None] * np.diag(sub.XtX)[None, None, :]
    dre = gdiag * (np.linalg.norm(d.dict.real, axis=1) ** 2)[None, :, None] + lambda2
    dim = gdiag * (np.linalg.norm(d.dict.imag, axis=1) ** 2)[None, :, None] + lambda2
    dre = np.where(dre > 0, dre, 1.0)
    dim = np.where(dim > 0, dim, 1.0)

    def precond(v):
        return v.real / dre + 1j * (v.imag / dim)

    x = zero if z0 is None else project(np.asarray(z0, complex)[rows])
    r = b - apply(x) if z0 is not None else b.copy()
    bnorm = np.sqrt(_rdot(b, b))
    out = np.zeros((m, s, p), complex)
    if bnorm == 0.0:
        return RefitResult(out, True, 0.0, 0)
    zv = precond(r)
    pv = zv.copy()
    rz = _rdot(r, zv)
    converged = False
    it = 0
    res = np.sqrt(_rdot(r, r)) / bnorm
    for it in range(1, config.cg_max_iter + 1):
        Ap = apply(pv)
        pAp = _rdot(pv, Ap)
        if pAp <= 0:
            break
        a = rz / pAp
        x = x + a * pv
        r = r - a * Ap
        res = np.sqrt(_rdot(r, r)) / bnorm
        if res <= config.cg_tol:
            converged = True
            break
        zv = precond(r)
        rz_new = _rdot(r, zv)
        pv = zv + (rz_new / rz) * pv
        rz = rz_new
    if not converged:
        logger.warning("conjugate gradient stopped with relative residual %.2e", res)
    out[rows] = project(x)
    return RefitResult(out, converged, float(res), it)


def penalty_scales(model: ForwardModel, tree: GroupTree) -> dict:
    """Smallest penalty levels that zero every coefficient, one level at a time.

    ``alpha_max`` only considers first-level groups with positive weight.
    """
    g = model.gradient(np.zeros(model.shape, complex))
    sq = g.real ** 2 + g.imag ** 2
    gamma_max = float(np.sqrt(sq.max()))
    beta_max = float(np.sqrt(sq.sum(axis=2).max()))
    n1 = np.sqrt(np.bincount(tree.group_of_source, weights=sq.sum(axis=(1, 2)),
                             minlength=tree.n_groups))
    w = np.asarray(tree.weights)
    pos = w > 0
    alpha_max = float((n1[pos] / w[pos]).max()) if pos.any() else 0.0
    return {"alpha_max": alpha_max, "beta_max": beta_max, "gamma_max": gamma_max}


def interleaved_folds(q: int, n_folds: int) -> np.ndarray:
    """Fold label ``r mod n_folds`` for each trial."""
    if n_folds < 2 or n_folds > q:
        raise ValueError(f"need 2 <= n_folds <= q (got n_folds={n_folds}, q={q})")
    return np.arange(q) % n_folds


@dataclass
class CvPlan:
    """Cross-validation grid.

    With ``gamma_policy="fixed-small"`` the gamma grid is ignored and gamma
    is set to ``gamma_ratio * beta`` at each beta.
    """

    n_folds: int = 5
    alpha_grid: tuple = (0.0,)
    beta_grid: tuple = (1.0,)
    gamma_grid: tuple = (0.0,)
    lambda2_grid: tuple = (0.0,)
    gamma_policy: str = "fixed-small"
    gamma_ratio: float = 1e-3
    fold_assignment: np.ndarray | None = field(default=None, repr=False)

    def folds(self, q: int) -> np.ndarray:
        if self.fold_assignment is None:
            return interleaved_folds(q, self.n_folds)
        folds = np.asarray(self.fold_assignment, dtype=int)
        if folds.shape != (q,):
            raise ValueError("fold assignment must give one fold per trial")
        if np.unique(folds).size < 2:
            raise ValueError("need at least two nonempty folds")
        return folds

    def penalty_points(self) -> list[tuple[float, float, float]]:
        if self.gamma_policy == "fixed-small":
            return [(a, b, self.gamma_ratio * b)
                    for a, b in itertools.product(self.alpha_grid, self.beta_grid)]
        if self.gamma_policy == "tuned":
            return list(itertools.product(self.alpha_grid, self.beta_grid, self.gamma_grid))
        raise ValueError(f"unknown gamma policy {self.gamma_policy!r}")


@dataclass
class CvResult:
    best: dict
    table: list
    mean_errors: dict

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "gamma", "lambda2", "fold", "error"])
            for row in self.table:
                w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k]
                            for k in ("alpha", "beta", "gamma", "lambda2", "fold", "error")])


def heldout_error(Z: np.ndarray, data: TrialDataset, d: StftDictionary, trials,
                  X_rows: np.ndarray) -> float:
    """Summed squared sensor error on ``trials`` using covariate rows ``X_rows``."""
    A = synthesize(np.moveaxis(Z, 2, 0), d, check=False)  # (p, m, T)
    W = np.einsum("rk,kmt->rmt", X_rows, A)
    pred = np.einsum("nm,rmt->rnt", data.G, W, optimize=True)
    R = data.M[trials] - pred
    return float(np.sum(R * R))


def fit_train_test(data, folds, fold):
    """Training subset (re-centered) and the matching held-out covariate rows."""
    train = np.flatnonzero(folds != fold)
    test = np.flatnonzero(folds == fold)
    tr, shift = data.subset(train, recenter=True)
    return tr, test, data.X[test] - shift


def _degenerate(X: np.ndarray) -> bool:
    return X.shape[1] > 1 and np.linalg.matrix_rank(X) < X.shape[1]


def cross_validate(data: TrialDataset, d: StftDictionary, tree: GroupTree, plan: CvPlan,
                   solver_config: SolverConfig = SolverConfig(),
                   refit_config: RefitConfig = RefitConfig(),
                   initial_J=None) -> CvResult:
    """Grid search over penalty levels and the refit ridge parameter.

    For every penalty point and fold, the active-set solution on the
    training trials fixes a support; each ``lambda2`` then refits on that
    support and is scored by the summed squared sensor error on the
    held-out trials.  Grid values are absolute.
    """
    folds = plan.folds(data.q)
    lam2_grid = plan.lambda2_grid
    table = []
    for fold in np.unique(folds):
        tr, test, X_test = fit_train_test(data, folds, fold)
        if _degenerate(tr.X):
            warnings.warn(f"fold {fold}: training covariates are collinear; skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        model = ForwardModel(tr, d)
        for alpha, beta, gamma in plan.penalty_points():
            t = tree.with_params(alpha, beta, gamma)
            fit = active_set_solve(tr, d, t, solver_config, initial_J=initial_J, model=model)
            mask = fit.z != 0
            for lam2 in lam2_grid:
                if mask.any():
                    Z = l2_refit(mask, tr, d, lam2, refit_config, model=model).z
                else:
                    Z = fit.z
                err = heldout_error(Z, data, d, test, X_test)
                table.append({"alpha": float(alpha), "beta": float(beta), "gamma": float(gamma),
                              "lambda2": float(lam2), "fold": int(fold), "error": err})
    if not table:
        raise ValueError("every fold was degenerate")
    means = {}
    for row in table:
        key = (row["alpha"], row["beta"], row["gamma"], row["lambda2"])
        means.setdefault(key, []).append(row["error"])
    mean_errors = {k: float(np.mean(v)) for k, v in means.items()}
    best_key = min(mean_errors, key=lambda k: (mean_errors[k], k))
    best = dict(zip(("alpha", "beta", "gamma", "lambda2"), best_key))
    return CvResult(best, table, mean_errors)
