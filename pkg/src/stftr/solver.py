"""Accelerated proximal gradient, KKT violation measure and active-set driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardModel, TrialDataset
from .penalty import GroupTree, level_norms, penalty_value, prox
from .stft import StftDictionary

__all__ = [
    "SolverConfig", "FistaResult", "KktReport", "ActiveSetResult",
    "fista", "kkt_violation", "active_set_solve", "select_groups", "momentum_sequence",
    "full_objective",
]

logger = logging.getLogger(__name__)

_EPS = 1e-300


@dataclass(frozen=True)
class SolverConfig:
    """Solver tolerances.

    ``kkt_tol`` is relative: the active-set loop stops once the total KKT
    violation falls below ``kkt_tol`` times the violation at ``Z = 0``.
    """

    tol_z: float = 1e-6
    max_fista_iter: int = 20000
    kkt_tol: float = 1e-6
    active_batch: int = 50
    max_outer_rounds: int = 50
    lipschitz_tol: float = 1e-6
    kkt_cd_tol: float = 1e-10
    kkt_max_cycles: int = 20000
    trace_every: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_z", "kkt_tol", "lipschitz_tol", "kkt_cd_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.active_batch < 1:
            raise ValueError("active_batch must be >= 1")
        if self.max_fista_iter < 1 or self.max_outer_rounds < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class FistaResult:
    z: np.ndarray
    n_iter: int
    converged: bool
    L: float
    objective_trace: list = field(default_factory=list)


@dataclass
class KktReport:
    total_violation: float
    per_group_violation: dict
    multipliers_converged: bool
    n_cycles: int = 0


@dataclass
class ActiveSetResult:
    z: np.ndarray
    report: KktReport
    trace: list
    converged: bool
    active_groups: list
    kkt_threshold: float


def momentum_sequence(n: int, zeta0: float = 1.0) -> list[float]:
    """First ``n`` momentum scalars following ``zeta0``."""
    out = []
    zeta = zeta0
    for _ in range(n):
        zeta = (1.0 + math.sqrt(4.0 * zeta * zeta + 1.0)) / 2.0
        out.append(zeta)
    return out


def full_objective(model: ForwardModel, tree: GroupTree, z: np.ndarray) -> float:
    return model.objective(z) + penalty_value(z, tree)


def _fista_core(model: ForwardModel, tree: GroupTree, z_init: np.ndarray, L: float,
                tol: float, max_iter: int, trace_every: int) -> FistaResult:
    z = np.array(z_init, dtype=complex)
    y = z.copy()
    zeta = 1.0
    step = 1.0 / L
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z0 = z
        grad = model.gradient(y)
        z = prox(y - step * grad, tree, step)
        zeta0 = zeta
        zeta = (1.0 + math.sqrt(4.0 * zeta0 * zeta0 + 1.0)) / 2.0
        diff = z - z0
        y = z + ((zeta0 - 1.0) / zeta) * diff
        change = np.linalg.norm(diff)
        base = np.linalg.norm(z0)
        if not np.isfinite(change):
            raise FloatingPointError(
                f"FISTA diverged at iteration {it} (L={L:.6g}); the Lipschitz "
                "constant is likely underestimated")
        if trace_every and it % trace_every == 0:
            val = full_objective(model, tree, z)
            if not np.isfinite(val):
                raise FloatingPointError(f"non-finite objective at iteration {it}")
            trace.append(val)
        if change <= tol * max(base, _EPS):
            # momentum can make successive iterates close before z itself is
            # a fixed point; confirm with the proximal-gradient residual
            zn = np.linalg.norm(z)
            resid = np.linalg.norm(z - prox(z - step * model.gradient(z), tree, step))
            if resid <= tol * max(zn, _EPS):
                converged = True
                break
    trace.append(full_objective(model, tree, z))
    if not converged:
        logger.warning("FISTA stopped at max_iter=%d without meeting tol_z=%g", max_iter, tol)
    return FistaResult(z, it, converged, L, trace)


def fista(data: TrialDataset, d: StftDictionary, tree: GroupTree,
          config: SolverConfig = SolverConfig(), z_init=None, restrict=None,
          model: ForwardModel | None = None, L: float | None = None) -> FistaResult:
    """Minimize data fit plus penalty with constant-step FISTA.

    Parameters
    ----------
    restrict : iterable of int, optional
        First-level group indices.  Only coefficients of their source points
        are free; all others stay exactly zero.  The step size uses the
        Lipschitz constant of the restricted operator.
    z_init : ndarray (m, s, p), optional
        Must vanish outside ``restrict``.
    L : float, optional
        Lipschitz constant to use instead of a fresh power-iteration estimate.
    """
    if model is None:
        model = ForwardModel(data, d)
    m, s, p = model.shape
    z_full = np.zeros((m, s, p), complex) if z_init is None else np.array(z_init, dtype=complex)
    if z_full.shape != (m, s, p):
        raise ValueError(f"z_init has shape {z_full.shape}, expected {(m, s, p)}")
    if restrict is None:
        sub_tree, sources, sub_model = tree, None, model
    else:
        sub_tree, sources = tree.restrict(restrict)
        outside = np.ones(m, bool)
        outside[sources] = False
        if np.any(z_full[outside] != 0):
            raise ValueError("z_init has nonzero coefficients outside the restricted set")
        if len(sources) == 0:
            return FistaResult(z_full, 0, True, float("nan"), [full_objective(model, tree, z_full)])
        sub_model = model.restrict(sources)
    if L is None:
        L = sub_model.lipschitz(tol=config.lipschitz_tol, seed=config.seed)
    if not L > 0:
        raise ValueError("Lipschitz constant must be positive")
    z0 = z_full if sources is None else z_full[sources]
    res = _fista_core(sub_model, sub_tree, z0, L, config.tol_z,
                      config.max_fista_iter, config.trace_every)
    if sources is not None:
        out = np.zeros((m, s, p), complex)
        out[sources] = res.z
        res.z = out
    return res


def _project_rows(t: np.ndarray, radius) -> np.ndarray:
    """Project each vector along the trailing axis of ``t`` onto a ball."""
    norm = np.sqrt(np.sum(t.real ** 2 + t.imag ** 2, axis=-1, keepdims=True))
    scale = np.minimum(1.0, np.divide(radius, norm, out=np.ones_like(norm), where=norm > 0))
    return t * scale


def kkt_violation(z0: np.ndarray, data: TrialDataset | None, d: StftDictionary | None,
                  tree: GroupTree, scope="all", model: ForwardModel | None = None,
                  grad: np.ndarray | None = None, tol: float = 1e-10,
                  max_cycles: int = 20000) -> KktReport:
    """Measure how far ``z0`` is from satisfying the optimality conditions.

    Multipliers of nonzero groups are fixed to ``lambda_h`` times the unit
    direction of the group; multipliers of zero groups range over balls of
    radius ``lambda_h``.  The squared residual of the stationarity equation
    is minimized over the free multipliers by block coordinate descent
    (levels 3, 2, 1 in turn; groups within a level are disjoint and updated
    together).

    Parameters
    ----------
    scope : "all" or iterable of int
        ``"all"`` reports a per-group violation for every first-level group.
        Otherwise the active first-level groups; only the others are
        reported.
    grad : ndarray, optional
        Precomputed gradient of the data-fit term at ``z0``.

    Returns
    -------
    KktReport
        ``total_violation`` is half the squared residual norm at the
        optimum, per-group values restrict the residual to each ``A_l``.
    """
    z0 = np.asarray(z0)
    if grad is None:
        if model is None:
            model = ForwardModel(data, d)
        grad = model.gradient(z0)
    if z0.shape != tuple(tree.dims) or grad.shape != z0.shape:
        raise ValueError("dimension mismatch between z0, gradient and tree")
    n3, n2, n1 = level_norms(z0, tree)
    gamma, beta = tree.gamma, tree.beta
    lam1 = tree.level1_lambdas
    owner = tree.group_of_source

    fixed = np.zeros_like(grad, dtype=complex)
    a3 = n3 > 0
    fixed[a3] += gamma * z0[a3] / n3[a3]
    a2 = n2 > 0
    fixed[a2] += beta * z0[a2] / n2[a2][:, None]
    a1 = n1 > 0
    inv1 = np.divide(lam1, n1, out=np.zeros_like(n1), where=a1)
    fixed += inv1[owner][:, None, None] * z0
    base = grad + fixed

    free3 = ~a3
    free2 = ~a2
    free1_rows = ~a1[owner]
    xi3 = np.zeros_like(base)
    xi2 = np.zeros_like(base)
    xi1 = np.zeros_like(base)
    rad1 = lam1[owner][:, None]

    def half_sq(r):
        return 0.5 * float(np.sum(r.real ** 2 + r.imag ** 2))

    obj = half_sq(base)
    converged = False
    cycles = 0
    any_free = free3.any() or free2.any() or free1_rows.any()
    if not any_free or obj == 0.0:
        converged = True
    while not converged and cycles < max_cycles:
        cycles += 1
        if free3.any() and gamma > 0:
            t = -(base + xi2 + xi1)
            mag = np.abs(t)
            scale = np.minimum(1.0, np.divide(gamma, mag, out=np.ones_like(mag), where=mag > 0))
            xi3 = np.where(free3, t * scale, 0.0)
        if free2.any() and beta > 0:
            t = -(base + xi3 + xi1)
            xi2 = np.where(free2[:, :, None], _project_rows(t, beta), 0.0)
        if free1_rows.any() and np.any(lam1 > 0):
            t = -(base + xi3 + xi2)
            sq = np.sum(t.real ** 2 + t.imag ** 2, axis=(1, 2))
            gnorm = np.sqrt(np.bincount(owner, weights=sq, minlength=tree.n_groups))
            fac = np.minimum(1.0, np.divide(lam1, gnorm, out=np.ones_like(gnorm), where=gnorm > 0))
            xi1 = np.where(free1_rows[:, None, None], t * fac[owner][:, None, None], 0.0)
        new = half_sq(base + xi3 + xi2 + xi1)
        if abs(obj - new) <= tol * max(obj, _EPS) or new == 0.0:
            converged = True
        obj = new
    r = base + xi3 + xi2 + xi1
    row_sq = 0.5 * np.sum(r.real ** 2 + r.imag ** 2, axis=(1, 2))
    per = np.bincount(owner, weights=row_sq, minlength=tree.n_groups)
    if isinstance(scope, str):
        if scope != "all":
            raise ValueError(f"unknown scope {scope!r}")
        groups = range(tree.n_groups)
    else:
        active = set(int(g) for g in scope)
        groups = [l for l in range(tree.n_groups) if l not in active]
    return KktReport(float(obj), {l: float(per[l]) for l in groups}, converged, cycles)


def select_groups(per_group: dict, batch: int) -> list[int]:
    """The ``batch`` groups with the largest positive violations (all if fewer)."""
    cands = [(v, l) for l, v in per_group.items() if v > 0]
    cands.sort(key=lambda t: (-t[0], t[1]))
    return [l for _, l in cands[:batch]]


def active_set_solve(data: TrialDataset, d: StftDictionary, tree: GroupTree,
                     config: SolverConfig = SolverConfig(), initial_J=None,
                     model: ForwardModel | None = None) -> ActiveSetResult:
    """Solve the full problem by growing a set of active first-level groups.

    Each round solves the problem restricted to the active groups (warm
    started), measures the KKT violation of every inactive group, and adds
    the ``active_batch`` worst offenders.  Stops once the total violation is
    below ``config.kkt_tol`` times the violation at zero.

    ``initial_J`` defaults to all ROI groups.
    """
    if model is None:
        model = ForwardModel(data, d)
    m, s, p = model.shape
    J = set(range(tree.n_roi)) if initial_J is None else set(int(g) for g in initial_J)
    z = np.zeros((m, s, p), complex)
    zero_report = kkt_violation(z, None, None, tree, scope=sorted(J), model=model,
                                tol=config.kkt_cd_tol, max_cycles=config.kkt_max_cycles)
    threshold = config.kkt_tol * zero_report.total_violation
    trace = []
    tol_z = config.tol_z
    report = zero_report
    converged = zero_report.total_violation == 0.0
    rounds = 0
    while not converged and rounds < config.max_outer_rounds:
        rounds += 1
        if J:
            res = fista(data, d, tree, SolverConfig(**{**config.__dict__, "tol_z": tol_z}),
                        z_init=z, restrict=sorted(J), model=model)
            z = res.z
        report = kkt_violation(z, None, None, tree, scope=sorted(J), model=model,
                               tol=config.kkt_cd_tol, max_cycles=config.kkt_max_cycles)
        obj = full_objective(model, tree, z)
        n_sources = int(tree.sources_of(J).size)
        trace.append({"round": rounds, "n_groups": len(J), "n_sources": n_sources,
                      "violation": report.total_violation, "objective": obj,
                      "tol_z": tol_z})
        logger.info("active set round %d: |J|=%d groups, violation %.3e, objective %.6e",
                    rounds, len(J), report.total_violation, obj)
        if report.total_violation < threshold:
            converged = True
            break
        new = select_groups(report.per_group_violation, config.active_batch)
        if new:
            J.update(new)
        elif tol_z > 1e-15:
            # the violation sits inside J: solve the restricted problem more accurately
            tol_z /= 10.0
        else:
            break
    if not converged:
        logger.warning("active set stopped after %d rounds without meeting the KKT threshold", rounds)
    return ActiveSetResult(z, report, trace, converged, sorted(J), threshold)
