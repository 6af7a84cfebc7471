"""Three-level nested group penalty and its proximal operator.

Groups, from innermost to outermost:

* level 3 -- a single coefficient ``Z[i, j, k]`` (weight ``gamma``);
* level 2 -- the covariate vector ``Z[i, j, :]`` (weight ``beta``);
* level 1 -- all coefficients of the source points in ``A_l``, where ``A_l``
  is either a region of interest or a single source point outside every
  region (weight ``alpha * w_l``).

A complex coefficient counts as a pair of reals inside every group norm, so
group shrinkage scales complex entries by a real factor.  Because the family
is laminar, the proximal operator is the composition of group
soft-thresholdings applied innermost level first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = ["GroupTree", "build_group_tree", "penalty_value", "prox", "WEIGHT_POLICIES"]

WEIGHT_POLICIES = ("roi-free", "uniform")


@dataclass(frozen=True)
class GroupTree:
    """Nested group structure over coefficient tensors of shape ``dims``.

    Attributes
    ----------
    roi_partition : list of ndarray
        First-level groups ``A_l``; ROI groups come first, in input order,
        followed by one singleton per remaining source point.
    n_roi : int
        Number of leading entries of ``roi_partition`` that are ROIs.
    weights : ndarray, shape (N_alpha,)
    alpha, beta, gamma : float
    dims : tuple (m, s, p)
    """

    roi_partition: list
    n_roi: int
    weights: np.ndarray
    alpha: float
    beta: float
    gamma: float
    dims: tuple
    group_of_source: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = self.dims[0]
        owner = np.full(m, -1, dtype=int)
        for l, members in enumerate(self.roi_partition):
            owner[members] = l
        if np.any(owner < 0):
            raise ValueError("first-level groups do not cover every source point")
        object.__setattr__(self, "group_of_source", owner)

    @property
    def n_groups(self) -> int:
        return len(self.roi_partition)

    @property
    def level1_lambdas(self) -> np.ndarray:
        return self.alpha * np.asarray(self.weights, dtype=float)

    def with_params(self, alpha=None, beta=None, gamma=None) -> "GroupTree":
        return GroupTree(self.roi_partition, self.n_roi, self.weights,
                         self.alpha if alpha is None else float(alpha),
                         self.beta if beta is None else float(beta),
                         self.gamma if gamma is None else float(gamma),
                         self.dims)

    def sources_of(self, groups) -> np.ndarray:
        """Sorted source indices covered by the first-level groups ``groups``."""
        groups = list(groups)
        if not groups:
            return np.zeros(0, dtype=int)
        return np.sort(np.concatenate([self.roi_partition[l] for l in groups]))

    def restrict(self, groups) -> tuple["GroupTree", np.ndarray]:
        """Tree over the source points of ``groups`` only, with local indices.

        Returns ``(subtree, sources)`` where ``sources`` maps local rows to
        global source indices.
        """
        groups = sorted(set(int(g) for g in groups))
        sources = self.sources_of(groups)
        local = np.full(self.dims[0], -1, dtype=int)
        local[sources] = np.arange(len(sources))
        parts = [local[self.roi_partition[l]] for l in groups]
        n_roi = sum(1 for l in groups if l < self.n_roi)
        sub = GroupTree(parts, n_roi, np.asarray(self.weights)[groups],
                        self.alpha, self.beta, self.gamma,
                        (len(sources),) + tuple(self.dims[1:]))
        return sub, sources

    def ordered_groups(self) -> Iterator[tuple[np.ndarray, float]]:
        """Yield ``(flat member indices, lambda)`` in laminar order.

        Indices refer to ``Z.ravel()`` for C-ordered ``Z`` of shape ``dims``.
        Meant for small trees; :func:`prox` does not enumerate groups.
        """
        m, s, p = self.dims
        flat = np.arange(m * s * p).reshape(m, s, p)
        for idx in flat.ravel():
            yield np.array([idx]), self.gamma
        for i in range(m):
            for j in range(s):
                yield flat[i, j], self.beta
        for l, members in enumerate(self.roi_partition):
            yield np.sort(flat[members].ravel()), float(self.alpha * self.weights[l])


def build_group_tree(roi_spec: Sequence, m: int, s: int, p: int,
                     alpha: float, beta: float, gamma: float,
                     w_policy="roi-free") -> GroupTree:
    """Build the group tree for ``m`` sources.

    Parameters
    ----------
    roi_spec : sequence of index collections
        Disjoint source-index sets, one per ROI.
    w_policy : {"roi-free", "uniform"} or array_like
        ``"roi-free"`` gives ROI groups weight 0 and the non-ROI singletons
        equal weights summing to 1.  ``"uniform"`` gives every first-level
        group weight 1.  An array gives the weights directly.
    """
    seen = np.zeros(m, dtype=bool)
    rois = []
    for members in roi_spec:
        members = np.unique(np.fromiter(members, dtype=int))
        if members.size == 0:
            raise ValueError("empty ROI")
        if members.min() < 0 or members.max() >= m:
            raise ValueError(f"ROI indices out of range [0, {m})")
        if seen[members].any():
            raise ValueError(f"ROIs overlap at sources {members[seen[members]].tolist()}")
        seen[members] = True
        rois.append(members)
    singles = [np.array([i]) for i in np.flatnonzero(~seen)]
    partition = rois + singles
    if isinstance(w_policy, str):
        if w_policy == "roi-free":
            w = np.zeros(len(partition))
            if singles:
                w[len(rois):] = 1.0 / len(singles)
        elif w_policy == "uniform":
            w = np.ones(len(partition))
        else:
            raise ValueError(f"unknown weight policy {w_policy!r}")
    else:
        w = np.asarray(w_policy, dtype=float)
        if w.shape != (len(partition),):
            raise ValueError(f"expected {len(partition)} weights, got {w.shape}")
    if np.any(w < 0) or min(alpha, beta, gamma) < 0:
        raise ValueError("penalty weights must be nonnegative")
    return GroupTree(partition, len(rois), w, float(alpha), float(beta),
                     float(gamma), (int(m), int(s), int(p)))


def _check_dims(Z, tree):
    if Z.shape != tuple(tree.dims):
        raise ValueError(f"tensor shape {Z.shape} does not match tree dims {tuple(tree.dims)}")


def level_norms(Z: np.ndarray, tree: GroupTree):
    """Group norms at the three levels: ``(|Z|, ||Z[i, j, :]||, ||Z|_{A_l}||)``."""
    sq = Z.real ** 2 + Z.imag ** 2
    n3 = np.sqrt(sq)
    sq2 = sq.sum(axis=2)
    n2 = np.sqrt(sq2)
    n1 = np.sqrt(np.bincount(tree.group_of_source, weights=sq2.sum(axis=1),
                             minlength=tree.n_groups))
    return n3, n2, n1


def penalty_value(Z: np.ndarray, tree: GroupTree) -> float:
    Z = np.asarray(Z)
    _check_dims(Z, tree)
    n3, n2, n1 = level_norms(Z, tree)
    return float(tree.alpha * np.dot(tree.weights, n1)
                 + tree.beta * n2.sum() + tree.gamma * n3.sum())


def _shrink_factor(norm, thr):
    # ties (norm == thr) zero the group
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = 1.0 - thr / norm
    return np.where(norm > thr, fac, 0.0)


def prox(y: np.ndarray, tree: GroupTree, step: float) -> np.ndarray:
    """Proximal operator of ``step * penalty`` at ``y``.

    Every group of a level is disjoint from the others, so each level is
    thresholded in one vectorized pass; zero groups get factor 0 and stay
    zero.
    """
    y = np.asarray(y)
    _check_dims(y, tree)
    if step <= 0:
        raise ValueError("step must be positive")
    z = np.array(y, dtype=complex)
    sq = z.real ** 2 + z.imag ** 2
    if tree.gamma > 0:
        fac = _shrink_factor(np.sqrt(sq), step * tree.gamma)
        z *= fac
        sq *= fac * fac
    if tree.beta > 0:
        fac = _shrink_factor(np.sqrt(sq.sum(axis=2)), step * tree.beta)[:, :, None]
        z *= fac
        sq *= fac * fac
    thr1 = step * tree.level1_lambdas
    if np.any(thr1 > 0):
        row_sq = sq.sum(axis=(1, 2))
        n1 = np.sqrt(np.bincount(tree.group_of_source, weights=row_sq,
                                 minlength=tree.n_groups))
        z *= _shrink_factor(n1, thr1)[tree.group_of_source][:, None, None]
    return z
