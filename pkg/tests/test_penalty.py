import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_coefs
from oracles import loop_penalty, prox_dual_oracle, prox_objective, subgradient_polish
from stftr.penalty import build_group_tree, penalty_value, prox
from stftr.solver import kkt_violation


class TestBuildTree:
    def test_roi_free_weights(self):
        tree = build_group_tree([{0, 1}, {2}], 4, 3, 1, 1.0, 1.0, 1.0)
        assert tree.n_groups == 3
        np.testing.assert_array_equal(tree.weights, [0.0, 0.0, 1.0])

    def test_no_rois(self):
        tree = build_group_tree([], 3, 2, 1, 1.0, 1.0, 1.0)
        assert tree.n_groups == 3
        np.testing.assert_allclose(tree.weights, [1 / 3] * 3)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            build_group_tree([{0, 1}, {1, 2}], 4, 2, 1, 1.0, 1.0, 1.0)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            build_group_tree([{0, 5}], 4, 2, 1, 1.0, 1.0, 1.0)

    def test_negative_penalty(self):
        with pytest.raises(ValueError):
            build_group_tree([], 2, 2, 1, -1.0, 1.0, 1.0)

    def test_restrict(self):
        tree = build_group_tree([{0, 1}], 4, 2, 1, 1.0, 1.0, 1.0)
        sub, sources = tree.restrict([0, 2])
        np.testing.assert_array_equal(sources, [0, 1, 3])
        assert sub.dims == (3, 2, 1)
        np.testing.assert_allclose(sub.weights, tree.weights[[0, 2]])


class TestPenaltyValue:
    def test_zero(self):
        tree = build_group_tree([{0, 1}], 3, 2, 2, 1.0, 1.0, 1.0)
        assert penalty_value(np.zeros((3, 2, 2)), tree) == 0.0

    def test_single_entry(self):
        a, b, g = 0.7, 1.3, 2.1
        tree = build_group_tree([{0, 1}], 3, 2, 2, a, b, g, w_policy=[0.0, 1.0])
        Z = np.zeros((3, 2, 2), complex)
        Z[2, 1, 0] = 3 + 4j
        assert penalty_value(Z, tree) == pytest.approx(5 * a + 5 * b + 5 * g, rel=1e-15)

    def test_loop_oracle(self, rng):
        tree = build_group_tree([{0, 2}], 4, 3, 2, 0.4, 0.3, 0.2)
        Z = random_coefs(rng, 4, 3, 2, density=0.6)
        assert penalty_value(Z, tree) == pytest.approx(loop_penalty(Z, tree), rel=1e-12)


class TestProx:
    def test_zero(self):
        tree = build_group_tree([], 2, 3, 2, 1.0, 1.0, 1.0)
        assert np.all(prox(np.zeros((2, 3, 2)), tree, 0.5) == 0)

    @pytest.mark.parametrize("y,expected", [(2.0, 1.0), (0.5, 0.0), (-3.0, -2.0)])
    def test_scalar_soft_threshold(self, y, expected):
        tree = build_group_tree([], 1, 1, 1, 0.0, 0.0, 1.0)
        assert prox(np.array([[[y]]]), tree, 1.0)[0, 0, 0] == expected

    def test_twelve_entry_instance(self, rng):
        tree = build_group_tree([[0, 1]], 2, 3, 2, 0.3, 0.3, 0.3, w_policy="uniform")
        y = random_coefs(rng, 2, 3, 2)
        z = prox(y, tree, 1.0)
        ref = prox_dual_oracle(y, tree, 1.0)
        assert np.abs(z - ref).max() <= 1e-6
        # a subgradient search from the answer finds nothing better
        better = subgradient_polish(z, y, tree, 1.0)
        assert prox_objective(better, y, tree, 1.0) >= prox_objective(z, y, tree, 1.0) - 1e-12

    def test_invalid_step(self):
        tree = build_group_tree([], 1, 1, 1, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            prox(np.zeros((1, 1, 1)), tree, 0.0)

    def test_tie_zeroes_group(self):
        tree = build_group_tree([], 1, 1, 1, 0.0, 0.0, 1.0)
        assert prox(np.array([[[1.0]]]), tree, 1.0)[0, 0, 0] == 0.0


# ---------------------------------------------------------------- invariants

@st.composite
def instances(draw):
    m = draw(st.integers(1, 4))
    s = draw(st.integers(1, 5))
    p = draw(st.integers(1, 3))
    n_roi = draw(st.integers(0, m // 2))
    rois = [[2 * i, 2 * i + 1] for i in range(n_roi)]
    lam = draw(st.tuples(*[st.floats(0.0, 1.0) for _ in range(3)]))
    policy = draw(st.sampled_from(["roi-free", "uniform"]))
    step = draw(st.floats(0.05, 2.0))
    seed = draw(st.integers(0, 2**32 - 1))
    tree = build_group_tree(rois, m, s, p, *lam, w_policy=policy)
    return tree, step, np.random.default_rng(seed)


@given(instances())
def test_prox_matches_dual_oracle(inst):
    tree, step, rng = inst
    y = random_coefs(rng, *tree.dims) * rng.uniform(0.1, 3.0)
    assert np.abs(prox(y, tree, step) - prox_dual_oracle(y, tree, step)).max() <= 1e-9


@given(instances())
def test_prox_optimality_certificate(inst):
    tree, step, rng = inst
    y = random_coefs(rng, *tree.dims)
    z = prox(y, tree, step)
    # f(z) = 0.5 ||z - y||^2 / step has gradient (z - y) / step
    rep = kkt_violation(z, None, None, tree, grad=(z - y) / step)
    scale = max(1.0, float(np.sum(np.abs(y) ** 2)) / step ** 2)
    assert rep.total_violation <= 1e-8 * scale


@given(instances())
def test_prox_nonexpansive(inst):
    tree, step, rng = inst
    y1 = random_coefs(rng, *tree.dims)
    y2 = random_coefs(rng, *tree.dims)
    lhs = np.linalg.norm(prox(y1, tree, step) - prox(y2, tree, step))
    assert lhs <= np.linalg.norm(y1 - y2) * (1 + 1e-12)


@given(instances())
def test_prox_zero_preservation(inst):
    tree, step, rng = inst
    y = random_coefs(rng, *tree.dims)
    # entries killed by the elementwise level stay zero through the outer levels
    z3 = prox(y, tree.with_params(alpha=0.0, beta=0.0), step)
    z = prox(y, tree, step)
    assert np.all(z[z3 == 0] == 0)
    # rows killed by the component level stay zero under the first level
    z2 = prox(y, tree.with_params(alpha=0.0), step)
    assert np.all(z[z2 == 0] == 0)


@given(instances())
def test_prox_elementwise_reduction(inst):
    tree, step, rng = inst
    tree = tree.with_params(alpha=0.0, beta=0.0)
    y = random_coefs(rng, *tree.dims)
    mag = np.abs(y)
    thr = tree.gamma * step
    expected = np.where(mag > thr, (1 - thr / np.where(mag > 0, mag, 1)) * y, 0)
    assert np.abs(prox(y, tree, step) - expected).max() <= 1e-14 * max(1.0, mag.max())


@given(instances())
def test_prox_beats_competitors(inst):
    tree, step, rng = inst
    y = random_coefs(rng, *tree.dims)
    z = prox(y, tree, step)

    def obj(v):
        return penalty_value(v, tree) + 0.5 * np.sum(np.abs(v - y) ** 2) / step

    best = obj(z)
    for _ in range(100):
        comp = z + rng.uniform(0.001, 1.0) * random_coefs(rng, *tree.dims)
        assert best <= obj(comp) + 1e-12 * max(1.0, best)


@given(instances())
def test_penalty_matches_loop(inst):
    tree, _, rng = inst
    Z = random_coefs(rng, *tree.dims, density=0.7)
    assert penalty_value(Z, tree) == pytest.approx(loop_penalty(Z, tree), rel=1e-12, abs=1e-14)
