import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import centered_design
from stftr.baseline import (MneConfig, MneSolver, cross_validate_mne, mne_bootstrap, mne_fit,
                            mne_regress, mne_solve_trial)
from stftr.forward import TrialDataset
from stftr.inference import leverage
from stftr.stft import analyze, build_dictionary, synthesize


def dense_mne(M_r, G, lam):
    """Direct formula with an explicit inverse."""
    return G.T @ np.linalg.inv(G @ G.T + lam * np.eye(G.shape[0])) @ M_r


class TestMneSolveTrial:
    def test_zero_data(self, rng):
        G = rng.standard_normal((4, 9))
        assert np.all(mne_solve_trial(np.zeros((4, 12)), G, 0.5) == 0)

    def test_orthonormal_rows_small_lambda(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((9, 4)))
        G = Q.T  # G G^T = I
        M = rng.standard_normal((4, 12))
        np.testing.assert_allclose(mne_solve_trial(M, G, 1e-12), G.T @ M, atol=1e-10)

    def test_dense_formula(self, rng):
        G = rng.standard_normal((5, 11))
        M = rng.standard_normal((5, 7))
        np.testing.assert_allclose(mne_solve_trial(M, G, 0.3), dense_mne(M, G, 0.3),
                                   rtol=0, atol=1e-10)

    def test_batched_equals_per_trial(self, rng):
        G = rng.standard_normal((5, 11))
        M = rng.standard_normal((3, 5, 7))
        batch = MneSolver(G, 0.3)(M)
        for r in range(3):
            np.testing.assert_allclose(batch[r], mne_solve_trial(M[r], G, 0.3), atol=1e-13)

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            mne_solve_trial(np.zeros((2, 3)), rng.standard_normal((2, 4)), -1.0)

    def test_singular_without_ridge(self):
        G = np.ones((2, 4))
        with pytest.raises(np.linalg.LinAlgError):
            mne_solve_trial(np.zeros((2, 3)), G, 0.0)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            MneConfig(lambda_mne_grid=())


class TestMneRegress:
    def test_intercept_only_is_trial_mean(self, rng):
        d = build_dictionary(16, 4, 2)
        src = rng.standard_normal((6, 3, 16))
        Z, _ = mne_regress(src, d, np.ones((6, 1)))
        np.testing.assert_allclose(Z[..., 0], analyze(src.mean(axis=0), d), atol=1e-13)

    def test_invertible_forward_recovers_coefficients(self, rng):
        d = build_dictionary(16, 4, 2)
        q, n, p = 8, 5, 2
        G = rng.standard_normal((n, n)) + 3 * np.eye(n)
        X = centered_design(q, p, rng)
        Z = analyze(rng.standard_normal((p, n, 16)), d)  # (p, n, s)
        Z = np.moveaxis(Z, 0, -1)
        sources = synthesize(np.einsum("rk,msk->rms", X, Z), d, check=False)
        data = TrialDataset(np.einsum("nm,rmt->rnt", G, sources), G, X)
        est, resid = mne_fit(data, d, 1e-12)
        np.testing.assert_allclose(est, Z, atol=1e-8)
        assert np.abs(resid).max() <= 1e-8

    def test_per_component_ols(self, rng):
        d = build_dictionary(8, 4, 2)
        q, m, p = 7, 3, 3
        X = centered_design(q, p, rng)
        src = rng.standard_normal((q, m, 8))
        Z, resid = mne_regress(src, d, X)
        C = analyze(src, d)
        for i in range(m):
            for j in range(d.s):
                for part in (np.real, np.imag):
                    coef, *_ = np.linalg.lstsq(X, part(C[:, i, j]), rcond=None)
                    np.testing.assert_allclose(part(Z[i, j]), coef, atol=1e-10)
        np.testing.assert_allclose(np.einsum("rk,msk->rms", X, Z) + resid, C, atol=1e-12)

    def test_composition_matches_dense_pipeline(self, rng):
        d = build_dictionary(8, 4, 2)
        q, n, m, p = 6, 4, 7, 2
        G = rng.standard_normal((n, m))
        X = centered_design(q, p, rng)
        data = TrialDataset(rng.standard_normal((q, n, 8)), G, X)
        lam = 0.4
        est, _ = mne_fit(data, d, lam)
        # dense reference: per-trial inverse, brute-force STFT, normal equations
        src = np.stack([dense_mne(data.M[r], G, lam) for r in range(q)])
        C = np.einsum("rmt,st->rms", src, d.dict.conj())
        ref = np.einsum("kr,rms->msk", np.linalg.inv(X.T @ X) @ X.T, C)
        np.testing.assert_allclose(est, ref, atol=1e-8)

    def test_singular_design(self, rng):
        d = build_dictionary(8, 4, 2)
        X = np.column_stack([np.ones(4), np.ones(4)])
        with pytest.raises(np.linalg.LinAlgError):
            mne_regress(rng.standard_normal((4, 2, 8)), d, X)


class TestMneCv:
    def test_picks_a_grid_value(self, rng):
        d = build_dictionary(8, 4, 2)
        data = TrialDataset(rng.standard_normal((6, 4, 8)), rng.standard_normal((4, 7)),
                            centered_design(6, 2, rng))
        best, table = cross_validate_mne(data, d, (0.1, 1.0, 10.0), n_folds=3)
        assert best in (0.1, 1.0, 10.0)
        assert len(table) == 9


class TestMneBootstrap:
    def test_zero_residuals_flagged(self, rng):
        d = build_dictionary(8, 4, 2)
        X = centered_design(6, 2, rng)
        Z = analyze(rng.standard_normal((2, 3, 8)), d)
        coefs = np.einsum("rk,kms->rms", X, Z)
        res = mne_bootstrap(coefs, X, d, B=5, seed=0)
        assert np.all(res.se == 0)
        assert res.any_degenerate
        assert np.all(res.t_stat == 0)

    def test_reproducible(self, rng):
        d = build_dictionary(8, 4, 2)
        X = centered_design(6, 2, rng)
        coefs = analyze(rng.standard_normal((6, 3, 8)), d)
        a = mne_bootstrap(coefs, X, d, B=6, seed=5)
        b = mne_bootstrap(coefs, X, d, B=6, seed=5)
        assert np.array_equal(a.se, b.se) and np.array_equal(a.t_stat, b.t_stat)
        c = mne_bootstrap(coefs, X, d, B=6, seed=6)
        assert not np.array_equal(a.se, c.se)

    def test_leverage_rescaling(self, rng):
        # a replicate that draws every trial once reproduces the OLS fit exactly
        d = build_dictionary(8, 4, 2)
        X = centered_design(5, 2, rng)
        h = leverage(X)
        assert np.all((h > 0) & (h < 1))
        with pytest.raises(ValueError):
            mne_bootstrap(analyze(rng.standard_normal((5, 2, 8)), d), X, d, B=1)


# ---------------------------------------------------------------- invariants

@st.composite
def mne_problems(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, 6))
    m = draw(st.integers(n, 10))
    lam = draw(st.floats(1e-3, 10.0))
    return rng.standard_normal((n, m)), lam, rng


@given(mne_problems(), st.floats(-5, 5), st.floats(-5, 5))
def test_mne_linear_in_data(prob, a, b):
    G, lam, rng = prob
    M1 = rng.standard_normal((G.shape[0], 6))
    M2 = rng.standard_normal((G.shape[0], 6))
    lhs = mne_solve_trial(a * M1 + b * M2, G, lam)
    rhs = a * mne_solve_trial(M1, G, lam) + b * mne_solve_trial(M2, G, lam)
    scale = (abs(a) + abs(b) + 1) * np.abs(mne_solve_trial(M1, G, lam)).max() + 1e-300
    assert np.abs(lhs - rhs).max() <= 1e-10 * scale + 1e-12


@given(mne_problems(), st.floats(1.01, 100.0))
def test_mne_norm_shrinks_with_lambda(prob, factor):
    G, lam, rng = prob
    M = rng.standard_normal((G.shape[0], 6))
    small = np.linalg.norm(mne_solve_trial(M, G, lam))
    big = np.linalg.norm(mne_solve_trial(M, G, lam * factor))
    assert big <= small * (1 + 1e-12)
