import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stftr.stft import analyze, build_dictionary, drop_blind_imag, synthesize, window_taps

GEOMETRIES = [(100, 16, 4), (8, 4, 2), (24, 8, 4), (30, 6, 3), (32, 8, 2), (12, 4, 2)]


def brute_analyze(u, d):
    # direct inner products with the conjugated atoms
    return np.array([np.sum(u * np.conj(atom)) for atom in d.dict])


class TestBuildDictionary:
    def test_desk_geometry(self):
        d = build_dictionary(100, 16, 4)
        assert d.s == 225
        assert d.n0 == 25
        assert d.n_freq == 9
        np.testing.assert_allclose(np.diff(d.frequencies_hz(100.0)), 6.25)
        assert d.frequencies_hz(100.0)[0] == 0.0

    def test_rectangular_size_formula(self):
        d = build_dictionary(8, 4, 2, "rectangular")
        assert d.s == (4 // 2 + 1) * 4 == 12

    @pytest.mark.parametrize("T,T0,tau0", [(100, 16, 3), (100, 120, 4), (100, 15, 5), (100, 16, 16)])
    def test_invalid_geometry(self, T, T0, tau0):
        with pytest.raises(ValueError):
            build_dictionary(T, T0, tau0)

    def test_unknown_window(self):
        with pytest.raises(ValueError):
            window_taps(8, "kaiser")

    def test_immutable(self):
        d = build_dictionary(8, 4, 2)
        with pytest.raises(ValueError):
            d.dict[0, 0] = 1.0
        with pytest.raises(AttributeError):
            d.T = 4

    def test_frequency_major_order(self):
        d = build_dictionary(100, 16, 4)
        assert d.component_index(0, 24) == 24
        assert d.component_index(1, 0) == 25
        grid = d.as_grid(np.arange(d.s))
        assert grid.shape == (9, 25)
        assert grid[1, 0] == 25


class TestSynthesize:
    def test_zero(self):
        d = build_dictionary(100, 16, 4)
        assert np.all(synthesize(np.zeros(d.s, complex), d) == 0)

    def test_one_hot_first_window_dc(self):
        d = build_dictionary(100, 16, 4)
        V = np.zeros(d.s, complex)
        V[d.component_index(0, 0)] = 1.0
        u = synthesize(V, d)
        # window 0 is centered at sample 0 and wraps cyclically
        taps = window_taps(16, "hann2")
        support = (np.arange(16) - 8) % 100
        expected = np.zeros(100)
        # tight frame with four-fold overlap: normalization sqrt(T0 * sum of squared taps)
        overlap = np.sum(taps[::4] ** 2)
        expected[support] = taps / np.sqrt(16 * overlap)
        np.testing.assert_allclose(u, expected, atol=1e-15)

    def test_blind_imaginary_warns(self):
        d = build_dictionary(16, 4, 2)
        V = np.zeros(d.s, complex)
        V[0] = 1j
        with pytest.warns(RuntimeWarning):
            synthesize(V, d)
        _, resid = synthesize(V, d, check=False, return_residual=True)
        assert resid == pytest.approx(1.0)

    def test_round_trip(self, rng):
        d = build_dictionary(100, 16, 4)
        u = rng.standard_normal(100)
        np.testing.assert_allclose(synthesize(analyze(u, d), d), u, rtol=0, atol=1e-12)


class TestAnalyze:
    def test_zero(self):
        d = build_dictionary(100, 16, 4)
        assert np.all(analyze(np.zeros(100), d) == 0)

    def test_matches_brute_force(self, rng):
        d = build_dictionary(24, 8, 4)
        u = rng.standard_normal(24)
        np.testing.assert_allclose(analyze(u, d), brute_analyze(u, d), atol=1e-13)

    @pytest.mark.parametrize("signal", ["constant", "nyquist"])
    def test_rectangular_concentration(self, signal):
        d = build_dictionary(96, 16, 4, "rectangular")
        t = np.arange(96)
        u = np.ones(96) if signal == "constant" else np.cos(np.pi * t)
        energy = np.abs(d.as_grid(analyze(u, d))) ** 2
        row = 0 if signal == "constant" else -1
        assert energy[row].sum() / energy.sum() > 1 - 1e-12

    @pytest.mark.parametrize("signal", ["constant", "nyquist"])
    def test_hann2_concentration(self, signal):
        # sin^2 taps = (1 - cos) / 2: Fourier weights 1/2 at bin 0 and 1/4 at
        # bins +-1, so the energy splits 2:1 between the edge row and its neighbour
        d = build_dictionary(96, 16, 4, "hann2")
        t = np.arange(96)
        u = np.ones(96) if signal == "constant" else np.cos(np.pi * t)
        rows = (np.abs(d.as_grid(analyze(u, d))) ** 2).sum(axis=1)
        if signal == "nyquist":
            rows = rows[::-1]
        frac = rows / rows.sum()
        np.testing.assert_allclose(frac[:2], [2 / 3, 1 / 3], atol=1e-12)
        assert frac[2:].max() < 1e-12

    def test_batch_shape(self, rng):
        d = build_dictionary(8, 4, 2)
        u = rng.standard_normal((3, 5, 8))
        V = analyze(u, d)
        assert V.shape == (3, 5, d.s)
        np.testing.assert_allclose(V[1, 2], analyze(u[1, 2], d))

    def test_wrong_length(self):
        d = build_dictionary(8, 4, 2)
        with pytest.raises(ValueError):
            analyze(np.zeros(7), d)


def test_drop_blind_imag():
    d = build_dictionary(8, 4, 2)
    V = np.ones(d.s) * (1 + 1j)
    W = drop_blind_imag(V, d)
    assert np.all(W.imag[~d.imag_identifiable] == 0)
    assert np.all(W.imag[d.imag_identifiable] == 1)


# ---------------------------------------------------------------- invariants

geometry = st.sampled_from(GEOMETRIES)
kinds = st.sampled_from(["hann2", "rectangular"])
seeds = st.integers(0, 2**32 - 1)


@given(geometry, kinds, seeds)
def test_adjoint_consistency(geo, kind, seed):
    d = build_dictionary(*geo, kind)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d.T)
    V = rng.standard_normal(d.s) + 1j * rng.standard_normal(d.s)
    lhs = np.real(np.vdot(V, analyze(u, d)))
    rhs = float(np.dot(u, synthesize(V, d, check=False)))
    scale = np.linalg.norm(u) * np.linalg.norm(V)
    assert abs(lhs - rhs) <= 1e-10 * scale


@given(geometry, kinds, seeds, st.floats(-10, 10, allow_nan=False))
def test_linearity(geo, kind, seed, c):
    d = build_dictionary(*geo, kind)
    rng = np.random.default_rng(seed)
    u1, u2 = rng.standard_normal((2, d.T))
    a = analyze(u1 + c * u2, d)
    np.testing.assert_allclose(a, analyze(u1, d) + c * analyze(u2, d), rtol=0,
                               atol=1e-12 * (1 + abs(c)) * 10)
    V1, V2 = rng.standard_normal((2, d.s)) + 1j * rng.standard_normal((2, d.s))
    s = synthesize(V1 + c * V2, d, check=False)
    np.testing.assert_allclose(s, synthesize(V1, d, check=False) + c * synthesize(V2, d, check=False),
                               rtol=0, atol=1e-12 * (1 + abs(c)) * 10)


@given(geometry, kinds, seeds)
def test_parseval_constant(geo, kind, seed):
    d = build_dictionary(*geo, kind)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(5):
        u = rng.standard_normal(d.T)
        ratios.append(np.sum(np.abs(analyze(u, d)) ** 2) / np.sum(u ** 2))
    ratios = np.array(ratios)
    assert (ratios.max() - ratios.min()) / ratios.mean() < 1e-8


@given(geometry, kinds, seeds)
def test_round_trip_property(geo, kind, seed):
    d = build_dictionary(*geo, kind)
    u = np.random.default_rng(seed).standard_normal(d.T)
    err = np.linalg.norm(synthesize(analyze(u, d), d) - u) / np.linalg.norm(u)
    assert err <= 1e-10
