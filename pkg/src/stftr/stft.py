"""Short-time Fourier dictionary with exact analysis/synthesis.

The dictionary is a Parseval tight frame for real signals of length ``T``:
``synthesize(analyze(u)) == u`` and ``analyze`` is the adjoint of
``synthesize`` under the real inner product ``Re(<a, b>)``.

Only the non-negative frequencies ``h = 0 .. T0/2`` are stored.  Rows for
``0 < h < T0/2`` carry a ``sqrt(2)`` weight so that the real part of the
half-spectrum synthesis equals the full two-sided sum.  Windows are placed
cyclically, one every ``tau0`` samples, centered at ``j * tau0``, and the
window taps are divided by the square root of their overlap sum at every
sample so that overlapping squared windows add to one everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = ["StftDictionary", "build_dictionary", "analyze", "synthesize",
           "drop_blind_imag", "window_taps", "WINDOW_KINDS"]

WINDOW_KINDS = ("hann2", "rectangular")

# Imaginary residuals above this (relative) indicate a coefficient vector that
# carries energy the real synthesis discards.
IMAG_RESIDUAL_TOL = 1e-8


def window_taps(T0: int, kind: str = "hann2") -> np.ndarray:
    """Un-normalized window taps of length ``T0``.

    ``"hann2"`` gives squared-cosine taps ``sin(pi (k + 1/2) / T0) ** 2``;
    ``"rectangular"`` gives ones.
    """
    if kind == "hann2":
        return np.sin(np.pi * (np.arange(T0) + 0.5) / T0) ** 2
    if kind == "rectangular":
        return np.ones(T0)
    raise ValueError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")


@dataclass(frozen=True)
class StftDictionary:
    """Immutable STFT dictionary.

    Attributes
    ----------
    T, T0, tau0 : int
        Signal length, window length and step, all in samples.
    window : ndarray, shape (T0,)
        Raw window taps before overlap normalization.
    window_kind : str
    dict : ndarray, shape (s, T), complex
        Rows are the dictionary atoms (the matrix written Phi^H).  Row
        ``h * n0 + j`` holds frequency ``2 pi h / T0`` and the window
        centered at sample ``j * tau0``.
    """

    T: int
    T0: int
    tau0: int
    window_kind: str
    window: np.ndarray = field(repr=False)
    dict: np.ndarray = field(repr=False)

    @property
    def n0(self) -> int:
        return self.T // self.tau0

    @property
    def n_freq(self) -> int:
        return self.T0 // 2 + 1

    @property
    def s(self) -> int:
        return self.n_freq * self.n0

    @property
    def omegas(self) -> np.ndarray:
        """Angular frequencies in radians per sample."""
        return 2 * np.pi * np.arange(self.n_freq) / self.T0

    def frequencies_hz(self, sampling_rate: float) -> np.ndarray:
        return np.arange(self.n_freq) * sampling_rate / self.T0

    def window_times(self, sampling_rate: float) -> np.ndarray:
        """Window centers in seconds."""
        return np.arange(self.n0) * self.tau0 / sampling_rate

    @cached_property
    def real_identifiable(self) -> np.ndarray:
        """Boolean mask of length s: the real part of coefficient j reaches the output."""
        return np.linalg.norm(self.dict.real, axis=1) > 1e-12

    @cached_property
    def imag_identifiable(self) -> np.ndarray:
        """Boolean mask of length s: the imaginary part of coefficient j reaches the output.

        False for the rows at frequency 0 and T0/2, whose atoms are real.
        """
        return np.linalg.norm(self.dict.imag, axis=1) > 1e-12

    @cached_property
    def _synthesis_matrix(self) -> np.ndarray:
        """Real (2s, T) matrix mapping stacked [Re V, Im V] to the series."""
        return np.ascontiguousarray(np.vstack([self.dict.real, -self.dict.imag]))

    @cached_property
    def _analysis_matrix(self) -> np.ndarray:
        """Real (T, 2s) matrix mapping a series to stacked [Re V, Im V]."""
        return np.ascontiguousarray(self._synthesis_matrix.T)

    def component_index(self, h: int, j: int) -> int:
        return h * self.n0 + j

    def as_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a trailing axis of length s into (n_freq, n0)."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + (self.n_freq, self.n0))


def build_dictionary(T: int, T0: int, tau0: int,
                     window_kind: str = "hann2") -> StftDictionary:
    """Construct the dictionary for signals of length ``T``.

    Raises
    ------
    ValueError
        If ``T0`` is odd, ``T0 > T``, ``tau0`` does not divide ``T`` or
        ``T0``, or the overlap factor ``T0 / tau0`` is below 2.
    """
    T, T0, tau0 = int(T), int(T0), int(tau0)
    if T0 <= 0 or tau0 <= 0 or T <= 0:
        raise ValueError("T, T0 and tau0 must be positive")
    if T0 % 2:
        raise ValueError(f"window length T0={T0} must be even")
    if T0 > T:
        raise ValueError(f"window length T0={T0} exceeds signal length T={T}")
    if T % tau0:
        raise ValueError(f"step tau0={tau0} does not divide signal length T={T}")
    if T0 % tau0 or T0 // tau0 < 2:
        raise ValueError(
            f"T0/tau0 must be an integer overlap factor >= 2 (got T0={T0}, tau0={tau0})")

    taps = window_taps(T0, window_kind)
    n0 = T // tau0
    n_freq = T0 // 2 + 1
    local = np.arange(T0)
    # sample index covered by tap k of window j (cyclic placement)
    support = (np.arange(n0)[:, None] * tau0 - T0 // 2 + local[None, :]) % T

    overlap = np.zeros(T)
    np.add.at(overlap, support, np.broadcast_to(taps ** 2, support.shape))
    if np.any(overlap <= 0):
        raise ValueError("window taps leave samples uncovered")
    norm_taps = taps[None, :] / np.sqrt(T0 * overlap[support])  # (n0, T0)

    weights = np.full(n_freq, np.sqrt(2.0))
    weights[0] = 1.0
    weights[-1] = 1.0
    omegas = 2 * np.pi * np.arange(n_freq) / T0
    # phase referenced to the window center
    phase = np.exp(1j * omegas[:, None] * (local - T0 // 2)[None, :])  # (n_freq, T0)
    # Nyquist and DC phases are exactly +-1; keep those rows bit-real.
    phase[0] = 1.0
    phase[-1] = np.cos(np.pi * (local - T0 // 2))

    atoms = np.zeros((n_freq, n0, T), dtype=complex)
    vals = weights[:, None, None] * phase[:, None, :] * norm_taps[None, :, :]
    for j in range(n0):
        atoms[:, j, support[j]] += vals[:, j, :]
    D = atoms.reshape(n_freq * n0, T)
    D.setflags(write=False)
    taps.setflags(write=False)
    return StftDictionary(T=T, T0=T0, tau0=tau0, window_kind=window_kind,
                          window=taps, dict=D)


def analyze(u: np.ndarray, d: StftDictionary) -> np.ndarray:
    """Coefficients of real series ``u`` (last axis of length T).

    Accepts batches: shape ``(..., T)`` maps to ``(..., s)``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != d.T:
        raise ValueError(f"time series length {u.shape[-1]} != T={d.T}")
    out = np.ascontiguousarray(u) @ d._analysis_matrix
    return out[..., :d.s] + 1j * out[..., d.s:]


def synthesize(V: np.ndarray, d: StftDictionary, *, check: bool = True,
               return_residual: bool = False):
    """Real time series from coefficients (last axis of length s).

    The output is ``Re(V @ Phi^H)``.  The discarded part, which can only
    come from imaginary coefficients on the real-valued frequency-0 and
    Nyquist atoms, is measured relative to the output scale; a
    :class:`RuntimeWarning` is raised when it exceeds ``1e-8``.  With
    ``return_residual=True`` the relative residual is also returned;
    ``check=False`` skips the measurement (used inside solver loops).
    """
    V = np.asarray(V)
    if V.shape[-1] != d.s:
        raise ValueError(f"coefficient length {V.shape[-1]} != s={d.s}")
    stacked = np.concatenate([V.real, V.imag], axis=-1) if np.iscomplexobj(V) \
        else np.concatenate([V, np.zeros_like(V)], axis=-1)
    out = np.ascontiguousarray(stacked) @ d._synthesis_matrix
    if not (check or return_residual):
        return out
    blind = ~d.imag_identifiable
    resid = np.abs(V.imag[..., blind]).max(initial=0.0) if V.size else 0.0
    scale = max(np.abs(V).max(initial=0.0), 1e-300) if V.size else 1.0
    rel = float(resid / scale)
    if check and rel > IMAG_RESIDUAL_TOL:
        warnings.warn(f"synthesis discarded an imaginary residual of relative size {rel:.2e}",
                      RuntimeWarning, stacklevel=2)
    if return_residual:
        return out, rel
    return out


def drop_blind_imag(V: np.ndarray, d: StftDictionary, axis: int = -1) -> np.ndarray:
    """Copy of ``V`` with the imaginary parts that synthesis ignores set to zero.

    ``axis`` is the coefficient axis (length s).
    """
    V = np.moveaxis(np.array(V, dtype=complex), axis, -1)
    blind = ~d.imag_identifiable
    V[..., blind] = V[..., blind].real
    return np.moveaxis(V, -1, axis)
