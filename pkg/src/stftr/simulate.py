"""Synthetic multi-trial study with a known coefficient tensor.

Four regions carry signal: two target ROIs and two irrelevant regions.
Every region emits a Gabor waveform whose trial amplitude is
``1 + c_r`` with ``c_r`` the centered sigmoid learning curve, so the true
intercept and slope coefficients coincide.  Source points in the regions
receive Gaussian-process noise; sensors receive spatially correlated noise
shaped by a fixed 5th-order low-pass recursive filter.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, signal

from .forward import TrialDataset
from .stft import StftDictionary, analyze, build_dictionary, synthesize

__all__ = [
    "SimulationSpec", "GroundTruth", "make_forward", "sigmoid_curve", "gabor",
    "generate_dataset", "prewhiten", "sensor_noise_filter", "default_regions",
]

# Fixed order-5 Butterworth low-pass at 0.4 x Nyquist.
_IIR_ORDER = 5
_IIR_CUTOFF = 0.4


def sensor_noise_filter():
    """Numerator and denominator of the sensor-noise shaping filter."""
    return signal.butter(_IIR_ORDER, _IIR_CUTOFF)


def default_regions(m: int, size: int = 10) -> dict:
    """Four contiguous source blocks spread across the source space."""
    if 4 * size > m:
        raise ValueError("source space too small for four regions")
    starts = np.linspace(0, m - size, 6).astype(int)[1:5]
    names = ["aud_lh", "aud_rh", "vis_lh", "vis_rh"]
    return {name: list(range(int(s), int(s) + size)) for name, s in zip(names, starts)}


@dataclass
class SimulationSpec:
    n: int = 50
    m: int = 200
    T: int = 100
    sampling_rate: float = 100.0
    q: int = 20
    regions: dict = field(default_factory=lambda: default_regions(200))
    targets: tuple = ("aud_lh", "aud_rh")
    # per-region (center s, width s, carrier Hz)
    gabor: dict = field(default_factory=lambda: {
        "aud_lh": (0.35, 0.08, 3.0), "aud_rh": (0.45, 0.08, 4.0),
        "vis_lh": (0.55, 0.08, 3.0), "vis_rh": (0.65, 0.08, 2.0)})
    curve: tuple = (1.0, None, 0.5)  # scale, midpoint trial (None = (q - 1) / 2), rate
    noise_level: float = 0.1
    snr: float = 1.0
    snr_db: bool = False
    gp_length_scale: float = 5.0
    iir_order: int = 5
    window_ms: float = 160.0
    step_ms: float = 40.0
    seed: int = 0

    def __post_init__(self):
        self.targets = tuple(self.targets)
        self.curve = tuple(self.curve)
        self.gabor = {k: tuple(v) for k, v in self.gabor.items()}
        self.regions = {k: [int(i) for i in v] for k, v in self.regions.items()}
        self.validate()

    def validate(self) -> None:
        if self.q < 2:
            raise ValueError("need q >= 2 trials")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.iir_order != _IIR_ORDER:
            raise ValueError(f"only the fixed order-{_IIR_ORDER} sensor filter is available")
        seen = set()
        for name, idx in self.regions.items():
            if any(i < 0 or i >= self.m for i in idx):
                raise ValueError(f"region {name} has source indices outside [0, {self.m})")
            if seen & set(idx):
                raise ValueError(f"region {name} overlaps another region")
            seen |= set(idx)
        for name in self.targets:
            if name not in self.regions:
                raise ValueError(f"target {name} is not a region")
        nyq = self.sampling_rate / 2
        for name, (_, width, freq) in self.gabor.items():
            if name not in self.regions:
                raise ValueError(f"Gabor parameters given for unknown region {name}")
            if freq >= nyq:
                raise ValueError(f"carrier {freq} Hz of {name} is not below Nyquist {nyq} Hz")
            if width <= 0:
                raise ValueError("Gabor width must be positive")
        for name in self.regions:
            if name not in self.gabor:
                raise ValueError(f"no Gabor parameters for region {name}")

    @property
    def rois(self) -> list:
        return [self.regions[name] for name in self.targets]

    @property
    def window(self) -> int:
        return int(round(self.window_ms * self.sampling_rate / 1000))

    @property
    def step(self) -> int:
        return int(round(self.step_ms * self.sampling_rate / 1000))

    def dictionary(self) -> StftDictionary:
        return build_dictionary(self.T, self.window, self.step)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "SimulationSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        obj = dict(obj)
        if "regions" not in obj and "m" in obj:
            obj["regions"] = default_regions(int(obj["m"]))
        return cls(**obj)


@dataclass
class GroundTruth:
    Z_true: np.ndarray
    sources: np.ndarray  # (q, m, T) noiseless source trials
    curve: np.ndarray  # raw sigmoid values
    noise_cov: np.ndarray  # sensor-noise covariance before whitening


def make_forward(n: int, m: int, seed: int = 0, max_coherence: float = 0.98) -> np.ndarray:
    """Pseudo-random forward matrix with unit-norm columns.

    Sources and sensors sit on a circle; each column mixes a smooth spatial
    bump around the source position with a random component and gets a
    random sign, so neighboring sources are correlated but no pair exceeds
    ``max_coherence`` in absolute cosine.
    """
    if n >= m:
        warnings.warn("n >= m: the inverse problem is no longer underdetermined",
                      UserWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    sens = np.linspace(0, 2 * np.pi, n, endpoint=False)
    src = np.linspace(0, 2 * np.pi, m, endpoint=False)
    dist = np.angle(np.exp(1j * (sens[:, None] - src[None, :])))
    smooth = np.exp(-0.5 * (dist / 0.35) ** 2)
    smooth /= np.linalg.norm(smooth, axis=0)
    noise = rng.standard_normal((n, m))
    noise /= np.linalg.norm(noise, axis=0)
    signs = rng.choice([-1.0, 1.0], size=m)
    mix = 0.5
    for _ in range(50):
        G = (smooth + mix * noise) * signs
        G /= np.linalg.norm(G, axis=0)
        C = np.abs(G.T @ G)
        np.fill_diagonal(C, 0.0)
        if C.max() <= max_coherence:
            return G
        mix *= 1.25
    raise RuntimeError("could not meet the coherence bound")


def sigmoid_curve(q: int, params=(1.0, None, 0.5)):
    """Logistic learning curve over trials.

    ``params`` is ``(scale, midpoint, rate)``; midpoint ``None`` means
    ``(q - 1) / 2``.  Returns ``(raw, centered)``.
    """
    if q < 2:
        raise ValueError("need q >= 2")
    scale, mid, rate = params
    mid = (q - 1) / 2 if mid is None else mid
    x = rate * (np.arange(q) - mid)
    raw = scale * np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return raw, raw - raw.mean()


def gabor(T: int, sampling_rate: float, center: float, width: float, freq: float) -> np.ndarray:
    t = np.arange(T) / sampling_rate
    return np.exp(-0.5 * ((t - center) / width) ** 2) * np.cos(2 * np.pi * freq * (t - center))


def _gp_noise(rng, count: int, T: int, length_scale: float, sd: float) -> np.ndarray:
    t = np.arange(T)
    K = np.exp(-0.5 * ((t[:, None] - t[None, :]) / length_scale) ** 2)
    w, V = np.linalg.eigh(K)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return sd * rng.standard_normal((count, T)) @ root.T


def _sensor_cov(n: int, rng) -> np.ndarray:
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    C = 0.5 * (A @ A.T) + 0.5 * np.eye(n)
    return C / np.mean(np.diag(C))


def generate_dataset(spec: SimulationSpec, d: StftDictionary | None = None):
    """Simulate recordings; returns ``(TrialDataset, GroundTruth)``.

    The dataset is not whitened; see :func:`prewhiten`.
    """
    spec.validate()
    if d is None:
        d = spec.dictionary()
    ss = np.random.SeedSequence(spec.seed)
    g_seed, cov_seq, trial_seq = ss.spawn(3)
    G = make_forward(spec.n, spec.m, seed=int(g_seed.generate_state(1)[0]))
    raw, centered = sigmoid_curve(spec.q, spec.curve)
    X = np.column_stack([np.ones(spec.q), centered])

    m, T, q = spec.m, spec.T, spec.q
    Z = np.zeros((m, d.s, 2), complex)
    for name, idx in spec.regions.items():
        coef = analyze(gabor(T, spec.sampling_rate, *spec.gabor[name]), d)
        Z[idx, :, 0] = coef
        Z[idx, :, 1] = coef
    sources = synthesize(np.einsum("rk,msk->rms", X, Z), d, check=False)
    peak = float(np.abs(sources).max())

    cov = _sensor_cov(spec.n, np.random.default_rng(cov_seq))
    b, a = sensor_noise_filter()
    mix = linalg.sqrtm(cov).real
    region_idx = np.concatenate([np.asarray(v, int) for v in spec.regions.values()])
    noisy = sources.copy()
    sensor_noise = np.zeros((q, spec.n, T))
    burn = 200
    for r, tss in enumerate(trial_seq.spawn(q)):
        rng = np.random.default_rng(tss)
        if spec.noise_level > 0:
            noisy[r, region_idx] += _gp_noise(rng, len(region_idx), T, spec.gp_length_scale,
                                              spec.noise_level * peak)
        white = rng.standard_normal((spec.n, T + burn))
        sensor_noise[r] = mix @ signal.lfilter(b, a, white, axis=1)[:, burn:]
    clean = np.einsum("nm,rmt->rnt", G, noisy)
    M = clean.copy()
    noise_cov = cov.copy()
    if np.isfinite(spec.snr):
        snr = 10 ** (spec.snr / 10) if spec.snr_db else spec.snr
        if snr <= 0:
            raise ValueError("snr must be positive")
        p_sig = np.mean(np.sum(clean ** 2, axis=(1, 2)))
        p_noise = np.mean(np.sum(sensor_noise ** 2, axis=(1, 2)))
        scale = np.sqrt(p_sig / (snr * p_noise)) if p_noise > 0 else 0.0
        M = clean + scale * sensor_noise
        gain = float(np.sum(signal.lfilter(b, a, np.r_[1.0, np.zeros(4095)]) ** 2))
        noise_cov = cov * gain * scale ** 2
    data = TrialDataset(M, G, X, spec.sampling_rate)
    return data, GroundTruth(Z, sources, raw, noise_cov)


def prewhiten(data: TrialDataset, cov: np.ndarray) -> TrialDataset:
    """Left-multiply recordings and forward matrix by ``cov^{-1/2}``."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (data.n, data.n) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * np.abs(cov).max()):
        raise ValueError("covariance must be a symmetric n x n matrix")
    w, V = np.linalg.eigh(cov)
    if w.min() <= 0:
        raise ValueError("covariance is not positive definite")
    W = (V / np.sqrt(w)) @ V.T
    M = np.einsum("ab,rbt->rat", W, data.M)
    return TrialDataset(M, W @ data.G, data.X, data.sampling_rate, whitened=True)
