"""Run configuration: a JSON document with strictly checked sections.

Penalty and ridge grids are given relative to data-dependent scales:

* ``alpha`` and ``beta`` as fractions of the smallest values that zero every
  coefficient on their own (see :func:`stftr.refit.penalty_scales`);
* ``gamma`` as a fraction of ``beta`` when ``gamma_policy`` is
  ``"fixed-small"``;
* ``lambda2`` as a fraction of the largest eigenvalue of the data-fit Hessian;
* the minimum-norm parameter as a fraction of ``trace(G G^T) / n``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

__all__ = ["ModelSection", "PenaltySection", "SolverSection", "CvSection",
           "BootstrapSection", "RunConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    window_ms: float = 160.0
    step_ms: float = 40.0
    window_kind: str = "hann2"


@dataclass
class PenaltySection:
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    weight_policy: str = "roi-free"
    roi_file: str | None = None


@dataclass
class SolverSection:
    tol_z: float = 1e-6
    max_fista_iter: int = 20000
    kkt_tol: float = 1e-6
    active_batch: int = 50
    max_outer_rounds: int = 50
    lipschitz_tol: float = 1e-6


@dataclass
class CvSection:
    n_folds: int = 5
    alpha_grid: list = field(default_factory=lambda: [0.1, 0.3])
    beta_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    gamma_policy: str = "fixed-small"
    gamma_ratio: float = 1e-3
    gamma_grid: list = field(default_factory=lambda: [1e-3])
    lambda2_grid: list = field(default_factory=lambda: [1e-5, 1e-4, 1e-3, 1e-2, 1e-1])
    mne_lambda_grid: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    cg_tol: float = 1e-8
    cg_max_iter: int = 2000


@dataclass
class BootstrapSection:
    B: int = 20
    seed: int = 0
    lambda2_grid: list | None = None


_SECTIONS = {
    "model": ModelSection, "penalty": PenaltySection, "solver": SolverSection,
    "cv": CvSection, "bootstrap": BootstrapSection,
}
METHODS = ("stft-r", "mne-r")


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    penalty: PenaltySection = field(default_factory=PenaltySection)
    solver: SolverSection = field(default_factory=SolverSection)
    cv: CvSection = field(default_factory=CvSection)
    bootstrap: BootstrapSection = field(default_factory=BootstrapSection)
    method: str = "stft-r"

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(obj) - set(_SECTIONS) - {"method"}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            section = obj.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            kwargs[name] = klass(**section)
        method = obj.get("method", "stft-r")
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
        cfg = cls(method=method, **kwargs)
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.bootstrap.B < 2:
            raise ConfigError("bootstrap.B must be >= 2")
        if self.solver.active_batch < 1:
            raise ConfigError("solver.active_batch must be >= 1")
        if self.cv.n_folds < 2:
            raise ConfigError("cv.n_folds must be >= 2")
        if self.cv.gamma_policy not in ("fixed-small", "tuned"):
            raise ConfigError("cv.gamma_policy must be 'fixed-small' or 'tuned'")
        for name in ("alpha_grid", "beta_grid", "lambda2_grid", "mne_lambda_grid"):
            if not getattr(self.cv, name):
                raise ConfigError(f"cv.{name} must not be empty")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_config(path) -> RunConfig:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return RunConfig.from_dict(obj)
