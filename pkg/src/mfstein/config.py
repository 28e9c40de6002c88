"""Experiment configuration and the registry of built-in model families."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import PopulationModel, SisParams, build_sis, linear_model, rate_drift


class ConfigError(ValueError):
    pass


def _sis(params):
    missing = {"alpha", "beta"} - set(params)
    if missing:
        raise ConfigError(f"sis model needs params {sorted(missing)}")
    return build_sis(SisParams(float(params["alpha"]), float(params["beta"])))


def _sis_imperfect(params):
    """SIS chain paired with a deliberately mis-scaled mean-field drift."""
    base = _sis(params)
    delta = float(params.get("delta", 0.1))
    return dataclasses.replace(
        base, name="sis_imperfect", params={**base.params, "delta": delta},
        meanfield=lambda x: (1.0 + delta) * rate_drift(base, x))


def _linear(params):
    if "A" not in params:
        raise ConfigError("linear model needs param 'A' (matrix)")
    return linear_model(params["A"])


FAMILIES = {"sis": _sis, "sis_imperfect": _sis_imperfect, "linear": _linear}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict

    def build(self) -> PopulationModel:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; "
                              f"known: {sorted(FAMILIES)}")
        return FAMILIES[self.family](self.params)


@dataclass
class Tolerances:
    ode: float = 1e-9
    equilibrium: float = 1e-12
    poisson: float = 1e-11
    perturb: float = 1e-10


@dataclass
class SimulateConfig:
    M_list: list = field(default_factory=lambda: [100, 1000, 100000])
    horizon: float = 50.0
    burn_in: float | None = None
    x0: list = field(default_factory=lambda: [1.0, 0.0])
    points: int = 2001


@dataclass
class RateConfig:
    M_list: list = field(default_factory=lambda: list(range(100, 1001, 100)))
    method: str = "exact"
    horizon: float = 2000.0
    component: int | None = 0


@dataclass
class SteinConfig:
    M_list: list = field(default_factory=lambda: [20, 50])
    remainder_M: list = field(default_factory=lambda: [50, 100, 200, 400])


@dataclass
class PerturbConfig:
    x: list = field(default_factory=lambda: [0.9, 0.1])
    z: list = field(default_factory=lambda: [-1.0, 1.0])
    eps: list = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    horizon: float = 200.0


@dataclass
class ExperimentConfig:
    model: ModelSpec
    seed: int = 0
    simulator: str = "uniformization"
    workers: int = 1
    out: str = "runs/default"
    tolerances: Tolerances = field(default_factory=Tolerances)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    stein: SteinConfig = field(default_factory=SteinConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)

    def validate(self) -> None:
        self.model.build()
        for name, ms in [("simulate", self.simulate.M_list), ("rate", self.rate.M_list),
                         ("stein", self.stein.M_list)]:
            if not ms:
                raise ConfigError(f"{name}.M_list is empty")
            if any(int(m) < 1 for m in ms):
                raise ConfigError(f"{name}.M_list entries must be >= 1")
        for k, v in vars(self.tolerances).items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be > 0")
        if self.simulator not in ("uniformization", "gillespie"):
            raise ConfigError(f"unknown simulator {self.simulator!r}")
        if self.rate.method not in ("exact", "simulate"):
            raise ConfigError(f"unknown rate method {self.rate.method!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def perturb_direction(self) -> np.ndarray:
        z = np.asarray(self.perturb.z, dtype=float)
        return z / np.linalg.norm(z)


_SECTIONS = {"tolerances": Tolerances, "simulate": SimulateConfig, "rate": RateConfig,
             "stein": SteinConfig, "perturb": PerturbConfig}


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    m = d.pop("model", None)
    if not isinstance(m, dict) or "family" not in m:
        raise ConfigError("config needs a 'model' object with a 'family'")
    if "params" not in m:
        raise ConfigError("config model is missing 'params'")
    kw = {"model": ModelSpec(m["family"], dict(m["params"]))}
    for key, cls in _SECTIONS.items():
        if key in d:
            sec = d.pop(key)
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(sec) - names
            if unknown:
                raise ConfigError(f"unknown keys in {key}: {sorted(unknown)}")
            kw[key] = cls(**sec)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw.update(d)
    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def default_config() -> ExperimentConfig:
    return config_from_dict({"model": {"family": "sis", "params": {"alpha": 0.5, "beta": 0.5}}})
