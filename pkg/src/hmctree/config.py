"""Run configuration with per-dataset hyperparameter profiles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

from .model import PriorConfig
from .nuts import ConfigurationError
from .rjsampler import MoveConfig

__all__ = ["PROFILES", "DataSource", "NutsSettings", "RunConfig", "load_config"]

# (h_init, h_final, alpha_split, beta_split) per dataset and method
PROFILES: dict[str, dict[str, Any]] = {
    "cgm": {
        "task": "regression",
        "hmc-df": (0.001, 0.001, 0.45, 2.5),
        "hmc-dfi": (0.01, 0.001, 0.45, 2.5),
    },
    "iris": {
        "task": "classification",
        "hmc-df": (0.01, 0.01, 0.45, 1.0),
        "hmc-dfi": (0.01, 0.01, 0.7, 1.0),
    },
    "wisconsin": {
        "task": "classification",
        "hmc-df": (0.025, 0.025, 0.45, 2.5),
        "hmc-dfi": (0.1, 0.025, 0.95, 2.0),
    },
    "wine": {
        "task": "classification",
        "hmc-df": (0.025, 0.025, 0.45, 2.0),
        "hmc-dfi": (0.025, 0.025, 0.7, 1.5),
    },
    "raisin": {
        "task": "classification",
        "hmc-df": (0.005, 0.001, 0.45, 2.0),
        "hmc-dfi": (0.05, 0.001, 0.7, 2.5),
    },
}

METHODS = ("hmc-df", "hmc-dfi")
DEFAULT_K = 5


@dataclass(frozen=True)
class DataSource:
    """Where the data comes from.

    ``kind="synth-cgm"`` uses the built-in generator; ``kind="csv"`` reads
    ``train`` (and ``test`` if given, else a shuffled split of ``train`` with
    ``split_fraction`` going to training).
    """

    kind: Literal["synth-cgm", "csv"] = "synth-cgm"
    train: str | None = None
    test: str | None = None
    output: str | None = None
    task: Literal["regression", "classification"] | None = None
    split_fraction: float = 0.7
    split_seed: int = 0
    n_train: int = 800
    n_test: int = 800
    sigma: float = 0.2
    input_law: Literal["grid", "uniform"] = "grid"
    data_seed: int | None = None  # synthetic data seed; defaults to the run seed


@dataclass(frozen=True)
class NutsSettings:
    step_size: float = 0.1
    max_depth: int = 10
    target_accept: float = 0.8
    max_delta_h: float = 1000.0


@dataclass(frozen=True)
class RunConfig:
    method: Literal["hmc-df", "hmc-dfi"] = "hmc-df"
    profile: str = "cgm"
    data: DataSource = field(default_factory=DataSource)
    iterations: int = 1000
    burnin: int = 500
    k: int = DEFAULT_K
    p_grow: float = 0.35
    p_prune: float = 0.35
    p_stay: float = 0.3
    burnin_probs: tuple[float, float, float] | None = None
    df_order: Literal["random", "sweep-first"] = "random"
    h_init: float | None = None
    h_final: float | None = None
    alpha_split: float | None = None
    beta_split: float | None = None
    mu_prior: tuple[float, float] = (0.0, 1.0)
    sigma_prior: tuple[float, float] = (1.5, 1.5)
    dirichlet_alpha: tuple[float, ...] | None = None
    nuts: NutsSettings = field(default_factory=NutsSettings)
    restarts: int = 10
    seed: int = 0
    jobs: int = 1
    out: str = "runs/out"

    # -- resolution -------------------------------------------------------
    def resolved(self) -> "RunConfig":
        """Fill unset sharpness/topology-prior fields from the profile and validate."""
        if self.profile not in PROFILES:
            raise ConfigurationError(f"profile: unknown profile {self.profile!r} (choose from {sorted(PROFILES)})")
        if self.method not in METHODS:
            raise ConfigurationError(f"method: must be one of {METHODS}, got {self.method!r}")
        h_init, h_final, a, b = PROFILES[self.profile][self.method]
        cfg = replace(
            self,
            h_init=h_init if self.h_init is None else self.h_init,
            h_final=h_final if self.h_final is None else self.h_final,
            alpha_split=a if self.alpha_split is None else self.alpha_split,
            beta_split=b if self.beta_split is None else self.beta_split,
        )
        if cfg.data.task is None:
            cfg = replace(cfg, data=replace(cfg.data, task=PROFILES[self.profile]["task"]))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        errors = []
        if self.iterations < 1:
            errors.append("iterations: must be >= 1")
        if not 0 <= self.burnin:
            errors.append("burnin: must be >= 0")
        if self.burnin > self.iterations:
            errors.append("burnin: must not exceed iterations")
        if self.restarts < 1:
            errors.append("restarts: must be >= 1")
        if self.jobs < 1:
            errors.append("jobs: must be >= 1")
        if self.k < 1:
            errors.append("k: must be >= 1")
        for name in ("h_init", "h_final"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                errors.append(f"{name}: must be positive")
        probs = (self.p_grow, self.p_prune, self.p_stay)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            errors.append("p_grow/p_prune/p_stay: must be non-negative and sum to 1")
        if self.alpha_split is not None and not 0 < self.alpha_split < 1:
            errors.append("alpha_split: must lie in (0, 1)")
        if self.beta_split is not None and self.beta_split < 0:
            errors.append("beta_split: must be >= 0")
        if self.data.kind == "csv" and not self.data.train:
            errors.append("data.train: required for csv data")
        if self.data.kind not in ("csv", "synth-cgm"):
            errors.append(f"data.kind: unknown source {self.data.kind!r}")
        if self.nuts.max_depth < 0:
            errors.append("nuts.max_depth: must be >= 0")
        if not 0 < self.nuts.target_accept < 1:
            errors.append("nuts.target_accept: must lie in (0, 1)")
        if errors:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errors))

    # -- derived objects ----------------------------------------------------
    @property
    def variant(self) -> str:
        return "DF" if self.method == "hmc-df" else "DFI"

    def move_config(self) -> MoveConfig:
        return MoveConfig(self.p_grow, self.p_prune, self.p_stay, self.k, self.burnin,
                          self.burnin_probs, self.df_order)

    def prior(self, n_features: int, n_classes: int = 0) -> PriorConfig:
        return PriorConfig(
            alpha_split=self.alpha_split,
            beta_split=self.beta_split,
            dirichlet_alpha=self.dirichlet_alpha,
            mu_prior=tuple(self.mu_prior),
            sigma_prior=tuple(self.sigma_prior),
        ).resolved(n_features, n_classes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration fields: {unknown}")
        if "data" in d and isinstance(d["data"], dict):
            d["data"] = _build(DataSource, d["data"], "data")
        if "nuts" in d and isinstance(d["nuts"], dict):
            d["nuts"] = _build(NutsSettings, d["nuts"], "nuts")
        for name in ("mu_prior", "sigma_prior", "dirichlet_alpha", "burnin_probs"):
            if d.get(name) is not None:
                d[name] = tuple(d[name])
        return cls(**d)


def _build(kind, d: dict, prefix: str):
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigurationError(f"unknown fields in {prefix}: {unknown}")
    return kind(**d)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from None
    return RunConfig.from_dict(raw)
