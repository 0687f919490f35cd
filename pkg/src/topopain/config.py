"""Pipeline configuration: one JSON document with every tunable.

Unknown keys are rejected and each section is validated by building the
owning module's parameter object, so a bad value fails before any work
starts.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .embed import EmbedParams
from .hot import HotParams
from .learn.mlp import MlpParams
from .learn.svr import SvrParams
from .scalespace import ScaleParams
from .temporal import FilterConfig

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "seed": 0,
    "scale": {"sigma": 2.0, "gamma_norm": True, "truncate": 5.0},
    "hot": {"n_bins": 8, "T_lambda": 0.1, "T_G": 5.0, "M_lambda2": 30.0,
            "M_lambda12": 50.0, "M_gradmag": 100.0},
    "embed": {"method": "sr-m", "p": 8, "kappa": 0.5, "alpha": 0.01, "sigma_heat": None,
              "normalized": False, "lpp_eps": 1e-6, "T_hess": 32, "T_grad": 24},
    "svr": {"C": 4.0, "gamma": 2.0 ** -3.5, "epsilon": 0.1, "tol": 1e-3, "max_iter": None},
    "filter": {"method": None, "w": None, "regressor": None, "spread": "var"},
    "mlp": {"hidden": [40, 40], "learning_rate": 3e-3, "epochs": 300, "batch_size": 64,
            "l2": 1e-5},
    "roi": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


class PipelineConfig:
    """Validated, read-mostly view over a nested configuration dictionary."""

    def __init__(self, values: dict | None = None):
        values = dict(values or {})
        if values.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"config schema {values['schema']!r} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if "roi" in values and values["roi"] is not None and not isinstance(values["roi"], dict):
            raise ConfigError("'roi' must be an object or null")
        self.values = _merge(DEFAULTS, values)
        self.validate()

    # ---- module parameter objects
    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def scale(self) -> ScaleParams:
        return ScaleParams(**self.values["scale"])

    def hot(self) -> HotParams:
        return HotParams(**self.values["hot"])

    def embed(self) -> EmbedParams:
        e = {k: v for k, v in self.values["embed"].items() if k not in ("T_hess", "T_grad")}
        return EmbedParams(**e)

    @property
    def T_hess(self) -> int:
        return int(self.values["embed"]["T_hess"])

    @property
    def T_grad(self) -> int:
        return int(self.values["embed"]["T_grad"])

    def svr(self) -> SvrParams:
        return SvrParams(**self.values["svr"])

    def mlp(self) -> MlpParams:
        m = dict(self.values["mlp"])
        m["hidden"] = tuple(m["hidden"])
        return MlpParams(**m, seed=self.seed)

    def filter(self) -> FilterConfig | None:
        f = self.values["filter"]
        if not f["method"]:
            return None
        return FilterConfig(f["method"], f["w"], f["regressor"], f["spread"],
                            self.mlp(), self.svr())

    def roi(self):
        from .data import RoiSpec
        return RoiSpec() if self.values["roi"] is None else RoiSpec.from_dict(self.values["roi"])

    def validate(self) -> None:
        checks = [("scale", self.scale), ("hot", self.hot), ("embed", self.embed),
                  ("svr", self.svr), ("mlp", self.mlp), ("filter", self.filter),
                  ("roi", self.roi)]
        for name, build in checks:
            try:
                build()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid '{name}' section: {exc}") from exc
        for key in ("T_hess", "T_grad"):
            if not isinstance(self.values["embed"][key], int) or self.values["embed"][key] < 1:
                raise ConfigError(f"embed.{key} must be a positive integer")
        if not isinstance(self.values["seed"], int) or self.values["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")

    # ---- composition and persistence
    def updated(self, override: dict) -> "PipelineConfig":
        return PipelineConfig(_merge(self.values, override))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls(doc)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n")
        return path
