"""Temporal post-processing of per-frame pain estimates within a sequence.

Three filters:

* ``median-lr``: running median over a centred window (truncated at the
  sequence ends) followed by a least-squares line through the medians of the
  same window, evaluated at the centre frame.
* ``vicinity-mlp``: an MLP maps the ``w`` neighbouring estimates to the
  ground-truth value of the centre frame.
* ``strict-ordering``: the estimate plus its spread over nested centred
  windows of width 3, 5, ..., w, regressed by an SVR (default) or MLP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .learn.mlp import Mlp, MlpParams, mlp_train
from .learn.svr import SvrModel, SvrParams, svr_train

METHODS = ("median-lr", "vicinity-mlp", "strict-ordering")
ALIASES = {"strict-svr": ("strict-ordering", "svr"), "strict-mlp": ("strict-ordering", "mlp")}
DEFAULT_W = {"median-lr": 21, "vicinity-mlp": 21, "strict-ordering": 61}


@dataclass(frozen=True)
class FilterConfig:
    method: str = "median-lr"
    w: int | None = None
    regressor: str | None = None
    spread: str = "var"                 # strict-ordering statistic: var | std
    mlp: MlpParams = field(default_factory=MlpParams)
    svr: SvrParams = field(default_factory=SvrParams)

    def __post_init__(self):
        if self.method in ALIASES:
            method, reg = ALIASES[self.method]
            object.__setattr__(self, "method", method)
            if self.regressor is None:
                object.__setattr__(self, "regressor", reg)
        if self.method not in METHODS:
            raise ValueError(f"unknown filter method {self.method!r}; choose from "
                             f"{METHODS + tuple(ALIASES)}")
        if self.w is None:
            object.__setattr__(self, "w", DEFAULT_W[self.method])
        if self.regressor is None:
            object.__setattr__(self, "regressor",
                               "svr" if self.method == "strict-ordering" else "mlp")
        if self.w < 3 or self.w % 2 == 0:
            raise ValueError(f"window width must be odd and >= 3, got {self.w}")
        if self.regressor not in ("mlp", "svr"):
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if self.method == "vicinity-mlp" and self.regressor != "mlp":
            raise ValueError("vicinity filter uses an MLP regressor")
        if self.spread not in ("var", "std"):
            raise ValueError("spread must be 'var' or 'std'")

    @property
    def learned(self) -> bool:
        return self.method != "median-lr"


def _as_signal(z) -> np.ndarray:
    z = np.asarray(z, float).ravel()
    if len(z) == 0:
        raise ValueError("empty sequence")
    return z


def filter_median_lr(z, w: int = 21) -> np.ndarray:
    z = _as_signal(z)
    if w < 1 or w % 2 == 0:
        raise ValueError("window width must be odd and positive")
    h, n = w // 2, len(z)
    med = np.array([np.median(z[max(0, i - h):i + h + 1]) for i in range(n)])
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - h), min(n, i + h + 1)
        x = [float(j - i) for j in range(lo, hi)]
        m = med[lo:hi].tolist()
        k = len(x)
        sx, sm = math.fsum(x), math.fsum(m)
        sxx = math.fsum(v * v for v in x)
        sxm = math.fsum(a * b for a, b in zip(x, m))
        den = k * sxx - sx * sx
        slope = (k * sxm - sx * sm) / den if den > 0 else 0.0
        out[i] = (sm - slope * sx) / k
    return out


def build_vicinity_features(z, w: int) -> np.ndarray:
    """``(n, w)`` centred windows with edge-replicated padding."""
    z = _as_signal(z)
    if w < 1 or w % 2 == 0:
        raise ValueError("window width must be odd and positive")
    return sliding_window_view(np.pad(z, w // 2, mode="edge"), w).copy()


def build_strict_ordering_features(z, w: int, spread: str = "var") -> np.ndarray:
    """``(n, 1 + (w-1)/2)``: the estimate followed by window spreads for widths 3..w."""
    z = _as_signal(z)
    if w < 3 or w % 2 == 0:
        raise ValueError("window width must be odd and >= 3")
    V = build_vicinity_features(z, w)
    c = w // 2
    cols = [z]
    for r in range(1, c + 1):
        win = V[:, c - r:c + r + 1]
        v = win.var(axis=1)
        cols.append(np.sqrt(v) if spread == "std" else v)
    return np.column_stack(cols)


def _features(z, cfg: FilterConfig) -> np.ndarray:
    if cfg.method == "vicinity-mlp":
        return build_vicinity_features(z, cfg.w)
    return build_strict_ordering_features(z, cfg.w, cfg.spread)


@dataclass
class LearnedFilter:
    config: FilterConfig
    model: Mlp | SvrModel
    mean: np.ndarray
    scale: np.ndarray

    def __call__(self, z) -> np.ndarray:
        F = (_features(z, self.config) - self.mean) / self.scale
        return self.model.predict(F)


def train_filter(train: Seq[tuple], config: FilterConfig, seed: int = 0) -> LearnedFilter:
    """Fit a learned filter on ``(estimates, ground_truth)`` sequence pairs."""
    if not config.learned:
        raise ValueError("median-lr has nothing to train")
    pairs = [(_as_signal(z), np.asarray(t, float).ravel()) for z, t in train]
    if not pairs:
        raise ValueError("learned filter needs at least one training sequence")
    for z, t in pairs:
        if len(z) != len(t):
            raise ValueError("estimate and ground-truth lengths differ")
    F = np.vstack([_features(z, config) for z, _ in pairs])
    y = np.concatenate([t for _, t in pairs])
    if np.isnan(y).any():
        raise ValueError("training ground truth contains missing values")
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Fs = (F - mean) / scale
    if config.regressor == "svr":
        model = svr_train(Fs, y, config.svr)
    else:
        p = config.mlp
        model = mlp_train(Fs, y, MlpParams(p.hidden, p.learning_rate, p.epochs, p.batch_size,
                                           p.l2, seed))
    return LearnedFilter(config, model, mean, scale)


def filter_learned(train: Seq[tuple], test_z, config: FilterConfig, seed: int = 0) -> np.ndarray:
    """Train on labelled sequences, then filter one unlabelled test sequence."""
    return train_filter(train, config, seed)(test_z)


def apply_filter(z, config: FilterConfig, learned: LearnedFilter | None = None) -> np.ndarray:
    if config.method == "median-lr":
        return filter_median_lr(z, config.w)
    if learned is None:
        raise ValueError(f"{config.method} needs a trained filter")
    return learned(z)
