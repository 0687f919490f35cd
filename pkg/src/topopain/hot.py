"""Histograms of Topographical (HoT) features.

Per region six 8-bin histograms are computed from a :class:`TopoField`:

====  ==========================================================  ========
name  votes                                                       family
====  ==========================================================  ========
h1h   +1 into the curvature-axis bin where ``lambda2 > T_lambda``  hess
h2h   ``lambda2 - lambda1`` into the curvature-axis bin            hess
h3h   ``lambda2`` over ``[0, M_lambda2)``, negatives ignored       hess
h4h   ``lambda2 - lambda1`` over ``[0, M_lambda12)``               hess
h1g   +1 into the gradient-direction bin where ``|grad| > T_G``    grad
h2g   ``|grad|`` over ``[0, M_gradmag)``                           grad
====  ==========================================================  ========

Bins are half-open ``[lo, hi)``; range histograms clamp values at or above
the top into the last bin.  Every histogram is normalised to unit sum, or
left all-zero when nothing voted.

The face descriptor is region-major: ``hess`` holds, for each of the five
regions in :class:`~topopain.data.RoiSpec` order, ``h1h|h2h|h3h|h4h`` (32
values); ``grad`` holds ``h1g|h2g`` per region (16 values).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Frame, RoiSpec, extract_rois, normalize_face
from .scalespace import ScaleParams, TopoField, scale_derivatives

HESS_HISTS = ("h1h", "h2h", "h3h", "h4h")
GRAD_HISTS = ("h1g", "h2g")
N_REGIONS = 5

# soft-vote totals below this are treated as "no votes"
ZERO_MASS = 1e-12


@dataclass(frozen=True)
class HotParams:
    n_bins: int = 8
    T_lambda: float = 0.1
    T_G: float = 5.0
    M_lambda2: float = 30.0
    M_lambda12: float = 50.0
    M_gradmag: float = 100.0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        for name in ("T_lambda", "T_G", "M_lambda2", "M_lambda12", "M_gradmag"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def hess_dim(self) -> int:
        return len(HESS_HISTS) * self.n_bins * N_REGIONS

    @property
    def grad_dim(self) -> int:
        return len(GRAD_HISTS) * self.n_bins * N_REGIONS


def _bin_index(values: np.ndarray, top: float, n_bins: int) -> np.ndarray:
    idx = np.floor(values / (top / n_bins)).astype(int)
    return np.clip(idx, 0, n_bins - 1)


def _normalize(h: np.ndarray) -> np.ndarray:
    z = math.fsum(h)
    return h / z if z > ZERO_MASS else np.zeros_like(h)


def _vote(values, weights, top, n_bins):
    idx = _bin_index(values, top, n_bins)
    if weights is None:
        h = np.bincount(idx, minlength=n_bins).astype(float)
    else:
        # correctly rounded sums: the result does not depend on pixel order
        h = np.array([math.fsum(weights[idx == k]) for k in range(n_bins)])
    return _normalize(h)


def hist_hard_orientation(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    mask = field.lambda2 > params.T_lambda
    return _vote(field.theta_lambda[mask], None, 360.0, params.n_bins)


def hist_soft_orientation(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    spread = (field.lambda2 - field.lambda1).ravel()
    return _vote(field.theta_lambda.ravel(), spread, 360.0, params.n_bins)


def hist_lambda2(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    lam = field.lambda2[field.lambda2 >= 0]
    return _vote(lam, None, params.M_lambda2, params.n_bins)


def hist_lambda_diff(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    spread = np.maximum(field.lambda2 - field.lambda1, 0.0).ravel()
    return _vote(spread, None, params.M_lambda12, params.n_bins)


def hist_grad_orientation(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    mask = field.grad_mag > params.T_G
    return _vote(field.grad_ori[mask], None, 360.0, params.n_bins)


def hist_grad_magnitude(field: TopoField, params: HotParams = HotParams()) -> np.ndarray:
    return _vote(field.grad_mag.ravel(), None, params.M_gradmag, params.n_bins)


HISTOGRAMS = {
    "h1h": hist_hard_orientation,
    "h2h": hist_soft_orientation,
    "h3h": hist_lambda2,
    "h4h": hist_lambda_diff,
    "h1g": hist_grad_orientation,
    "h2g": hist_grad_magnitude,
}


def region_histograms(field: TopoField, params: HotParams = HotParams()) -> dict[str, np.ndarray]:
    return {name: fn(field, params) for name, fn in HISTOGRAMS.items()}


@dataclass(frozen=True)
class HoTDescriptor:
    hess: np.ndarray
    grad: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hess", np.asarray(self.hess, float))
        object.__setattr__(self, "grad", np.asarray(self.grad, float))

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.hess, self.grad])

    def histogram(self, region: int, name: str, n_bins: int = 8) -> np.ndarray:
        if name in HESS_HISTS:
            off = (region * len(HESS_HISTS) + HESS_HISTS.index(name)) * n_bins
            return self.hess[off:off + n_bins]
        off = (region * len(GRAD_HISTS) + GRAD_HISTS.index(name)) * n_bins
        return self.grad[off:off + n_bins]


def describe_patches(patches: Iterable[np.ndarray], scale: ScaleParams = ScaleParams(),
                     params: HotParams = HotParams()) -> HoTDescriptor:
    hess, grad = [], []
    for patch in patches:
        hists = region_histograms(scale_derivatives(patch, scale), params)
        hess.extend(hists[n] for n in HESS_HISTS)
        grad.extend(hists[n] for n in GRAD_HISTS)
    return HoTDescriptor(np.concatenate(hess), np.concatenate(grad))


def describe_face(frame: Frame, roi: RoiSpec | None = None, scale: ScaleParams = ScaleParams(),
                  params: HotParams = HotParams()) -> HoTDescriptor:
    """HoT descriptor of a normalized frame (160 Hessian + 80 gradient values)."""
    return describe_patches((p.patch for p in extract_rois(frame, roi)), scale, params)


def _normalize_and_describe(frames, roi, scale, params):
    out = []
    for f in frames:
        g = f if f.normalized else normalize_face(f)
        out.append((g, describe_face(g, roi, scale, params)))
    return out


def extract_features(frames: Iterable[Frame], roi: RoiSpec | None = None,
                     scale: ScaleParams = ScaleParams(), params: HotParams = HotParams(),
                     threads: int = 1) -> "FeatureTable":
    """Normalize every frame and tabulate its descriptor and landmarks.

    Output rows follow input order regardless of ``threads``.
    """
    frames = list(frames)
    if threads > 1 and len(frames) > 1:
        chunks = [frames[k::threads] for k in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_normalize_and_describe, chunks, *zip(*[(roi, scale, params)]
                                                                     * threads)))
        done = [None] * len(frames)
        for k, part in enumerate(parts):
            done[k::threads] = part
    else:
        done = _normalize_and_describe(frames, roi, scale, params)
    return FeatureTable.from_frames([g for g, _ in done], [d for _, d in done])


# ------------------------------------------------------------------ export

@dataclass
class FeatureTable:
    """Per-frame descriptors plus normalized landmark coordinates."""
    subject: list[str]
    sequence: list[str]
    frame: np.ndarray
    pain: np.ndarray          # NaN where unannotated
    hess: np.ndarray          # (n, 160)
    grad: np.ndarray          # (n, 80)
    pts: np.ndarray           # (n, 44) or (n, 0)

    def __len__(self):
        return len(self.subject)

    @property
    def keys(self) -> list[tuple[str, str, int]]:
        return list(zip(self.subject, self.sequence, self.frame.tolist()))

    def subset(self, mask) -> "FeatureTable":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return FeatureTable([self.subject[i] for i in idx], [self.sequence[i] for i in idx],
                            self.frame[idx], self.pain[idx], self.hess[idx], self.grad[idx],
                            self.pts[idx])

    @classmethod
    def from_frames(cls, frames: Iterable[Frame], descriptors: Iterable[HoTDescriptor]):
        frames, descriptors = list(frames), list(descriptors)
        return cls(
            subject=[f.subject_id for f in frames],
            sequence=[f.sequence_id for f in frames],
            frame=np.array([f.frame_index for f in frames], dtype=int),
            pain=np.array([np.nan if f.pain is None else f.pain for f in frames], dtype=float),
            hess=np.array([d.hess for d in descriptors]).reshape(len(frames), -1),
            grad=np.array([d.grad for d in descriptors]).reshape(len(frames), -1),
            pts=np.array([f.landmarks.points.ravel() for f in frames]).reshape(len(frames), -1),
        )


def write_features(table: FeatureTable, path) -> Path:
    """CSV with columns ``subject,sequence,frame,pain,hess0..,grad0..,pts0..``.

    ``pain`` is empty when unannotated.  Floats use ``repr`` so reading back
    is exact.
    """
    path = Path(path)
    header = (["subject", "sequence", "frame", "pain"]
              + [f"hess{k}" for k in range(table.hess.shape[1])]
              + [f"grad{k}" for k in range(table.grad.shape[1])]
              + [f"pts{k}" for k in range(table.pts.shape[1])])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(table)):
            pain = "" if np.isnan(table.pain[i]) else repr(float(table.pain[i]))
            w.writerow([table.subject[i], table.sequence[i], int(table.frame[i]), pain]
                       + [repr(float(v)) for v in table.hess[i]]
                       + [repr(float(v)) for v in table.grad[i]]
                       + [repr(float(v)) for v in table.pts[i]])
    return path


def read_features(path) -> FeatureTable:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["subject", "sequence", "frame", "pain"]:
        raise ValueError(f"{path}: not a feature table (bad header)")
    header = rows[0]
    cols = {p: [k for k, h in enumerate(header) if h.startswith(p) and h[len(p):].isdigit()]
            for p in ("hess", "grad", "pts")}
    body = rows[1:]

    def block(prefix):
        ix = cols[prefix]
        return np.array([[float(r[k]) for k in ix] for r in body]).reshape(len(body), len(ix))

    return FeatureTable(
        subject=[r[0] for r in body], sequence=[r[1] for r in body],
        frame=np.array([int(r[2]) for r in body], dtype=int),
        pain=np.array([float(r[3]) if r[3] != "" else np.nan for r in body]),
        hess=block("hess"), grad=block("grad"), pts=block("pts"),
    )
