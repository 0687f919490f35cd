"""Gaussian scale-space derivatives and closed-form 2x2 Hessian eigen-analysis.

Array axis 0 is ``i`` (rows, image ``y``) and axis 1 is ``j`` (columns,
image ``x``).  Orientations are ``atan2(d_i, d_j)`` in degrees, so 0 points
along increasing columns and 90 along increasing rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Orientation angles are rounded to this many decimals (degrees) so that
# round-off in exactly axis-aligned structure cannot flip a histogram bin.
_ANGLE_DECIMALS = 9


@dataclass(frozen=True)
class ScaleParams:
    sigma: float = 2.0
    gamma_norm: bool = True
    truncate: float = 5.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        if self.truncate < 3.0:
            raise ValueError("kernel truncation below 3 sigma")

    @property
    def radius(self) -> int:
        return int(math.ceil(self.truncate * self.sigma))


@dataclass(frozen=True)
class TopoField:
    grad_mag: np.ndarray
    grad_ori: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    theta_lambda: np.ndarray
    sigma: float
    # raw derivatives, kept for consistency checks
    Li: np.ndarray | None = None
    Lj: np.ndarray | None = None
    Lii: np.ndarray | None = None
    Lij: np.ndarray | None = None
    Ljj: np.ndarray | None = None

    @property
    def shape(self):
        return self.grad_mag.shape


def _gauss1d(sigma: float, radius: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(-radius, radius + 1, dtype=float)
    raw = np.exp(-k ** 2 / (2 * sigma ** 2)) / (math.sqrt(2 * math.pi) * sigma)
    return k, raw


def gaussian_kernel(sigma: float, radius: int | None = None, normalize: bool = True) -> np.ndarray:
    """Sampled isotropic 2-D Gaussian on ``[-radius, radius]^2``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    min_r = int(math.ceil(3 * sigma))
    radius = min_r if radius is None else radius
    if radius < min_r:
        raise ValueError(f"radius {radius} below ceil(3 sigma) = {min_r}")
    _, g = _gauss1d(sigma, radius)
    k2 = np.outer(g, g)
    return k2 / k2.sum() if normalize else k2


def derivative_kernels(sigma: float, radius: int):
    """1-D Gaussian kernels of order 0, 1, 2.

    Order 0 sums to one.  The truncated order-2 kernel is shifted by a
    multiple of order 0 so that it sums to zero; otherwise it would respond
    to constants and, against a quadratic surface, grow with position.
    """
    k, g = _gauss1d(sigma, radius)
    g = g / g.sum()
    d2 = (k ** 2 / sigma ** 4 - 1 / sigma ** 2) * g
    return g, -k / sigma ** 2 * g, d2 - d2.sum() * g


def _sep(img, ki, kj):
    out = ndimage.convolve1d(img, ki, axis=0, mode="reflect")
    return ndimage.convolve1d(out, kj, axis=1, mode="reflect")


def smooth(patch: np.ndarray, params: ScaleParams = ScaleParams()) -> np.ndarray:
    """Gaussian smoothing; constant patches come back unchanged bit for bit."""
    g, _, _ = derivative_kernels(params.sigma, params.radius)
    I = np.asarray(patch, float)
    lo = I.min()
    return lo + _sep(I - lo, g, g)


def hessian_eigen(Lii, Lij, Ljj):
    """Closed-form eigen-decomposition of ``[[Lii, Lij], [Lij, Ljj]]``.

    Returns ``(lambda1, lambda2, theta)`` with ``lambda1 <= lambda2`` and
    ``theta`` the axis, in degrees within ``[0, 180)``, of the eigenvector of
    the eigenvalue with the larger magnitude.  The eigenvector sign is fixed
    by making its first non-zero component (the ``i`` one) positive.
    """
    Lii, Lij, Ljj = (np.asarray(a, float) for a in (Lii, Lij, Ljj))
    mean = 0.5 * (Lii + Ljj)
    rad = np.hypot(0.5 * (Lii - Ljj), Lij)
    lam1, lam2 = mean - rad, mean + rad
    mu = np.where(np.abs(lam1) > np.abs(lam2), lam1, lam2)
    # two candidate eigenvectors (v_i, v_j); take the better-conditioned one
    a_i, a_j = Lij, mu - Lii
    b_i, b_j = mu - Ljj, Lij
    use_a = np.hypot(a_i, a_j) >= np.hypot(b_i, b_j)
    vi, vj = np.where(use_a, a_i, b_i), np.where(use_a, a_j, b_j)
    null = (vi == 0) & (vj == 0)
    vj = np.where(null, 1.0, vj)
    flip = (vi < 0) | ((vi == 0) & (vj < 0))
    vi, vj = np.where(flip, -vi, vi), np.where(flip, -vj, vj)
    theta = np.round(np.degrees(np.arctan2(vi, vj)), _ANGLE_DECIMALS) % 180.0
    return lam1, lam2, theta


def orientation(di, dj) -> np.ndarray:
    """Direction of the vector ``(d_i, d_j)`` in degrees within ``[0, 360)``."""
    ang = np.round(np.degrees(np.arctan2(di, dj)), _ANGLE_DECIMALS) % 360.0
    return np.where(ang >= 360.0, 0.0, ang)


def scale_derivatives(patch: np.ndarray, params: ScaleParams = ScaleParams()) -> TopoField:
    """Gradient and Hessian eigen-data of ``patch`` at scale ``params.sigma``."""
    I = np.asarray(patch, float)
    r = params.radius
    if I.ndim != 2 or min(I.shape) <= 2 * r + 1:
        raise ValueError(f"patch {I.shape} not larger than kernel support {2 * r + 1}")
    # derivatives annihilate constants; removing the minimum keeps flat
    # patches exactly flat and makes intensity offsets exactly invisible
    I = I - I.min()
    g, d1, d2 = derivative_kernels(params.sigma, r)
    Li, Lj = _sep(I, d1, g), _sep(I, g, d1)
    Lii, Lij, Ljj = _sep(I, d2, g), _sep(I, d1, d1), _sep(I, g, d2)
    if params.gamma_norm:
        s, s2 = params.sigma, params.sigma ** 2
        Li, Lj, Lii, Lij, Ljj = Li * s, Lj * s, Lii * s2, Lij * s2, Ljj * s2
    lam1, lam2, theta = hessian_eigen(Lii, Lij, Ljj)
    return TopoField(
        grad_mag=np.hypot(Li, Lj), grad_ori=orientation(Li, Lj),
        lambda1=lam1, lambda2=lam2, theta_lambda=theta, sigma=params.sigma,
        Li=Li, Lj=Lj, Lii=Lii, Lij=Lij, Ljj=Ljj,
    )
