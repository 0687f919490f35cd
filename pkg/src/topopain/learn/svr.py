"""epsilon-SVR with an RBF kernel, trained by SMO.

The dual is written over ``2n`` variables ``beta = [alpha; alpha*]`` with
labels ``y = [+1...; -1...]``::

    min  1/2 beta^T Q beta + p^T beta
    s.t. y^T beta = 0,  0 <= beta_t <= C_t
    Q_ts = y_t y_s K(x_t, x_s),   p = [eps - z; eps + z]

Working pairs are chosen by maximal violation plus second-order gain; the
decision function is ``f(x) = sum_i (alpha_i - alpha*_i) K(x_i, x) - rho``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

TAU = 1e-12


class SvrError(ValueError):
    pass


@dataclass(frozen=True)
class SvrParams:
    C: float = 4.0
    gamma: float = 2.0 ** -3.5
    epsilon: float = 0.1
    tol: float = 1e-3
    max_iter: int | None = None

    def __post_init__(self):
        if not (self.C > 0 and self.gamma > 0 and self.epsilon >= 0 and self.tol > 0):
            raise ValueError("SVR parameters must be positive")


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    d2 = (np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :]
          - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass
class SvrModel:
    support: np.ndarray        # support vectors, (m, d)
    coef: np.ndarray           # alpha - alpha*, (m,)
    rho: float
    gamma: float
    n_iter: int
    converged: bool
    kkt_violation: float
    objective: float           # primal-form dual value 1/2 b'Qb + p'b (minimised)
    support_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    trace: list | None = None

    @property
    def bias(self) -> float:
        return -self.rho

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if len(self.coef) == 0:
            return np.full(len(X), -self.rho)
        return rbf_kernel(X, self.support, self.gamma) @ self.coef - self.rho

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.decision(X)


def smo_solve(K: np.ndarray, p: np.ndarray, y: np.ndarray, C: np.ndarray, tol: float,
              max_iter: int, trace: bool = False):
    """Solve the 2n-variable SVR dual given the n x n kernel ``K``.

    Returns ``(beta, G, n_iter, violation, objective_trace)``.
    """
    n2 = len(p)
    n = n2 // 2
    beta = np.zeros(n2)
    G = p.astype(float).copy()
    kd = np.diag(K).copy()
    kd2 = np.concatenate([kd, kd])
    pos = y > 0
    objs = [] if trace else None
    violation = np.inf
    it = 0
    for it in range(max_iter + 1):
        up = np.where(pos, beta < C, beta > 0)
        low = np.where(pos, beta > 0, beta < C)
        v = -y * G
        vu = np.where(up, v, -np.inf)
        i = int(np.argmax(vu))
        gmax = vu[i]
        vl = np.where(low, v, np.inf)
        violation = gmax - vl.min()
        if trace:
            objs.append(0.5 * beta @ (G + p))
        if violation < tol or it == max_iter:
            break
        ii = i % n
        krow = K[ii]
        k2 = np.concatenate([krow, krow])
        b = gmax - v
        quad = kd[ii] + kd2 - 2.0 * k2
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(low & (b > 0), -(b * b) / quad, np.inf)
        j = int(np.argmin(gain))
        jj = j % n
        Ci, Cj = C[i], C[j]
        ai, aj = beta[i], beta[j]
        q = kd[ii] + kd[jj] - 2.0 * K[ii, jj]
        if q <= 0:
            q = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > Ci - Cj:
                if ni > Ci:
                    ni, nj = Ci, Ci - diff
            elif nj > Cj:
                nj, ni = Cj, Cj + diff
        else:
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > Ci:
                if ni > Ci:
                    ni, nj = Ci, s - Ci
            elif nj < 0:
                nj, ni = 0.0, s
            if s > Cj:
                if nj > Cj:
                    nj, ni = Cj, s - Cj
            elif ni < 0:
                ni, nj = 0.0, s
        di, dj = ni - ai, nj - aj
        beta[i], beta[j] = ni, nj
        u = (y[i] * di) * krow + (y[j] * dj) * K[jj]
        G += y * np.concatenate([u, u])
    return beta, G, it, float(violation), objs


def _rho(beta, G, y, C):
    yG = y * G
    at_ub, at_lb = beta >= C, beta <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        return float(yG[free].mean())
    ub_set = (at_ub & (y < 0)) | (at_lb & (y > 0))
    lb_set = (at_ub & (y > 0)) | (at_lb & (y < 0))
    ub = yG[ub_set].min() if ub_set.any() else np.inf
    lb = yG[lb_set].max() if lb_set.any() else -np.inf
    return float((ub + lb) / 2)


def svr_train(X: np.ndarray, y: np.ndarray, params: SvrParams = SvrParams(),
              sample_weight: np.ndarray | None = None, trace: bool = False) -> SvrModel:
    """Fit an RBF epsilon-SVR.  ``sample_weight`` scales each point's box bound."""
    X = np.atleast_2d(np.asarray(X, float))
    z = np.asarray(y, float).ravel()
    n = len(X)
    if n < 2 or len(z) != n:
        raise SvrError("need at least two samples with one target each")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(z))):
        raise SvrError("training data must be finite")
    if np.all(X == X[0]) and np.ptp(z) > 0:
        raise SvrError("degenerate kernel matrix: identical inputs with conflicting targets")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
    if w.shape != (n,) or np.any(w < 0):
        raise SvrError("sample weights must be non-negative, one per sample")
    K = rbf_kernel(X, X, params.gamma)
    yy = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([params.epsilon - z, params.epsilon + z])
    C = np.concatenate([w, w]) * params.C
    max_iter = params.max_iter or max(100_000, 100 * n)
    beta, G, n_iter, viol, objs = smo_solve(K, p, yy, C, params.tol, max_iter, trace)
    converged = viol < params.tol
    if not converged:
        warnings.warn(f"SMO stopped at the iteration cap ({max_iter}); "
                      f"KKT violation {viol:.3g} >= tol {params.tol}", RuntimeWarning)
    coef = beta[:n] - beta[n:]
    sv = np.flatnonzero(coef != 0)
    return SvrModel(
        support=X[sv].copy(), coef=coef[sv].copy(), rho=_rho(beta, G, yy, C),
        gamma=params.gamma, n_iter=n_iter, converged=converged, kkt_violation=viol,
        objective=float(0.5 * beta @ (G + p)), support_index=sv, trace=objs,
    )


def svr_predict(model: SvrModel, x: np.ndarray) -> np.ndarray | float:
    x = np.asarray(x, float)
    out = model.decision(x)
    return float(out[0]) if x.ndim == 1 else out


def svr_to_dict(m: SvrModel) -> dict:
    return {"dim": int(m.support.shape[1]) if m.support.ndim == 2 else 0,
            "support": m.support.tolist(), "coef": m.coef.tolist(), "rho": m.rho,
            "gamma": m.gamma, "n_iter": m.n_iter, "converged": m.converged,
            "kkt_violation": m.kkt_violation, "objective": m.objective}


def svr_from_dict(d: dict) -> SvrModel:
    coef = np.array(d["coef"], float)
    sup = np.array(d["support"], float).reshape(len(coef), d.get("dim", 0) or -1)
    return SvrModel(sup, coef, d["rho"], d["gamma"], d["n_iter"], d["converged"],
                    d["kkt_violation"], d["objective"])
