"""Self-taught linear embeddings: spectral regression (SR, SR-M), PCA and LPP.

Descriptors are rows of ``X`` (``n x d``).  A fitted :class:`ProjectionBasis`
stores its directions as the columns of ``B`` (``d x T``) and projects with
``z = B.T @ x``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

BASIS_FORMAT = 1
DENSE_EIGEN_LIMIT = 512
METHODS = ("sr-m", "sr", "lpp", "pca")


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityGraph:
    W: sparse.csr_matrix
    p: int
    kernel: str
    sigma_heat: float | None
    boost_flags: np.ndarray
    kappa: float

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.W.sum(axis=1)).ravel()


def knn_indices(X: np.ndarray, p: int, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Indices and Euclidean distances of the ``p`` nearest other rows.

    Ties are broken by row index, so the result is deterministic.
    """
    X = np.asarray(X, float)
    n = len(X)
    sq = np.einsum("ij,ij->i", X, X)
    idx = np.empty((n, p), dtype=int)
    dist = np.empty((n, p))
    for s in range(0, n, chunk):
        rows = slice(s, min(n, s + chunk))
        d2 = sq[rows, None] + sq[None, :] - 2.0 * X[rows] @ X.T
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(d2.shape[0]), np.arange(rows.start, rows.stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :p]
        idx[rows] = order
        dist[rows] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def build_graph(X: np.ndarray, p: int = 8, kernel: str = "heat", flags=None,
                kappa: float = 0.5, sigma_heat: float | None = None) -> SimilarityGraph:
    """Symmetric p-NN similarity graph (edge if either endpoint lists the other).

    ``heat``: ``k * exp(-||xi - xj||^2 / (2 sigma^2))`` where ``k = 1`` if
    either endpoint is flagged, else ``kappa``.  ``cosine``: cosine
    similarity, clipped at zero.  ``sigma_heat`` defaults to the median
    neighbour distance.
    """
    X = np.asarray(X, float)
    n = len(X)
    if not 1 <= p < n:
        raise EmbeddingError(f"need 1 <= p < n, got p={p}, n={n}")
    if not np.all(np.isfinite(X)):
        raise EmbeddingError("descriptors must be finite")
    flags = np.zeros(n, bool) if flags is None else np.asarray(flags, bool)
    if flags.shape != (n,):
        raise EmbeddingError("one flag per descriptor required")
    idx, dist = knn_indices(X, p)
    rows = np.repeat(np.arange(n), p)
    cols = idx.ravel()
    # union of both directions, duplicates collapsed
    pairs = np.unique(np.concatenate([rows * n + cols, cols * n + rows]))
    i, j = pairs // n, pairs % n
    if kernel == "heat":
        if sigma_heat is None:
            sigma_heat = float(np.median(dist))
            if sigma_heat == 0:
                sigma_heat = 1.0
        if not sigma_heat > 0:
            raise EmbeddingError("sigma_heat must be > 0")
        d2 = np.sum((X[i] - X[j]) ** 2, axis=1)
        k = np.where(flags[i] | flags[j], 1.0, kappa)
        w = k * np.exp(-d2 / (2 * sigma_heat ** 2))
    elif kernel == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise EmbeddingError("zero-norm descriptor under cosine kernel")
        w = np.maximum(np.einsum("ij,ij->i", X[i], X[j]) / (norms[i] * norms[j]), 0.0)
        sigma_heat = None
    else:
        raise EmbeddingError(f"unknown kernel {kernel!r}")
    W = sparse.csr_matrix((w, (i, j)), shape=(n, n))
    return SimilarityGraph(W, p, kernel, sigma_heat, flags, kappa)


def _canonical_sign(U: np.ndarray) -> np.ndarray:
    U = U.copy()
    for c in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, c]) > 1e-12)
        if len(nz) and U[nz[0], c] < 0:
            U[:, c] = -U[:, c]
    return U


def _is_constant(u: np.ndarray, tol: float = 1e-8) -> bool:
    return bool(np.ptp(u) <= tol)


def _split_trivial(vals, vecs, trivial, tol=1e-8):
    """Rotate the eigenspace containing ``trivial`` so it becomes one column.

    Degenerate eigenvalues give an arbitrary basis; this makes sure the
    trivial direction is isolated before it is dropped.
    """
    trivial = trivial / np.linalg.norm(trivial)
    coef = vecs.T @ trivial
    k = int(np.argmax(np.abs(coef)))
    group = np.flatnonzero(np.abs(vals - vals[k]) <= tol * max(1.0, abs(vals[k])))
    sub = vecs[:, group]
    proj = sub.T @ trivial
    if np.linalg.norm(proj) < 1 - 1e-8:
        return vals, vecs
    # orthonormal complement of the trivial vector within the group
    q, _ = np.linalg.qr(np.column_stack([trivial, sub]))
    basis = q[:, :len(group)]
    sgn = np.sign(basis[:, 0] @ trivial) or 1.0
    basis[:, 0] *= sgn
    vecs = vecs.copy()
    vecs[:, group] = basis
    return vals, vecs


def graph_eigenvectors(g: SimilarityGraph, T: int, normalized: bool = False,
                       maxiter: int | None = None):
    """Top-``T`` non-trivial eigenvectors of ``W`` (or of ``W u = lambda D u``).

    Returns ``(eigenvalues, U)`` with ``U`` of shape ``(n, T)``, unit-norm
    columns, descending eigenvalues, first non-zero entry positive.
    """
    n = g.n
    if not 1 <= T < n:
        raise EmbeddingError(f"need 1 <= T < n, got T={T}, n={n}")
    W = g.W
    if normalized:
        d = g.degrees()
        dinv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
        M = sparse.diags(dinv) @ W @ sparse.diags(dinv)
        trivial = np.sqrt(d)
    else:
        M = W
        trivial = np.ones(n)
    k = min(n - 1, T + 2)
    if n <= DENSE_EIGEN_LIMIT:
        vals, vecs = linalg.eigh(M.toarray())
        vals, vecs = vals[::-1], vecs[:, ::-1]
    else:
        v0 = np.linspace(1.0, 2.0, n)
        try:
            vals, vecs = eigsh(M, k=k, which="LA", v0=v0, maxiter=maxiter or 50 * n)
        except ArpackNoConvergence as exc:
            raise EmbeddingError(f"eigen-solver did not converge: {exc}") from exc
        order = np.argsort(-vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
    if np.any(trivial):
        vals, vecs = _split_trivial(vals, vecs, trivial)
    if normalized:
        vecs = vecs * dinv[:, None]
        vecs = vecs / np.maximum(np.linalg.norm(vecs, axis=0), 1e-300)
    keep = [c for c in range(vecs.shape[1]) if not _is_constant(vecs[:, c])][:T]
    if len(keep) < T:
        raise EmbeddingError(f"only {len(keep)} non-trivial eigenvectors available")
    return vals[keep], _canonical_sign(vecs[:, keep])


# ------------------------------------------------------------------ bases

@dataclass(frozen=True)
class ProjectionBasis:
    B: np.ndarray                 # d x T
    method: str
    alpha: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        B = np.asarray(self.B, float)
        if B.ndim != 2 or not np.all(np.isfinite(B)):
            raise EmbeddingError("basis must be a finite 2-D array")
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def T(self) -> int:
        return self.B.shape[1]

    def to_dict(self) -> dict:
        return {"format": BASIS_FORMAT, "method": self.method, "alpha": self.alpha,
                "T": self.T, "d": self.d, "columns": self.B.T.tolist(),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, doc: dict) -> "ProjectionBasis":
        if doc.get("format") != BASIS_FORMAT:
            raise EmbeddingError(f"unsupported basis format {doc.get('format')!r}")
        B = np.array(doc["columns"], float).T.reshape(doc["d"], doc["T"])
        return cls(B, doc["method"], doc.get("alpha"), doc.get("provenance", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "ProjectionBasis":
        return cls.from_dict(json.loads(Path(path).read_text()))


def project(basis: ProjectionBasis, x: np.ndarray) -> np.ndarray:
    """``z_j = b_j . x`` for one descriptor or each row of a matrix."""
    x = np.asarray(x, float)
    if x.shape[-1] != basis.d:
        raise EmbeddingError(f"descriptor has {x.shape[-1]} dims, basis expects {basis.d}")
    return x @ basis.B


def fit_spectral_regression(X: np.ndarray, U: np.ndarray, alpha: float = 0.01,
                            method: str = "sr", provenance: dict | None = None) -> ProjectionBasis:
    """Ridge regression of each embedding column onto the descriptors.

    Solves ``(X^T X + alpha I) b_j = X^T u_j`` for every column of ``U``.
    """
    X, U = np.asarray(X, float), np.asarray(U, float)
    if U.ndim == 1:
        U = U[:, None]
    if len(X) != len(U):
        raise EmbeddingError(f"{len(X)} descriptors but {len(U)} embedding rows")
    if alpha < 0:
        raise EmbeddingError("alpha must be >= 0")
    if alpha == 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise EmbeddingError("singular normal equations; use alpha > 0")
    A = X.T @ X + alpha * np.eye(X.shape[1])
    try:
        B = linalg.solve(A, X.T @ U, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise EmbeddingError("singular normal equations; use alpha > 0") from exc
    return ProjectionBasis(B, method, alpha, dict(provenance or {}))


def fit_pca(X: np.ndarray, T: int, provenance: dict | None = None) -> ProjectionBasis:
    """Top-``T`` principal directions of the mean-centred rows of ``X``."""
    X = np.asarray(X, float)
    Xc = X - X.mean(axis=0)
    if T > np.linalg.matrix_rank(Xc):
        raise EmbeddingError(f"T={T} exceeds the data rank")
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    vals, vecs = linalg.eigh(cov)
    vecs = vecs[:, ::-1][:, :T]
    prov = dict(provenance or {})
    prov["explained_variance"] = vals[::-1][:T].tolist()
    return ProjectionBasis(_canonical_sign(vecs), "pca", None, prov)


def fit_lpp(X: np.ndarray, g: SimilarityGraph, T: int, eps: float = 1e-6,
            provenance: dict | None = None) -> ProjectionBasis:
    """Locality preserving projections.

    Smallest-eigenvalue solutions of ``X^T L X b = lambda (X^T D X + eps I) b``
    with ``L = D - W`` (rows of ``X`` are samples).
    """
    X = np.asarray(X, float)
    if T > np.linalg.matrix_rank(X):
        raise EmbeddingError(f"T={T} exceeds the data rank")
    W = g.W.toarray()
    D = np.diag(W.sum(axis=1))
    A = X.T @ (D - W) @ X
    Bm = X.T @ D @ X
    Bm = Bm + eps * max(1.0, np.trace(Bm) / len(Bm)) * np.eye(len(Bm))
    vals, vecs = linalg.eigh(0.5 * (A + A.T), 0.5 * (Bm + Bm.T))
    vecs = vecs[:, :T] / np.linalg.norm(vecs[:, :T], axis=0)
    return ProjectionBasis(_canonical_sign(vecs), "lpp", None, dict(provenance or {}))


@dataclass(frozen=True)
class EmbedParams:
    method: str = "sr-m"
    p: int = 8
    kappa: float = 0.5
    alpha: float = 0.01
    sigma_heat: float | None = None
    normalized: bool = False
    lpp_eps: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown embedding method {self.method!r}")
        if self.p < 1 or self.alpha < 0 or not 0 < self.kappa <= 1:
            raise ValueError("invalid embedding parameters")


def learn_basis(X: np.ndarray, T: int, params: EmbedParams = EmbedParams(), flags=None,
                provenance: dict | None = None) -> ProjectionBasis:
    """Fit one basis on unlabeled source descriptors with the chosen method.

    ``sr-m`` uses the heat kernel with flagged-frame boosting (``kappa`` for
    unflagged pairs); ``sr`` the plain heat kernel.
    """
    X = np.asarray(X, float)
    prov = dict(provenance or {})
    prov.update(n_source=len(X), method=params.method)
    if params.method == "pca":
        return fit_pca(X, T, prov)
    kappa = params.kappa if params.method == "sr-m" else 1.0
    g = build_graph(X, params.p, "heat", flags if params.method == "sr-m" else None,
                    kappa, params.sigma_heat)
    prov.update(p=params.p, kappa=kappa, sigma_heat=g.sigma_heat)
    if params.method == "lpp":
        return fit_lpp(X, g, T, params.lpp_eps, prov)
    _, U = graph_eigenvectors(g, T, normalized=params.normalized)
    prov["normalized"] = params.normalized
    return fit_spectral_regression(X, U, params.alpha, params.method, prov)
