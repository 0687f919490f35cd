"""Independent reference implementations shared by unit and acceptance tests."""
import numpy as np


def svr_dual_qp(X, z, C, gamma, epsilon):
    """Optimal value of the 2n-variable SVR dual, solved by an interior-point QP."""
    from cvxopt import matrix, solvers

    X = np.atleast_2d(np.asarray(X, float))
    n = len(X)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    K = np.exp(-gamma * d2)
    y = np.r_[np.ones(n), -np.ones(n)]
    Q = np.outer(y, y) * np.block([[K, K], [K, K]])
    q = np.r_[epsilon - z, epsilon + z]
    G = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.r_[np.zeros(2 * n), np.full(2 * n, C)]
    opts = dict(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12, maxiters=200)
    sol = solvers.qp(matrix(Q + 1e-12 * np.eye(2 * n)), matrix(q), matrix(G), matrix(h),
                     matrix(y[None, :]), matrix(0.0), options=opts)
    b = np.array(sol["x"]).ravel()
    return float(0.5 * b @ Q @ b + q @ b)


def svr_problem(seed):
    """Seeded regression problem with 20..200 points in 1..5 dimensions."""
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(20, 201)), int(rng.integers(1, 6))
    X = rng.normal(size=(n, d))
    return X, 3.0 * np.sin(X.sum(axis=1)) + 0.3 * rng.normal(size=n)


def kernel_sum(model, x):
    """Decision value by an explicit loop over support vectors."""
    total = 0.0
    for s, c in zip(model.support, model.coef):
        total += c * np.exp(-model.gamma * float(np.sum((s - x) ** 2)))
    return total - model.rho


def svr_kkt_ok(model, X, z, C, epsilon, tol):
    """Exhaustive tube check: strictly inside -> zero coefficient, outside -> at the bound."""
    coef = np.zeros(len(X))
    coef[model.support_index] = model.coef
    r = model.predict(X) - z
    inside = np.abs(r) < epsilon - tol
    outside = np.abs(r) > epsilon + tol
    return (np.all(coef[inside] == 0)
            and np.all(np.abs(np.abs(coef[outside]) - C) <= 1e-9 * C)
            and np.all(np.abs(coef) <= C * (1 + 1e-12)))


def numeric_gradient(f, theta, h=1e-6):
    """Central differences of scalar ``f`` with respect to each array in ``theta``."""
    grads = []
    for t in theta:
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            up = f()
            t[idx] = old - h
            down = f()
            t[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def mlp_loss(W, b, X, y, l2):
    """Halved-MSE plus weight-decay loss of a tanh network, forward pass only."""
    h = X
    for k, (w, c) in enumerate(zip(W, b)):
        h = h @ w + c
        if k < len(W) - 1:
            h = np.tanh(h)
    return 0.5 * np.mean((h[:, 0] - y) ** 2) + 0.5 * l2 * sum(np.sum(w * w) for w in W)


def auc_pairs(scores, labels):
    """All-pairs AUC with ties counted one half, as an exact fraction of pair counts."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(2 if p > q else 1 if p == q else 0 for p in pos for q in neg)
    return wins / (2 * len(pos) * len(neg))
