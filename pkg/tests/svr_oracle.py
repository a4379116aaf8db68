"""Independent SVR reference: dense QP on the dual plus a breakpoint scan for b."""

import numpy as np
from scipy.spatial.distance import pdist, squareform


def rbf(A, B, sigma):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * sigma ** 2))


def median_sigma(X):
    return float(np.median(pdist(X)))


def dual_beta(K, z, C, eps):
    """beta = alpha - alpha* from cvxopt on the 2n-variable dual."""
    import cvxopt

    n = len(z)
    P = np.block([[K, -K], [-K, K]]) + 1e-12 * np.eye(2 * n)
    q = np.concatenate([eps - z, eps + z])
    G = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.concatenate([np.zeros(2 * n), np.full(2 * n, C)])
    A = np.concatenate([np.ones(n), -np.ones(n)])[None, :]
    opts = {"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12}
    sol = cvxopt.solvers.qp(cvxopt.matrix(P), cvxopt.matrix(q), cvxopt.matrix(G), cvxopt.matrix(h),
                            cvxopt.matrix(A), cvxopt.matrix(0.0), options=opts)
    a = np.array(sol["x"]).ravel()
    return a[:n] - a[n:]


def best_bias(K, z, beta, eps):
    """Midpoint of the minimizers of sum(max(0, |z - K beta - b| - eps)) over b."""
    r = z - K @ beta
    cand = np.concatenate([r - eps, r + eps])
    loss = np.array([np.maximum(0, np.abs(r - b) - eps).sum() for b in cand])
    best = cand[loss <= loss.min() + 1e-9]
    return 0.5 * (best.min() + best.max()), (best.min(), best.max())


def reference_fit(X, y, C, eps, sigma="auto"):
    """Same standardization as the library, solved independently."""
    X = np.asarray(X, float).reshape(len(y), -1)
    mu, sd = X.mean(0), X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    tm, ts = y.mean(), y.std() or 1.0
    Xs, zs = (X - mu) / sd, (y - tm) / ts
    s = median_sigma(Xs) if sigma == "auto" else sigma
    K = rbf(Xs, Xs, s)
    beta = dual_beta(K, zs, C, eps)
    b, _ = best_bias(K, zs, beta, eps)

    def predict(Q):
        Qs = (np.asarray(Q, float).reshape(len(Q), -1) - mu) / sd
        return (rbf(Qs, Xs, s) @ beta + b) * ts + tm

    return predict, beta, b
