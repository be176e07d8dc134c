"""Independent reference computations used by the tests.

Nothing here calls the package's solvers; the oracles are written from the
problem definitions with plain loops, enumeration or finite differences.
"""
import itertools
import math

import numpy as np
from scipy.optimize import minimize


def naive_softmax_cost(i, scores):
    return math.log(sum(math.exp(s - scores[i]) for s in scores))


def naive_decision_values(x, alpha, variant, weights, biases):
    """Triple-loop evaluation of ``w_i^T a + b_i`` or ``x^T W_i a + b_i``."""
    p = len(biases)
    out = np.zeros(p)
    for i in range(p):
        total = biases[i]
        if variant == "linear":
            for r in range(len(alpha)):
                total += weights[r, i] * alpha[r]
        else:
            for a in range(len(x)):
                for r in range(len(alpha)):
                    total += x[a] * weights[i, a, r] * alpha[r]
        out[i] = total
    return out


def naive_supervised_objective(alpha, x, i, atoms, variant, weights, biases, lam0, lam1):
    g = naive_decision_values(x, alpha, variant, weights, biases)
    resid = 0.0
    for a in range(len(x)):
        r = x[a] - sum(atoms[a, c] * alpha[c] for c in range(len(alpha)))
        resid += r * r
    return naive_softmax_cost(i, g) + lam0 * resid + lam1 * sum(abs(v) for v in alpha)


def lasso_enumeration(x, D, lam):
    """Global minimum of ``||x - D a||^2 + lam ||a||_1`` over all sign patterns.

    For every pattern ``s`` in ``{-1, 0, 1}^k`` solve the stationarity system
    on the support, ``2 D_S^T (D_S a_S - x) + lam s_S = 0``, and keep the
    solution if its signs agree with ``s``. The minimizer's own pattern is
    always among the candidates and every candidate is feasible, so the
    smallest candidate value is the optimum.
    """
    k = D.shape[1]
    best = float(x @ x)
    best_a = np.zeros(k)
    for pattern in itertools.product((-1, 0, 1), repeat=k):
        s = np.array(pattern, dtype=float)
        S = np.flatnonzero(s)
        if S.size == 0:
            continue
        DS = D[:, S]
        M = DS.T @ DS
        if np.linalg.matrix_rank(M) < S.size:
            continue
        aS = np.linalg.solve(M, DS.T @ x - 0.5 * lam * s[S])
        if np.any(np.sign(aS) != s[S]):
            continue
        a = np.zeros(k)
        a[S] = aS
        r = x - D @ a
        val = float(r @ r + lam * np.abs(a).sum())
        if val < best:
            best, best_a = val, a
    return best, best_a


def central_gradient(f, z, h=1e-6):
    """Central finite differences of a scalar function of an array."""
    z = np.array(z, dtype=float)
    g = np.zeros_like(z)
    flat, gflat = z.reshape(-1), g.reshape(-1)
    for t in range(flat.size):
        keep = flat[t]
        flat[t] = keep + h
        up = f(z)
        flat[t] = keep - h
        down = f(z)
        flat[t] = keep
        gflat[t] = (up - down) / (2 * h)
    return g


def fd_hessian(grad, z, h=1e-5):
    """Symmetrized Hessian from central differences of an analytic gradient."""
    z = np.array(z, dtype=float)
    k = z.size
    H = np.zeros((k, k))
    for t in range(k):
        e = np.zeros(k)
        e[t] = h
        H[:, t] = (grad(z + e) - grad(z - e)) / (2 * h)
    return 0.5 * (H + H.T)


def grid_polish_minimum(fun, k, radius=1.5, points=7, starts=5):
    """Minimum of a nonsmooth convex function by a coarse grid then polishing.

    The best grid points seed Powell searches (derivative free), whose best
    result is returned.
    """
    axis = np.linspace(-radius, radius, points)
    grid = np.array(list(itertools.product(axis, repeat=k)))
    vals = np.array([fun(z) for z in grid])
    order = np.argsort(vals)[:starts]
    best = (np.inf, None)
    for q in order:
        res = minimize(fun, grid[q], method="Powell",
                       options={"xtol": 1e-12, "ftol": 1e-15, "maxiter": 200000,
                                "maxfev": 400000})
        if res.fun < best[0]:
            best = (float(res.fun), res.x)
    return best


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def shifted_softmax_cost(i, scores):
    """Loop form of ``naive_softmax_cost`` shifted by the largest score."""
    top = max(scores)
    return top + math.log(sum(math.exp(s - top) for s in scores)) - scores[i]
