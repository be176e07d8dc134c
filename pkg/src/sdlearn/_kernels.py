"""Hot loops of the sparse coding solver.

Every kernel is written once in numpy syntax that numba can compile. When
numba is importable and ``SDLEARN_DISABLE_NUMBA`` is unset (or ``0``), the
functions are compiled with ``@njit``; otherwise the same source runs as
plain numpy. Helpers are marked ``register_jitable`` so they run as plain
Python when called from Python and get compiled when called from a jitted
kernel. The uncompiled entry points ``*_py`` stay available for tests and
benchmarks.
"""
import os

import numpy as np

try:
    import numba
    from numba.extending import register_jitable as jitable
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

    def jitable(func):
        return func

USE_NUMBA = numba is not None and os.environ.get("SDLEARN_DISABLE_NUMBA", "0") in ("", "0")

# info columns returned by fpc_batch
INFO_OBJECTIVE = 0
INFO_ITERATIONS = 1
INFO_KKT = 2
INFO_MAX_INCREASE = 3
INFO_STATUS = 4
STATUS_OK = 0.0
STATUS_NONFINITE = 1.0


@jitable
def _smooth_part(G, c, xx, A, b, cls, lam0, alpha, grad):
    """Value of ``C_cls(A^T a + b) + lam0 ||x - D a||^2``; gradient into ``grad``.

    The reconstruction term uses the Gram form ``a^T G a - 2 c^T a + x^T x``
    with ``G = D^T D`` and ``c = D^T x``. ``A`` with zero columns disables the
    classifier term.
    """
    Ga = G @ alpha
    value = lam0 * (alpha @ Ga - 2.0 * (c @ alpha) + xx)
    grad[:] = 2.0 * lam0 * (Ga - c)
    p = A.shape[1]
    if p > 0:
        z = A.T @ alpha + b
        top = z.max()
        e = np.exp(z - top)
        s = e.sum()
        value += top + np.log(s) - z[cls]
        w = e / s
        w[cls] -= 1.0
        grad += A @ w
    return value


@jitable
def _kkt_residual(alpha, grad, lam):
    """Largest violation of the l1 subgradient optimality conditions."""
    if alpha.shape[0] == 0:
        return 0.0
    r = np.where(alpha > 0.0, np.abs(grad + lam),
                 np.where(alpha < 0.0, np.abs(grad - lam), np.abs(grad) - lam))
    return max(r.max(), 0.0)


@jitable
def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@jitable
def _local_p2_bound(A, b, alpha, spread, L_rec):
    """Exact classifier curvature at ``alpha`` for two classes plus ``L_rec``."""
    z = A.T @ alpha + b
    e = np.exp(z - z.max())
    s = e / e.sum()
    return s[0] * s[1] * spread + L_rec


@jitable
def _fpc_single(G, c, xx, A, b, cls, lam0, lam1, alpha, L, L_rec, local, tol, max_iter,
                shrink, info):
    """Fixed-point continuation on one problem; ``alpha`` is updated in place.

    With ``local`` set (two classes only) each step first tries the
    curvature bound at the current iterate and falls back to the global
    bound ``L`` when that step does not decrease the stage objective.
    """
    k = alpha.shape[0]
    grad = np.zeros(k)
    trial_grad = np.zeros(k)
    tau = 0.99 / L
    use_local = local and A.shape[1] == 2
    spread = 0.0
    if use_local:
        diff = A[:, 1] - A[:, 0]
        spread = diff @ diff
    f = _smooth_part(G, c, xx, A, b, cls, lam0, alpha, grad)
    if not np.isfinite(f) or not np.all(np.isfinite(grad)):
        info[INFO_STATUS] = STATUS_NONFINITE
        info[INFO_OBJECTIVE] = np.nan
        return
    start = max(np.abs(grad).max() if k > 0 else 0.0, lam1)
    lam = start
    it = 0
    max_increase = 0.0
    status = STATUS_OK
    while True:
        final = lam <= lam1
        obj = f + lam * np.abs(alpha).sum()
        while it < max_iter:
            if final and _kkt_residual(alpha, grad, lam1) <= tol:
                break
            accepted = False
            if use_local:
                L_here = _local_p2_bound(A, b, alpha, spread, L_rec)
                if 0.0 < L_here < L:
                    tau_here = 0.99 / L_here
                    new = _soft_threshold(alpha - tau_here * grad, tau_here * lam)
                    f_new = _smooth_part(G, c, xx, A, b, cls, lam0, new, trial_grad)
                    if f_new + lam * np.abs(new).sum() <= obj:
                        accepted = True
            if not accepted:
                new = _soft_threshold(alpha - tau * grad, tau * lam)
                f_new = _smooth_part(G, c, xx, A, b, cls, lam0, new, trial_grad)
            delta = np.abs(new - alpha).max() if k > 0 else 0.0
            alpha[:] = new
            grad[:] = trial_grad
            f = f_new
            it += 1
            if not np.isfinite(f) or not np.all(np.isfinite(grad)):
                status = STATUS_NONFINITE
                break
            new_obj = f + lam * np.abs(alpha).sum()
            if new_obj - obj > max_increase:
                max_increase = new_obj - obj
            obj = new_obj
            if not final and delta <= tol * max(1.0, np.abs(alpha).max()):
                break
        if final or it >= max_iter or status != STATUS_OK:
            break
        lam = lam * shrink
        if lam <= lam1 or lam < 1e-12 * start:
            lam = lam1
    info[INFO_OBJECTIVE] = f + lam1 * np.abs(alpha).sum()
    info[INFO_ITERATIONS] = it
    info[INFO_KKT] = _kkt_residual(alpha, grad, lam1) if status == STATUS_OK else np.inf
    info[INFO_MAX_INCREASE] = max_increase
    info[INFO_STATUS] = status


def _fpc_batch(G, C, xx, A, b, cls, sig, lam0, lam1, alpha, L, L_rec, local, tol, max_iter,
               shrink, info):
    """Solve ``len(sig)`` independent problems.

    Problem ``q`` codes signal ``sig[q]`` (row of ``C = X D`` and entry of
    ``xx``) for class ``cls[q]``. ``A`` is ``(m, k, p)`` or ``(1, k, p)``
    when shared by all signals. ``alpha`` holds warm starts and receives
    the solutions; ``info`` gets one row of diagnostics per problem.
    ``L`` holds global curvature bounds, ``L_rec`` the reconstruction part
    alone (used by the two-class local bound when ``local`` is set).
    """
    shared = A.shape[0] == 1
    for q in range(sig.shape[0]):
        j = sig[q]
        Aq = A[0] if shared else A[j]
        _fpc_single(G, C[j], xx[j], Aq, b, cls[q], lam0, lam1, alpha[q], L[q], L_rec, local,
                    tol, max_iter, shrink, info[q])


def _power_norm_batch(M, tol, max_iter):
    """Spectral norms of a stack of symmetric PSD matrices by power iteration."""
    m = M.shape[0]
    d = M.shape[1]
    out = np.zeros(m)
    for q in range(m):
        v = np.ones(d) / np.sqrt(d)
        # deterministic tilt avoids starting orthogonal to the top eigenvector
        for t in range(d):
            v[t] += 1e-3 * (t + 1)
        v /= np.sqrt(v @ v)
        est = 0.0
        for _ in range(max_iter):
            w = M[q] @ v
            nw = np.sqrt(w @ w)
            if nw == 0.0:
                est = 0.0
                break
            v = w / nw
            if abs(nw - est) <= tol * nw:
                est = nw
                break
            est = nw
        out[q] = est
    return out


def _compile(func):
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


fpc_batch_py = _fpc_batch
power_norm_batch_py = _power_norm_batch
soft_threshold_py = _soft_threshold
fpc_batch = _compile(_fpc_batch)
power_norm_batch = _compile(_power_norm_batch)
