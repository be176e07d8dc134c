"""l1-regularized sparse coding by fixed-point continuation (FPC).

Two problems are solved here, both of the form ``min_a f(a) + lam1 ||a||_1``
with a smooth convex ``f``:

* reconstructive coding, ``f(a) = ||x - D a||^2``;
* supervised coding for class ``i``,
  ``f(a) = C_i(A^T a + b) + lam0 ||x - D a||^2`` where ``(A, b)`` is the
  affine form of the decision functions at ``x``.

:func:`fpc_solve` is a generic implementation working on callables. The
batched paths used by training and classification go through the compiled
kernels in :mod:`sdlearn._kernels`, which run the same iteration.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import DimensionError, SdlError, SolverError
from .model import (
    DecisionParams,
    Hyperparams,
    affine_reduction,
    affine_reduction_batch,
    atoms_of,
    decision_values,
    softmax_cost,
)

log = logging.getLogger(__name__)

CONTINUATION_SHRINK = 0.25
STEP_FRACTION = 0.99
NONZERO_THRESHOLD = 1e-10
POWER_TOL = 1e-10
POWER_MAX_ITER = 10000


@dataclass
class CodeResult:
    """Solution of one sparse coding problem with solver diagnostics."""

    alpha: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    max_stage_increase: float = 0.0

    @property
    def nnz(self) -> int:
        return int(np.sum(np.abs(self.alpha) > NONZERO_THRESHOLD))


@dataclass
class SmoothObjective:
    """Smooth part ``f`` of a composite objective.

    ``local_bound``, when given, maps an iterate to a curvature bound valid
    at that point; the solver then takes longer steps and falls back to
    ``lipschitz_bound`` whenever a step fails to decrease the objective.
    """

    value_at: Callable[[np.ndarray], float]
    grad_at: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    local_bound: Callable[[np.ndarray], float] | None = None


def soft_threshold(v, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_1``: ``sign(v) * max(|v| - t, 0)``."""
    if t < 0:
        raise SdlError(f"threshold must be nonnegative, got {t}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def kkt_residual(alpha, grad, l1_weight: float) -> float:
    """Largest violation of ``0 in grad + l1_weight * d||alpha||_1``."""
    alpha = np.asarray(alpha)
    grad = np.asarray(grad)
    if alpha.size == 0:
        return 0.0
    r = np.where(alpha > 0, np.abs(grad + l1_weight),
                 np.where(alpha < 0, np.abs(grad - l1_weight), np.abs(grad) - l1_weight))
    return float(max(r.max(), 0.0))


def fpc_solve(objective: SmoothObjective, l1_weight: float, alpha0, tol: float = 1e-6,
              max_iter: int = 2000, shrink: float = CONTINUATION_SHRINK) -> CodeResult:
    """Minimize ``f(a) + l1_weight * ||a||_1`` by fixed-point continuation.

    Iterates ``a <- soft_threshold(a - tau grad f(a), tau * lam)`` with
    ``tau = 0.99 / L``. The effective weight ``lam`` starts at
    ``||grad f(alpha0)||_inf`` and is multiplied by ``shrink`` at the end of
    each stage until it reaches ``l1_weight``. Intermediate stages stop once
    the iterates settle; the final stage stops on the KKT residual.
    """
    L = float(objective.lipschitz_bound)
    if not np.isfinite(L) or L <= 0:
        raise SolverError(f"Lipschitz bound must be positive and finite, got {L}")
    if tol <= 0:
        raise SdlError("tol must be positive")
    if l1_weight < 0:
        raise SdlError("l1 weight must be nonnegative")
    alpha = np.array(alpha0, dtype=np.float64)
    grad = np.asarray(objective.grad_at(alpha), dtype=np.float64)
    f = float(objective.value_at(alpha))
    if not (np.isfinite(f) and np.all(np.isfinite(grad))):
        raise SolverError("non-finite gradient at the starting point")

    start = max(float(np.abs(grad).max(initial=0.0)), l1_weight)
    lam = start
    it = 0
    max_increase = 0.0
    while True:
        final = lam <= l1_weight
        obj = f + lam * np.abs(alpha).sum()
        while it < max_iter:
            if final and kkt_residual(alpha, grad, l1_weight) <= tol:
                break
            new, new_f = _prox_step(objective, alpha, grad, lam, L, obj)
            delta = float(np.abs(new - alpha).max(initial=0.0))
            alpha = new
            f = new_f
            it += 1
            grad = np.asarray(objective.grad_at(alpha), dtype=np.float64)
            if not (np.isfinite(f) and np.all(np.isfinite(grad))):
                raise SolverError(f"non-finite gradient at iteration {it}")
            new_obj = f + lam * np.abs(alpha).sum()
            max_increase = max(max_increase, new_obj - obj)
            obj = new_obj
            if not final and delta <= tol * max(1.0, float(np.abs(alpha).max(initial=0.0))):
                break
        if final or it >= max_iter:
            break
        lam *= shrink
        if lam <= l1_weight or lam < 1e-12 * start:
            lam = l1_weight
    kkt = kkt_residual(alpha, grad, l1_weight)
    return CodeResult(alpha=alpha, objective=f + l1_weight * float(np.abs(alpha).sum()),
                      iterations=it, converged=kkt <= tol, kkt_residual=kkt,
                      max_stage_increase=max_increase)


def _prox_step(objective: SmoothObjective, alpha, grad, lam, L, obj):
    if objective.local_bound is not None:
        local = float(objective.local_bound(alpha))
        if 0 < local < L:
            tau = STEP_FRACTION / local
            new = soft_threshold(alpha - tau * grad, tau * lam)
            new_f = float(objective.value_at(new))
            if new_f + lam * np.abs(new).sum() <= obj:
                return new, new_f
    tau = STEP_FRACTION / L
    new = soft_threshold(alpha - tau * grad, tau * lam)
    return new, float(objective.value_at(new))


# --------------------------------------------------------------------------
# spectral bounds


def spectral_norm(M) -> float:
    """Spectral norm of a symmetric PSD matrix by power iteration."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return 0.0
    return float(_kernels.power_norm_batch(M[None], POWER_TOL, POWER_MAX_ITER)[0])


def _gram_norms(A_stack: np.ndarray) -> np.ndarray:
    """``||A_j^T A_j||_2`` for every matrix of an ``(m, k, p)`` stack."""
    AtA = np.ascontiguousarray(np.einsum("mkp,mkq->mpq", A_stack, A_stack))
    return _kernels.power_norm_batch(AtA, POWER_TOL, POWER_MAX_ITER)


def classifier_envelope(gram_norm, p: int):
    """Curvature bound of ``a -> C_i(A^T a + b)`` given ``||A^T A||_2``.

    Two forms are available: ``(1 - 1/p) ||A^T A||^2`` and its unsquared
    counterpart ``(1 - 1/p) ||A^T A||``. The squared one underestimates the
    curvature when ``||A^T A|| < 1``, so the maximum of the two is used.
    """
    factor = 1.0 - 1.0 / p
    return np.maximum(factor * np.square(gram_norm), factor * gram_norm)


def hessian_bound_forms(A, D, lambda0: float, p: int) -> dict:
    """Components of the curvature bound, kept separate for diagnostics."""
    A = np.asarray(A, dtype=np.float64)
    atoms = atoms_of(D)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(atoms)) and np.isfinite(lambda0)):
        raise SolverError("non-finite input to hessian_bound")
    gram = spectral_norm(A.T @ A) if A.size else 0.0
    factor = 1.0 - 1.0 / p
    return {
        "squared": factor * gram ** 2,
        "unsquared": factor * gram,
        "reconstruction": 2.0 * lambda0 * spectral_norm(atoms.T @ atoms),
    }


def hessian_bound(A, D, lambda0: float, p: int, alpha=None, b=None) -> float:
    """Upper bound on the Hessian spectral norm of the supervised smooth part.

    Without ``alpha`` the bound holds everywhere. With ``alpha`` (two
    classes only) the bound is the exact curvature of the classifier term
    at that point, ``s_1 s_2 ||a_2 - a_1||^2`` with ``s = softmax(A^T
    alpha + b)``, plus the reconstruction curvature.
    """
    if lambda0 < 0:
        raise SdlError("lambda0 must be nonnegative")
    if p < 2:
        raise SdlError("need at least 2 classes")
    forms = hessian_bound_forms(A, D, lambda0, p)
    if alpha is None:
        return float(max(forms["squared"], forms["unsquared"]) + forms["reconstruction"])
    if p != 2:
        raise SdlError("the point-wise bound is only available for p=2")
    A = np.asarray(A, dtype=np.float64)
    z = A.T @ np.asarray(alpha, dtype=np.float64)
    if b is not None:
        z = z + np.asarray(b, dtype=np.float64)
    e = np.exp(z - z.max())
    s = e / e.sum()
    diff = A[:, 1] - A[:, 0]
    return float(s[0] * s[1] * (diff @ diff) + forms["reconstruction"])


# --------------------------------------------------------------------------
# batched solves


def _run_batch(G, C, xx, A, b, sig, cls, lam0, lam1, alpha, L, tol, max_iter, workers,
               L_rec=0.0, local=False):
    q = sig.shape[0]
    info = np.zeros((q, 5))
    if q == 0:
        return info
    args = (G, C, xx, A, b)
    workers = max(1, min(int(workers or 1), q))
    if workers == 1:
        _kernels.fpc_batch(*args, cls, sig, lam0, lam1, alpha, L, L_rec, local, tol, max_iter,
                           CONTINUATION_SHRINK, info)
        return info
    bounds = np.linspace(0, q, workers + 1).astype(int)

    def run(lo, hi):
        _kernels.fpc_batch(*args, cls[lo:hi], sig[lo:hi], lam0, lam1, alpha[lo:hi], L[lo:hi],
                           L_rec, local, tol, max_iter, CONTINUATION_SHRINK, info[lo:hi])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(run, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]:
            fut.result()
    return info


def _prepare(X, D):
    atoms = atoms_of(D)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != atoms.shape[0]:
        raise DimensionError(f"signal dimension {X.shape[1]} != dictionary n={atoms.shape[0]}")
    G = np.ascontiguousarray(atoms.T @ atoms)
    C = np.ascontiguousarray(X @ atoms)
    xx = np.einsum("ij,ij->i", X, X)
    return X, atoms, G, C, xx


def _warm_start(alpha0, shape):
    if alpha0 is None:
        return np.zeros(shape)
    alpha = np.array(alpha0, dtype=np.float64, order="C").reshape(shape)
    return alpha


def reconstructive_codes(X, D, lambda1: float, alpha0=None, tol: float = 1e-6,
                         max_iter: int = 2000, workers: int = 1):
    """Code every row of ``X``; returns ``(alphas (m, k), info (m, 5))``."""
    if lambda1 < 0:
        raise SdlError("lambda1 must be nonnegative")
    X, atoms, G, C, xx = _prepare(X, D)
    m, k = X.shape[0], atoms.shape[1]
    L0 = 2.0 * spectral_norm(G)
    if L0 <= 0:
        raise SolverError("dictionary is zero; Lipschitz bound vanishes")
    alpha = _warm_start(alpha0, (m, k))
    info = _run_batch(G, C, xx, np.zeros((1, k, 0)), np.zeros(0), np.arange(m),
                      np.zeros(m, dtype=np.int64), 1.0, float(lambda1), alpha,
                      np.full(m, L0), tol, max_iter, workers)
    return alpha, info


def _result_from(alpha, row, tol) -> CodeResult:
    status = row[_kernels.INFO_STATUS]
    kkt = float(row[_kernels.INFO_KKT])
    return CodeResult(alpha=alpha.copy(), objective=float(row[_kernels.INFO_OBJECTIVE]),
                      iterations=int(row[_kernels.INFO_ITERATIONS]),
                      converged=bool(status == _kernels.STATUS_OK and kkt <= tol),
                      kkt_residual=kkt, max_stage_increase=float(row[_kernels.INFO_MAX_INCREASE]))


def reconstructive_code(x, D, lambda1: float, alpha0=None, tol: float = 1e-6,
                        max_iter: int = 2000) -> CodeResult:
    """Solve ``min ||x - D a||^2 + lambda1 ||a||_1``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"x must be a vector, got shape {x.shape}")
    alpha, info = reconstructive_codes(x[None], D, lambda1, alpha0, tol, max_iter)
    return _result_from(alpha[0], info[0], tol)


def supervised_objective(alpha, x, i: int, D, params: DecisionParams, hyper: Hyperparams) -> float:
    """``C_i(g(x, alpha)) + lambda0 ||x - D alpha||^2 + lambda1 ||alpha||_1``."""
    atoms = atoms_of(D)
    alpha = np.asarray(alpha, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (atoms.shape[0],) or alpha.shape != (atoms.shape[1],):
        raise DimensionError(
            f"x {x.shape} / alpha {alpha.shape} do not match dictionary {atoms.shape}")
    r = x - atoms @ alpha
    return (softmax_cost(i, decision_values(x, alpha, params))
            + hyper.lambda0 * float(r @ r) + hyper.lambda1 * float(np.abs(alpha).sum()))


def supervised_lipschitz(A_stack, G, lambda0: float, p: int) -> np.ndarray:
    """Global curvature bound for each matrix of an ``(m, k, p)`` stack."""
    return classifier_envelope(_gram_norms(A_stack), p) + 2.0 * lambda0 * spectral_norm(G)


def supervised_codes(X, D, params: DecisionParams, hyper: Hyperparams, alpha0=None,
                     classes=None, workers: int = 1):
    """Supervised codes of every signal for every class.

    Returns ``(alphas (m, p, k), objectives (m, p), info (m, p, 5))`` where
    ``objectives[j, l]`` is the minimal supervised cost of signal ``j`` for
    class ``l``. ``classes`` optionally restricts the solves to one class per
    signal; the other entries are then left at their warm starts with a NaN
    objective.
    """
    X, atoms, G, C, xx = _prepare(X, D)
    if params.k != atoms.shape[1]:
        raise DimensionError(f"params k={params.k} != dictionary k={atoms.shape[1]}")
    m, k, p = X.shape[0], atoms.shape[1], params.p
    A = np.ascontiguousarray(affine_reduction_batch(X, params))
    b = np.ascontiguousarray(params.biases)
    L_rec = 2.0 * hyper.lambda0 * spectral_norm(G)
    L_sig = classifier_envelope(_gram_norms(A), p) + L_rec
    if np.any(L_sig <= 0):
        raise SolverError("curvature bound vanishes (lambda0 = 0 and zero classifier)")
    alpha = _warm_start(alpha0, (m, p, k))
    if classes is None:
        sig = np.repeat(np.arange(m), p)
        cls = np.tile(np.arange(p), m)
    else:
        sig = np.arange(m)
        cls = np.asarray(classes, dtype=np.int64)
    flat = np.ascontiguousarray(alpha[sig, cls])
    L = L_sig[sig] if L_sig.shape[0] > 1 else np.full(sig.shape[0], L_sig[0])
    info_flat = _run_batch(G, C, xx, A, b, sig, cls, hyper.lambda0, hyper.lambda1, flat, L,
                           hyper.tol, hyper.max_iter, workers, L_rec,
                           bool(hyper.tight_p2_bound and p == 2))
    alpha[sig, cls] = flat
    info = np.full((m, p, 5), np.nan)
    info[sig, cls] = info_flat
    return alpha, info[:, :, _kernels.INFO_OBJECTIVE].copy(), info


def supervised_code(x, i: int, D, params: DecisionParams, hyper: Hyperparams,
                    alpha0=None) -> CodeResult:
    """Solve ``min_a S_i(a, x, D, theta)`` for one signal and one class."""
    atoms = atoms_of(D)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (atoms.shape[0],):
        raise DimensionError(f"x has shape {x.shape}, dictionary n={atoms.shape[0]}")
    if not 0 <= i < params.p:
        raise IndexError(f"class index {i} out of range for p={params.p}")
    classes = np.array([i])
    warm = None
    if alpha0 is not None:
        warm = np.zeros((1, params.p, atoms.shape[1]))
        warm[0, i] = alpha0
    alpha, _, info = supervised_codes(x[None], D, params, hyper, warm, classes)
    return _result_from(alpha[0, i], info[0, i], hyper.tol)


def supervised_smooth_objective(x, i: int, D, params: DecisionParams, hyper: Hyperparams,
                                local: bool = False) -> SmoothObjective:
    """The smooth part of the supervised problem as a :class:`SmoothObjective`."""
    atoms = atoms_of(D)
    x = np.asarray(x, dtype=np.float64)
    A, b = affine_reduction(x, params)
    lam0 = hyper.lambda0
    p = params.p

    def value(alpha):
        r = x - atoms @ alpha
        return softmax_cost(i, A.T @ alpha + b) + lam0 * float(r @ r)

    def grad(alpha):
        z = A.T @ alpha + b
        e = np.exp(z - z.max())
        w = e / e.sum()
        w[i] -= 1.0
        return A @ w - 2.0 * lam0 * (atoms.T @ (x - atoms @ alpha))

    forms = hessian_bound_forms(A, atoms, lam0, p)
    bound = max(forms["squared"], forms["unsquared"]) + forms["reconstruction"]
    local_bound = None
    if local and p == 2:
        diff = A[:, 1] - A[:, 0]
        spread = float(diff @ diff)

        def local_bound(alpha):
            z = A.T @ alpha + b
            e = np.exp(z - z.max())
            s = e / e.sum()
            return s[0] * s[1] * spread + forms["reconstruction"]
    return SmoothObjective(value, grad, bound, local_bound)
