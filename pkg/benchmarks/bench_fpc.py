"""Time the compiled FPC kernel against its plain numpy source.

Usage: python benchmarks/bench_fpc.py [--signals 200] [--k 32] [--n 16] [--p 2]
"""
import argparse
import time

import numpy as np

from sdlearn import _kernels
from sdlearn.model import DecisionParams, LINEAR, affine_reduction_batch
from sdlearn.sparse_coding import CONTINUATION_SHRINK, classifier_envelope, spectral_norm


def problem(m, n, k, p, seed=0):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, k))
    D /= np.linalg.norm(D, axis=0)
    X = rng.standard_normal((m, n))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    params = DecisionParams(LINEAR, 0.5 * rng.standard_normal((k, p)), np.zeros(p))
    A = np.ascontiguousarray(affine_reduction_batch(X, params))
    G = D.T @ D
    lam0 = 1.0
    L_rec = 2 * lam0 * spectral_norm(G)
    gram = np.array([spectral_norm(a.T @ a) for a in A])
    # the linear variant shares one matrix across signals
    L = np.broadcast_to(classifier_envelope(gram, p) + L_rec, (m,))
    sig = np.repeat(np.arange(m), p)
    cls = np.tile(np.arange(p), m)
    return (G, X @ D, np.einsum("ij,ij->i", X, X), A, params.biases, cls, sig, lam0, 0.15,
            np.ascontiguousarray(L[sig]), L_rec)


def run(kernel, args, local, repeat):
    G, C, xx, A, b, cls, sig, lam0, lam1, L, L_rec = args
    best = np.inf
    for _ in range(repeat):
        alpha = np.zeros((sig.shape[0], G.shape[0]))
        info = np.zeros((sig.shape[0], 5))
        t = time.perf_counter()
        kernel(G, C, xx, A, b, cls, sig, lam0, lam1, alpha, L, L_rec, local, 1e-6, 2000,
               CONTINUATION_SHRINK, info)
        best = min(best, time.perf_counter() - t)
    return best, alpha, info


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--signals", type=int, default=200)
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--k", type=int, default=32)
    parser.add_argument("--p", type=int, default=2)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _kernels.USE_NUMBA:
        raise SystemExit("numba is unavailable or disabled (SDLEARN_DISABLE_NUMBA); nothing to compare")
    prob = problem(args.signals, args.n, args.k, args.p)
    local = args.p == 2
    run(_kernels.fpc_batch, prob, local, 1)  # compile
    fast, a_fast, i_fast = run(_kernels.fpc_batch, prob, local, args.repeat)
    slow, a_slow, _ = run(_kernels.fpc_batch_py, prob, local, max(1, args.repeat // 3))
    problems = prob[6].shape[0]
    print(f"{problems} problems, n={args.n} k={args.k} p={args.p}, "
          f"mean iterations {i_fast[:, _kernels.INFO_ITERATIONS].mean():.0f}")
    print(f"numba : {fast:8.3f} s")
    print(f"numpy : {slow:8.3f} s")
    print(f"speedup {slow / fast:.1f}x, max |alpha difference| {np.abs(a_fast - a_slow).max():.1e}")


if __name__ == "__main__":
    main()
