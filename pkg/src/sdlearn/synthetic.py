"""Seeded synthetic datasets for desk-scale experiments and tests."""
from __future__ import annotations

import numpy as np

from .data import LabeledDataset, normalize_unit


def _unit_columns(rng, n, k):
    D = rng.standard_normal((n, k))
    return D / np.linalg.norm(D, axis=0)


def shared_dictionary_classes(m_per_class: int = 400, n: int = 16, shared_atoms: int = 6,
                              specific_atoms: int = 3, shared_active: int = 2,
                              specific_scale: float = 0.35, noise: float = 0.05,
                              seed: int = 0) -> LabeledDataset:
    """Two classes drawn from one random dictionary.

    Every signal mixes ``shared_active`` high-energy atoms from a pool used
    by both classes with one low-energy atom from a pool specific to its
    class. Reconstruction is dominated by the shared pool, while the class
    is only visible in the weak class-specific component.
    """
    rng = np.random.default_rng(seed)
    k0 = shared_atoms + 2 * specific_atoms
    D0 = _unit_columns(rng, n, k0)
    X, y = [], []
    for c in range(2):
        pool = shared_atoms + c * specific_atoms + np.arange(specific_atoms)
        for _ in range(m_per_class):
            a = np.zeros(k0)
            idx = rng.choice(shared_atoms, shared_active, replace=False)
            a[idx] = rng.standard_normal(shared_active)
            a[rng.choice(pool)] = specific_scale * rng.uniform(0.7, 1.3)
            X.append(D0 @ a + noise * rng.standard_normal(n))
            y.append(c)
    order = rng.permutation(len(y))
    data = LabeledDataset(np.array(X)[order], np.array(y)[order], [0, 1])
    return normalize_unit(data, drop_zero=True)


def sign_interaction_classes(m_per_class: int = 200, n: int = 16, atoms: int = 2,
                             nuisance_atoms: int = 0, nuisance_active: int = 0,
                             noise: float = 0.05, seed: int = 0) -> LabeledDataset:
    """Two classes set by the sign of a product of two code coefficients.

    Signals are ``c1 d1 + c2 d2 + noise`` with random signs on ``c1, c2``;
    the class is ``sign(c1 * c2)``. Both classes are symmetric under
    ``x -> -x``, so any decision function linear in the code fails, while
    ``x^T W alpha`` can express the product. Optionally
    ``nuisance_active`` of ``nuisance_atoms`` extra atoms with random
    coefficients are added to every signal.
    """
    rng = np.random.default_rng(seed)
    D0 = _unit_columns(rng, n, atoms + nuisance_atoms)
    X, y = [], []
    for c in range(2):
        count = 0
        while count < m_per_class:
            coef = rng.uniform(0.5, 1.0, size=atoms) * rng.choice([-1.0, 1.0], size=atoms)
            label = 0 if coef[0] * coef[1] > 0 else 1
            if label != c:
                continue
            a = np.zeros(atoms + nuisance_atoms)
            a[:atoms] = coef
            if nuisance_active:
                idx = atoms + rng.choice(nuisance_atoms, nuisance_active, replace=False)
                a[idx] = rng.uniform(0.5, 1.0, size=nuisance_active) * rng.choice(
                    [-1.0, 1.0], size=nuisance_active)
            X.append(D0 @ a + noise * rng.standard_normal(n))
            y.append(c)
            count += 1
    order = rng.permutation(len(y))
    data = LabeledDataset(np.array(X)[order], np.array(y)[order], [0, 1])
    return normalize_unit(data, drop_zero=True)


def separable_codes(m_per_class: int = 20, n: int = 8, k: int = 4, margin: float = 0.5,
                    seed: int = 0) -> LabeledDataset:
    """Two classes living on disjoint atoms of an orthonormal dictionary."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    X, y = [], []
    half = k // 2
    for c in range(2):
        for _ in range(m_per_class):
            a = np.zeros(n)
            atoms = np.arange(half) + c * half
            a[atoms] = rng.uniform(margin, 1.0, size=half)
            X.append(Q @ a)
            y.append(c)
    data = LabeledDataset(np.array(X), np.array(y), [0, 1])
    return normalize_unit(data)
