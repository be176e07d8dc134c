"""Dictionary learning: reconstructive baseline and supervised (SDL) training.

The supervised learner alternates two blocks for every value of the mixing
weight ``mu`` of an increasing schedule:

1. supervised sparse coding of every training signal for every class, with
   the dictionary and decision parameters fixed;
2. a few projected gradient steps on the dictionary and the parameters with
   the codes fixed, under the constraint that atoms have norm at most one.

Residuals are compared with the convention that the smallest one wins, so
the discriminative cost of a sample with class ``i`` and residual vector
``S`` is :func:`sdlearn.model.residual_cost`, ``C_i(-S)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .data import LabeledDataset
from .errors import DataError, DimensionError, SdlError, TrainingAborted
from .model import (
    BILINEAR,
    LINEAR,
    DecisionParams,
    Dictionary,
    Hyperparams,
    SdlModel,
    atoms_of,
    residual_cost_grad,
)
from .sparse_coding import NONZERO_THRESHOLD, reconstructive_codes, supervised_codes

log = logging.getLogger(__name__)

REC, SDL_G, SDL_D = "rec", "sdl-g", "sdl-d"
MODES = (REC, SDL_G, SDL_D)
DEFAULT_MU_SCHEDULE = tuple(round(0.1 * i, 10) for i in range(11))
GAMMA_RANGE = (1e-4, 1e4)


@dataclass(frozen=True)
class UpdatePolicy:
    """Projected gradient settings for the dictionary/parameter block."""

    steps: int = 5
    initial_step: float | None = None
    max_halvings: int = 30


@dataclass(frozen=True)
class TrainConfig:
    hyper: Hyperparams
    outer_iterations_per_mu: int = 5
    dict_update: UpdatePolicy = UpdatePolicy()
    gamma_rescale_iterations: int = 10
    seed: int = 0
    variant: str = LINEAR
    objective_mode: str = SDL_D
    rel_tol: float = 1e-6
    rec_iterations: int = 30
    workers: int = 1
    keep_path: bool = False

    def __post_init__(self):
        if self.variant not in (LINEAR, BILINEAR):
            raise SdlError(f"unknown variant {self.variant!r}")
        if self.objective_mode not in MODES:
            raise SdlError(f"unknown objective mode {self.objective_mode!r}")
        if self.outer_iterations_per_mu < 1 or self.rec_iterations < 1:
            raise SdlError("iteration counts must be positive")
        if self.gamma_rescale_iterations < 0:
            raise SdlError("gamma_rescale_iterations must be nonnegative")
        if self.hyper.k is None or self.hyper.k < 1:
            raise SdlError("hyper.k (dictionary size) must be a positive integer")

    @property
    def schedule(self) -> tuple:
        return (0.0,) if self.objective_mode == SDL_G else self.hyper.mu_schedule


@dataclass
class TrainTrace:
    """One record per completed outer iteration, plus the per-mu path."""

    records: list = field(default_factory=list)
    path: list = field(default_factory=list)
    chosen_mu: float | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def objectives(self, key: str = "objective") -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def summary(self) -> dict:
        return {
            "chosen_mu": self.chosen_mu,
            "objective": [r["objective"] for r in self.records],
            "validation": [[p["mu"], p["validation_error"]] for p in self.path],
        }


# --------------------------------------------------------------------------
# dictionary primitives


def init_dictionary(n: int, k: int, seed: int = 0) -> Dictionary:
    """Seeded standard Gaussian matrix with unit-norm columns."""
    atoms = np.random.default_rng(seed).standard_normal((n, k))
    return Dictionary(atoms / np.linalg.norm(atoms, axis=0))


def project_columns(D) -> Dictionary:
    """Scale every column with norm above one back onto the unit sphere."""
    atoms = np.array(atoms_of(D), dtype=np.float64)
    if not np.all(np.isfinite(atoms)):
        raise SdlError("dictionary has non-finite entries")
    norms = np.linalg.norm(atoms, axis=0)
    over = norms > 1.0
    atoms[:, over] /= norms[over]
    return Dictionary(atoms)


def _project(atoms: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(atoms, axis=0)
    return atoms / np.maximum(norms, 1.0)


def _check_dataset(dataset: LabeledDataset, min_classes: int = 1):
    if dataset is None or dataset.m == 0:
        raise DataError("training set is empty")
    counts = dataset.class_counts()
    if dataset.p < min_classes:
        raise DataError(f"need at least {min_classes} classes, got {dataset.p}")
    if np.any(counts == 0):
        empty = [dataset.class_labels[c] for c in np.flatnonzero(counts == 0)]
        raise DataError(f"classes without training samples: {empty}")


# --------------------------------------------------------------------------
# reconstructive baseline


def rec_penalty(hyper: Hyperparams) -> float:
    """l1 weight of reconstructive coding: ``lambda1 / lambda0`` (kappa)."""
    if hyper.lambda0 > 0:
        return hyper.lambda1 / hyper.lambda0
    return hyper.lambda1


def reconstructive_objective(X, atoms, alphas, penalty) -> float:
    R = X - alphas @ atoms.T
    return float(np.sum(R * R) + penalty * np.sum(np.abs(alphas)))


def _column_sweeps(atoms, AA, XA, sweeps=10, tol=1e-10):
    """Exact block minimization over each atom within the unit ball."""
    atoms = atoms.copy()
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(atoms.shape[1]):
            if AA[j, j] <= 0:
                continue
            u = atoms[:, j] + (XA[:, j] - atoms @ AA[:, j]) / AA[j, j]
            u /= max(np.linalg.norm(u), 1.0)
            biggest = max(biggest, float(np.abs(u - atoms[:, j]).max()))
            atoms[:, j] = u
        if biggest <= tol:
            break
    return atoms


def reconstructive_dictionary_step(X, atoms, alphas, penalty):
    """Update the dictionary with the codes fixed; never increases the objective.

    Tries the ridge-regularized least squares solution projected onto the
    constraint set, keeps it only if it does not increase the objective, then
    refines with exact per-atom block updates.
    """
    AA = alphas.T @ alphas
    XA = X.T @ alphas
    current = reconstructive_objective(X, atoms, alphas, penalty)
    k = atoms.shape[1]
    candidate = _project(np.linalg.solve(AA + 1e-10 * np.eye(k), XA.T).T)
    if reconstructive_objective(X, candidate, alphas, penalty) <= current:
        atoms = candidate
    return _column_sweeps(atoms, AA, XA)


def learn_reconstructive(dataset: LabeledDataset, hyper: Hyperparams, config: TrainConfig,
                         history: list | None = None) -> Dictionary:
    """Classical dictionary learning by block coordinate descent.

    Minimizes ``sum_j ||x_j - D a_j||^2 + kappa ||a_j||_1`` (kappa from
    :func:`rec_penalty`). Codes are warm-started between iterations, so both
    blocks are monotone. Objective values are appended to ``history``.
    """
    _check_dataset(dataset)
    X = dataset.signals
    penalty = rec_penalty(hyper)
    atoms = init_dictionary(dataset.n, hyper.k, config.seed).atoms
    alphas = np.zeros((dataset.m, hyper.k))
    prev = None
    for it in range(config.rec_iterations):
        alphas, _ = reconstructive_codes(X, atoms, penalty, alpha0=alphas, tol=hyper.tol,
                                         max_iter=hyper.max_iter, workers=config.workers)
        obj = reconstructive_objective(X, atoms, alphas, penalty)
        atoms = reconstructive_dictionary_step(X, atoms, alphas, penalty)
        after = reconstructive_objective(X, atoms, alphas, penalty)
        if history is not None:
            history.append({"iteration": it, "objective": obj, "after_update": after,
                            "mean_sparsity": _mean_nnz(alphas)})
        if prev is not None and abs(prev - obj) <= config.rel_tol * max(abs(prev), 1e-300):
            break
        prev = obj
    return Dictionary(atoms)


def _mean_nnz(alphas) -> float:
    return float(np.mean(np.sum(np.abs(alphas) > NONZERO_THRESHOLD, axis=-1)))


# --------------------------------------------------------------------------
# a posteriori classifier


def _scores(X, alphas, variant, W, b):
    """Decision values for codes ``alphas`` of shape ``(m, k)``: ``(m, p)``."""
    if variant == LINEAR:
        return alphas @ W + b
    return np.einsum("jn,qnk,jk->jq", X, W, alphas) + b


def _logistic_loss(X, alphas, y, variant, W, b):
    g = _scores(X, alphas, variant, W, b)
    top = g.max(axis=1, keepdims=True)
    e = np.exp(g - top)
    s = e.sum(axis=1, keepdims=True)
    loss = float(np.sum(top[:, 0] + np.log(s[:, 0]) - g[np.arange(len(y)), y]))
    Q = e / s
    Q[np.arange(len(y)), y] -= 1.0
    if variant == LINEAR:
        dW = alphas.T @ Q
    else:
        dW = np.einsum("jq,jn,jk->qnk", Q, X, alphas)
    return loss, dW, Q.sum(axis=0)


def fit_logistic(X, alphas, y, p, variant, lambda2, regularize_bias=True, gtol=1e-6):
    """Fit softmax regression on fixed codes; returns ``DecisionParams``."""
    m, k = alphas.shape
    n = X.shape[1]
    wshape = (k, p) if variant == LINEAR else (p, n, k)
    nw = int(np.prod(wshape))
    bias_reg = 1.0 if regularize_bias else 0.0

    def fun(z):
        W = z[:nw].reshape(wshape)
        b = z[nw:]
        loss, dW, db = _logistic_loss(X, alphas, y, variant, W, b)
        loss += lambda2 * (float(np.sum(W * W)) + bias_reg * float(b @ b))
        grad = np.concatenate([(dW + 2 * lambda2 * W).ravel(), db + 2 * lambda2 * bias_reg * b])
        return loss, grad

    res = minimize(fun, np.zeros(nw + p), jac=True, method="L-BFGS-B",
                   options={"gtol": gtol * 1e-3, "ftol": 0.0, "maxiter": 20000, "maxcor": 20})
    _, grad = fun(res.x)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > gtol:
        log.info("posterior classifier stopped at gradient norm %.3g (%s)", gnorm, res.message)
    return DecisionParams(variant, res.x[:nw].reshape(wshape), res.x[nw:])


def fit_posterior_classifier(dataset: LabeledDataset, D, hyper: Hyperparams, variant: str,
                             workers: int = 1) -> DecisionParams:
    """Fit decision parameters on reconstructive codes of a fixed dictionary."""
    _check_dataset(dataset)
    atoms = atoms_of(D)
    if dataset.n != atoms.shape[0]:
        raise DimensionError(f"signal dimension {dataset.n} != dictionary n={atoms.shape[0]}")
    alphas, _ = reconstructive_codes(dataset.signals, atoms, rec_penalty(hyper), tol=hyper.tol,
                                     max_iter=hyper.max_iter, workers=workers)
    return fit_logistic(dataset.signals, alphas, dataset.labels, dataset.p, variant,
                        hyper.lambda2, hyper.regularize_bias)


# --------------------------------------------------------------------------
# supervised dictionary update


def omega_weights(i: int, s_values, mu: float) -> np.ndarray:
    """Per-class weights ``mu * dC/dS_l + (1 - mu) * [l == i]``.

    ``C`` is the residual cost of the true class ``i``; the weights sum to
    ``1 - mu``.
    """
    if not 0.0 <= mu <= 1.0:
        raise SdlError(f"mu must lie in [0, 1], got {mu}")
    s = np.asarray(s_values, dtype=np.float64)
    w = mu * residual_cost_grad(i, s)
    w[i] += 1.0 - mu
    return w


def _omega_matrix(S, y, mu):
    m, p = S.shape
    neg = -S
    e = np.exp(neg - neg.max(axis=1, keepdims=True))
    soft = e / e.sum(axis=1, keepdims=True)
    onehot = np.zeros((m, p))
    onehot[np.arange(m), y] = 1.0
    return mu * (onehot - soft) + (1.0 - mu) * onehot


@dataclass
class Batch:
    """Signals, labels and the fixed codes ``alphas[j, l]`` for every class."""

    X: np.ndarray
    y: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.alphas.ndim != 3 or self.alphas.shape[0] != self.X.shape[0]:
            raise DimensionError(
                f"alphas must have shape (m, p, k) with m={self.X.shape[0]}, "
                f"got {self.alphas.shape}")
        if not np.all(np.isfinite(self.alphas)):
            raise SdlError("missing (non-finite) codes in batch")


def _residual_terms(batch: Batch, atoms, variant, W, b, hyper):
    """Everything shared by the update objective and its gradient."""
    X, A = batch.X, batch.alphas
    R = X[:, None, :] - A @ atoms.T                       # (m, p, n)
    if variant == LINEAR:
        G = A @ W + b                                     # (m, p, p): scores of problem (j, l)
    else:
        G = np.einsum("jn,qnk,jlk->jlq", X, W, A) + b
    top = G.max(axis=2, keepdims=True)
    E = np.exp(G - top)
    Z = E.sum(axis=2, keepdims=True)
    p = A.shape[1]
    diag = G[:, np.arange(p), np.arange(p)]
    C = top[..., 0] + np.log(Z[..., 0]) - diag            # C_l(g(x_j, alpha_jl))
    S = (C + hyper.lambda0 * np.einsum("jln,jln->jl", R, R)
         + hyper.lambda1 * np.abs(A).sum(axis=2))
    return R, G, E / Z, S


def update_objective(batch: Batch, D, params: DecisionParams, hyper: Hyperparams,
                     mu: float) -> float:
    """The dictionary-update objective with the codes held fixed.

    ``sum_j mu * C_i(-S_j) + (1 - mu) * S_{j, i}`` plus ``lambda2 ||theta||^2``,
    where ``S_{j, l}`` is the supervised cost of the fixed code of signal
    ``j`` for class ``l``.
    """
    atoms = atoms_of(D)
    _, _, _, S = _residual_terms(batch, atoms, params.variant, params.weights,
                                 params.biases, hyper)
    return _mixed_value(S, batch.y, mu) + hyper.lambda2 * params.sqnorm(hyper.regularize_bias)


def _mixed_value(S, y, mu) -> float:
    m = S.shape[0]
    neg = -S
    top = neg.max(axis=1)
    disc = top + np.log(np.exp(neg - top[:, None]).sum(axis=1)) - neg[np.arange(m), y]
    gen = S[np.arange(m), y]
    if mu == 0.0:
        return float(np.sum(gen))
    if mu == 1.0:
        return float(np.sum(disc))
    return float(np.sum(mu * disc + (1.0 - mu) * gen))


def dictionary_update_grads(batch: Batch, D, params: DecisionParams, hyper: Hyperparams,
                            mu: float):
    """Analytic gradients of :func:`update_objective`.

    Returns ``(dE/dD, dE/dW, dE/db)`` where ``dE/dW`` has the shape of
    ``params.weights``.
    """
    if not 0.0 <= mu <= 1.0:
        raise SdlError(f"mu must lie in [0, 1], got {mu}")
    atoms = atoms_of(D)
    if batch.alphas.shape[1:] != (params.p, atoms.shape[1]):
        raise DimensionError(
            f"codes have shape {batch.alphas.shape[1:]}, expected (p={params.p}, "
            f"k={atoms.shape[1]})")
    R, G, soft, S = _residual_terms(batch, atoms, params.variant, params.weights,
                                    params.biases, hyper)
    omega = _omega_matrix(S, batch.y, mu)
    A = batch.alphas
    p = params.p
    gD = -2.0 * hyper.lambda0 * np.einsum("jl,jln,jlk->nk", omega, R, A)
    Q = soft.copy()
    Q[:, np.arange(p), np.arange(p)] -= 1.0               # grad of C_l at problem (j, l)
    if params.variant == LINEAR:
        gW = np.einsum("jl,jlk,jlq->kq", omega, A, Q)
    else:
        gW = np.einsum("jl,jlq,jn,jlk->qnk", omega, Q, batch.X, A)
    gb = np.einsum("jl,jlq->q", omega, Q)
    gW = gW + 2.0 * hyper.lambda2 * params.weights
    if hyper.regularize_bias:
        gb = gb + 2.0 * hyper.lambda2 * params.biases
    return gD, gW, gb


@dataclass
class UpdateResult:
    dictionary: Dictionary
    params: DecisionParams
    objective_before: float
    objective_after: float
    step: float
    line_search_failed: bool = False


def dictionary_update(batch: Batch, D, params: DecisionParams, hyper: Hyperparams, mu: float,
                      policy: UpdatePolicy = UpdatePolicy(), step: float | None = None
                      ) -> UpdateResult:
    """Projected gradient steps on ``(D, theta)`` with backtracking.

    Each step halves the step size until the objective decreases (at most
    ``policy.max_halvings`` times), then projects the atoms onto the unit
    ball. An accepted step doubles the trial step of the next one. If no
    decrease is found the current point is returned with
    ``line_search_failed`` set.
    """
    atoms = atoms_of(D).copy()
    W, b = params.weights.copy(), params.biases.copy()
    current = update_objective(batch, atoms, params, hyper, mu)
    before = current
    if step is None:
        step = policy.initial_step or 1.0 / max(batch.X.shape[0], 1)
    failed = False
    cur_params = params
    for _ in range(policy.steps):
        gD, gW, gb = dictionary_update_grads(batch, atoms, cur_params, hyper, mu)
        if not (np.any(gD) or np.any(gW) or np.any(gb)):
            break
        for _ in range(policy.max_halvings + 1):
            new_atoms = _project(atoms - step * gD)
            trial = params.with_arrays(W - step * gW, b - step * gb)
            value = update_objective(batch, new_atoms, trial, hyper, mu)
            if value < current:
                atoms, W, b, current, cur_params = new_atoms, trial.weights, trial.biases, value, trial
                step *= 2.0
                break
            step *= 0.5
        else:
            failed = True
            step *= 2.0 ** (policy.max_halvings + 1)
            break
    return UpdateResult(Dictionary(atoms), cur_params, before, current, step, failed)


# --------------------------------------------------------------------------
# lambda rescaling


def _rescale_objective(S, y, gamma):
    neg = -gamma * S
    top = neg.max(axis=1)
    m = S.shape[0]
    return float(np.sum(top + np.log(np.exp(neg - top[:, None]).sum(axis=1)) - neg[np.arange(m), y]))


def rescale_lambda(S, labels, bounds=GAMMA_RANGE, rel_tol: float = 1e-6) -> float:
    """Scale ``gamma`` minimizing ``sum_j C_i(-gamma * S_j)`` over the residuals.

    Golden-section search on ``log gamma`` within ``bounds``. Returns 1.0 when
    every residual row is constant (the objective does not depend on gamma).
    """
    S = np.asarray(S, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if S.ndim != 2 or S.shape[0] == 0 or S.shape[0] != y.shape[0]:
        raise DimensionError(f"residual matrix {S.shape} does not match {y.shape[0]} labels")
    if not np.all(np.isfinite(S)):
        raise SdlError("non-finite residuals")
    if np.all(np.ptp(S, axis=1) == 0):
        log.info("residuals are constant per sample; gamma left at 1")
        return 1.0
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _rescale_objective(S, y, math.exp(c))
    fd = _rescale_objective(S, y, math.exp(d))
    while b - a > rel_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _rescale_objective(S, y, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _rescale_objective(S, y, math.exp(d))
    t = 0.5 * (a + b)
    # the bracket never contains its end points; compare against them explicitly
    best = min((_rescale_objective(S, y, math.exp(v)), v) for v in (lo, t, hi))
    return math.exp(best[1])


def _gamma_interior(gamma, bounds=GAMMA_RANGE) -> bool:
    return bounds[0] * 1.001 < gamma < bounds[1] / 1.001


# --------------------------------------------------------------------------
# supervised training loop


def error_rate(X, y, D, params: DecisionParams, hyper: Hyperparams, workers: int = 1) -> float:
    """Fraction of signals whose minimal supervised residual is not their class."""
    _, S, _ = supervised_codes(X, D, params, hyper, workers=workers)
    return float(np.mean(np.argmin(S, axis=1) != y))


def _stage_record(stage, mu, it, S, y, params, hyper, alphas, gamma):
    m = S.shape[0]
    gen = float(np.sum(S[np.arange(m), y]))
    disc = _mixed_value(S, y, 1.0)
    reg = hyper.lambda2 * params.sqnorm(hyper.regularize_bias)
    true_alphas = alphas[np.arange(m), y]
    return {
        "stage": stage,
        "mu": mu,
        "iteration": it,
        "objective": mu * disc + (1.0 - mu) * gen + reg,
        "generative": gen,
        "discriminative": disc,
        "regularizer": reg,
        "mean_sparsity": _mean_nnz(true_alphas),
        "train_error": float(np.mean(np.argmin(S, axis=1) != y)),
        "lambda0": hyper.lambda0,
        "lambda1": hyper.lambda1,
        "gamma": gamma,
    }


def train_sdl(dataset: LabeledDataset, validation: LabeledDataset | None,
              config: TrainConfig) -> tuple[SdlModel, TrainTrace]:
    """Learn a dictionary and decision functions.

    ``objective_mode`` selects the reconstructive baseline (``rec``), the
    generative objective (``sdl-g``, schedule ``{0}``) or the continuation
    path over ``hyper.mu_schedule`` (``sdl-d``). Along the path the snapshot
    with the lowest validation error is returned (smallest ``mu`` on ties);
    without a validation set the last snapshot is returned.
    """
    _check_dataset(dataset, min_classes=2)
    if validation is not None and validation.n != dataset.n:
        raise DimensionError(f"validation n={validation.n} != training n={dataset.n}")
    if config.objective_mode == REC:
        return _train_rec(dataset, validation, config)

    X, y = dataset.signals, dataset.labels
    m, n, p, k = dataset.m, dataset.n, dataset.p, config.hyper.k
    hyper = config.hyper
    D = init_dictionary(n, k, config.seed)
    params = DecisionParams.zeros(config.variant, n, k, p)
    alphas = np.zeros((m, p, k))
    trace = TrainTrace()
    best = None
    step = None
    total_scale = 1.0
    for stage, mu in enumerate(config.schedule):
        prev = None
        for it in range(config.outer_iterations_per_mu):
            alphas, S, _ = supervised_codes(X, D, params, hyper, alpha0=alphas,
                                            workers=config.workers)
            gamma = None
            if stage == 0 and it < config.gamma_rescale_iterations and np.all(np.isfinite(S)):
                g = rescale_lambda(S, y)
                if _gamma_interior(g) and g != 1.0:
                    # repeated rescaling compounds; keep the total factor within GAMMA_RANGE
                    g = min(max(total_scale * g, GAMMA_RANGE[0]), GAMMA_RANGE[1]) / total_scale
                if _gamma_interior(g) and g != 1.0:
                    total_scale *= g
                    gamma = g
                    hyper = hyper.scaled(g)
                    alphas, S, _ = supervised_codes(X, D, params, hyper, alpha0=alphas,
                                                    workers=config.workers)
            record = _stage_record(stage, mu, it, S, y, params, hyper, alphas, gamma)
            if not np.isfinite(record["objective"]):
                trace.records.append(record)
                raise TrainingAborted(f"non-finite objective at mu={mu}, iteration {it}", trace)
            upd = dictionary_update(Batch(X, y, alphas), D, params, hyper, mu,
                                    config.dict_update, step)
            D, params, step = upd.dictionary, upd.params, upd.step
            record["after_update"] = upd.objective_after
            record["line_search_failed"] = upd.line_search_failed
            trace.records.append(record)
            log.debug("mu=%.3g it=%d objective=%.6g", mu, it, record["objective"])
            obj = record["objective"]
            if prev is not None and abs(prev - obj) <= config.rel_tol * max(abs(prev), 1e-300):
                break
            prev = obj
        val_err = None
        if validation is not None:
            val_err = error_rate(validation.signals, validation.labels, D, params, hyper,
                                 config.workers)
            trace.records[-1]["validation_error"] = val_err
        snapshot = SdlModel(D, params, hyper, dataset.class_labels)
        entry = {"mu": mu, "validation_error": val_err}
        if config.keep_path:
            entry["model"] = snapshot
        trace.path.append(entry)
        if best is None or validation is None or val_err < best[0]:
            best = (val_err, mu, snapshot)
    _, trace.chosen_mu, model = best
    model = replace(model, trace=trace.summary())
    return model, trace


def _train_rec(dataset, validation, config):
    history = []
    hyper = config.hyper
    D = learn_reconstructive(dataset, hyper, config, history)
    params = fit_posterior_classifier(dataset, D, hyper, config.variant, config.workers)
    trace = TrainTrace(records=[dict(r, stage=0, mu=None) for r in history])
    val_err = None
    if validation is not None:
        val_err = error_rate(validation.signals, validation.labels, D, params, hyper,
                             config.workers)
        trace.records[-1]["validation_error"] = val_err
    model = SdlModel(D, params, hyper, dataset.class_labels)
    trace.path.append({"mu": None, "validation_error": val_err}
                      | ({"model": model} if config.keep_path else {}))
    return replace(model, trace=trace.summary()), trace
