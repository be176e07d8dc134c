"""Dictionary, decision functions, softmax costs and model persistence.

A model couples a shared dictionary ``D`` (``n x k``, columns of norm at
most one) with ``p`` decision functions that score a signal ``x`` and its
sparse code ``alpha``:

* linear:   ``g_i = w_i^T alpha + b_i``
* bilinear: ``g_i = x^T W_i alpha + b_i``

Both are affine in ``alpha`` for a fixed ``x``, which is what the sparse
coding solver relies on (see :func:`affine_reduction`).
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Sequence

import numpy as np

from .errors import DimensionError, FormatError, SdlError

LINEAR = "linear"
BILINEAR = "bilinear"
VARIANTS = (LINEAR, BILINEAR)

MODEL_MAGIC = b"SDLMODL1"
MODEL_FORMAT_VERSION = 1
NORM_SLACK = 1e-9


@dataclass(frozen=True)
class Dictionary:
    """Shared dictionary with atoms stored as columns."""

    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, order="C")
        if atoms.ndim != 2:
            raise DimensionError(f"dictionary must be 2-D, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise SdlError("dictionary has non-finite entries")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(norms > 1.0 + NORM_SLACK):
            worst = int(np.argmax(norms))
            raise SdlError(f"atom {worst} has norm {norms[worst]:.6g} > 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def k(self) -> int:
        return self.atoms.shape[1]


def atoms_of(D) -> np.ndarray:
    """Return the raw ``n x k`` matrix of a Dictionary or array."""
    if isinstance(D, Dictionary):
        return D.atoms
    return np.asarray(D, dtype=np.float64)


@dataclass(frozen=True)
class DecisionParams:
    """Per-class decision function parameters.

    ``weights`` is ``k x p`` (column ``i`` is ``w_i``) for the linear
    variant and ``p x n x k`` (``weights[i]`` is ``W_i``) for the bilinear
    one. ``biases`` always has length ``p``.
    """

    variant: str
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SdlError(f"unknown variant {self.variant!r}")
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64).reshape(-1)
        expected_ndim = 2 if self.variant == LINEAR else 3
        if w.ndim != expected_ndim:
            raise DimensionError(
                f"{self.variant} weights must be {expected_ndim}-D, got shape {w.shape}")
        p = w.shape[1] if self.variant == LINEAR else w.shape[0]
        if b.shape[0] != p:
            raise DimensionError(f"biases has length {b.shape[0]}, weights imply p={p}")
        if p < 2:
            raise SdlError(f"need at least 2 classes, got p={p}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise SdlError("decision parameters have non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @classmethod
    def zeros(cls, variant: str, n: int, k: int, p: int) -> "DecisionParams":
        if variant == LINEAR:
            w = np.zeros((k, p))
        else:
            w = np.zeros((p, n, k))
        return cls(variant, w, np.zeros(p))

    @property
    def p(self) -> int:
        return self.biases.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[0] if self.variant == LINEAR else self.weights.shape[2]

    @property
    def n(self) -> int | None:
        """Signal dimension, or None for the linear variant (which ignores x)."""
        return None if self.variant == LINEAR else self.weights.shape[1]

    def sqnorm(self, include_bias: bool = True) -> float:
        total = float(np.sum(self.weights ** 2))
        if include_bias:
            total += float(np.sum(self.biases ** 2))
        return total

    def with_arrays(self, weights, biases) -> "DecisionParams":
        return DecisionParams(self.variant, weights, biases)


@dataclass(frozen=True)
class Hyperparams:
    """Regularization weights and solver settings.

    ``lambda0`` weights reconstruction, ``lambda1`` the l1 penalty and
    ``lambda2`` the squared norm of the decision parameters. When built
    through :meth:`from_kappa`, ``lambda1 = kappa * lambda0``.
    """

    lambda0: float
    lambda1: float
    lambda2: float = 0.0
    kappa: float | None = None
    mu_schedule: tuple = (0.0,)
    k: int | None = None
    tol: float = 1e-6
    max_iter: int = 2000
    regularize_bias: bool = True
    tight_p2_bound: bool = True

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise SdlError(f"{name} must be a finite nonnegative number, got {value}")
            object.__setattr__(self, name, float(value))
        if self.kappa is not None:
            if self.kappa < 0:
                raise SdlError(f"kappa must be nonnegative, got {self.kappa}")
            if abs(self.lambda1 - self.kappa * self.lambda0) > 1e-12 * max(1.0, self.lambda1):
                raise SdlError(
                    f"lambda1={self.lambda1} inconsistent with kappa*lambda0="
                    f"{self.kappa * self.lambda0}")
        mus = tuple(float(m) for m in self.mu_schedule)
        if not mus:
            raise SdlError("mu_schedule is empty")
        if mus[0] < 0 or mus[-1] > 1 or any(b < a for a, b in zip(mus, mus[1:])):
            raise SdlError(f"mu_schedule must be nondecreasing within [0, 1], got {mus}")
        object.__setattr__(self, "mu_schedule", mus)
        if self.tol <= 0:
            raise SdlError("tol must be positive")
        if self.max_iter < 1:
            raise SdlError("max_iter must be positive")

    @classmethod
    def from_kappa(cls, lambda0: float, kappa: float, **kwargs) -> "Hyperparams":
        return cls(lambda0=lambda0, lambda1=kappa * lambda0, kappa=kappa, **kwargs)

    def scaled(self, gamma: float) -> "Hyperparams":
        """Multiply lambda0 and lambda1 by ``gamma`` (kappa is unchanged)."""
        return self.replace(lambda0=gamma * self.lambda0, lambda1=gamma * self.lambda1)

    def replace(self, **changes) -> "Hyperparams":
        values = self.to_dict()
        values.update(changes)
        return Hyperparams(**values)

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "kappa": self.kappa,
            "mu_schedule": list(self.mu_schedule),
            "k": self.k,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "regularize_bias": self.regularize_bias,
            "tight_p2_bound": self.tight_p2_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        d["mu_schedule"] = tuple(d.get("mu_schedule", (0.0,)))
        return cls(**d)


@dataclass(frozen=True)
class SdlModel:
    """A trained dictionary together with its decision functions."""

    dictionary: Dictionary
    params: DecisionParams
    hyper: Hyperparams
    class_labels: list = field(default_factory=list)
    trace: dict | None = None

    def __post_init__(self):
        D = self.dictionary
        if self.params.k != D.k:
            raise DimensionError(f"params k={self.params.k} but dictionary k={D.k}")
        if self.params.n is not None and self.params.n != D.n:
            raise DimensionError(f"params n={self.params.n} but dictionary n={D.n}")
        if not self.class_labels:
            object.__setattr__(self, "class_labels", list(range(self.params.p)))
        elif len(self.class_labels) != self.params.p:
            raise DimensionError(
                f"{len(self.class_labels)} class labels for p={self.params.p} classes")

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def k(self) -> int:
        return self.dictionary.k

    @property
    def p(self) -> int:
        return self.params.p


# --------------------------------------------------------------------------
# softmax costs


def _check_scores(i: int, scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionError(f"scores must be a vector, got shape {s.shape}")
    if not 0 <= i < s.shape[0]:
        raise IndexError(f"class index {i} out of range for p={s.shape[0]}")
    if not np.all(np.isfinite(s)):
        raise SdlError("non-finite scores")
    return s


def softmax_cost(i: int, scores) -> float:
    """Multiclass logistic cost ``log sum_j exp(s_j - s_i)`` for class ``i``.

    Classes are 0-based. Small when ``scores[i]`` dominates the others.
    """
    s = _check_scores(i, scores)
    top = s.max()
    return float(top + np.log(np.sum(np.exp(s - top))) - s[i])


def softmax_cost_grad(i: int, scores) -> np.ndarray:
    """Gradient of :func:`softmax_cost`: ``softmax(scores) - e_i``."""
    s = _check_scores(i, scores)
    e = np.exp(s - s.max())
    g = e / e.sum()
    g[i] -= 1.0
    return g


def residual_cost(i: int, residuals) -> float:
    """Softmax cost over residuals, where the *smallest* residual should win.

    Classification picks the class with minimal supervised residual, so the
    discriminative cost on residuals is ``softmax_cost(i, -residuals)``.
    """
    return softmax_cost(i, -np.asarray(residuals, dtype=np.float64))


def residual_cost_grad(i: int, residuals) -> np.ndarray:
    """Gradient of :func:`residual_cost` with respect to the residuals."""
    return -softmax_cost_grad(i, -np.asarray(residuals, dtype=np.float64))


# --------------------------------------------------------------------------
# decision functions


def decision_values(x, alpha, params: DecisionParams) -> np.ndarray:
    """Evaluate ``(g_1, ..., g_p)`` for a signal and its code."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (params.k,):
        raise DimensionError(f"alpha has shape {alpha.shape}, expected ({params.k},)")
    if params.variant == LINEAR:
        return params.weights.T @ alpha + params.biases
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.n,):
        raise DimensionError(f"x has shape {x.shape}, expected ({params.n},)")
    return np.einsum("n,pnk,k->p", x, params.weights, alpha) + params.biases


def affine_reduction(x, params: DecisionParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, b)`` with ``A^T alpha + b == decision_values(x, alpha)``.

    ``A`` is ``k x p``. For the bilinear variant column ``j`` is ``W_j^T x``.
    """
    if params.variant == LINEAR:
        return params.weights, params.biases
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.n,):
        raise DimensionError(f"x has shape {x.shape}, expected ({params.n},)")
    return np.einsum("pnk,n->kp", params.weights, x), params.biases


def affine_reduction_batch(X, params: DecisionParams) -> np.ndarray:
    """Stack of ``A`` matrices, shape ``(m, k, p)``, or ``(1, k, p)`` if shared."""
    if params.variant == LINEAR:
        return params.weights[None, :, :]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n:
        raise DimensionError(f"signals have shape {X.shape}, expected (m, {params.n})")
    return np.einsum("pnk,mn->mkp", params.weights, X)


# --------------------------------------------------------------------------
# persistence


def _array_layout(model: SdlModel) -> list[tuple[str, tuple, np.ndarray]]:
    n, k, p = model.n, model.k, model.p
    arrays = [("dictionary", (n, k), model.dictionary.atoms)]
    if model.params.variant == LINEAR:
        arrays.append(("weights", (k, p), model.params.weights))
    else:
        arrays.append(("weights", (p, n, k), model.params.weights))
    arrays.append(("biases", (p,), model.params.biases))
    return arrays


def _column_major_bytes(a: np.ndarray) -> bytes:
    # 3-D weights are stored as p consecutive column-major n x k blocks.
    if a.ndim == 3:
        return b"".join(_column_major_bytes(block) for block in a)
    return np.asarray(a, dtype="<f8").tobytes(order="F")


def _from_column_major(buf: bytes, shape: tuple) -> np.ndarray:
    flat = np.frombuffer(buf, dtype="<f8").astype(np.float64)
    if len(shape) == 3:
        p, n, k = shape
        return np.stack([flat[i * n * k:(i + 1) * n * k].reshape((n, k), order="F")
                         for i in range(p)]) if p else np.zeros(shape)
    return flat.reshape(shape, order="F").copy()


def model_to_bytes(model: SdlModel) -> bytes:
    arrays = _array_layout(model)
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": model.params.variant,
        "n": model.n,
        "k": model.k,
        "p": model.p,
        "hyperparameters": model.hyper.to_dict(),
        "class_labels": list(model.class_labels),
        "trace": model.trace,
        "arrays": [{"name": name, "shape": list(shape), "order": "F"}
                   for name, shape, _ in arrays],
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(struct.pack("<Q", len(text)))
    out.write(text)
    for _, _, a in arrays:
        out.write(_column_major_bytes(a))
    return out.getvalue()


def save_model(model: SdlModel, sink: BinaryIO | str) -> None:
    """Write ``model`` to a binary stream or a path."""
    data = model_to_bytes(model)
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def read_header(source: BinaryIO, magic: bytes) -> dict:
    """Read ``magic + u64 length + JSON`` and return the decoded header."""
    got = source.read(len(magic))
    if got != magic:
        if len(got) == len(magic) and got[:-1] == magic[:-1]:
            raise FormatError(f"unknown format version {got[-1:]!r}")
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    raw_len = source.read(8)
    if len(raw_len) != 8:
        raise FormatError("truncated header length")
    (length,) = struct.unpack("<Q", raw_len)
    text = source.read(length)
    if len(text) != length:
        raise FormatError(f"truncated header: expected {length} bytes, got {len(text)}")
    try:
        header = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed JSON header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object")
    return header


def _read_exact(source: BinaryIO, nbytes: int, what: str) -> bytes:
    buf = source.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated {what}: expected {nbytes} bytes, got {len(buf)}")
    return buf


def load_model(source: BinaryIO | str) -> SdlModel:
    """Read a model written by :func:`save_model`; validates before reading arrays."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return load_model(fh)
    header = read_header(source, MODEL_MAGIC)
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unknown format_version {header.get('format_version')!r}")
    try:
        variant = header["variant"]
        n, k, p = int(header["n"]), int(header["k"]), int(header["p"])
        specs = header["arrays"]
        labels = header["class_labels"]
        hyper = Hyperparams.from_dict(header["hyperparameters"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"header missing field {exc}") from None
    if variant not in VARIANTS:
        raise FormatError(f"unknown variant {variant!r}")
    expected = {
        "dictionary": [n, k],
        "weights": [k, p] if variant == LINEAR else [p, n, k],
        "biases": [p],
    }
    if [s.get("name") for s in specs] != list(expected):
        raise FormatError(f"unexpected array list {[s.get('name') for s in specs]}")
    for spec in specs:
        if list(spec.get("shape", [])) != expected[spec["name"]]:
            raise DimensionError(
                f"field {spec['name']!r}: declared shape {spec.get('shape')} does not match "
                f"n={n}, k={k}, p={p} (expected {expected[spec['name']]})")
    if len(labels) != p:
        raise DimensionError(f"field 'class_labels': {len(labels)} labels for p={p}")
    arrays = {}
    for spec in specs:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape))
        arrays[spec["name"]] = _from_column_major(
            _read_exact(source, nbytes, spec["name"]), shape)
    if source.read(1):
        raise FormatError("trailing bytes after model arrays")
    return SdlModel(
        dictionary=Dictionary(arrays["dictionary"]),
        params=DecisionParams(variant, arrays["weights"], arrays["biases"]),
        hyper=hyper,
        class_labels=list(labels),
        trace=header.get("trace"),
    )


def model_from_bytes(data: bytes) -> SdlModel:
    return load_model(io.BytesIO(data))


def labels_list(labels: Sequence[Any]) -> list:
    """Convert numpy scalars to JSON-friendly Python values."""
    return [x.item() if hasattr(x, "item") else x for x in labels]
