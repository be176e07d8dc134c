"""Classification by comparing supervised coding costs, ensembles and reports.

A signal is assigned to the class whose supervised sparse coding cost
``S_i*`` is smallest. Multiclass problems may be split into two-class
problems, either one per pair of classes (majority vote) or one per class
against the rest.
"""
from __future__ import annotations

import hashlib
import io
import itertools
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import LabeledDataset
from .errors import DataError, DimensionError, FormatError, SdlError, SolverError
from .model import (
    LINEAR,
    SdlModel,
    atoms_of,
    labels_list,
    load_model,
    model_to_bytes,
    read_header,
)
from .sparse_coding import reconstructive_codes, supervised_codes
from .training import TrainConfig, _scores, fit_logistic, train_sdl

PAIRWISE = "pairwise"
ONE_VS_ALL = "one-vs-all"
MULTICLASS = "multiclass"
SCHEMES = (PAIRWISE, ONE_VS_ALL, MULTICLASS)

ENSEMBLE_MAGIC = b"SDLENSB1"
ENSEMBLE_FORMAT_VERSION = 1
REST_LABEL = "rest"


@dataclass(frozen=True)
class EnsembleModel:
    """Two-class (or one multiclass) models and the global classes they cover.

    ``members[q] = (classes, model)``: for pairwise members ``classes`` is
    the pair ``(a, b)`` mapped to the member's classes ``0, 1``; for
    one-vs-all members it is ``(c,)`` with ``c`` as member class 0 and the
    rest as class 1; the single multiclass member covers every class.
    """

    scheme: str
    members: list
    class_labels: list

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise SdlError(f"unknown scheme {self.scheme!r}")
        p = len(self.class_labels)
        if p < 2:
            raise SdlError("an ensemble needs at least two classes")
        expected = {PAIRWISE: p * (p - 1) // 2, ONE_VS_ALL: p, MULTICLASS: 1}[self.scheme]
        if len(self.members) != expected:
            raise SdlError(f"{self.scheme} ensemble over {p} classes needs {expected} members, "
                           f"got {len(self.members)}")
        n = None
        for classes, model in self.members:
            if self.scheme == PAIRWISE and (len(classes) != 2 or model.p != 2):
                raise SdlError(f"pairwise member {classes} must be a two-class model")
            if self.scheme == ONE_VS_ALL and (len(classes) != 1 or model.p != 2):
                raise SdlError(f"one-vs-all member {classes} must be a two-class model")
            if self.scheme == MULTICLASS and model.p != p:
                raise SdlError(f"multiclass member has {model.p} classes, expected {p}")
            if n is not None and model.n != n:
                raise DimensionError("ensemble members disagree on the signal dimension")
            n = model.n

    @property
    def p(self) -> int:
        return len(self.class_labels)

    @property
    def n(self) -> int:
        return self.members[0][1].n


# --------------------------------------------------------------------------
# single model


def _residuals(X, model: SdlModel, workers: int = 1) -> np.ndarray:
    """Supervised coding costs ``S*`` of shape ``(m, p)``; raises on solver failure."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n:
        raise DimensionError(f"signal dimension {X.shape[1]} != model n={model.n}")
    _, S, info = supervised_codes(X, model.dictionary, model.params, model.hyper,
                                  workers=workers)
    bad = info[:, :, _kernels.INFO_STATUS] != _kernels.STATUS_OK
    if np.any(bad):
        j, l = np.argwhere(bad)[0]
        raise SolverError(f"supervised coding failed for signal {j}, class "
                          f"{model.class_labels[l]!r} (index {l})")
    return S


def classify_one(x, model: SdlModel) -> tuple[int, np.ndarray]:
    """Class with the smallest supervised cost, and the cost vector.

    ``np.argmin`` returns the first minimum, so ties go to the lowest index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected one signal (1-D), got shape {x.shape}")
    S = _residuals(x[None, :], model)[0]
    return int(np.argmin(S)), S


def classify_batch(X, model: SdlModel, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`classify_one`: predictions ``(m,)`` and costs ``(m, p)``."""
    S = _residuals(X, model, workers)
    return np.argmin(S, axis=1), S


# --------------------------------------------------------------------------
# ensembles


def _one_vs_rest(dataset: LabeledDataset, c: int) -> LabeledDataset:
    labels = np.where(dataset.labels == c, 0, 1)
    return LabeledDataset(dataset.signals, labels, [dataset.class_labels[c], REST_LABEL],
                          dataset.normalized)


def train_ensemble(dataset: LabeledDataset, scheme: str, config: TrainConfig,
                   validation: LabeledDataset | None = None,
                   traces: list | None = None) -> EnsembleModel:
    """Train every member of ``scheme`` with the same configuration.

    Member training traces are appended to ``traces`` when given.
    """
    if scheme not in SCHEMES:
        raise SdlError(f"unknown scheme {scheme!r}")
    if dataset.p < 2:
        raise DataError(f"need at least two classes, got {dataset.p}")
    members = []
    if scheme == PAIRWISE:
        for a, b in itertools.combinations(range(dataset.p), 2):
            val = validation.restrict([a, b]) if validation is not None else None
            model, trace = train_sdl(dataset.restrict([a, b]), val, config)
            members.append(((a, b), model))
            if traces is not None:
                traces.append(trace)
    elif scheme == ONE_VS_ALL:
        for c in range(dataset.p):
            val = _one_vs_rest(validation, c) if validation is not None else None
            model, trace = train_sdl(_one_vs_rest(dataset, c), val, config)
            members.append(((c,), model))
            if traces is not None:
                traces.append(trace)
    else:
        model, trace = train_sdl(dataset, validation, config)
        members.append((tuple(range(dataset.p)), model))
        if traces is not None:
            traces.append(trace)
    return EnsembleModel(scheme, members, list(dataset.class_labels))


def _resolve_votes(votes: np.ndarray, aggregate: np.ndarray) -> int:
    """Most votes; ties by smallest aggregate cost, then lowest index."""
    tied = np.flatnonzero(votes == votes.max())
    if tied.size == 1:
        return int(tied[0])
    best = aggregate[tied].min()
    return int(tied[np.flatnonzero(aggregate[tied] == best)[0]])


def ensemble_predict(X, ensemble: EnsembleModel, workers: int = 1):
    """Predictions ``(m,)`` and per-class scores ``(m, p)`` for a signal batch.

    Scores are the aggregate costs used for decisions: summed member costs
    for pairwise, own-model costs for one-vs-all and ``S*`` for multiclass.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    m, p = X.shape[0], ensemble.p
    if ensemble.scheme == MULTICLASS:
        return classify_batch(X, ensemble.members[0][1], workers)
    scores = np.zeros((m, p))
    if ensemble.scheme == ONE_VS_ALL:
        for (c,), model in ensemble.members:
            scores[:, c] = _residuals(X, model, workers)[:, 0]
        return np.argmin(scores, axis=1), scores
    votes = np.zeros((m, p), dtype=np.int64)
    for (a, b), model in ensemble.members:
        S = _residuals(X, model, workers)
        win_b = S[:, 1] < S[:, 0]
        votes[:, a] += ~win_b
        votes[:, b] += win_b
        scores[:, a] += S[:, 0]
        scores[:, b] += S[:, 1]
    pred = np.array([_resolve_votes(votes[j], scores[j]) for j in range(m)], dtype=np.int64)
    return pred, scores


def classify_ensemble(x, ensemble: EnsembleModel) -> int:
    """Class index of one signal under the ensemble's voting rule."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected one signal (1-D), got shape {x.shape}")
    pred, _ = ensemble_predict(x[None, :], ensemble)
    return int(pred[0])


def ensemble_to_bytes(ensemble: EnsembleModel) -> bytes:
    """``magic + u64 length + JSON header`` followed by the member model files."""
    blobs = [model_to_bytes(model) for _, model in ensemble.members]
    header = {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "scheme": ensemble.scheme,
        "class_labels": labels_list(ensemble.class_labels),
        "members": [{"classes": [int(c) for c in classes], "length": len(blob)}
                    for (classes, _), blob in zip(ensemble.members, blobs)],
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return ENSEMBLE_MAGIC + struct.pack("<Q", len(text)) + text + b"".join(blobs)


def save_ensemble(ensemble: EnsembleModel, sink) -> None:
    data = ensemble_to_bytes(ensemble)
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def load_ensemble(source) -> EnsembleModel:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return load_ensemble(io.BytesIO(fh.read()))
    header = read_header(source, ENSEMBLE_MAGIC)
    if header.get("format_version") != ENSEMBLE_FORMAT_VERSION:
        raise FormatError(f"unknown ensemble format version {header.get('format_version')!r}")
    try:
        members = []
        for entry in header["members"]:
            blob = source.read(entry["length"])
            if len(blob) != entry["length"]:
                raise FormatError("truncated ensemble member")
            members.append((tuple(entry["classes"]), load_model(io.BytesIO(blob))))
        ensemble = EnsembleModel(header["scheme"], members, header["class_labels"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed ensemble header: {exc}") from None
    if source.read(1):
        raise FormatError("trailing bytes after ensemble members")
    return ensemble


def load_classifier(path):
    """Load either a single model file or an ensemble file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(ENSEMBLE_MAGIC[:-1]):
        return load_ensemble(io.BytesIO(data))
    return load_model(io.BytesIO(data))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    error_rate: float
    confusion: np.ndarray
    labels: list
    scheme: str
    model_digest: str
    details: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "error_rate": self.error_rate,
            "confusion": self.confusion.tolist(),
            "labels": labels_list(self.labels),
            "scheme": self.scheme,
            "model_digest": self.model_digest,
        }
        if self.details is not None:
            out["details"] = self.details
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def classifier_digest(classifier) -> str:
    """SHA-256 of the serialized model or ensemble."""
    if isinstance(classifier, EnsembleModel):
        data = ensemble_to_bytes(classifier)
    else:
        data = model_to_bytes(classifier)
    return hashlib.sha256(data).hexdigest()


def evaluate(dataset: LabeledDataset, classifier, workers: int = 1,
             verbose: bool = False) -> EvalReport:
    """Error rate and confusion matrix (rows: true class, columns: predicted)."""
    if dataset.m == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if isinstance(classifier, EnsembleModel):
        scheme = classifier.scheme
        labels = classifier.class_labels
        pred, scores = ensemble_predict(dataset.signals, classifier, workers)
    else:
        scheme = MULTICLASS
        labels = classifier.class_labels
        pred, scores = classify_batch(dataset.signals, classifier, workers)
    p = len(labels)
    if dataset.p > p:
        raise DimensionError(f"dataset has {dataset.p} classes, classifier only {p}")
    confusion = np.zeros((p, p), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    errors = dataset.m - int(np.trace(confusion))
    details = None
    if verbose:
        details = [{"predicted": int(a), "true": int(t), "scores": s.tolist()}
                   for a, t, s in zip(pred, dataset.labels, scores)]
    return EvalReport(errors / dataset.m, confusion, list(labels), scheme,
                      classifier_digest(classifier), details)


def rec_dictionary_probe(dataset_train: LabeledDataset, dataset_test: LabeledDataset, D,
                         lambda1: float, lambda2: float = 1e-3, tol: float = 1e-6,
                         max_iter: int = 2000, workers: int = 1) -> float:
    """Test error of a linear softmax classifier on reconstructive codes of ``D``.

    Both sets are coded with the plain l1 problem (weight ``lambda1``); the
    classifier is fit on the training codes only.
    """
    atoms = atoms_of(D)
    for name, ds in (("training", dataset_train), ("test", dataset_test)):
        if ds.m == 0:
            raise DataError(f"{name} set is empty")
        if ds.n != atoms.shape[0]:
            raise DimensionError(f"{name} signal dimension {ds.n} != dictionary n={atoms.shape[0]}")
    p = max(dataset_train.p, dataset_test.p)
    a_train, _ = reconstructive_codes(dataset_train.signals, atoms, lambda1, tol=tol,
                                      max_iter=max_iter, workers=workers)
    a_test, _ = reconstructive_codes(dataset_test.signals, atoms, lambda1, tol=tol,
                                     max_iter=max_iter, workers=workers)
    params = fit_logistic(dataset_train.signals, a_train, dataset_train.labels, p, LINEAR,
                          lambda2)
    pred = np.argmax(_scores(dataset_test.signals, a_test, LINEAR, params.weights,
                             params.biases), axis=1)
    return float(np.mean(pred != dataset_test.labels))
