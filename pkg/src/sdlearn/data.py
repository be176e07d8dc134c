"""Labeled datasets: IDX and PGM ingestion, patches, normalization, splits.

Labels are stored as 0-based class indices into ``class_labels``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .errors import DataError, DimensionError, FormatError
from .model import labels_list, read_header

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"SDLDATA1"
NORM_TOL = 1e-9

LEFT, RIGHT, FULL = "left", "right", "full"


@dataclass(frozen=True)
class LabeledDataset:
    signals: np.ndarray
    labels: np.ndarray
    class_labels: list = field(default_factory=list)
    normalized: bool = False

    def __post_init__(self):
        X = np.array(self.signals, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2:
            raise DimensionError(f"signals must be an (m, n) matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"{X.shape[0]} signals but {y.shape[0]} labels")
        if X.shape[0] < 1:
            raise DataError("dataset is empty")
        classes = list(self.class_labels) or list(range(int(y.max()) + 1))
        if y.min() < 0 or y.max() >= len(classes):
            raise DataError(f"labels must lie in [0, {len(classes) - 1}]")
        if not np.all(np.isfinite(X)):
            raise DataError("signals contain non-finite values")
        if self.normalized:
            norms = np.linalg.norm(X, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOL):
                raise DataError("dataset flagged normalized but rows are not unit norm")
        object.__setattr__(self, "signals", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_labels", labels_list(classes))

    @property
    def m(self) -> int:
        return self.signals.shape[0]

    @property
    def n(self) -> int:
        return self.signals.shape[1]

    @property
    def p(self) -> int:
        return len(self.class_labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.p)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.signals[index], self.labels[index], self.class_labels,
                              self.normalized)

    def restrict(self, classes: Sequence[int]) -> "LabeledDataset":
        """Keep the given classes only, relabelled ``0..len(classes)-1``."""
        classes = list(classes)
        mask = np.isin(self.labels, classes)
        remap = np.full(self.p, -1)
        remap[classes] = np.arange(len(classes))
        return LabeledDataset(self.signals[mask], remap[self.labels[mask]],
                              [self.class_labels[c] for c in classes], self.normalized)


def concat(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    """Stack datasets sharing the same class list."""
    first = datasets[0]
    for d in datasets[1:]:
        if d.class_labels != first.class_labels or d.n != first.n:
            raise DataError("datasets disagree on classes or dimension")
    return LabeledDataset(np.vstack([d.signals for d in datasets]),
                          np.concatenate([d.labels for d in datasets]), first.class_labels,
                          all(d.normalized for d in datasets))


# --------------------------------------------------------------------------
# IDX


def _read_idx(stream: BinaryIO, magic: int, what: str) -> np.ndarray:
    raw = stream.read() if hasattr(stream, "read") else bytes(stream)
    if len(raw) < 8:
        raise FormatError(f"{what}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{what}: truncated IDX dimensions")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    payload = raw[4 + 4 * ndim:]
    size = int(np.prod(dims))
    if len(payload) != size:
        raise FormatError(f"{what}: payload has {len(payload)} bytes, dimensions {dims} "
                          f"require {size}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images, labels, num_classes: int = 10) -> LabeledDataset:
    """Parse an IDX image tensor and label vector (MNIST layout).

    Pixels are scaled to ``[0, 1]`` and images flattened row-major.
    """
    if isinstance(images, str) or hasattr(images, "__fspath__"):
        with open(images, "rb") as fi, open(labels, "rb") as fl:
            return load_idx(fi, fl, num_classes)
    imgs = _read_idx(images, IDX_IMAGES_MAGIC, "images")
    labs = _read_idx(labels, IDX_LABELS_MAGIC, "labels")
    if imgs.shape[0] != labs.shape[0]:
        raise DataError(f"image count {imgs.shape[0]} != label count {labs.shape[0]}")
    if labs.size and labs.max() >= num_classes:
        raise DataError(f"label {labs.max()} outside 0..{num_classes - 1}")
    X = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(X, labs.astype(np.int64), list(range(num_classes)))


def write_idx_pair(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Encode uint8 images ``(m, rows, cols)`` and labels ``(m,)`` as IDX bytes."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    head = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
    return head + images.tobytes(), struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


# --------------------------------------------------------------------------
# PGM and patches


def read_pgm(source) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) image as a float matrix in ``[0, 1]``."""
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return read_pgm(fh)
    raw = source.read() if hasattr(source, "read") else bytes(source)
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    pixels = raw[pos:pos + width * height]
    if len(pixels) != width * height:
        raise FormatError(f"PGM payload has {len(pixels)} bytes, expected {width * height}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).astype(np.float64) / maxval


def write_pgm(image: np.ndarray) -> bytes:
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes()


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = 12
    stride: int = 1
    region: str = FULL

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1:
            raise DataError("patch_size and stride must be positive")
        if self.region not in (LEFT, RIGHT, FULL):
            raise DataError(f"region must be one of left/right/full, got {self.region!r}")


def region_columns(width: int, region: str) -> tuple[int, int]:
    half = width // 2
    if region == LEFT:
        return 0, half
    if region == RIGHT:
        return half, width
    return 0, width


def extract_patches(image, spec: PatchSpec, label: int = 0, class_labels=None,
                    max_patches: int | None = None, seed: int = 0,
                    subtract_mean: bool = False) -> LabeledDataset:
    """All ``patch_size`` squares inside the region, scanned row-major.

    With ``max_patches`` a seeded uniform sample without replacement is kept
    (in scan order). ``subtract_mean`` removes each patch's mean intensity.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError(f"expected a grayscale matrix, got shape {image.shape}")
    c0, c1 = region_columns(image.shape[1], spec.region)
    s = spec.patch_size
    if image.shape[0] < s or c1 - c0 < s:
        raise DataError(f"region {image.shape[0]}x{c1 - c0} is smaller than patch {s}x{s}")
    rows = range(0, image.shape[0] - s + 1, spec.stride)
    cols = range(c0, c1 - s + 1, spec.stride)
    patches = np.array([image[r:r + s, c:c + s].ravel() for r in rows for c in cols])
    if max_patches is not None and max_patches < patches.shape[0]:
        keep = np.sort(np.random.default_rng(seed).choice(patches.shape[0], max_patches,
                                                          replace=False))
        patches = patches[keep]
    if subtract_mean:
        patches = patches - patches.mean(axis=1, keepdims=True)
    labels = np.full(patches.shape[0], label)
    classes = class_labels if class_labels is not None else list(range(label + 1))
    return LabeledDataset(patches, labels, classes)


# --------------------------------------------------------------------------
# normalization and splits


def normalize_unit(dataset: LabeledDataset, drop_zero: bool = False,
                   report: dict | None = None) -> LabeledDataset:
    """Scale every signal to unit l2 norm.

    Zero rows raise :class:`DataError` unless ``drop_zero`` is set; the
    number of dropped rows is written to ``report['dropped']``.
    """
    norms = np.linalg.norm(dataset.signals, axis=1)
    zero = norms == 0
    if np.any(zero) and not drop_zero:
        raise DataError(f"{int(zero.sum())} zero signal(s) cannot be normalized "
                        f"(first at row {int(np.argmax(zero))})")
    if report is not None:
        report["dropped"] = int(zero.sum())
    keep = ~zero
    if not np.any(keep):
        raise DataError("every signal is zero")
    X = dataset.signals[keep] / norms[keep, None]
    return LabeledDataset(X, dataset.labels[keep], dataset.class_labels, normalized=True)


def split(dataset: LabeledDataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Class-stratified seeded split into ``(train, validation, test)``.

    Per class, ``floor(f * m_c)`` samples go to validation and test; the
    remainder goes to train.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise DataError(f"fractions must be (train > 0, val >= 0, test >= 0), got {fractions}")
    if sum(fractions) > 1 + 1e-12:
        raise DataError(f"fractions sum to {sum(fractions)} > 1")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in range(dataset.p):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(idx.shape[0])]
        n_val = int(np.floor(fractions[1] * idx.shape[0] + 1e-9))
        n_test = int(np.floor(fractions[2] * idx.shape[0] + 1e-9))
        n_train = idx.shape[0] - n_val - n_test
        if n_train < 1:
            raise DataError(f"class {dataset.class_labels[c]!r} would be empty in train")
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    out = []
    for chunks in parts:
        index = np.sort(np.concatenate(chunks))
        out.append(dataset.subset(index) if index.size else None)
    return tuple(out)


def kfold_indices(dataset: LabeledDataset, folds: int, seed: int = 0):
    """Class-stratified fold assignment; yields ``(train_index, test_index)``."""
    rng = np.random.default_rng(seed)
    assign = np.empty(dataset.m, dtype=np.int64)
    for c in range(dataset.p):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.shape[0] < folds:
            raise DataError(f"class {dataset.class_labels[c]!r} has {idx.shape[0]} samples, "
                            f"fewer than {folds} folds")
        assign[idx[rng.permutation(idx.shape[0])]] = np.arange(idx.shape[0]) % folds
    for f in range(folds):
        yield np.flatnonzero(assign != f), np.flatnonzero(assign == f)


# --------------------------------------------------------------------------
# native cache


def dataset_to_bytes(dataset: LabeledDataset) -> bytes:
    if dataset.p > 256:
        raise DataError("the dataset cache stores labels as single bytes (p <= 256)")
    header = {"m": dataset.m, "n": dataset.n, "p": dataset.p,
              "labels": dataset.class_labels, "normalized": dataset.normalized}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return (DATASET_MAGIC + struct.pack("<Q", len(text)) + text
            + np.asarray(dataset.signals, dtype="<f8").tobytes(order="C")
            + dataset.labels.astype(np.uint8).tobytes())


def save_dataset(dataset: LabeledDataset, sink) -> None:
    data = dataset_to_bytes(dataset)
    if isinstance(sink, str) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def load_dataset(source) -> LabeledDataset:
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return load_dataset(fh)
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    header = read_header(source, DATASET_MAGIC)
    try:
        m, n, p = int(header["m"]), int(header["n"]), int(header["p"])
        classes = header["labels"]
        normalized = bool(header["normalized"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"dataset header missing field {exc}") from None
    if len(classes) != p:
        raise DimensionError(f"field 'labels': {len(classes)} class labels for p={p}")
    raw = source.read(8 * m * n)
    if len(raw) != 8 * m * n:
        raise FormatError(f"truncated signal matrix: expected {8 * m * n} bytes, got {len(raw)}")
    lab = source.read(m)
    if len(lab) != m:
        raise FormatError(f"truncated labels: expected {m} bytes, got {len(lab)}")
    if source.read(1):
        raise FormatError("trailing bytes after dataset")
    X = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(m, n)
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(X, y, classes, normalized)
