"""Dataset parsers, standardization, stratified sampling and synthetic generators."""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    EmptyDatasetError,
    MalformedLineError,
    TooFewSamplesError,
    TruncatedError,
    WrongArityError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix and targets with task metadata."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.X.shape}")
        self.y = np.asarray(self.y, dtype=int if self.task == "classification" else float).ravel()
        if self.X.shape[0] == 0:
            raise EmptyDatasetError(f"dataset {self.name!r} has no rows")
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if self.task == "classification" else 1

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.task, self.name, dict(self.meta))


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt")
    return open(path, "r")


def parse_whitespace_dat(path, n_features, name=None):
    """Whitespace-separated rows of ``n_features`` reals followed by one target.

    Blank lines are skipped. Raises :class:`WrongArityError` or
    :class:`MalformedLineError` with the 1-based line number.
    """
    rows = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != n_features + 1:
                raise WrongArityError(
                    f"line {lineno}: expected {n_features + 1} fields, got {len(tokens)}",
                    line_number=lineno,
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                raise MalformedLineError(f"line {lineno}: {exc}", line_number=lineno) from exc
    if not rows:
        raise EmptyDatasetError(f"{path} contains no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1], "regression", name or Path(path).stem)


def parse_csv(path, target_column=-1, header=True, task="regression", name=None, delimiter=","):
    """Delimited numeric table; ``target_column`` is an index or a header name."""
    with _open_text(path) as fh:
        lines = [ln for ln in fh.read().splitlines()]
    start = 0
    names = None
    if header:
        while start < len(lines) and not lines[start].strip():
            start += 1
        if start >= len(lines):
            raise EmptyDatasetError(f"{path} is empty")
        names = [c.strip() for c in lines[start].split(delimiter)]
        start += 1
    rows, width = [], None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if width is None:
            width = len(fields)
        if len(fields) != width:
            raise WrongArityError(f"line {lineno}: expected {width} fields, got {len(fields)}",
                                  line_number=lineno)
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise MalformedLineError(f"line {lineno}: {exc}", line_number=lineno) from exc
    if not rows:
        raise EmptyDatasetError(f"{path} contains no data rows")
    arr = np.array(rows)
    if isinstance(target_column, str):
        if names is None or target_column not in names:
            raise ValueError(f"target column {target_column!r} not in header")
        target_column = names.index(target_column)
    t = target_column % arr.shape[1]
    X = np.delete(arr, t, axis=1)
    return Dataset(X, arr[:, t], task, name or Path(path).stem)


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(images_path, labels_path, name="idx"):
    """IDX image/label pair to flattened rows scaled to [0, 1] and integer labels."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16:
        raise TruncatedError("image file shorter than its 16-byte header")
    if len(lab) < 8:
        raise TruncatedError("label file shorter than its 8-byte header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if count != lcount:
        raise CountMismatchError(f"{count} images but {lcount} labels")
    need = count * rows * cols
    if len(img) - 16 < need:
        raise TruncatedError(f"image payload has {len(img) - 16} bytes, header declares {need}")
    if len(lab) - 8 < count:
        raise TruncatedError(f"label payload has {len(lab) - 8} bytes, header declares {count}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=need, offset=16)
    X = pixels.reshape(count, rows * cols).astype(float) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(int)
    return Dataset(X, y, "classification", name, {"shape": (rows, cols)})


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(count, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score; constant features keep unit scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def strata_labels(y, task, n_bins=10):
    """Class labels, or target decile index for regression."""
    y = np.asarray(y)
    if task == "classification":
        return y.astype(int)
    edges = np.quantile(y, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(edges, y, side="right")


def largest_remainder(counts, total):
    """Integer allocation proportional to ``counts`` summing to ``total``.

    Remainder ties go to the lower stratum index.
    """
    counts = np.asarray(counts, dtype=float)
    quota = counts * total / counts.sum()
    base = np.floor(quota).astype(int)
    left = int(total - base.sum())
    rem = quota - base
    order = np.lexsort((np.arange(rem.size), -rem))
    base[order[:left]] += 1
    return base


def stratified_fraction(data, fraction, seed, task=None, allow_empty=False, n_bins=10):
    """Draw ``round(fraction * n)`` indices with per-stratum proportional counts.

    Returns indices into ``data`` (in a seeded shuffled order).

    Raises
    ------
    TooFewSamplesError
        If the subset would have fewer than two samples, or a stratum would
        get no sample while ``allow_empty`` is False.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    task = task or data.task
    y = data.y if isinstance(data, Dataset) else np.asarray(data)
    n = y.shape[0]
    rng = np.random.default_rng(seed)
    if fraction == 1:
        return rng.permutation(n)
    total = int(round(fraction * n))
    if total < 2:
        raise TooFewSamplesError(f"fraction {fraction} of {n} samples leaves {total} < 2")
    strata = strata_labels(y, task, n_bins)
    keys, inverse, counts = np.unique(strata, return_inverse=True, return_counts=True)
    alloc = largest_remainder(counts, total)
    if not allow_empty and np.any(alloc == 0):
        empty = [int(k) for k, a in zip(keys, alloc) if a == 0]
        raise TooFewSamplesError(f"fraction {fraction} leaves strata {empty} empty")
    chosen = []
    for s, k in enumerate(alloc):
        members = np.flatnonzero(inverse == s)
        chosen.append(rng.choice(members, size=k, replace=False))
    idx = np.concatenate(chosen)
    return idx[rng.permutation(idx.size)]


def train_val_split(data, val_fraction=0.2, seed=0, task=None):
    """Stratified ``(train_idx, val_idx)`` split of ``data``."""
    task = task or data.task
    n = len(data)
    k = int(round(val_fraction * n))
    if k < 1 or n - k < 1:
        raise TooFewSamplesError(f"cannot split {n} samples with validation fraction {val_fraction}")
    val = stratified_fraction(data, k / n, seed, task, allow_empty=True) if k >= 2 else (
        np.random.default_rng(seed).permutation(n)[:1]
    )
    mask = np.ones(n, dtype=bool)
    mask[val] = False
    train = np.flatnonzero(mask)
    return train[np.random.default_rng([seed, 7]).permutation(train.size)], val


# --- synthetic generators -------------------------------------------------


def _orthogonal(rng, n, k):
    Q, R = np.linalg.qr(rng.standard_normal((n, k)))
    return Q * np.sign(np.diag(R))


def linear_gaussian(n, p, tau=1.0, seed=0, theta=None):
    """``y = X theta + tau * noise`` with standard normal features.

    The noise-free targets and ``tau^2`` are kept in ``meta``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    theta = rng.standard_normal(p) if theta is None else np.asarray(theta, dtype=float)
    f = X @ theta
    y = f + tau * rng.standard_normal(n)
    return Dataset(X, y, "regression", "linear_gaussian",
                   {"theta": theta, "f": f, "tau2": float(tau) ** 2})


def spiked_spectrum(n, sigma, seed=0, theta=None, tau=0.0):
    """Design whose sample covariance has exactly the eigenvalues ``sigma``.

    ``X = U diag(sqrt(n sigma)) V'`` with random orthonormal ``U`` (n x p)
    and orthogonal ``V``; targets follow a linear model plus optional noise.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.size
    if n < p:
        raise ValueError("need n >= p to realize the spectrum")
    rng = np.random.default_rng(seed)
    U = _orthogonal(rng, n, p)
    V = _orthogonal(rng, p, p)
    X = (U * np.sqrt(n * sigma)) @ V.T
    theta = rng.standard_normal(p) if theta is None else np.asarray(theta, dtype=float)
    f = X @ theta
    y = f + tau * rng.standard_normal(n)
    return Dataset(X, y, "regression", "spiked_spectrum",
                   {"sigma": sigma, "V": V, "theta": theta, "f": f, "tau2": float(tau) ** 2})


def separable_blobs(n, p=2, margin=1.0, seed=0, spread=1.0):
    """Two classes split by a hyperplane with a gap of at least ``margin``.

    Points are drawn around +-(margin/2 + spread) along a random unit
    direction ``u`` and any with ``|u'x| < margin / 2`` are pushed out, so
    ``y_i (2 u'x_i) >= margin`` holds for every sample.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(p)
    u /= np.linalg.norm(u)
    y = np.arange(n) % 2
    s = 2.0 * y - 1.0
    X = rng.standard_normal((n, p)) * spread
    proj = X @ u
    along = s * (0.5 * margin + np.abs(proj))
    X = X + np.outer(along - proj, u)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], "classification", "separable_blobs",
                   {"direction": u, "margin": margin})


def gaussian_mixture(n, p=2, n_classes=3, separation=1.5, seed=0):
    """Isotropic unit-variance Gaussian classes with means at ``separation`` apart scale."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, p))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    y = np.arange(n) % n_classes
    X = means[y] + rng.standard_normal((n, p))
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], "classification", "gaussian_mixture", {"means": means})


GENERATORS = {
    "linear_gaussian": linear_gaussian,
    "spiked_spectrum": spiked_spectrum,
    "separable_blobs": separable_blobs,
    "gaussian_mixture": gaussian_mixture,
}


def synthetic(kind, seed=0, **params):
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown generator {kind!r}; choose from {sorted(GENERATORS)}") from None
    return gen(seed=seed, **params)
