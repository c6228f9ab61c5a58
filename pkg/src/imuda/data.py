"""Datasets, synthetic domain-shift generators and file I/O."""
from dataclasses import dataclass
import csv
import struct

import numpy as np

from .exceptions import ConfigError, FormatError, InputError
from .rng import stream

__all__ = [
    "Dataset",
    "ShiftSpec",
    "gen_two_moons",
    "gen_blobs",
    "load_csv",
    "save_csv",
    "load_idx",
    "parse_shift",
]

# Two moons are translated so that the union of both half-circles is centred
# at the origin, which makes rotations act about the data centre.
MOONS_CENTER = np.array([0.5, 0.25])


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray = None
    k: int = None
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise InputError(f"dataset {self.name!r} has non-finite features")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise InputError(f"labels must have shape ({self.n},), got {self.labels.shape}")
            if self.k is None:
                self.k = int(self.labels.max()) + 1 if self.n else 0
            if self.n and (self.labels.min() < 0 or self.labels.max() >= self.k):
                raise InputError(f"labels must lie in [0, {self.k})")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def labeled(self):
        return self.labels is not None

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.X[idx], labels, self.k, self.name)

    def unlabeled(self):
        return Dataset(self.X, None, None, self.name)


@dataclass(frozen=True)
class ShiftSpec:
    """A covariate shift applied to target features.

    ``rotation`` turns the first two coordinates counter-clockwise by
    ``magnitude`` degrees about the origin, ``translation`` adds the offset
    vector (zero-padded to the feature width) and ``scaling`` multiplies by a
    positive factor.
    """

    kind: str = "rotation"
    magnitude: object = 0.0

    def __post_init__(self):
        if self.kind == "rotation":
            if not 0.0 <= float(self.magnitude) < 360.0:
                raise ConfigError(f"rotation must lie in [0, 360), got {self.magnitude}")
        elif self.kind == "translation":
            object.__setattr__(self, "magnitude", tuple(float(v) for v in np.atleast_1d(self.magnitude)))
        elif self.kind == "scaling":
            if not float(self.magnitude) > 0.0:
                raise ConfigError(f"scaling factor must be > 0, got {self.magnitude}")
        else:
            raise ConfigError(f"unknown shift kind {self.kind!r}")

    def _rotation(self, degrees):
        a = np.deg2rad(degrees)
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])

    def _offset(self, d):
        off = np.zeros(d)
        if len(self.magnitude) > d:
            raise ConfigError(f"translation has {len(self.magnitude)} entries for {d} features")
        off[: len(self.magnitude)] = self.magnitude
        return off

    def apply(self, X):
        X = np.array(X, dtype=np.float64)
        if self.kind == "rotation":
            X[:, :2] = X[:, :2] @ self._rotation(float(self.magnitude)).T
        elif self.kind == "translation":
            X += self._offset(X.shape[1])
        else:
            X *= float(self.magnitude)
        return X

    def invert(self, X):
        X = np.array(X, dtype=np.float64)
        if self.kind == "rotation":
            X[:, :2] = X[:, :2] @ self._rotation(float(self.magnitude))
        elif self.kind == "translation":
            X -= self._offset(X.shape[1])
        else:
            X /= float(self.magnitude)
        return X

    def describe(self):
        if self.kind == "rotation":
            return f"rot:{float(self.magnitude):g}"
        if self.kind == "translation":
            return "trans:" + ",".join(f"{v:g}" for v in self.magnitude)
        return f"scale:{float(self.magnitude):g}"


def parse_shift(text):
    """Parse ``rot:DEG``, ``trans:DX,DY[,...]`` or ``scale:FACTOR``."""
    kind, _, value = text.partition(":")
    try:
        if kind == "rot":
            return ShiftSpec("rotation", float(value))
        if kind == "trans":
            return ShiftSpec("translation", [float(v) for v in value.split(",")])
        if kind == "scale":
            return ShiftSpec("scaling", float(value))
    except ValueError:
        raise ConfigError(f"bad shift value in {text!r}") from None
    raise ConfigError(f"shift must be rot:DEG, trans:DX,DY or scale:F, got {text!r}")


def _moons(n, noise_sigma, rng):
    half = n // 2
    t = rng.uniform(0.0, np.pi, size=n)
    X = np.empty((n, 2))
    X[:half, 0] = np.cos(t[:half])
    X[:half, 1] = np.sin(t[:half])
    X[half:, 0] = 1.0 - np.cos(t[half:])
    X[half:, 1] = 0.5 - np.sin(t[half:])
    X -= MOONS_CENTER
    if noise_sigma > 0:
        X += noise_sigma * rng.standard_normal(X.shape)
    y = np.repeat([0, 1], half)
    order = rng.permutation(n)
    return X[order], y[order]


def gen_two_moons(n=1000, noise_sigma=0.1, shift=None, seed=0):
    """Source and shifted target two-moons datasets with ``n`` points each.

    Both domains sample angles uniformly along each half-circle; the target
    uses its own random stream and is then transformed by ``shift``.
    """
    if n < 2 or n % 2:
        raise ConfigError(f"n must be even and >= 2, got {n}")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    shift = shift or ShiftSpec("rotation", 0.0)
    Xs, ys = _moons(n, noise_sigma, stream(seed, "moons-source"))
    Xt, yt = _moons(n, noise_sigma, stream(seed, "moons-target"))
    source = Dataset(Xs, ys, 2, "twomoons-source")
    target = Dataset(shift.apply(Xt), yt, 2, f"twomoons-target-{shift.describe()}")
    return source, target


def blob_centers(k, separation, d):
    """``k`` centres on a circle in the first two coordinates, neighbours ``separation`` apart."""
    radius = separation / (2.0 * np.sin(np.pi / k))
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.zeros((k, d))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def _blobs(centers, n_per_class, noise_sigma, rng):
    k, d = centers.shape
    y = np.repeat(np.arange(k), n_per_class)
    X = centers[y] + noise_sigma * rng.standard_normal((y.size, d))
    order = rng.permutation(y.size)
    return X[order], y[order]


def gen_blobs(k=3, n_per_class=100, separation=5.0, shift=None, d=2, seed=0, noise_sigma=1.0):
    if k < 2 or d < 2:
        raise ConfigError(f"need k >= 2 and d >= 2, got k={k}, d={d}")
    shift = shift or ShiftSpec("translation", [0.0, 0.0])
    centers = blob_centers(k, separation, d)
    Xs, ys = _blobs(centers, n_per_class, noise_sigma, stream(seed, "blobs-source"))
    Xt, yt = _blobs(centers, n_per_class, noise_sigma, stream(seed, "blobs-target"))
    source = Dataset(Xs, ys, k, "blobs-source")
    target = Dataset(shift.apply(Xt), yt, k, f"blobs-target-{shift.describe()}")
    return source, target


def save_csv(dataset, path, with_labels=True):
    """Write ``f0..f{d-1}[,label]`` with shortest round-trip float text."""
    labeled = with_labels and dataset.labeled
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        header = [f"f{j}" for j in range(dataset.d)]
        w.writerow(header + ["label"] if labeled else header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.X[i]]
            if labeled:
                row.append(int(dataset.labels[i]))
            w.writerow(row)


def load_csv(path, k=None, name=None):
    """Read a dataset CSV.

    The label column may be absent or entirely blank, in which case the dataset
    is unlabeled. ``k`` bounds the labels when given; otherwise it is inferred.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty file", line=1)
    header = [h.strip() for h in rows[0]]
    has_label = bool(header) and header[-1] == "label"
    feats = header[:-1] if has_label else header
    if not feats or feats != [f"f{j}" for j in range(len(feats))]:
        raise FormatError(f"{path}: header must be f0,...,f{{d-1}}[,label]", line=1)
    d = len(feats)
    X = np.empty((len(rows) - 1, d))
    raw_labels = []
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise FormatError(f"{path}: expected {len(header)} fields, got {len(row)}", line=line)
        try:
            X[i] = [float(v) for v in row[:d]]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric feature ({exc})", line=line) from None
        if not np.all(np.isfinite(X[i])):
            raise FormatError(f"{path}: non-finite feature", line=line)
        if has_label:
            raw_labels.append(row[d].strip())

    labels = None
    if has_label and any(raw_labels):
        labels = np.empty(len(raw_labels), dtype=np.int64)
        for i, text in enumerate(raw_labels):
            try:
                labels[i] = int(text)
            except ValueError:
                raise FormatError(f"{path}: bad label {text!r}", line=i + 2) from None
            if labels[i] < 0 or (k is not None and labels[i] >= k):
                raise FormatError(f"{path}: label {labels[i]} outside [0, {k})", line=i + 2)
    return Dataset(X, labels, k if labels is not None else None, name or str(path))


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise FormatError(f"{path}: expected {int(np.prod(dims))} bytes of data, found {body.size}")
    return body.reshape(dims)


def load_idx(images_path, labels_path, limit=None):
    """Load an IDX image/label pair as a flattened dataset with pixels in [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), 10 if labels.size and labels.max() < 10 else None,
                   str(images_path))
