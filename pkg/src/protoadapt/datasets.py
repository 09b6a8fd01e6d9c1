"""Synthetic multi-domain datasets and the feature-file formats.

Domains are per-class Gaussian clouds pushed through a rigid transform
(rotation, scale, translation); rotating the transform between domains
produces a controllable distribution shift. Files move between tools
either as the binary SMFT format (canonical) or CSV (convenience).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import InvalidDimension, ParseError
from .linalg import cholesky, sample_gaussian_batch

__all__ = [
    "LabeledDataset",
    "DomainSpec",
    "gen_domain",
    "rotation_matrix",
    "blobs3",
    "BLOBS3_ANGLES_DEG",
    "write_features",
    "read_features",
    "write_csv",
    "read_csv",
]

MAGIC = b"SMFT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")  # magic, version, n, d, has_labels


@dataclass
class LabeledDataset:
    """Feature matrix with integer labels; empty labels mark a target-only set."""

    x: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise InvalidDimension(f"features must be 2-D, got shape {self.x.shape}")
        if self.y.size and self.y.shape != (self.x.shape[0],):
            raise InvalidDimension("labels must be empty or match the row count")
        if self.y.size and self.y.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("features must be finite")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def labeled(self) -> bool:
        return self.y.size > 0


@dataclass
class DomainSpec:
    """Recipe for one synthetic domain.

    The base layout (per-class means/covariances) is shared across domains
    of a task; the transform fields are what make one domain differ from
    another. Draw order is deterministic in ``seed`` alone, so two specs
    with the same seed and base layout produce pointwise-corresponding
    samples — handy for symmetry checks.
    """

    means: np.ndarray  # (C, d)
    covs: np.ndarray  # (C, d, d)
    n: int = 500
    rotation: float = 0.0  # radians, applied in the first two feature axes
    translation: np.ndarray | None = None
    scale: float = 1.0
    class_weights: np.ndarray | None = None  # None → uniform
    seed: int = 0
    name: str = "domain"

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        c, d = self.means.shape
        if self.covs.shape != (c, d, d):
            raise InvalidDimension(f"covs must have shape {(c, d, d)}, got {self.covs.shape}")
        if self.n < c:
            raise ValueError("sample count must be at least the class count")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.shape != (c,) or np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("class_weights must be a length-C distribution summing to 1")
            self.class_weights = w
        if self.translation is not None:
            t = np.asarray(self.translation, dtype=np.float64)
            if t.shape != (d,):
                raise InvalidDimension(f"translation must have shape ({d},)")
            self.translation = t

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def rotation_matrix(theta: float, d: int) -> np.ndarray:
    """Planar rotation in the first two axes, identity elsewhere."""
    if d < 2:
        raise InvalidDimension("rotation needs at least 2 dimensions")
    r = np.eye(d)
    c, s = np.cos(theta), np.sin(theta)
    r[0, 0] = c
    r[0, 1] = -s
    r[1, 0] = s
    r[1, 1] = c
    return r


def gen_domain(spec: DomainSpec) -> LabeledDataset:
    """Sample the per-class clouds, then apply scale → rotation → translation."""
    gen = rngmod.stream(spec.seed, "gen")
    weights = (
        spec.class_weights
        if spec.class_weights is not None
        else np.full(spec.n_classes, 1.0 / spec.n_classes)
    )
    y = gen.choice(spec.n_classes, size=spec.n, p=weights)
    x = np.empty((spec.n, spec.dim))
    for c in range(spec.n_classes):
        mask = y == c
        k = int(mask.sum())
        if k:
            chol = cholesky(spec.covs[c])
            x[mask] = sample_gaussian_batch(spec.means[c], chol, k, gen)
    x = spec.scale * x @ rotation_matrix(spec.rotation, spec.dim).T
    if spec.translation is not None:
        x = x + spec.translation
    return LabeledDataset(x, y, name=spec.name)


# --------------------------------------------------------------------------
# The blobs3 benchmark
# --------------------------------------------------------------------------

#: Domain rotation angles in degrees: three sources plus the target.
BLOBS3_ANGLES_DEG = (0.0, 15.0, 30.0, 55.0)
_BLOBS3_RADII = (2.5, 4.0, 5.5, 7.0)
_BLOBS3_SIGMA = 0.6
_BLOBS3_TARGET_WEIGHTS = (0.4, 0.3, 0.2, 0.1)


def _blobs3_layout():
    """Four classes on distinct rings so no rotation maps one onto another."""
    angles = np.deg2rad([0.0, 90.0, 180.0, 270.0])
    radii = np.asarray(_BLOBS3_RADII)
    means = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    covs = np.tile((_BLOBS3_SIGMA**2) * np.eye(2), (4, 1, 1))
    return means, covs


def blobs3(seed: int = 0, n: int = 500):
    """Three rotated source domains plus a further-rotated, imbalanced target.

    Returns ``(sources, target)`` as LabeledDatasets. The target keeps its
    labels so runs can be scored, but the pipeline itself never sees them.
    """
    means, covs = _blobs3_layout()
    domains = []
    for i, deg in enumerate(BLOBS3_ANGLES_DEG):
        is_target = i == len(BLOBS3_ANGLES_DEG) - 1
        spec = DomainSpec(
            means=means,
            covs=covs,
            n=n,
            rotation=np.deg2rad(deg),
            class_weights=np.asarray(_BLOBS3_TARGET_WEIGHTS) if is_target else None,
            seed=int(rngmod.path_key(seed, "blobs3", i)),
            name=f"target-{deg:g}deg" if is_target else f"source-{deg:g}deg",
        )
        domains.append(gen_domain(spec))
    return domains[:-1], domains[-1]


# --------------------------------------------------------------------------
# SMFT binary format
# --------------------------------------------------------------------------
#
# Layout (little-endian):
#   offset 0   magic       4 bytes  b"SMFT"
#   offset 4   version     u32      currently 1
#   offset 8   n           u64      row count
#   offset 16  d           u64      feature count
#   offset 24  has_labels  u8       0 or 1
#   offset 25  features    n*d f64  row-major
#   then       labels      n u32    only if has_labels == 1
#
# Total size must equal the header-implied size exactly.


def write_features(dataset: LabeledDataset, path) -> None:
    """Serialize a dataset to the SMFT binary format."""
    has_labels = 1 if dataset.labeled else 0
    if has_labels and dataset.y.max(initial=0) >= 2**32:
        raise ValueError("labels exceed the u32 range of the format")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dataset.n, dataset.d, has_labels))
        fh.write(np.ascontiguousarray(dataset.x, dtype="<f8").tobytes())
        if has_labels:
            fh.write(dataset.y.astype("<u4").tobytes())


def read_features(path) -> LabeledDataset:
    """Parse an SMFT file, reporting the byte offset of any malformation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ParseError(f"file too short for the {_HEADER.size}-byte header", len(blob))
    magic, version, n, d, has_labels = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    if has_labels not in (0, 1):
        raise ParseError(f"has_labels must be 0 or 1, got {has_labels}", 24)
    expected = _HEADER.size + n * d * 8 + (n * 4 if has_labels else 0)
    if len(blob) != expected:
        raise ParseError(
            f"file is {len(blob)} bytes but the header implies {expected}",
            min(len(blob), expected),
        )
    x = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    if has_labels:
        y = np.frombuffer(blob, dtype="<u4", count=n, offset=_HEADER.size + n * d * 8)
        y = y.astype(np.int64)
    else:
        y = np.empty(0, dtype=np.int64)
    return LabeledDataset(x.copy(), y, name="")


# --------------------------------------------------------------------------
# CSV convenience format
# --------------------------------------------------------------------------


def write_csv(dataset: LabeledDataset, path) -> None:
    """Header f0..f{d-1}[,label]; full-precision floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"f{i}" for i in range(dataset.d)]
        if dataset.labeled:
            header.append("label")
        writer.writerow(header)
        for i in range(dataset.n):
            # plain-float repr round-trips exactly (numpy scalar repr does not)
            row = [repr(float(v)) for v in dataset.x[i]]
            if dataset.labeled:
                row.append(str(int(dataset.y[i])))
            writer.writerow(row)


def read_csv(path) -> LabeledDataset:
    """Inverse of write_csv; any trailing 'label' column becomes the labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file", 0) from None
        has_labels = bool(header) and header[-1] == "label"
        d = len(header) - (1 if has_labels else 0)
        if header[:d] != [f"f{i}" for i in range(d)]:
            raise ParseError(f"unexpected CSV header {header!r}", 0)
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"row {lineno} has {len(row)} fields, expected {len(header)}", 0)
            xs.append([float(v) for v in row[:d]])
            if has_labels:
                ys.append(int(row[d]))
    x = np.asarray(xs, dtype=np.float64).reshape(len(xs), d)
    y = np.asarray(ys, dtype=np.int64) if has_labels else np.empty(0, dtype=np.int64)
    return LabeledDataset(x, y, name="")
