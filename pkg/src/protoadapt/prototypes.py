"""Class-conditional Gaussian prototypes over latent encodings.

Each class present in a labeled latent batch is summarized by its empirical
mean and biased covariance (divide by the class count). Prototypes are the
only statistics a source ever shares: downstream stages sample surrogate
batches from them instead of touching source rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimension, MissingClass
from .linalg import cholesky, sample_gaussian_batch

__all__ = ["ClassPrototypes", "fit_prototypes", "regularize_covariance"]

#: Relative ridge added to each covariance before factorization.
COV_RIDGE_REL = 1e-4
#: Absolute floor for the ridge (covers all-zero covariances).
COV_RIDGE_ABS = 1e-6


def regularize_covariance(cov: np.ndarray) -> np.ndarray:
    """Add a trace-scaled ridge so the factorization never hits a rank fault.

    eps = max(COV_RIDGE_REL * trace(cov) / d, COV_RIDGE_ABS). A class with a
    single sample has an all-zero covariance; the floor turns it into a
    tight isotropic Gaussian rather than a crash.
    """
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    eps = max(COV_RIDGE_REL * float(np.trace(cov)) / d, COV_RIDGE_ABS)
    return cov + eps * np.eye(d)


@dataclass
class ClassPrototypes:
    """Per-class Gaussian summaries: labels, means, covariances, counts.

    ``labels`` holds the class ids that were actually present, sorted
    ascending; arrays are aligned to it. Covariances are stored raw
    (un-ridged); factors are computed on demand and cached.
    """

    labels: np.ndarray  # (C,) int64, sorted
    means: np.ndarray  # (C, d)
    covs: np.ndarray  # (C, d, d)
    counts: np.ndarray  # (C,) int64
    _chols: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def empirical_distribution(self) -> np.ndarray:
        """Class frequencies observed at fit time, aligned to ``labels``."""
        return self.counts / self.counts.sum()

    def _factors(self) -> np.ndarray:
        if self._chols is None:
            chols = np.empty_like(self.covs)
            for i in range(self.n_classes):
                chols[i] = cholesky(regularize_covariance(self.covs[i]))
            self._chols = chols
        return self._chols

    def index_of(self, label: int) -> int:
        pos = np.searchsorted(self.labels, label)
        if pos == len(self.labels) or self.labels[pos] != label:
            raise MissingClass(int(label))
        return int(pos)

    def restrict(self, full_probs: np.ndarray, all_labels: np.ndarray) -> np.ndarray:
        """Project a distribution over ``all_labels`` onto the classes held here.

        Mass on absent classes is dropped and the rest renormalized; that is
        reported as a warning because predictions for those classes can only
        come from other ensemble members.
        """
        full_probs = np.asarray(full_probs, dtype=np.float64)
        all_labels = np.asarray(all_labels)
        if full_probs.shape != all_labels.shape:
            raise InvalidDimension("distribution and label list differ in length")
        keep = np.isin(all_labels, self.labels)
        probs = full_probs[keep]
        dropped = 1.0 - probs.sum()
        if dropped > 1e-12:
            warnings.warn(
                f"dropping {dropped:.3g} probability mass on classes absent "
                "from the prototypes",
                stacklevel=2,
            )
        total = probs.sum()
        if total <= 0:
            raise MissingClass(int(all_labels[np.argmax(full_probs)]))
        order = np.argsort(all_labels[keep])
        return (probs / total)[order]

    def sample(
        self,
        n: int,
        rng: np.random.Generator,
        class_probs: np.ndarray | None = None,
    ):
        """Draw (x, y) from the Gaussian mixture the prototypes define.

        ``class_probs`` is aligned to ``labels``; None means the empirical
        fit-time distribution. Labels are drawn first, then each class's
        block is filled batch-wise, so the draw order is deterministic for a
        given generator state.
        """
        if class_probs is None:
            probs = self.empirical_distribution()
        else:
            probs = np.asarray(class_probs, dtype=np.float64)
            if probs.shape != (self.n_classes,):
                raise InvalidDimension(
                    f"class_probs has shape {probs.shape}, expected ({self.n_classes},)"
                )
            if np.any(probs < 0):
                raise ValueError("class_probs must be non-negative")
            probs = probs / probs.sum()
        picks = rng.choice(self.n_classes, size=n, p=probs)
        chols = self._factors()
        x = np.empty((n, self.dim))
        for c in range(self.n_classes):
            mask = picks == c
            k = int(mask.sum())
            if k:
                x[mask] = sample_gaussian_batch(self.means[c], chols[c], k, rng)
        return x, self.labels[picks]


def fit_prototypes(z: np.ndarray, y: np.ndarray) -> ClassPrototypes:
    """Empirical per-class mean and biased covariance of a latent batch.

    Only classes that occur in ``y`` get a prototype. The covariance
    divides by the class count (not count - 1), matching the maximum
    likelihood estimate for a Gaussian with known membership.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    if z.ndim != 2:
        raise InvalidDimension(f"expected 2-D latents, got shape {z.shape}")
    if y.shape != (z.shape[0],):
        raise InvalidDimension("labels must be 1-D and match the batch size")
    if z.shape[0] == 0:
        raise ValueError("cannot fit prototypes on an empty batch")
    labels = np.unique(y)
    d = z.shape[1]
    means = np.empty((len(labels), d))
    covs = np.empty((len(labels), d, d))
    counts = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels):
        block = z[y == c]
        counts[i] = block.shape[0]
        means[i] = block.mean(axis=0)
        centered = block - means[i]
        covs[i] = centered.T @ centered / block.shape[0]
    return ClassPrototypes(labels.astype(np.int64), means, covs, counts)
