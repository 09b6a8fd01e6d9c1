"""Input checks shared by the estimator facade."""

from __future__ import annotations

import numpy as np

from .errors import InvalidDimension


def check_feature_matrix(x, name="X") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidDimension(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError(f"{name} has no rows")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_sources(xs, ys):
    """Normalize multi-source input into [(x, y), ...] with one shared width.

    Accepts a single (X, y) pair or parallel sequences of them.
    """
    if isinstance(xs, np.ndarray) and xs.ndim == 2:
        xs, ys = [xs], [ys]
    if len(xs) != len(ys):
        raise ValueError(f"{len(xs)} feature sets but {len(ys)} label sets")
    if len(xs) == 0:
        raise ValueError("need at least one source")
    out = []
    width = None
    for i, (x, y) in enumerate(zip(xs, ys)):
        x = check_feature_matrix(x, name=f"source {i}")
        y = np.asarray(y)
        if y.shape != (x.shape[0],):
            raise InvalidDimension(f"source {i}: labels must be 1-D and match rows")
        if width is None:
            width = x.shape[1]
        elif x.shape[1] != width:
            raise InvalidDimension(
                f"source {i} has {x.shape[1]} features, source 0 has {width}"
            )
        out.append((x, y))
    return out, width
