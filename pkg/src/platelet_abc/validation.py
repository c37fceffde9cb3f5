"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .deposition import DepositionSeries
from .errors import DataFormatError


def as_deposition_series(X) -> DepositionSeries:
    """Coerce estimator input into a DepositionSeries.

    Accepts a DepositionSeries, anything exposing one as `.series`
    (e.g. an ObservedDataset), or a (T, 5) array whose columns are
    (t, S_agg, N_agg, N_plt, N_act).
    """
    if isinstance(X, DepositionSeries):
        return X
    series = getattr(X, "series", None)
    if isinstance(series, DepositionSeries):
        return series
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 5:
        return DepositionSeries(
            times=arr[:, 0], s_agg=arr[:, 1], n_agg=arr[:, 2],
            n_plt=arr[:, 3], n_act=arr[:, 4],
        )
    raise DataFormatError(
        "expected a DepositionSeries, an object with a .series attribute, "
        f"or a (T, 5) array; got {type(X).__name__} with shape "
        f"{getattr(arr, 'shape', None)}"
    )


def check_seed(seed) -> int:
    """Seeds must be non-negative integers (they key a counter-based RNG)."""
    value = int(seed)
    if value < 0:
        raise DataFormatError(f"seed must be >= 0, got {seed!r}")
    return value
