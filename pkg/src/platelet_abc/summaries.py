"""Summary statistics and the bounded discrepancy between two datasets.

A deposition series is reduced to 24 numbers: per-variable means and
variances over time, lag-1 autocorrelations, pairwise correlations between
variables, and lag-1 cross-correlations. Two datasets are compared by a
Bhattacharyya-type term on (mean, variance) plus an equally weighted
Euclidean term on the correlation entries.

Conventions pinned here (and relied on by the tests):

* variances are population variances (divide by T, not T-1);
* a correlation whose operands include a zero-variance series is 0;
* cross-correlations pair variable i leading variable j for i < j,
  i.e. corr(x_i[:-1], x_j[1:]);
* variances entering the Bhattacharyya term are floored at 1e-8.

The printed discrepancy formula admits values up to 1.5 (each of the 16
correlation slots can differ by 2), and that bound is what this module
guarantees; see the README note on the nominal [0, 1] range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .deposition import DepositionSeries
from .errors import DataFormatError

#: fixed lexicographic variable pairs for c and cc entries
PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

#: variance floor used by the Bhattacharyya term
SIGMA_FLOOR = 1e-8

SUMMARY_NAMES = tuple(
    [f"mu_{i + 1}" for i in range(4)]
    + [f"sigma_{i + 1}" for i in range(4)]
    + [f"ac_{i + 1}" for i in range(4)]
    + [f"c_{i + 1}{j + 1}" for i, j in PAIRS]
    + [f"cc_{i + 1}{j + 1}" for i, j in PAIRS]
)


@dataclass(frozen=True)
class SummaryVector:
    """The 24-component summary of one deposition series."""

    mu: np.ndarray      # (4,) means over time
    sigma: np.ndarray   # (4,) population variances over time
    ac: np.ndarray      # (4,) lag-1 autocorrelations
    c: np.ndarray       # (6,) pairwise correlations, PAIRS order
    cc: np.ndarray      # (6,) lag-1 cross-correlations, PAIRS order

    def __post_init__(self):
        for name, size in (("mu", 4), ("sigma", 4), ("ac", 4), ("c", 6), ("cc", 6)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise DataFormatError(f"summary field {name} must have shape ({size},)")
            object.__setattr__(self, name, arr)
        if np.any(self.sigma < 0):
            raise DataFormatError("summary variances must be >= 0")

    def as_array(self) -> np.ndarray:
        """Concatenated (24,) vector in SUMMARY_NAMES order."""
        return np.concatenate([self.mu, self.sigma, self.ac, self.c, self.cc])


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation with the degenerate rule: 0 if either side has
    zero variance."""
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a)
    vb = float(b @ b)
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float(a @ b) / math.sqrt(va * vb)


def summarize(x: DepositionSeries) -> SummaryVector:
    """Map a deposition series to its 24-component summary.

    Requires at least 3 time points (variance and lag-1 statistics need
    overlap to be meaningful).
    """
    data = x.variables()
    t = data.shape[0]
    if t < 3:
        raise DataFormatError(f"need a series of length >= 3, got {t}")
    mu = data.mean(axis=0)
    sigma = data.var(axis=0)   # population variance (1/T)
    ac = np.array([_pearson(data[:-1, i], data[1:, i]) for i in range(4)])
    c = np.array([_pearson(data[:, i], data[:, j]) for i, j in PAIRS])
    cc = np.array([_pearson(data[:-1, i], data[1:, j]) for i, j in PAIRS])
    return SummaryVector(mu=mu, sigma=sigma, ac=ac, c=c, cc=cc)


def bhattacharyya_rho(mu1, mu2, sigma1, sigma2) -> float:
    """Bhattacharyya coefficient between two (mean, variance) pairs.

    Symmetric, zero iff the pairs coincide. Variances are floored at
    SIGMA_FLOOR so constant series stay comparable; negative variances are
    rejected.
    """
    if sigma1 < 0 or sigma2 < 0:
        raise DataFormatError(f"variances must be >= 0, got {sigma1!r}, {sigma2!r}")
    s1 = max(float(sigma1), SIGMA_FLOOR)
    s2 = max(float(sigma2), SIGMA_FLOOR)
    ratio = 0.25 * math.log(0.25 * (s1 / s2 + s2 / s1 + 2.0))
    shift = 0.25 * (mu1 - mu2) ** 2 / (s1 + s2)
    return ratio + shift


def discrepancy_from_summaries(f1: SummaryVector, f2: SummaryVector) -> float:
    """Discrepancy between two summary vectors (see `discrepancy`)."""
    mean_term = sum(
        1.0 - math.exp(-bhattacharyya_rho(f1.mu[i], f2.mu[i], f1.sigma[i], f2.sigma[i]))
        for i in range(4)
    ) / 8.0
    sq = (
        np.sum((f1.ac - f2.ac) ** 2)
        + np.sum((f1.c - f2.c) ** 2)
        + np.sum((f1.cc - f2.cc) ** 2)
    )
    return mean_term + 0.5 * math.sqrt(sq / 16.0)


def discrepancy(x1: DepositionSeries, x2: DepositionSeries) -> float:
    """Bounded discrepancy between two deposition datasets.

    Equal-weighted combination of a Bhattacharyya term over the four
    (mean, variance) pairs and an RMS term over the 16 correlation slots.
    Symmetric; zero for identical datasets; at most 1.5 for correlations
    in [-1, 1].
    """
    return discrepancy_from_summaries(summarize(x1), summarize(x2))


class SummaryStatistics(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping deposition series to summary rows.

    transform(X) accepts a single DepositionSeries or an iterable of them
    and returns an (n, 24) array with columns in SUMMARY_NAMES order, so
    the summaries can feed any downstream sklearn tooling.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        if isinstance(X, DepositionSeries):
            X = [X]
        rows = []
        for item in X:
            if not isinstance(item, DepositionSeries):
                raise DataFormatError(
                    f"expected DepositionSeries, got {type(item).__name__}"
                )
            rows.append(summarize(item).as_array())
        return np.array(rows).reshape(len(rows), 24)

    def get_feature_names_out(self, input_features=None):
        return np.array(SUMMARY_NAMES)
