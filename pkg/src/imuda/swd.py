"""Sliced Wasserstein distance between equal-size empirical point sets.

Values are in squared-cost units and averaged per point: for ``n`` points and
``L`` directions the distance is ``sum((sorted_a - sorted_b)**2) / (n * L)``.
Multiply by ``n`` to recover the unnormalized per-slice sum.
"""
from dataclasses import dataclass
import itertools
import math

import numpy as np

from .exceptions import AlignmentBatchError, InputError, OracleSizeError
from .rng import stream

__all__ = [
    "ProjectionSet",
    "SwdValue",
    "sample_projections",
    "swd_empirical",
    "swd_gradient",
    "swd_value_and_gradient",
    "exact_1d_w2_squared",
    "exact_w2_squared_small",
]

DEFAULT_NUM_PROJECTIONS = 100
MAX_ORACLE_POINTS = 8


@dataclass(frozen=True)
class ProjectionSet:
    directions: np.ndarray  # (L, p), unit rows
    seed: int = None

    @property
    def num_projections(self):
        return self.directions.shape[0]

    @property
    def dim(self):
        return self.directions.shape[1]


@dataclass(frozen=True)
class SwdValue:
    value: float
    num_projections: int

    def __float__(self):
        return float(self.value)


def sample_projections(p, L=DEFAULT_NUM_PROJECTIONS, seed=0, rng=None):
    """Draw ``L`` directions uniformly on the unit sphere in ``R^p``.

    Normalized standard-normal vectors; rows that come out with zero norm are
    redrawn. Pass ``rng`` to draw from an existing generator instead of ``seed``.
    """
    if p < 1 or L < 1:
        raise InputError(f"need p >= 1 and L >= 1, got p={p}, L={L}")
    if rng is None:
        rng = stream(seed, "projections")
    gammas = rng.standard_normal((L, p))
    norms = np.linalg.norm(gammas, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        gammas[bad] = rng.standard_normal((int(bad.sum()), p))
        norms = np.linalg.norm(gammas, axis=1)
    return ProjectionSet(gammas / norms[:, None], seed)


def _directions(proj):
    if isinstance(proj, ProjectionSet):
        return proj.directions
    return np.atleast_2d(np.asarray(proj, dtype=np.float64))


def _check_pair(A, B, gammas):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise InputError("point sets must be 2-D arrays")
    if A.shape[0] != B.shape[0]:
        raise AlignmentBatchError(
            f"sliced Wasserstein needs equal sample counts, got {A.shape[0]} and {B.shape[0]}"
        )
    if A.shape[0] == 0:
        raise InputError("point sets are empty")
    if A.shape[1] != B.shape[1] or A.shape[1] != gammas.shape[1]:
        raise InputError(
            f"dimension mismatch: A has {A.shape[1]}, B has {B.shape[1]}, "
            f"projections have {gammas.shape[1]}"
        )
    return A, B


def swd_value_and_gradient(A, B, proj, grad=True):
    """Return ``(value, dA, dB)``; the gradients are ``None`` when ``grad`` is false.

    Sorting permutations are held fixed at their evaluated values, so at ties
    the gradient is the one for the stable-sort pairing.
    """
    gammas = _directions(proj)
    A, B = _check_pair(A, B, gammas)
    n, L = A.shape[0], gammas.shape[0]
    pa = A @ gammas.T
    pb = B @ gammas.T
    sa = np.argsort(pa, axis=0, kind="stable")
    sb = np.argsort(pb, axis=0, kind="stable")
    diff = np.take_along_axis(pa, sa, axis=0) - np.take_along_axis(pb, sb, axis=0)
    value = float(np.sum(diff * diff)) / (n * L)
    if not grad:
        return value, None, None
    coef = (2.0 / (n * L)) * diff
    gpa = np.empty_like(pa)
    gpb = np.empty_like(pb)
    np.put_along_axis(gpa, sa, coef, axis=0)
    np.put_along_axis(gpb, sb, -coef, axis=0)
    return value, gpa @ gammas, gpb @ gammas


def swd_empirical(A, B, proj):
    value, _, _ = swd_value_and_gradient(A, B, proj, grad=False)
    return SwdValue(value, _directions(proj).shape[0])


def swd_gradient(A, B, proj):
    _, dA, dB = swd_value_and_gradient(A, B, proj)
    return dA, dB


def exact_1d_w2_squared(a, b):
    """Mean squared difference of the sorted samples (closed-form 1-D W2^2)."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise AlignmentBatchError(f"unequal lengths {a.size} and {b.size}")
    if a.size == 0:
        raise InputError("empty samples")
    d = np.sort(a) - np.sort(b)
    return float(np.sum(d * d)) / a.size


def exact_w2_squared_small(A, B):
    """Exact squared W2 between two uniform empirical measures by enumeration.

    Tries all ``n!`` bijections, so only meant as a test oracle for ``n <= 8``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise AlignmentBatchError(f"shape mismatch {A.shape} vs {B.shape}")
    n = A.shape[0]
    if n > MAX_ORACLE_POINTS:
        raise OracleSizeError(f"enumeration oracle limited to n <= {MAX_ORACLE_POINTS}, got {n}")
    if n == 0:
        raise InputError("empty point sets")
    cost = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    rows = np.arange(n)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = cost[rows, perm].sum()
        if c < best:
            best = c
    return float(best) / n
