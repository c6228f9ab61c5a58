"""Evaluation, computable bound terms and 2-D embedding projection."""
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DegenerateInputError, InputError
from .nn import forward_classifier, forward_encoder
from .rng import stream
from .swd import sample_projections, swd_empirical

__all__ = ["EvalReport", "BoundDiagnostics", "evaluate", "predict", "bound_diagnostics", "pca2"]


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list
    confusion: list  # rows are true classes, columns predictions
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass
class BoundDiagnostics:
    source_error: float
    swd_source_pseudo: float
    swd_target_pseudo: float
    one_minus_tau: float
    n_source: int
    n_target: int
    n_compared: int
    num_projections: int

    def to_dict(self):
        return asdict(self)


def predict(params, X):
    return forward_classifier(params, forward_encoder(params, X)).argmax(axis=1)


def evaluate(params, data):
    if not data.labeled:
        raise InputError(f"dataset {data.name!r} has no labels to evaluate against")
    if data.n == 0:
        raise InputError("cannot evaluate an empty dataset")
    k = params.arch.num_classes
    pred = predict(params, data.X)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (data.labels, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / support, np.nan)
    return EvalReport(
        accuracy=float(np.trace(confusion)) / data.n,
        per_class_accuracy=[None if np.isnan(a) else float(a) for a in per_class],
        confusion=confusion.tolist(),
        n=int(data.n),
    )


def _subsample(Z, m, rng):
    if Z.shape[0] == m:
        return Z
    return Z[np.sort(rng.choice(Z.shape[0], size=m, replace=False))]


def bound_diagnostics(params, source, target, pseudo, tau, L=100, seed=0):
    """Report the computable right-hand-side terms of the target error bound.

    The three embedding sets are subsampled (seeded, without replacement) to
    the smallest of their sizes, and both distances share one projection set.
    """
    if source.n == 0 or target.n == 0 or len(pseudo) == 0:
        raise InputError("bound diagnostics need non-empty source, target and pseudo sets")
    zs = forward_encoder(params, source.X)
    zt = forward_encoder(params, target.X)
    zp = np.asarray(pseudo.Z, dtype=np.float64)
    m = min(zs.shape[0], zt.shape[0], zp.shape[0])
    rng = stream(seed, "diagnostics")
    zs_m, zt_m, zp_m = (_subsample(Z, m, rng) for Z in (zs, zt, zp))
    proj = sample_projections(zs.shape[1], L, rng=stream(seed, "diagnostics-projections"))
    return BoundDiagnostics(
        source_error=1.0 - evaluate(params, source).accuracy,
        swd_source_pseudo=swd_empirical(zs_m, zp_m, proj).value,
        swd_target_pseudo=swd_empirical(zt_m, zp_m, proj).value,
        one_minus_tau=1.0 - float(tau),
        n_source=int(source.n),
        n_target=int(target.n),
        n_compared=int(m),
        num_projections=int(L),
    )


def pca2(Z):
    """Coordinates of ``Z`` on its top two principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    Inputs with a single column are padded with a zero second coordinate.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise InputError(f"pca2 needs at least 2 rows, got shape {Z.shape}")
    centered = Z - Z.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(Z).max()):
        raise DegenerateInputError("all rows are identical; principal axes are undefined")
    axes = np.zeros((2, Z.shape[1]))
    r = min(2, vt.shape[0])
    axes[:r] = vt[:r]
    for i in range(r):
        j = np.argmax(np.abs(axes[i]))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return centered @ axes.T
