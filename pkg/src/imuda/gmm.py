"""Class-conditional Gaussian mixture over embeddings.

Parameters come straight from labeled embeddings (class frequencies, class
means and biased class scatter matrices); there is no EM. Component ``j`` is
class ``j``.
"""
from dataclasses import dataclass
import json

import numpy as np

from .exceptions import EstimationError, FormatError, InputError, NumericalError
from .rng import stream

__all__ = ["GmmModel", "estimate_map", "sample_gmm", "save_gmm", "load_gmm", "default_regularization"]

REG_SCALE = 1e-4
REG_FLOOR = 1e-8


@dataclass
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, p)
    covariances: np.ndarray  # (k, p, p), unregularized
    cholesky: np.ndarray  # (k, p, p), factors of covariances + reg * I
    regularization: np.ndarray  # (k,)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


def default_regularization(cov):
    """``1e-4`` times the mean covariance diagonal, floored at ``1e-8``."""
    return max(REG_SCALE * float(np.mean(np.diag(cov))), REG_FLOOR)


def _factor(cov, reg, j):
    p = cov.shape[0]
    try:
        return np.linalg.cholesky(cov + reg * np.eye(p))
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"Cholesky factorization failed for component {j} with regularization {reg:g}; "
            "try a larger eps"
        ) from None


def estimate_map(Z, labels, k, eps=None, covariance="full"):
    """Estimate mixture weights, means and covariances per class.

    Parameters
    ----------
    Z : array of shape (n, p)
        Source embeddings.
    labels : int array of shape (n,)
        Classes in ``[0, k)``; every class needs at least one point.
    k : int
        Number of classes / components.
    eps : float or None
        Ridge added to each covariance before factorization. ``None`` picks
        :func:`default_regularization` per component.
    covariance : {"full", "diag"}
        ``"diag"`` keeps only the variances, useful for very small classes.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if Z.ndim != 2:
        raise InputError(f"embeddings must be 2-D, got shape {Z.shape}")
    n, p = Z.shape
    if labels.shape != (n,):
        raise InputError(f"labels must have shape ({n},), got {labels.shape}")
    if k < 2:
        raise InputError(f"need k >= 2 components, got {k}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    if covariance not in ("full", "diag"):
        raise InputError(f"covariance must be 'full' or 'diag', got {covariance!r}")
    if eps is not None and eps < 0:
        raise InputError("eps must be >= 0")

    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EstimationError(f"class {int(empty[0])} has no samples; cannot estimate its component")

    weights = counts / n
    means = np.empty((k, p))
    covs = np.empty((k, p, p))
    chols = np.empty((k, p, p))
    regs = np.empty(k)
    for j in range(k):
        Zj = Z[labels == j]
        mu = Zj.mean(axis=0)
        centered = Zj - mu
        cov = centered.T @ centered / Zj.shape[0]
        cov = 0.5 * (cov + cov.T)
        if covariance == "diag":
            cov = np.diag(np.diag(cov))
        reg = default_regularization(cov) if eps is None else float(eps)
        means[j] = mu
        covs[j] = cov
        regs[j] = reg
        chols[j] = _factor(cov, reg, j)
    return GmmModel(weights, means, covs, chols, regs)


def sample_gmm(gmm, n, seed=0, rng=None):
    """Draw ``n`` points; returns ``(Z, components)``."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = stream(seed, "gmm-sampling")
    comps = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    u = rng.standard_normal((n, gmm.dim))
    Z = gmm.means[comps] + np.einsum("nij,nj->ni", gmm.cholesky[comps], u)
    return Z, comps


GMM_FORMAT = "imuda-gmm/1"


def save_gmm(gmm, path):
    doc = {
        "format": GMM_FORMAT,
        "k": int(gmm.n_components),
        "p": int(gmm.dim),
        "eps": gmm.regularization.tolist(),
        "components": [
            {
                "weight": float(gmm.weights[j]),
                "mean": gmm.means[j].tolist(),
                "covariance": gmm.covariances[j].ravel().tolist(),
            }
            for j in range(gmm.n_components)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, allow_nan=False)
        f.write("\n")


def load_gmm(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
    if doc.get("format") != GMM_FORMAT:
        raise FormatError(f"{path}: not a GMM file")
    k, p = doc["k"], doc["p"]
    comps = doc["components"]
    if len(comps) != k or len(doc["eps"]) != k:
        raise FormatError(f"{path}: expected {k} components")
    weights = np.array([c["weight"] for c in comps], dtype=np.float64)
    means = np.array([c["mean"] for c in comps], dtype=np.float64).reshape(k, p)
    covs = np.array([c["covariance"] for c in comps], dtype=np.float64).reshape(k, p, p)
    regs = np.array(doc["eps"], dtype=np.float64)
    chols = np.stack([_factor(covs[j], regs[j], j) for j in range(k)])
    return GmmModel(weights, means, covs, chols, regs)
