"""Confident pseudo-dataset drawn from the embedding GMM.

Candidates come from a fixed chunked stream (chunk ``c`` uses its own seeded
generator), so the raw sequence of points does not depend on the threshold or
on how many points are requested.
"""
from dataclasses import dataclass
import csv
import logging

import numpy as np

from .exceptions import FormatError, GenerationError, InputError
from .gmm import sample_gmm
from .nn import forward_classifier
from .rng import stream

__all__ = ["PseudoDataset", "confident_mask", "generate_pseudo", "save_pseudo_csv", "load_pseudo_csv"]

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.95
DEFAULT_MAX_ATTEMPT_FACTOR = 100
CHUNK_SIZE = 1024


@dataclass
class PseudoDataset:
    Z: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    tau: float
    acceptance_rate: float
    stream_index: np.ndarray = None  # position of each point in the raw candidate stream
    missing_classes: tuple = ()

    def __len__(self):
        return self.Z.shape[0]


def confident_mask(params, Z, tau):
    """Return ``(mask, labels, confidences)`` for candidates ``Z``."""
    probs = forward_classifier(params, Z)
    conf = probs.max(axis=1)
    return conf > tau, probs.argmax(axis=1), conf


def generate_pseudo(gmm, params, tau=DEFAULT_TAU, n_target=None,
                    max_attempt_factor=DEFAULT_MAX_ATTEMPT_FACTOR, seed=0):
    """Rejection-sample ``n_target`` points whose classifier confidence exceeds ``tau``.

    Gives up after ``max_attempt_factor * n_target`` candidates. Returns what was
    accepted so far if at least one point passed; otherwise raises
    :class:`GenerationError` with the highest confidence seen.
    """
    if not 0.0 <= tau < 1.0:
        raise InputError(f"tau must lie in [0, 1), got {tau}")
    if n_target is None or n_target < 1:
        raise InputError(f"n_target must be >= 1, got {n_target}")
    if params.arch.embedding_dim != gmm.dim:
        raise InputError(
            f"classifier expects {params.arch.embedding_dim}-dim embeddings, GMM has {gmm.dim}"
        )
    budget = max_attempt_factor * n_target
    kept_z, kept_y, kept_c, kept_i = [], [], [], []
    accepted = attempted = 0
    best = 0.0
    chunk = 0
    while accepted < n_target and attempted < budget:
        size = min(CHUNK_SIZE, budget - attempted)
        Z, _ = sample_gmm(gmm, CHUNK_SIZE, rng=stream(seed, "pseudo", chunk))
        Z = Z[:size]
        mask, labels, conf = confident_mask(params, Z, tau)
        best = max(best, float(conf.max()))
        idx = np.flatnonzero(mask)[: n_target - accepted]
        if idx.size:
            # stop counting attempts at the candidate that filled the quota
            used = size if accepted + idx.size < n_target else int(idx[-1]) + 1
        else:
            used = size
        kept_z.append(Z[idx])
        kept_y.append(labels[idx])
        kept_c.append(conf[idx])
        kept_i.append(idx + chunk * CHUNK_SIZE)
        accepted += idx.size
        attempted += used
        chunk += 1

    if accepted == 0:
        raise GenerationError(
            f"no candidate exceeded tau={tau} in {attempted} attempts "
            f"(max confidence seen {best:.6f}); lower tau or check the classifier",
            max_confidence=best,
        )
    labels = np.concatenate(kept_y)
    missing = tuple(int(j) for j in np.setdiff1d(np.arange(params.arch.num_classes), labels))
    if missing:
        log.warning("pseudo-dataset has no points for classes %s", list(missing))
    if accepted < n_target:
        log.warning("pseudo-dataset stopped at %d of %d points (attempt budget)", accepted, n_target)
    return PseudoDataset(
        np.concatenate(kept_z),
        labels,
        np.concatenate(kept_c),
        float(tau),
        accepted / attempted,
        np.concatenate(kept_i),
        missing,
    )


def save_pseudo_csv(pseudo, path):
    p = pseudo.Z.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(p)] + ["label", "confidence"])
        for z, y, c in zip(pseudo.Z, pseudo.labels, pseudo.confidences):
            w.writerow([repr(float(v)) for v in z] + [int(y), repr(float(c))])


def load_pseudo_csv(path, tau=None):
    """Read a pseudo-dataset CSV.

    ``acceptance_rate`` is not stored and comes back as NaN, as does ``tau``
    unless given.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if header[-2:] != ["label", "confidence"]:
        raise FormatError(f"{path}: header must end with label,confidence", line=1)
    p = len(header) - 2
    Z = np.empty((len(rows) - 1, p))
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    conf = np.empty(len(rows) - 1)
    for i, row in enumerate(rows[1:]):
        if len(row) != p + 2:
            raise FormatError(f"{path}: expected {p + 2} fields, got {len(row)}", line=i + 2)
        try:
            Z[i] = [float(v) for v in row[:p]]
            labels[i] = int(row[p])
            conf[i] = float(row[p + 1])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", line=i + 2) from None
    if Z.shape[0] == 0:
        raise FormatError(f"{path}: no pseudo points")
    return PseudoDataset(Z, labels, conf, float("nan") if tau is None else float(tau), float("nan"))
