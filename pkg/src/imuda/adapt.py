"""Source pretraining and margin-increasing domain adaptation.

The adaptation objective per mini-batch is::

    lam * CE(source) + lam * CE(pseudo)
        + SWD(encoder(target), pseudo) + SWD(encoder(source), pseudo)

with equal batch sizes for the three sets. Pseudo points live directly in the
embedding space, so their cross-entropy only moves the classifier.
"""
from dataclasses import asdict, dataclass, field, fields
import csv
import io
import logging
import time

import numpy as np

from .exceptions import ConfigError, InputError, NumericalError
from .gmm import estimate_map
from .metrics import evaluate
from .nn import (
    TERMS,
    Batch,
    ObjectiveSpec,
    adam_step,
    compute_objective_and_gradients,
    forward_encoder,
    init_model,
    init_optimizer,
)
from .pseudo import generate_pseudo
from .rng import stream
from .swd import sample_projections

__all__ = [
    "AdaptConfig",
    "EpochRecord",
    "TrainReport",
    "PipelineResult",
    "pretrain",
    "adapt_imuda",
    "adapt_baseline_swd",
    "run_pipeline",
]

log = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    lam: float = 0.01
    tau: float = 0.95
    num_projections: int = 100
    pretrain_epochs: int = 60
    adapt_epochs: int = 40
    batch_size: int = 500
    learning_rate: float = 1e-2
    adapt_learning_rate: float = 5e-4  # None: same as learning_rate
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    cov_reg: float = None  # None: scaled to each class covariance
    covariance: str = "full"
    n_pseudo: int = None  # None: source size
    max_attempt_factor: int = 100
    enable_source_ce: bool = True
    enable_pseudo_ce: bool = True
    enable_target_pseudo_swd: bool = True
    enable_source_pseudo_swd: bool = True
    regenerate_pseudo: bool = False
    early_stop_threshold: float = 1e-4
    early_stop_patience: int = 5
    early_stop: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.num_projections < 1:
            raise ConfigError("num_projections must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.pretrain_epochs < 1 or self.adapt_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.learning_rate < 0 or (self.adapt_learning_rate or 0) < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.covariance not in ("full", "diag"):
            raise ConfigError(f"covariance must be 'full' or 'diag', got {self.covariance!r}")
        if self.n_pseudo is not None and self.n_pseudo < 1:
            raise ConfigError("n_pseudo must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")

    @property
    def adapt_lr(self):
        return self.learning_rate if self.adapt_learning_rate is None else self.adapt_learning_rate

    def objective(self):
        return ObjectiveSpec.imuda(
            self.lam,
            source_ce=self.enable_source_ce,
            pseudo_ce=self.enable_pseudo_ce,
            target_pseudo_swd=self.enable_target_pseudo_swd,
            source_pseudo_swd=self.enable_source_pseudo_swd,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown adaptation settings: {unknown}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    terms: dict
    source_accuracy: float
    target_accuracy: float = None


@dataclass
class TrainReport:
    phase: str
    records: list = field(default_factory=list)
    wall_time: float = 0.0
    params: object = None
    stopped_early: bool = False

    @property
    def final(self):
        return self.records[-1]

    def totals(self):
        return np.array([r.total for r in self.records])

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "total", *TERMS, "src_acc", "tgt_acc"])
        for r in self.records:
            tgt = "" if r.target_accuracy is None else repr(r.target_accuracy)
            w.writerow([r.epoch, repr(r.total), *(repr(r.terms[t]) for t in TERMS),
                        repr(r.source_accuracy), tgt])
        return out.getvalue()

    def summary(self):
        """Deterministic summary; wall time is left out so reruns compare equal."""
        last = self.final
        return {
            "phase": self.phase,
            "epochs": len(self.records),
            "stopped_early": self.stopped_early,
            "final_total": last.total,
            "final_terms": dict(last.terms),
            "final_source_accuracy": last.source_accuracy,
            "final_target_accuracy": last.target_accuracy,
        }


class _Cycler:
    """Endless equal-size index batches, reshuffled on every pass."""

    def __init__(self, n, batch_size, rng):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._order = None
        self._pos = n

    def next(self):
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


class _EarlyStop:
    def __init__(self, threshold, patience):
        self.threshold, self.patience = threshold, patience
        self.prev = None
        self.calm = 0

    def update(self, value):
        if self.prev is not None:
            rel = abs(value - self.prev) / max(abs(self.prev), 1e-300)
            self.calm = self.calm + 1 if rel < self.threshold else 0
        self.prev = value
        return self.calm >= self.patience


def _target_accuracy(params, target):
    if target is not None and target.labeled:
        return evaluate(params, target).accuracy
    return None


def _check_source(source):
    if not source.labeled:
        raise InputError("source dataset must be labeled")


def _evaluation_batch(params, objective, config, phase, source, target, pseudo):
    """Whole training split with one fixed projection set, for per-epoch reporting.

    Sets compared by a sliced Wasserstein term are subsampled (seeded, without
    replacement) to their common smallest size.
    """
    uses_swd = objective.target_pseudo_swd or objective.source_pseudo_swd or objective.source_target_swd
    sets = {"source": source.n}
    if objective.target_pseudo_swd or objective.source_target_swd:
        sets["target"] = target.n
    if objective.pseudo_ce or objective.target_pseudo_swd or objective.source_pseudo_swd:
        sets["pseudo"] = len(pseudo)
    m = min(sets.values()) if uses_swd else None
    rng = stream(config.seed, f"{phase}-evaluation")

    def rows(name):
        n = sets[name]
        if m is None or m == n:
            return slice(None)
        return np.sort(rng.choice(n, size=m, replace=False))

    idx = rows("source")
    batch = Batch(source_X=source.X[idx], source_y=source.labels[idx])
    if "target" in sets:
        batch.target_X = target.X[rows("target")]
    if "pseudo" in sets:
        idx = rows("pseudo")
        batch.pseudo_Z, batch.pseudo_y = pseudo.Z[idx], pseudo.labels[idx]
    if uses_swd:
        batch.projections = sample_projections(
            params.arch.embedding_dim, config.num_projections,
            rng=stream(config.seed, f"{phase}-evaluation-projections"),
        )
    return batch


def _train(params, objective, config, epochs, lr, phase, source, target=None,
           pseudo=None, regenerate=None):
    """Shared mini-batch Adam loop. ``regenerate(params)`` refreshes the pseudo set."""
    uses_target = bool(objective.target_pseudo_swd or objective.source_target_swd)
    uses_pseudo = bool(objective.pseudo_ce or objective.target_pseudo_swd or objective.source_pseudo_swd)
    sizes = [source.n]
    if target is not None and uses_target:
        sizes.append(target.n)
    if pseudo is not None and uses_pseudo:
        sizes.append(len(pseudo))
    bs = config.batch_size
    if bs > min(sizes):
        raise ConfigError(f"batch_size {bs} exceeds the smallest dataset ({min(sizes)} rows)")

    seed = config.seed
    src_batches = _Cycler(source.n, bs, stream(seed, f"{phase}-shuffle-source"))
    tgt_batches = pse_batches = None
    if uses_target:
        tgt_batches = _Cycler(target.n, bs, stream(seed, f"{phase}-shuffle-target"))
    if uses_pseudo:
        pse_batches = _Cycler(len(pseudo), bs, stream(seed, f"{phase}-shuffle-pseudo"))
    uses_swd = objective.target_pseudo_swd or objective.source_pseudo_swd or objective.source_target_swd
    steps_per_epoch = max(1, source.n // bs)

    state = init_optimizer(params, lr, config.beta1, config.beta2, config.adam_eps)
    report = TrainReport(phase)
    stopper = _EarlyStop(config.early_stop_threshold, config.early_stop_patience)
    t0 = time.perf_counter()
    step = 0
    eval_batch = None
    for epoch in range(1, epochs + 1):
        if regenerate is not None and uses_pseudo and epoch > 1:
            pseudo = regenerate(params)
            pse_batches = _Cycler(len(pseudo), bs, stream(seed, f"{phase}-shuffle-pseudo", epoch))
            eval_batch = None
        if eval_batch is None:
            eval_batch = _evaluation_batch(params, objective, config, phase, source, target, pseudo)
        for _ in range(steps_per_epoch):
            si = src_batches.next()
            batch = Batch(source_X=source.X[si], source_y=source.labels[si])
            if tgt_batches is not None:
                batch.target_X = target.X[tgt_batches.next()]
            if pse_batches is not None:
                pi = pse_batches.next()
                batch.pseudo_Z = pseudo.Z[pi]
                batch.pseudo_y = pseudo.labels[pi]
            if uses_swd:
                batch.projections = sample_projections(
                    params.arch.embedding_dim, config.num_projections,
                    rng=stream(seed, f"{phase}-projections", step),
                )
            _, grads = compute_objective_and_gradients(params, batch, objective)
            params, state = adam_step(params, grads, state)
            step += 1
        try:
            total, _, terms = compute_objective_and_gradients(params, eval_batch, objective, return_terms=True)
        except NumericalError as exc:
            raise NumericalError(f"non-finite objective at epoch {epoch}", term=exc.term) from None
        report.records.append(EpochRecord(
            epoch, total, terms, evaluate(params, source).accuracy, _target_accuracy(params, target),
        ))
        log.debug("%s epoch %d total %.6g", phase, epoch, total)
        if config.early_stop and stopper.update(total):
            report.stopped_early = True
            break
    report.wall_time = time.perf_counter() - t0
    report.params = params
    return params, report


def pretrain(config, arch, source, target=None):
    """Fit encoder and classifier on labeled source data by mean cross-entropy.

    ``target`` is optional and only used to report target accuracy per epoch.
    """
    _check_source(source)
    if source.d != arch.input_dim:
        raise InputError(f"source has {source.d} features, architecture expects {arch.input_dim}")
    if source.k is not None and source.k > arch.num_classes:
        raise InputError(f"source has {source.k} classes, architecture has {arch.num_classes}")
    params = init_model(arch, config.seed)
    return _train(params, ObjectiveSpec.pretraining(), config, config.pretrain_epochs,
                  config.learning_rate, "pretrain", source, target)


def _check_domains(params, source, target, pseudo=None):
    _check_source(source)
    d = params.arch.input_dim
    if source.d != d or target.d != d:
        raise InputError(f"feature widths must equal {d}, got source {source.d} and target {target.d}")
    if pseudo is not None and pseudo.Z.shape[1] != params.arch.embedding_dim:
        raise InputError(
            f"pseudo points have dimension {pseudo.Z.shape[1]}, embeddings have {params.arch.embedding_dim}"
        )


def adapt_imuda(params, source, target, pseudo, config, gmm=None):
    """Run the four-term adaptation starting from ``params``.

    Target labels, if present, only feed the per-epoch accuracy column. With
    ``config.regenerate_pseudo`` and a ``gmm`` the pseudo set is redrawn from
    the current classifier at the start of every epoch after the first.
    """
    _check_domains(params, source, target, pseudo)
    regenerate = None
    if config.regenerate_pseudo:
        if gmm is None:
            raise ConfigError("regenerate_pseudo needs the GMM")
        n_target = len(pseudo)

        def regenerate(current):
            return generate_pseudo(gmm, current, config.tau, n_target, config.max_attempt_factor, config.seed)

    return _train(params, config.objective(), config, config.adapt_epochs, config.adapt_lr,
                  "adapt", source, target, pseudo, regenerate)


def adapt_baseline_swd(params, source, target, config):
    """Direct source/target embedding alignment: ``lam * CE(source) + SWD(source, target)``."""
    _check_domains(params, source, target)
    return _train(params, ObjectiveSpec.baseline(config.lam), config, config.adapt_epochs,
                  config.adapt_lr, "baseline", source, target)


@dataclass
class PipelineResult:
    pretrained: object
    pretrain_report: TrainReport
    gmm: object
    pseudo: object
    adapted: object
    adapt_report: TrainReport


def run_pipeline(arch, config, source, target, baseline=False, pretrained=None):
    """Pretrain, estimate the GMM, draw the pseudo-dataset and adapt.

    Pass ``pretrained`` to reuse an existing source model (its report is then
    ``None``). With ``baseline`` the GMM and pseudo steps are skipped.
    """
    pre_report = None
    if pretrained is None:
        pretrained, pre_report = pretrain(config, arch, source, target)
    if baseline:
        adapted, report = adapt_baseline_swd(pretrained, source, target, config)
        return PipelineResult(pretrained, pre_report, None, None, adapted, report)
    gmm = estimate_map(forward_encoder(pretrained, source.X), source.labels, arch.num_classes,
                       eps=config.cov_reg, covariance=config.covariance)
    n_pseudo = config.n_pseudo or source.n
    pseudo = generate_pseudo(gmm, pretrained, config.tau, n_pseudo, config.max_attempt_factor, config.seed)
    adapted, report = adapt_imuda(pretrained, source, target, pseudo, config, gmm=gmm)
    return PipelineResult(pretrained, pre_report, gmm, pseudo, adapted, report)
