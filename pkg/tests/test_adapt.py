import dataclasses

import numpy as np
import pytest

from imuda.adapt import AdaptConfig, adapt_baseline_swd, adapt_imuda, pretrain, run_pipeline
from imuda.data import gen_blobs, gen_two_moons, parse_shift
from imuda.exceptions import ConfigError, InputError
from imuda.gmm import estimate_map
from imuda.metrics import bound_diagnostics, evaluate
from imuda.nn import TERMS, ArchSpec, forward_encoder
from imuda.pseudo import generate_pseudo

ARCH = ArchSpec(2, (32, 32), 8, 2)


def quick(**overrides):
    base = dict(pretrain_epochs=15, adapt_epochs=4, batch_size=100, num_projections=20)
    base.update(overrides)
    return AdaptConfig(**base)


@pytest.fixture(scope="module")
def moons():
    return gen_two_moons(400, 0.1, parse_shift("rot:35"), seed=0)


@pytest.fixture(scope="module")
def pretrained(moons):
    source, _ = moons
    params, _ = pretrain(quick(), ARCH, source)
    return params


@pytest.fixture(scope="module")
def pseudo(moons, pretrained):
    source, _ = moons
    gmm = estimate_map(forward_encoder(pretrained, source.X), source.labels, 2)
    return generate_pseudo(gmm, pretrained, 0.95, source.n, seed=0)


@pytest.fixture(scope="module")
def reference_run():
    """Full default pipeline on the reference task, seed 0."""
    source, target = gen_two_moons(1000, 0.1, parse_shift("rot:35"), seed=0)
    return source, target, run_pipeline(ARCH, AdaptConfig(seed=0), source, target)


def test_config_validation():
    for bad in (dict(tau=0.0), dict(tau=1.0), dict(lam=-1), dict(batch_size=1), dict(adapt_epochs=0),
                dict(num_projections=0), dict(covariance="tied")):
        with pytest.raises(ConfigError):
            AdaptConfig(**bad)
    with pytest.raises(ConfigError, match="unknown"):
        AdaptConfig.from_dict({"lambda": 0.1})
    cfg = AdaptConfig(lam=0.5, seed=3)
    assert AdaptConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_learning_rate_keeps_initialization(moons):
    source, _ = moons
    from imuda.nn import init_model

    params, report = pretrain(quick(pretrain_epochs=1, learning_rate=0.0), ARCH, source)
    assert params.flat().tobytes() == init_model(ARCH, 0).flat().tobytes()
    assert len(report.records) == 1


def test_pretraining_separable_blobs():
    source, _ = gen_blobs(k=2, n_per_class=100, separation=6.0, seed=0)
    params, _ = pretrain(quick(pretrain_epochs=30, batch_size=50), ArchSpec(2, (16,), 4, 2), source)
    assert evaluate(params, source).accuracy >= 0.99


def test_pretraining_is_deterministic(moons):
    source, _ = moons
    a, ra = pretrain(quick(pretrain_epochs=3), ARCH, source)
    b, rb = pretrain(quick(pretrain_epochs=3), ARCH, source)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert ra.to_csv() == rb.to_csv()


def test_all_terms_disabled_leaves_parameters(moons, pretrained, pseudo):
    source, target = moons
    cfg = quick(enable_source_ce=False, enable_pseudo_ce=False, enable_target_pseudo_swd=False,
                enable_source_pseudo_swd=False)
    params, report = adapt_imuda(pretrained, source, target.unlabeled(), pseudo, cfg)
    assert params.flat().tobytes() == pretrained.flat().tobytes()
    assert all(r.total == 0.0 for r in report.records)


def test_adaptation_is_deterministic_and_accounts_terms(moons, pretrained, pseudo):
    source, target = moons
    a, ra = adapt_imuda(pretrained, source, target, pseudo, quick())
    b, rb = adapt_imuda(pretrained, source, target, pseudo, quick())
    assert a.flat().tobytes() == b.flat().tobytes()
    assert ra.to_csv() == rb.to_csv()
    for r in ra.records:
        assert abs(sum(r.terms.values()) - r.total) <= 1e-10
        assert r.terms["source_target_swd"] == 0.0
    header = ra.to_csv().splitlines()[0].split(",")
    assert header == ["epoch", "total", *TERMS, "src_acc", "tgt_acc"]


def test_dropped_term_reports_zero(moons, pretrained, pseudo):
    source, target = moons
    _, report = adapt_imuda(pretrained, source, target, pseudo, quick(enable_target_pseudo_swd=False))
    assert all(r.terms["target_pseudo_swd"] == 0.0 for r in report.records)
    assert all(r.terms["source_pseudo_swd"] > 0.0 for r in report.records)


def test_target_labels_never_change_training(moons, pretrained, pseudo):
    source, target = moons
    a, _ = adapt_imuda(pretrained, source, target, pseudo, quick())
    b, rb = adapt_imuda(pretrained, source, target.unlabeled(), pseudo, quick())
    assert a.flat().tobytes() == b.flat().tobytes()
    assert rb.final.target_accuracy is None


def test_batch_larger_than_data_is_rejected(moons, pretrained, pseudo):
    source, target = moons
    with pytest.raises(ConfigError, match="batch_size"):
        adapt_imuda(pretrained, source, target.subset(np.arange(50)), pseudo, quick())


def test_mismatched_widths_are_rejected(moons, pretrained, pseudo):
    source, target = moons
    wide = dataclasses.replace(target, X=np.hstack([target.X, target.X]))
    with pytest.raises(InputError):
        adapt_imuda(pretrained, source, wide, pseudo, quick())


def test_regeneration_needs_the_gmm(moons, pretrained, pseudo):
    source, target = moons
    with pytest.raises(ConfigError):
        adapt_imuda(pretrained, source, target, pseudo, quick(regenerate_pseudo=True))


def test_regeneration_redraws_pseudo_points(moons, pretrained, pseudo):
    source, target = moons
    gmm = estimate_map(forward_encoder(pretrained, source.X), source.labels, 2)
    fixed, _ = adapt_imuda(pretrained, source, target, pseudo, quick())
    redrawn, _ = adapt_imuda(pretrained, source, target, pseudo, quick(regenerate_pseudo=True), gmm=gmm)
    assert fixed.flat().tobytes() != redrawn.flat().tobytes()


def test_early_stop_when_objective_is_flat(moons, pretrained, pseudo):
    source, target = moons
    cfg = quick(adapt_epochs=30, adapt_learning_rate=0.0, early_stop_patience=3)
    _, report = adapt_imuda(pretrained, source, target, pseudo, cfg)
    assert report.stopped_early and len(report.records) == 4


def test_baseline_with_identical_full_batches_is_stationary(moons, pretrained):
    source, _ = moons
    cfg = quick(lam=0.0, batch_size=source.n)
    params, report = adapt_baseline_swd(pretrained, source, source.unlabeled(), cfg)
    assert params.flat().tobytes() == pretrained.flat().tobytes()
    assert all(r.terms["source_target_swd"] == 0.0 for r in report.records)


def test_no_shift_adaptation_preserves_accuracy(reference_run):
    source, _, result = reference_run
    before = evaluate(result.pretrained, source).accuracy
    gmm = estimate_map(forward_encoder(result.pretrained, source.X), source.labels, 2)
    pseudo = generate_pseudo(gmm, result.pretrained, 0.95, source.n)
    adapted, _ = adapt_imuda(result.pretrained, source, source.unlabeled(), pseudo, AdaptConfig())
    assert abs(evaluate(adapted, source).accuracy - before) <= 0.02


@pytest.mark.xfail(strict=True, reason="mini-batch source/target alignment on one distribution shrinks the "
                                       "embedding and costs 3 to 6 points at the default settings")
def test_no_shift_baseline_preserves_accuracy(reference_run):
    source, _, result = reference_run
    before = evaluate(result.pretrained, source).accuracy
    adapted, _ = adapt_baseline_swd(result.pretrained, source, source.unlabeled(), AdaptConfig())
    assert abs(evaluate(adapted, source).accuracy - before) <= 0.02


def test_adaptation_moves_target_toward_pseudo(reference_run):
    source, target, result = reference_run
    before = bound_diagnostics(result.pretrained, source, target, result.pseudo, 0.95)
    after = bound_diagnostics(result.adapted, source, target, result.pseudo, 0.95)
    assert after.swd_target_pseudo < before.swd_target_pseudo
    assert evaluate(result.adapted, target).accuracy > evaluate(result.pretrained, target).accuracy


def test_shifted_target_is_harder_for_source_model(reference_run):
    source, target, result = reference_run
    gap = evaluate(result.pretrained, source).accuracy - evaluate(result.pretrained, target).accuracy
    assert gap >= 0.10


def test_baseline_improves_rotated_moons_in_most_seeds():
    wins = 0
    for seed in range(5):
        source, target = gen_two_moons(1000, 0.1, parse_shift("rot:35"), seed=seed)
        result = run_pipeline(ARCH, AdaptConfig(seed=seed), source, target, baseline=True)
        wins += evaluate(result.adapted, target).accuracy > evaluate(result.pretrained, target).accuracy
    assert wins >= 3
