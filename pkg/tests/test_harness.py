import json
from importlib import resources

import numpy as np
import pytest

from lcgldl.data import Dataset, inject_gaussian_noise, make_fold_plan, synth_dataset
from lcgldl.errors import ConfigError, NumericalError
from lcgldl.harness import (TrainConfig, Trainer, ablation, ablation_configs, cross_validate, default_gradcheck_sample,
                            evaluate, fold_seed, grad_check, gradcheck_config, noise_experiment, run_cv, train)
from lcgldl.net import init_params, softmax


@pytest.fixture(scope="module")
def small():
    return synth_dataset(60, 4, 3, seed=1)


def quick(**kw):
    base = dict(batch_size=16, epochs=2, hidden=8, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.lambda1, c.lambda2, c.lambda3) == (1.0, 0.1, 0.05)
    assert c.lcg_sigma2 == 0.5 and c.hidden == 256
    with pytest.raises(ConfigError, match="at least 2"):
        TrainConfig(batch_size=1)
    TrainConfig(batch_size=1, enable_lcg=False)
    with pytest.raises(ConfigError, match="power of 2"):
        TrainConfig(hidden=100)
    with pytest.raises(ConfigError, match="ldp_dim"):
        TrainConfig(enable_ldp=True)
    with pytest.raises(ConfigError, match="unknown config keys"):
        TrainConfig.from_dict({"batchsize": 3})
    with pytest.raises(ConfigError, match="smaller than the label count"):
        TrainConfig(enable_ldp=True, ldp_dim=3).check_for(3)


@pytest.mark.parametrize("name, batch, epochs, ldp_dim", [
    ("humangene", 500, 400, 32),
    ("naturalscene", 500, 300, None),
    ("yeast_alpha", 500, 400, 16),
    ("movie", 2000, 100, None),
])
def test_shipped_configs(name, batch, epochs, ldp_dim):
    doc = json.loads(resources.files("lcgldl.configs").joinpath(f"{name}.json").read_text())
    c = TrainConfig.from_dict(doc)
    assert (c.batch_size, c.lr, c.epochs) == (batch, 0.0005, epochs)
    assert c.enable_ldp == (ldp_dim is not None) and c.ldp_dim == ldp_dim
    assert (c.lambda1, c.lambda2, c.lambda3, c.lcg_sigma2, c.hidden) == (1.0, 0.1, 0.05, 0.5, 256)


def test_train_history_and_determinism(small):
    cfg = quick(enable_ldp=True, ldp_dim=2, epochs=3)
    a = train(cfg, small)
    b = train(cfg, small)
    assert len(a.history.total) == len(a.history.l1) == len(a.history.seconds) == 3
    np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())
    np.testing.assert_array_equal(a.sub_params.flatten(), b.sub_params.flatten())
    assert a.history.total == b.history.total
    total = [cfg.lambda1 * l + cfg.lambda2 * p + cfg.lambda3 * g
             for l, p, g in zip(a.history.l1, a.history.ldp, a.history.lcg)]
    np.testing.assert_allclose(a.history.total, total, rtol=1e-12)


def test_fixed_target_noise_option(small):
    res = train(quick(lcg_resample_target=False), small)
    assert np.isfinite(res.history.total).all()


def test_last_partial_batch(small):
    # 60 rows, batch 59: a single leftover row cannot form a covariance
    t = Trainer(quick(batch_size=59), small)
    assert [len(b) for b in t.epoch_batches()] == [59]
    t = Trainer(quick(batch_size=59, enable_lcg=False), small)
    assert [len(b) for b in t.epoch_batches()] == [59, 1]


def test_standardized_features(small):
    res = train(quick(standardize_features=True), small)
    assert res.scaler is not None
    rep = evaluate(res.params, small, res.scaler)
    assert 0 <= rep.chebyshev <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_abort(small):
    with pytest.raises(NumericalError):
        train(quick(lr=1e308, weight_decay=10.0), small)


def test_evaluate_exact_and_uniform():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    uniform = Dataset(X, np.full((10, 4), 0.25))
    p = init_params(3, 8, 4, seed=0)
    p.W2[:] = 0.0
    rep = evaluate(p, uniform)
    assert rep.chebyshev == 0.0
    assert rep.as_tuple() == pytest.approx((0, 0, 0, 0, 1, 1), abs=1e-15)
    # a teacher whose output layer reproduces the labels exactly
    from lcgldl.net import forward
    exact = Dataset(X, forward(init_params(3, 8, 4, seed=1), X).pred)
    rep = evaluate(init_params(3, 8, 4, seed=1), exact)
    assert rep.as_tuple() == pytest.approx((0, 0, 0, 0, 1, 1), abs=1e-12)


def test_cross_validate_smoke_and_determinism(small):
    cfg = quick()
    a = run_cv(cfg, small, repeats=1, folds=2)
    b = run_cv(cfg, small, repeats=1, folds=2)
    assert a.aggregate.fold_count == 2
    assert all(np.isfinite(v) for v in a.aggregate.mean.values())
    assert a.as_dict() == b.as_dict()
    assert cross_validate(cfg, small, repeats=1, folds=2) == a.aggregate


def test_fold_seeds_distinct():
    seeds = {fold_seed(7, r, f) for r in range(10) for f in range(5)}
    assert len(seeds) == 50
    assert fold_seed(7, 0, 0) == fold_seed(7, 0, 0)


def test_parallel_matches_sequential(small):
    cfg = quick(epochs=1)
    seq = run_cv(cfg, small, repeats=2, folds=2, workers=1)
    par = run_cv(cfg, small, repeats=2, folds=2, workers=2)
    assert seq.as_dict() == par.as_dict()


def test_ablation_contract(small):
    cfg = quick(enable_ldp=True, ldp_dim=2, epochs=1)
    configs = ablation_configs(cfg)
    assert configs["full"] == cfg
    assert configs["w/o grid"] == cfg.replace(enable_lcg=False)
    assert configs["w/o L_dpa"] == cfg.replace(enable_ldp=False)
    assert len({(c.lambda1, c.lambda2, c.lambda3, c.seed) for c in configs.values()}) == 1
    runs = ablation(cfg, small, repeats=1, folds=2)
    assert list(runs) == ["full", "w/o grid", "w/o L_dpa"]
    assert all(r.aggregate.fold_count == 2 for r in runs.values())
    # the fold plan depends only on (m, master seed), shared by all three runs
    p1 = make_fold_plan(small.m, 1, 2, cfg.seed)
    p2 = make_fold_plan(small.m, 1, 2, configs["w/o grid"].seed)
    for a, b in zip(p1.assignments[0], p2.assignments[0]):
        np.testing.assert_array_equal(a, b)


def test_noise_experiment(small):
    cfg = quick(epochs=1)
    variances = [round(0.1 * k, 1) for k in range(1, 11)]
    out = noise_experiment(cfg, small, variances, repeats=1, folds=2)
    assert list(out) == variances
    assert all(r.aggregate.fold_count == 2 for r in out.values())


def test_noise_zero_variance_equals_softmax_labels(small):
    cfg = quick(epochs=1)
    zero = noise_experiment(cfg, small, [0.0], repeats=1, folds=2)[0.0]
    direct = run_cv(cfg, small.with_labels(softmax(small.labels)), repeats=1, folds=2)
    assert zero.as_dict() == direct.as_dict()


def test_noise_train_only_scores_clean_labels(small):
    cfg = quick(epochs=1)
    out = noise_experiment(cfg, small, [0.5], repeats=1, folds=2, train_only=True)[0.5]
    noisy = inject_gaussian_noise(small.labels, 0.5, 0)
    assert out.aggregate.fold_count == 2
    assert not np.allclose(noisy, small.labels)


def test_grad_check_surrogate_and_composite():
    sample = default_gradcheck_sample(3)
    quad = grad_check(gradcheck_config(), sample, seed=3, surrogate="quadratic")
    assert 0 <= quad.max_rel_error < 1e-8
    res = grad_check(gradcheck_config(), sample, seed=3)
    assert 0 <= res.max_rel_error < 1e-4
    assert res.checked > 0


@pytest.mark.parametrize("overrides", [dict(enable_lcg=False), dict(enable_ldp=False), dict(kpca_kernel="linear"),
                                       dict(lcg_l=7)])
def test_grad_check_variants(overrides):
    res = grad_check(gradcheck_config(**overrides), default_gradcheck_sample(11), seed=11)
    assert res.max_rel_error < 1e-4


def test_training_moving_average_decreases():
    ds = synth_dataset(400, 6, 4, seed=2)
    res = train(TrainConfig(batch_size=50, epochs=60, hidden=32, seed=1), ds)
    ma = np.convolve(res.history.total, np.ones(10) / 10, mode="valid")
    # window ending at epoch 10 vs window ending at the last epoch
    assert ma[-1] < ma[0]
