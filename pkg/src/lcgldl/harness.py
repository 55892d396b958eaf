"""Training with the composite objective, evaluation, and the experiment protocols."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lcgldl import lcg, ldp
from lcgldl.data import Dataset, inject_gaussian_noise, make_fold_plan, seed_entropy, synth_dataset
from lcgldl.errors import ConfigError, NumericalError
from lcgldl.metrics import AggregateReport, MetricsReport, aggregate, evaluate_dataset
from lcgldl.net import (AdamWState, MlpParams, adamw_step, backward, forward, init_params,
                        l1_loss, l1_loss_grad)

log = logging.getLogger(__name__)

KINK_TOL = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 500
    lr: float = 5e-4
    epochs: int = 100
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.05
    ldp_dim: int | None = None
    lcg_sigma2: float = lcg.DEFAULT_SIGMA2
    lcg_l: int | None = None
    hidden: int = 256
    seed: int = 0
    standardize_features: bool = False
    enable_lcg: bool = True
    enable_ldp: bool = False
    lcg_resample_target: bool = True
    kpca_kernel: str = "rbf"
    kpca_max_rows: int | None = 2000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        problems = []
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if self.enable_lcg and self.batch_size < 2:
            problems.append("batch_size must be at least 2 when the correlation grid is enabled")
        if not self.lr > 0:
            problems.append("lr must be positive")
        if self.epochs < 1:
            problems.append("epochs must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            problems.append("loss weights must be nonnegative")
        if self.lcg_sigma2 < 0:
            problems.append("lcg_sigma2 must be nonnegative")
        if self.lcg_l is not None and self.lcg_l < 1:
            problems.append("lcg_l must be positive")
        if self.hidden < 1 or self.hidden & (self.hidden - 1):
            problems.append(f"hidden width must be a power of 2, got {self.hidden}")
        if self.enable_ldp and (self.ldp_dim is None or self.ldp_dim < 1):
            problems.append("enable_ldp requires a positive ldp_dim")
        if self.kpca_kernel not in ("rbf", "linear"):
            problems.append(f"unknown kpca_kernel {self.kpca_kernel!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def check_for(self, t: int) -> None:
        if self.enable_ldp and not self.ldp_dim < t:
            raise ConfigError(f"ldp_dim={self.ldp_dim} must be smaller than the label count {t}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainHistory:
    l1: list = field(default_factory=list)
    lcg: list = field(default_factory=list)
    ldp: list = field(default_factory=list)
    total: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features):
        std = features.std(axis=0)
        return cls(features.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, features):
        return (features - self.mean) / self.scale


@dataclass
class TrainResult:
    params: MlpParams
    sub_params: ldp.SubMlpParams | None
    kpca: ldp.KpcaModel | None
    history: TrainHistory
    scaler: FeatureScaler | None = None


@dataclass
class Objective:
    """One evaluation of the weighted loss and its gradients on a batch."""

    total: float
    l1: float
    lcg: float
    ldp: float
    grads: MlpParams
    sub_grads: ldp.SubMlpParams | None
    residuals: np.ndarray


def composite_objective(config: TrainConfig, params: MlpParams, sub_params, xb, yb,
                        true_cov=None, draws=None, low_targets=None) -> Objective:
    """Weighted L1 + projection + grid loss of one batch, with exact gradients.

    Grid noise ``draws`` is treated as a constant, so the returned gradient is
    the reparameterized gradient of a single sampled loss.
    """
    trace = forward(params, xb)
    pred = trace.pred
    l1v = l1_loss(pred, yb)
    grad_pred = config.lambda1 * l1_loss_grad(pred, yb)
    residuals = [(pred - yb).ravel()]
    lcg_v = ldp_v = 0.0
    sub_grads = None
    if config.enable_lcg:
        l = draws.shape[2]
        lcg_v = lcg.lcg_loss(pred, true_cov, l, config.lcg_sigma2, draws)
        grad_pred = grad_pred + config.lambda3 * lcg.lcg_loss_backward(pred, true_cov, l, config.lcg_sigma2, draws)
        residuals.append(lcg.grid_residuals(pred, true_cov, l, config.lcg_sigma2, draws))
    if config.enable_ldp:
        low = ldp.sub_mlp_forward(sub_params, pred)
        ldp_v = ldp.ldp_loss(low, low_targets)
        g_pred, sub_grads = ldp.sub_mlp_backward(pred, sub_params, ldp.ldp_loss_grad(low, low_targets))
        grad_pred = grad_pred + config.lambda2 * g_pred
        sub_grads = sub_grads.map(lambda g: config.lambda2 * g)
        residuals.append((low - low_targets).ravel())
    total = config.lambda1 * l1v + config.lambda2 * ldp_v + config.lambda3 * lcg_v
    grads = backward(trace, params, grad_pred)
    return Objective(total, l1v, lcg_v, ldp_v, grads, sub_grads, np.concatenate(residuals))


def _streams(seed: int, count: int):
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed_entropy(seed)).spawn(count)]


class Trainer:
    """Mini-batch AdamW training of the regressor (and projection head) on one split."""

    def __init__(self, config: TrainConfig, train_split: Dataset):
        config.check_for(train_split.t)
        self.config = config
        init_seed, sub_seed, shuffle_seed, noise_seed, kpca_seed = _streams(config.seed, 5)
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.noise_rng = np.random.default_rng(noise_seed)
        self.scaler = FeatureScaler.fit(train_split.features) if config.standardize_features else None
        self.X = self.scaler(train_split.features) if self.scaler else train_split.features
        self.Y = train_split.labels
        t = train_split.t
        self.l = config.lcg_l or t
        hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                     weight_decay=config.weight_decay)
        self.params = init_params(train_split.n, config.hidden, t, init_seed)
        self.opt = AdamWState.for_params(self.params, **hyper)
        self.true_cov = lcg.covariance(self.Y) if config.enable_lcg else None
        self.fixed_target_noise = None
        if config.enable_lcg and not config.lcg_resample_target:
            self.fixed_target_noise = self.noise_rng.standard_normal((t, t, self.l))
        self.kpca = self.low_targets = self.sub_params = self.sub_opt = None
        if config.enable_ldp:
            self.kpca = ldp.kpca_fit(self.Y, config.ldp_dim, kernel=config.kpca_kernel,
                                     max_rows=config.kpca_max_rows, seed=kpca_seed)
            self.low_targets = ldp.project_targets(self.kpca, self.Y)
            self.sub_params = ldp.init_sub_params(t, config.ldp_dim, sub_seed)
            self.sub_opt = AdamWState.for_params(self.sub_params, **hyper)
        self.history = TrainHistory()

    def epoch_batches(self) -> list:
        m = self.X.shape[0]
        order = self.shuffle_rng.permutation(m)
        batches = [order[i:i + self.config.batch_size] for i in range(0, m, self.config.batch_size)]
        if self.config.enable_lcg and len(batches[-1]) < 2:
            batches.pop()
        return batches

    def _draws(self):
        t = self.Y.shape[1]
        draws = lcg.draw_noise(self.noise_rng, t, self.l)
        if self.fixed_target_noise is not None:
            draws[..., 1] = self.fixed_target_noise
        return draws

    def step(self, idx) -> Objective:
        draws = self._draws() if self.config.enable_lcg else None
        low = self.low_targets[idx] if self.config.enable_ldp else None
        obj = composite_objective(self.config, self.params, self.sub_params, self.X[idx], self.Y[idx],
                                  self.true_cov, draws, low)
        if not np.isfinite(obj.total):
            raise NumericalError(f"non-finite loss at optimizer step {self.opt.step_count + 1}")
        self.opt, self.params = adamw_step(self.opt, self.params, obj.grads)
        if self.config.enable_ldp:
            self.sub_opt, self.sub_params = adamw_step(self.sub_opt, self.sub_params, obj.sub_grads)
        if not self.params.is_finite():
            raise NumericalError(f"non-finite parameters after optimizer step {self.opt.step_count}")
        return obj

    def run_epoch(self) -> None:
        start = time.perf_counter()
        objs = [self.step(idx) for idx in self.epoch_batches()]
        h = self.history
        h.l1.append(float(np.mean([o.l1 for o in objs])))
        h.lcg.append(float(np.mean([o.lcg for o in objs])))
        h.ldp.append(float(np.mean([o.ldp for o in objs])))
        h.total.append(float(np.mean([o.total for o in objs])))
        h.seconds.append(time.perf_counter() - start)

    def result(self) -> TrainResult:
        return TrainResult(self.params, self.sub_params, self.kpca, self.history, self.scaler)


def train(config: TrainConfig, train_split: Dataset) -> TrainResult:
    trainer = Trainer(config, train_split)
    for epoch in range(config.epochs):
        trainer.run_epoch()
        log.debug("epoch %d loss %.6f", epoch + 1, trainer.history.total[-1])
    return trainer.result()


def evaluate(params: MlpParams, test_split: Dataset, scaler: FeatureScaler | None = None) -> MetricsReport:
    features = scaler(test_split.features) if scaler else test_split.features
    return evaluate_dataset(test_split.labels, forward(params, features).pred)


def fold_seed(master: int, repeat: int, fold: int) -> int:
    ss = np.random.SeedSequence([seed_entropy(master), repeat, fold])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class CVResult:
    aggregate: AggregateReport
    folds: list  # (repeat, fold, MetricsReport), ordered by (repeat, fold)

    def as_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.as_dict(),
            "folds": [{"repeat": r, "fold": f, "metrics": rep.as_dict()} for r, f, rep in self.folds],
        }


def _run_fold(job):
    config, dataset, train_labels, r, f, train_idx, test_idx = job
    cfg = config.replace(seed=fold_seed(config.seed, r, f))
    train_split = dataset.subset(train_idx)
    if train_labels is not None:
        train_split = train_split.with_labels(train_labels[train_idx])
    res = train(cfg, train_split)
    return r, f, evaluate(res.params, dataset.subset(test_idx), res.scaler)


def run_cv(config: TrainConfig, dataset: Dataset, repeats: int = 10, folds: int = 5,
           workers: int = 1, train_labels: np.ndarray | None = None) -> CVResult:
    """Repeated k-fold cross-validation.

    ``train_labels`` (same shape as ``dataset.labels``) replaces the labels
    used for fitting while held-out folds are scored against the originals.
    """
    config.check_for(dataset.t)
    plan = make_fold_plan(dataset.m, repeats, folds, config.seed)
    jobs = [(config, dataset, train_labels, r, f, tr, te) for r, f, tr, te in plan.splits()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    results.sort(key=lambda x: (x[0], x[1]))
    return CVResult(aggregate([rep for _, _, rep in results]), results)


def cross_validate(config: TrainConfig, dataset: Dataset, repeats: int = 10, folds: int = 5,
                   workers: int = 1) -> AggregateReport:
    return run_cv(config, dataset, repeats, folds, workers).aggregate


def ablation_configs(config: TrainConfig) -> dict:
    return {
        "full": config,
        "w/o grid": config.replace(enable_lcg=False),
        "w/o L_dpa": config.replace(enable_ldp=False),
    }


def ablation(config: TrainConfig, dataset: Dataset, repeats: int = 10, folds: int = 5,
             workers: int = 1) -> dict:
    return {name: run_cv(cfg, dataset, repeats, folds, workers) for name, cfg in ablation_configs(config).items()}


def noise_seed(master: int, index: int) -> int:
    ss = np.random.SeedSequence([seed_entropy(master), 0x401CE, index])
    return int(ss.generate_state(1, np.uint64)[0])


def noise_experiment(config: TrainConfig, dataset: Dataset, variances, repeats: int = 10, folds: int = 5,
                     workers: int = 1, train_only: bool = False) -> dict:
    """Cross-validate on label sets perturbed at each noise variance.

    By default noise is injected into every row, so training and held-out
    labels are both noisy; ``train_only`` keeps held-out labels clean.
    """
    out = {}
    for i, variance in enumerate(variances):
        noisy = inject_gaussian_noise(dataset.labels, variance, noise_seed(config.seed, i))
        if train_only:
            out[float(variance)] = run_cv(config, dataset, repeats, folds, workers, train_labels=noisy)
        else:
            out[float(variance)] = run_cv(config, dataset.with_labels(noisy), repeats, folds, workers)
    return out


def max_relative_error(f, grad, theta: np.ndarray, step: float = 1e-5, mask=None, floor: float = 1e-8):
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` over coordinates.

    ``mask(i)`` may return False to skip coordinate ``i``.
    """
    worst = 0.0
    for i in range(theta.size):
        if mask is not None and not mask(i):
            continue
        e = np.zeros_like(theta)
        e[i] = step
        numeric = (f(theta + e) - f(theta - e)) / (2.0 * step)
        denom = max(abs(grad[i]), abs(numeric), floor)
        worst = max(worst, float(abs(grad[i] - numeric) / denom))
    return worst


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    attempts: int


def grad_check(config: TrainConfig, sample: Dataset, seed: int = 0, step: float = 1e-5,
               surrogate: str | None = None, max_attempts: int = 50) -> GradCheckResult:
    """Compare the composite analytic gradient with central differences.

    Parameters of both networks are perturbed.  The evaluation point (weights
    and frozen grid noise) is redrawn until no absolute-value residual lies
    within 1e-3 of its kink; coordinates whose perturbation still flips a
    residual sign are skipped.  ``surrogate="quadratic"`` checks a plain
    quadratic in the flattened parameters instead, to validate the checker.
    """
    config.check_for(sample.t)
    rng = np.random.default_rng(seed_entropy(seed))
    t = sample.t
    l = config.lcg_l or t
    true_cov = lcg.covariance(sample.labels) if config.enable_lcg else None
    low_targets = None
    if config.enable_ldp:
        kp = ldp.kpca_fit(sample.labels, config.ldp_dim, kernel=config.kpca_kernel)
        low_targets = ldp.project_targets(kp, sample.labels)

    for attempt in range(1, max_attempts + 1):
        params = init_params(sample.n, config.hidden, t, int(rng.integers(2**63)))
        # push weights off the flat initial regime so every path carries signal
        params = params.map(lambda a: a + rng.normal(scale=0.5, size=a.shape))
        sub = None
        if config.enable_ldp:
            sub = ldp.init_sub_params(t, config.ldp_dim, int(rng.integers(2**63)))
            sub = sub.map(lambda a: a + rng.normal(scale=0.5, size=a.shape))
        draws = lcg.draw_noise(rng, t, l) if config.enable_lcg else None
        obj = composite_objective(config, params, sub, sample.features, sample.labels, true_cov, draws, low_targets)
        if np.min(np.abs(obj.residuals)) >= KINK_TOL:
            break
    else:
        raise NumericalError(f"no kink-free evaluation point found in {max_attempts} attempts")

    n_main = params.flatten().size

    def split(theta):
        p = params.unflatten(theta[:n_main])
        s = sub.unflatten(theta[n_main:]) if sub is not None else None
        return p, s

    theta0 = np.concatenate([params.flatten()] + ([sub.flatten()] if sub is not None else []))
    if surrogate == "quadratic":
        weights = rng.uniform(0.5, 2.0, size=theta0.size)
        # anchor near theta0 keeps f small, so roundoff stays far below the step error
        anchor = theta0 + rng.normal(scale=1e-2, size=theta0.size)
        err = max_relative_error(lambda th: 0.5 * np.sum(weights * (th - anchor) ** 2),
                                 weights * (theta0 - anchor), theta0, step)
        return GradCheckResult(float(err), theta0.size, 0, attempt)
    if surrogate is not None:
        raise ValueError(f"unknown surrogate {surrogate!r}")

    def evaluate_at(theta):
        p, s = split(theta)
        return composite_objective(config, p, s, sample.features, sample.labels, true_cov, draws, low_targets)

    analytic = np.concatenate([obj.grads.flatten()] + ([obj.sub_grads.flatten()] if sub is not None else []))
    base_sign = np.sign(obj.residuals)
    skipped = []

    def no_kink(i):
        e = np.zeros_like(theta0)
        e[i] = step
        for th in (theta0 + e, theta0 - e):
            if np.any(np.sign(evaluate_at(th).residuals) != base_sign):
                skipped.append(i)
                return False
        return True

    err = max_relative_error(lambda th: evaluate_at(th).total, analytic, theta0, step, mask=no_kink)
    return GradCheckResult(float(err), theta0.size - len(skipped), len(skipped), attempt)


def default_gradcheck_sample(seed: int, n: int = 5, t: int = 4, b: int = 4) -> Dataset:
    return synth_dataset(b, n, t, seed)


def gradcheck_config(**overrides) -> TrainConfig:
    base = dict(hidden=8, batch_size=4, enable_lcg=True, enable_ldp=True, ldp_dim=3, kpca_kernel="rbf")
    base.update(overrides)
    return TrainConfig(**base)
