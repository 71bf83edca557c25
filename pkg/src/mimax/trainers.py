"""Training loops for the SDMI (alternating, stop-gradient) and JMI (joint,
shared encoder) prototypes, the SimSiam/BYOL-style baselines and the
predictor/marginal ablations, all driven by plain SGD."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .autodiff import Tensor
from .data import GaussianMixtureSpec, PairedBatch, generate_dataset, make_paired_views, validation_views
from .encoder import (
    TRAIN, EncoderParams, PredictorParams, copy_params, ema_update, encode, init_encoder, init_predictor, predict,
)
from .metrics import MITrace, estimate_mi_epoch, geometry_row, track_centers
from .rng import substream

log = logging.getLogger(__name__)

METHODS = (
    "sdmi", "jmi", "simsiam", "byol", "sdmi-nodv", "sdmi-nodv-pred", "simsiam-nopred", "simsiam-sdmi",
)
SDMI_FAMILY = ("sdmi", "sdmi-nodv", "sdmi-nodv-pred")
SIMSIAM_FAMILY = ("simsiam", "simsiam-nopred", "simsiam-sdmi")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    method: str = "sdmi"
    epochs: int = 100
    batch_size: int = 500
    full_batch: bool = False
    resample_views: bool = True
    temp: float = 0.1
    lr: float = 0.5
    schedule: str = "cosine"
    weight_decay: float = 0.0
    ema_tau: float = 0.996
    predictor_hidden: int = 16
    byol_predictor: bool = True
    seed: int = 0
    k: int = 5
    sigma: float = 0.05
    tau: float = 0.1
    n_per_cluster: int = 500

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if not self.temp > 0:
            raise ConfigError(f"temp must be > 0, got {self.temp}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        if not 0.0 <= self.ema_tau <= 1.0:
            raise ConfigError(f"ema_tau must lie in [0, 1], got {self.ema_tau}")

    @property
    def mixture(self) -> GaussianMixtureSpec:
        return GaussianMixtureSpec(self.k, self.sigma, self.tau, self.n_per_cluster, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainData:
    spec: GaussianMixtureSpec
    base: np.ndarray
    labels: np.ndarray
    val: PairedBatch

    @classmethod
    def from_spec(cls, spec: GaussianMixtureSpec) -> "TrainData":
        base, labels = generate_dataset(spec)
        return cls(spec, base, labels, validation_views(spec))

    def epoch_views(self, epoch: int, resample: bool = True) -> PairedBatch:
        # with resampling off every epoch sees the epoch-1 draw
        key = epoch if resample else 1
        return make_paired_views(self.base, self.spec.tau, self.spec.seed, self.labels, stream=("epoch", key))


@dataclass
class TrainerOutput:
    config: TrainConfig
    encoders: dict[str, EncoderParams]
    predictors: dict[str, PredictorParams]
    trace: list[MITrace]
    trajectories: dict[str, list[np.ndarray]]
    losses: list[float] = field(default_factory=list)

    @property
    def final(self) -> MITrace:
        return self.trace[-1]


class SGD:
    """Plain SGD with optional weight decay and per-step cosine annealing."""

    def __init__(self, params: list[Tensor], lr: float, total_steps: int, schedule: str = "cosine",
                 weight_decay: float = 0.0):
        self.params = params
        self.lr0 = lr
        self.total_steps = max(int(total_steps), 1)
        self.schedule = schedule
        self.weight_decay = weight_decay
        self.t = 0

    def lr_at(self, t: int) -> float:
        if self.schedule == "constant":
            return self.lr0
        return self.lr0 * 0.5 * (1.0 + math.cos(math.pi * t / self.total_steps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        lr = self.lr_at(self.t)
        for p in self.params:
            g = p.grad if p.grad is not None else 0.0
            new = p.data - lr * (g + self.weight_decay * p.data)
            new.flags.writeable = False
            p.data = new
        self.t += 1


def _check_finite(params: list[Tensor], where: str) -> None:
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"non-finite parameter #{i} {p.shape} after {where}")


def _assert_frozen(params: list[Tensor], where: str) -> None:
    for p in params:
        if p.grad is not None and np.any(p.grad != 0):
            raise AssertionError(f"stop-gradient violated during {where}: frozen block received gradient")


def _batches(n: int, config: TrainConfig, epoch: int, label: str) -> list[np.ndarray]:
    if config.full_batch or config.batch_size >= n:
        return [np.arange(n)]
    order = substream(config.seed, "shuffle", epoch, label).permutation(n)
    out = [order[i: i + config.batch_size] for i in range(0, n, config.batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def _steps_per_epoch(n: int, config: TrainConfig) -> int:
    if config.full_batch or config.batch_size >= n:
        return 1
    full, rem = divmod(n, config.batch_size)
    return full + (1 if rem >= 2 else 0)


def _sg_pair(loss_fn: Callable, live: tuple[Tensor, Tensor], frozen: tuple[Tensor, Tensor], temp) -> obj.LossBreakdown:
    """0.5 [L(live1, SG frozen2) + L(live2, SG frozen1)]."""
    ab = loss_fn(live[0], ad.stop_gradient(frozen[1]), temp)
    ba = loss_fn(live[1], ad.stop_gradient(frozen[0]), temp)
    return obj.LossBreakdown(ad.scalar_mul(ab.loss + ba.loss, 0.5), 0.5 * (ab.joint_term + ba.joint_term),
                             0.5 * (ab.marginal_term + ba.marginal_term))


# called after every recorded epoch (including epoch 0) with the tracked encoders
EpochHook = Callable[[int, dict[str, EncoderParams]], None]


class _Run:
    """Shared bookkeeping: data, evaluation cadence and trace assembly."""

    def __init__(self, config: TrainConfig, data: TrainData | None, on_epoch: EpochHook | None = None):
        config.validate()
        self.on_epoch = on_epoch
        self.config = config
        self.data = data if data is not None else TrainData.from_spec(config.mixture)
        self.n = len(self.data.base)
        self.total_steps = config.epochs * _steps_per_epoch(self.n, config)
        self.trace: list[MITrace] = []
        self.trajectories: dict[str, list[np.ndarray]] = {}
        self.losses: list[float] = []

    def optimizer(self, *groups) -> SGD:
        params = [p for g in groups for p in g.parameters()]
        c = self.config
        return SGD(params, c.lr, self.total_steps, c.schedule, c.weight_decay)

    def record(self, epoch: int, mi, online: EncoderParams, **tracked: EncoderParams) -> None:
        self.trace.append(geometry_row(epoch, mi, online, self.data.val, self.data.spec))
        for name, enc in tracked.items():
            self.trajectories.setdefault(name, []).append(track_centers(enc, self.data.spec))
        if self.on_epoch is not None:
            self.on_epoch(epoch, tracked)
        row = self.trace[-1]
        log.debug("epoch %d mi=%s nn_gap=%.2f cos=%.4f", epoch, mi, row.nn_gap_mean, row.mean_pairwise_cos)

    def mi(self, a: EncoderParams, b: EncoderParams):
        return estimate_mi_epoch(a, b, self.data.val, self.config.temp)

    def output(self, encoders: dict, predictors: dict) -> TrainerOutput:
        return TrainerOutput(self.config, encoders, predictors, self.trace, self.trajectories, self.losses)


def train_sdmi(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    """Alternating E-pass (update f, g frozen) and M-pass (update g, f frozen) per epoch."""
    if config.method not in SDMI_FAMILY:
        raise ConfigError(f"train_sdmi cannot run method {config.method!r}")
    run = _Run(config, data, on_epoch)
    c = config
    f = init_encoder(c.seed, "f")
    g = init_encoder(c.seed, "g")
    use_pred = c.method == "sdmi-nodv-pred"
    loss_fn = obj.cos_dv_loss if c.method == "sdmi" else obj.joint_only_loss
    predictors: dict[str, PredictorParams] = {}
    if use_pred:
        predictors = {"f": init_predictor(c.seed, "f", hidden=c.predictor_hidden),
                      "g": init_predictor(c.seed, "g", hidden=c.predictor_hidden)}
    if use_pred:
        opt_f, opt_g = run.optimizer(f, predictors["f"]), run.optimizer(g, predictors["g"])
    else:
        opt_f, opt_g = run.optimizer(f), run.optimizer(g)

    run.record(0, run.mi(f, g), f, f=f, g=g)
    for epoch in range(1, c.epochs + 1):
        views = run.data.epoch_views(epoch, c.resample_views)
        epoch_loss = 0.0
        for phase, live, frozen, opt in (("E", f, g, opt_f), ("M", g, f, opt_g)):
            head = predictors.get("f" if phase == "E" else "g")
            for idx in _batches(run.n, c, epoch, phase):
                b = views.subset(idx)
                opt.zero_grad()
                frozen_params = frozen.parameters()
                for p in frozen_params:
                    p.grad = None
                z_live = (encode(live, b.x1, TRAIN), encode(live, b.x2, TRAIN))
                z_frozen = (encode(frozen, b.x1, TRAIN), encode(frozen, b.x2, TRAIN))
                if head is not None:
                    z_live = (predict(head, z_live[0]), predict(head, z_live[1]))
                loss = _sg_pair(loss_fn, z_live, z_frozen, c.temp)
                loss.loss.backward()
                _assert_frozen(frozen_params, f"{phase}-step")
                opt.step()
                _check_finite(opt.params, f"{phase}-step of epoch {epoch}")
                epoch_loss += loss.total
        run.losses.append(epoch_loss)
        run.record(epoch, run.mi(f, g), f, f=f, g=g)
    return run.output({"f": f, "g": g}, predictors)


def train_jmi(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    """One shared encoder; symmetric cos-DV on both views, one joint step per minibatch."""
    if config.method != "jmi":
        raise ConfigError(f"train_jmi cannot run method {config.method!r}")
    run = _Run(config, data, on_epoch)
    c = config
    f = init_encoder(c.seed, "f")
    opt = run.optimizer(f)
    run.record(0, run.mi(f, f), f, f=f)
    for epoch in range(1, c.epochs + 1):
        views = run.data.epoch_views(epoch, c.resample_views)
        epoch_loss = 0.0
        for idx in _batches(run.n, c, epoch, "joint"):
            b = views.subset(idx)
            opt.zero_grad()
            loss = obj.symmetric(obj.cos_dv_loss, encode(f, b.x1, TRAIN), encode(f, b.x2, TRAIN), c.temp)
            loss.loss.backward()
            opt.step()
            _check_finite(opt.params, f"step of epoch {epoch}")
            epoch_loss += loss.total
        run.losses.append(epoch_loss)
        run.record(epoch, run.mi(f, f), f, f=f)
    return run.output({"f": f}, {})


def _neg_cos(p: Tensor, z: Tensor, temp) -> obj.LossBreakdown:
    loss = obj.neg_cosine_loss(p, z)
    return obj.LossBreakdown(loss, -loss.item(), 0.0)


def train_simsiam_style(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    """Single encoder whose target branch is a per-step copy of itself.

    Resetting the target to the online weights after every optimizer step means
    the target output within a step equals ``stop_gradient`` of the online output,
    which is how it is computed here.
    """
    if config.method not in SIMSIAM_FAMILY:
        raise ConfigError(f"train_simsiam_style cannot run method {config.method!r}")
    run = _Run(config, data, on_epoch)
    c = config
    f = init_encoder(c.seed, "f")
    head = init_predictor(c.seed, "f", hidden=c.predictor_hidden) if c.method == "simsiam" else None
    loss_fn = obj.cos_dv_loss if c.method == "simsiam-sdmi" else _neg_cos
    opt = run.optimizer(f, head) if head is not None else run.optimizer(f)
    run.record(0, (None, None, None), f, f=f)
    previous = copy_params(f)
    for epoch in range(1, c.epochs + 1):
        views = run.data.epoch_views(epoch, c.resample_views)
        epoch_loss = 0.0
        for idx in _batches(run.n, c, epoch, "online"):
            b = views.subset(idx)
            opt.zero_grad()
            z = (encode(f, b.x1, TRAIN), encode(f, b.x2, TRAIN))
            p = z if head is None else (predict(head, z[0]), predict(head, z[1]))
            loss = _sg_pair(loss_fn, p, z, c.temp)
            loss.loss.backward()
            opt.step()
            _check_finite(opt.params, f"step of epoch {epoch}")
            epoch_loss += loss.total
        run.losses.append(epoch_loss)
        run.record(epoch, run.mi(f, previous), f, f=f)
        previous = copy_params(f)
    return run.output({"f": f}, {"f": head} if head is not None else {})


def train_byol_style(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    """Online encoder + predictor against an EMA target encoder."""
    if config.method != "byol":
        raise ConfigError(f"train_byol_style cannot run method {config.method!r}")
    run = _Run(config, data, on_epoch)
    c = config
    f = init_encoder(c.seed, "f")
    head = init_predictor(c.seed, "f", hidden=c.predictor_hidden) if c.byol_predictor else None
    target = copy_params(f)
    opt = run.optimizer(f, head) if head is not None else run.optimizer(f)
    run.record(0, run.mi(f, target), f, f=f, target=target)
    for epoch in range(1, c.epochs + 1):
        views = run.data.epoch_views(epoch, c.resample_views)
        epoch_loss = 0.0
        for idx in _batches(run.n, c, epoch, "online"):
            b = views.subset(idx)
            opt.zero_grad()
            z = (encode(f, b.x1, TRAIN), encode(f, b.x2, TRAIN))
            p = z if head is None else (predict(head, z[0]), predict(head, z[1]))
            zt = (encode(target, b.x1, TRAIN), encode(target, b.x2, TRAIN))
            loss = _sg_pair(_neg_cos, p, zt, c.temp)
            loss.loss.backward()
            opt.step()
            _check_finite(opt.params, f"step of epoch {epoch}")
            ema_update(target, f, c.ema_tau)
            epoch_loss += loss.total
        run.losses.append(epoch_loss)
        run.record(epoch, run.mi(f, target), f, f=f, target=target)
    return run.output({"f": f, "target": target}, {"f": head} if head is not None else {})


def train_ablation(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    if config.method not in ("sdmi-nodv", "sdmi-nodv-pred"):
        raise ConfigError(f"train_ablation cannot run method {config.method!r}")
    return train_sdmi(config, data, on_epoch)


TRAINERS: dict[str, Callable[..., TrainerOutput]] = {
    "sdmi": train_sdmi,
    "jmi": train_jmi,
    "simsiam": train_simsiam_style,
    "simsiam-nopred": train_simsiam_style,
    "simsiam-sdmi": train_simsiam_style,
    "byol": train_byol_style,
    "sdmi-nodv": train_ablation,
    "sdmi-nodv-pred": train_ablation,
}


def train(
    config: TrainConfig, data: TrainData | None = None, on_epoch: EpochHook | None = None
) -> TrainerOutput:
    config.validate()
    return TRAINERS[config.method](config, data, on_epoch)
