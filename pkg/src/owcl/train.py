"""Class-incremental trainers: MoRST, plain experience replay, DER++-style replay.

All three share one loop; they differ only in the loss. Each mini-batch of
current-task data is joined with a replay batch drawn from the buffer.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .datagen import concat_batches
from .errors import InputError, NumericError
from .memory import Policy, ReplayBuffer
from .model import ArchConfig, MultimodalNet
from .numcore import Optimizer, OptimizerKind, cross_entropy_batch, make_rng

log = logging.getLogger(__name__)


class TrainerKind(str, Enum):
    MORST = "morst"
    ER = "er"
    DERPP_STYLE = "derpp_style"


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.3
    beta: float = 0.08
    epochs: int = 20
    batch_size: int = 32
    replay_batch_size: int = 0  # 0 means "same as batch_size"
    lr_sgd: float = 0.05
    lr_rmsprop: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    decay_epochs: tuple = (8, 14)
    decay_factor: float = 0.1
    buffer_capacity: int = 320
    buffer_policy: str = Policy.RANDOM_BALANCED.value
    stats_ddof: int = 0
    trainer: str = TrainerKind.MORST.value
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        for name in ("lam", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InputError(f"{name} must be finite and >= 0, got {v}")
        TrainerKind(self.trainer)
        Policy(self.buffer_policy)

    @property
    def replay_k(self):
        return self.replay_batch_size or self.batch_size

    def lr_scale(self, epoch):
        return self.decay_factor ** sum(1 for e in self.decay_epochs if epoch >= e)


@dataclass(frozen=True)
class LossBreakdown:
    l_ce_main: float
    l_ce_modality_avg: float
    l_sup: float
    l_kd: float
    l_total: float


def _kd_residual(current, stored, lengths):
    """current - stored on the first ``lengths[i]`` entries of each row, zero elsewhere."""
    width = stored.shape[1]
    mask = np.arange(width)[None, :] < lengths[:, None]
    diff = np.zeros_like(current)
    diff[:, :width] = np.where(mask, current[:, :width] - stored, 0.0)
    return diff


def _joined(batch, replay):
    if batch is None or len(batch) == 0:
        if replay is None or len(replay.batch) == 0:
            raise InputError("empty batch and empty replay")
        return replay.batch
    if replay is None:
        return batch
    return concat_batches(batch, replay.batch)


def morst_loss(net, batch, replay, config):
    """Supervised main + modality-head cross-entropy plus per-modality logit distillation.

    Cross-entropy terms average over the joined batch; the distillation term
    sums over modalities and classes and averages over replay exemplars.
    Returns ``(LossBreakdown, grads)``.
    """
    data = _joined(batch, replay)
    out = net.forward(data.features)
    l_main, g_main = cross_entropy_batch(out.z_main, data.labels)
    mods = net.modalities
    coef = config.lam / len(mods)
    g_mod = {}
    l_mod_sum = 0.0
    for m in mods:
        l_m, g_m = cross_entropy_batch(out.z_m[m], data.labels)
        l_mod_sum += l_m
        g_mod[m] = coef * g_m
    l_mod = l_mod_sum / len(mods)
    l_kd = 0.0
    if replay is not None and len(replay.batch):
        r = len(replay.batch)
        for m in mods:
            diff = _kd_residual(out.z_m[m][-r:], replay.stored[m], replay.lengths)
            l_kd += float(np.sum(diff * diff)) / r
            g_mod[m][-r:] += config.beta * 2.0 * diff / r
    l_sup = l_main + config.lam * l_mod
    parts = LossBreakdown(l_main, l_mod, l_sup, l_kd, l_sup + config.beta * l_kd)
    return parts, net.backward(out, g_main, g_mod)


def er_loss(net, batch, replay, config):
    data = _joined(batch, replay)
    out = net.forward(data.features)
    l_main, g_main = cross_entropy_batch(out.z_main, data.labels)
    return LossBreakdown(l_main, 0.0, l_main, 0.0, l_main), net.backward(out, g_main)


def derpp_style_loss(net, batch, replay, config):
    """Cross-entropy on fused logits plus squared error to stored fused logits."""
    data = _joined(batch, replay)
    out = net.forward(data.features)
    l_main, g_main = cross_entropy_batch(out.z_main, data.labels)
    l_kd = 0.0
    if replay is not None and len(replay.batch):
        r = len(replay.batch)
        diff = _kd_residual(out.z_main[-r:], replay.fused, replay.lengths)
        l_kd = float(np.sum(diff * diff)) / r
        g_main[-r:] += config.beta * 2.0 * diff / r
    parts = LossBreakdown(l_main, 0.0, l_main, l_kd, l_main + config.beta * l_kd)
    return parts, net.backward(out, g_main)


LOSSES = {
    TrainerKind.MORST: morst_loss,
    TrainerKind.ER: er_loss,
    TrainerKind.DERPP_STYLE: derpp_style_loss,
}


class OptimizerGroups:
    """The first modality's encoder uses SGD, other encoders RMSProp, the rest SGD."""

    def __init__(self, net, config):
        self.config = config
        self.groups = []
        first = net.modalities[0]
        sgd_names, rms_names = [], []
        for name in net.params():
            if name.startswith("enc.") and name.split(".")[1] != first:
                rms_names.append(name)
            else:
                sgd_names.append(name)
        self.groups.append((Optimizer(OptimizerKind.SGD, config.lr_sgd), config.lr_sgd, sgd_names))
        self.groups.append((
            Optimizer(OptimizerKind.RMSPROP, config.lr_rmsprop, config.rmsprop_decay, config.rmsprop_epsilon),
            config.lr_rmsprop,
            rms_names,
        ))

    def set_epoch(self, epoch):
        scale = self.config.lr_scale(epoch)
        for opt, base, _ in self.groups:
            opt.learning_rate = base * scale

    def step(self, net, grads):
        params = net.params()
        for opt, _, names in self.groups:
            opt.step(params, {n: grads[n] for n in names})

    def learning_rates(self):
        return tuple(opt.learning_rate for opt, _, _ in self.groups)


@dataclass
class EpochLog:
    task: int
    epoch: int
    losses: LossBreakdown
    learning_rates: tuple


def train_task(net, buffer, task, config, rng, optimizers=None):
    """Train ``net`` in place on one task; returns ``(snapshot, epoch_logs)``."""
    loss_fn = LOSSES[TrainerKind(config.trainer)]
    optimizers = optimizers or OptimizerGroups(net, config)
    data = task.train_batch
    n = len(data)
    replay_all = buffer.arrays() if buffer is not None and len(buffer) else None
    logs = []
    for epoch in range(config.epochs):
        optimizers.set_epoch(epoch)
        order = rng.permutation(n)
        sums = np.zeros(5)
        nb = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = data.take(order[start:start + config.batch_size])
            replay = None
            if replay_all is not None:
                replay = replay_all.take(buffer.sample_indices(config.replay_k, rng))
            parts, grads = loss_fn(net, batch, replay, config)
            if not np.isfinite(parts.l_total):
                raise NumericError(f"non-finite loss at task {task.index} epoch {epoch} batch {b}")
            optimizers.step(net, grads)
            sums += (parts.l_ce_main, parts.l_ce_modality_avg, parts.l_sup, parts.l_kd, parts.l_total)
            nb += 1
        logs.append(EpochLog(task.index, epoch, LossBreakdown(*(sums / max(nb, 1))),
                             optimizers.learning_rates()))
    return net.copy(), logs


@dataclass
class StreamResult:
    snapshots: list
    stats: list
    buffer: ReplayBuffer
    buffer_digests: list
    buffer_class_counts: list
    logs: list


def new_net(stream, config, rng):
    return MultimodalNet(stream.modalities, stream.dims, len(stream.tasks[0].classes), rng, config.arch)


def run_stream(stream, config, seed):
    """Train across every task of ``stream`` and keep a frozen snapshot per task.

    After each task the buffer admits exemplars (recording logits with the
    post-task snapshot) and its energy statistics are refreshed and frozen.
    """
    rng = make_rng(seed)
    net = new_net(stream, config, rng)
    buffer = ReplayBuffer(stream.modalities, config.buffer_capacity, config.buffer_policy, config.stats_ddof)
    optimizers = OptimizerGroups(net, config)
    res = StreamResult([], [], buffer, [], [], [])
    for t, task in enumerate(stream.tasks):
        net.expand_classes(len(stream.seen_classes(t)), rng)
        snapshot, logs = train_task(net, buffer, task, config, rng, optimizers)
        buffer.insert_task(task.train, snapshot, rng, t)
        res.stats.append(buffer.refresh_stats(snapshot))
        res.snapshots.append(snapshot)
        res.buffer_digests.append(buffer.logits_digest())
        res.buffer_class_counts.append(buffer.class_counts())
        res.logs.extend(logs)
        log.debug("task %d done: total loss %.4f", t, logs[-1].losses.l_total if logs else float("nan"))
    return res


def with_trainer(config, kind, **overrides):
    return replace(config, trainer=TrainerKind(kind).value, **overrides)
