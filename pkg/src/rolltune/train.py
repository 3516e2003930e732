"""Mini-batch cross-entropy training across a period schedule.

``run`` snapshots the incoming (pre-trained) block weights, then executes
each period plan in order: boundary actions first, then shuffled
mini-batch SGD with optional horizontal-flip augmentation. ``pretrain``
trains a fresh network on the source task and rebuilds the classifier
head for the target label space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import TrainingDiverged, ValidationError
from .metrics import evaluate_retrieval
from .model import (NetworkConfig, NetworkParams, build_network, forward_logits,
                    parameter_groups, rebuild_classifier)
from .optim import GroupedSGD
from .schedule import (PeriodPlan, ScheduleConfig, SnapshotStore, Strategy,
                       build_schedule, format_schedule, params_digests,
                       period_boundary, snapshot)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    seed: int = 0
    flip_augment: bool = True
    eval_every: int = 0
    eval_at_period_end: bool = False
    flip_fusion: bool = True

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValidationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.eval_every < 0:
            raise ValidationError("eval_every must be >= 0")


@dataclass
class TargetData:
    train: Dataset
    query: Dataset | None = None
    gallery: Dataset | None = None


@dataclass
class EpochRecord:
    epoch: int
    period: int
    loss: float
    lrs: dict[str, float]
    mean_ap: float | None = None
    rank1: float | None = None


@dataclass
class BoundaryRecord:
    period: int
    pre_digests: dict[str, str]          # weights + running stats
    post_digests: dict[str, str]
    pre_weight_digests: dict[str, str]   # trainable tensors only
    post_weight_digests: dict[str, str]
    lrs: dict[str, float]
    buffers_zero: bool


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    boundaries: list[BoundaryRecord] = field(default_factory=list)
    snapshot_digests: dict[str, str] = field(default_factory=dict)
    schedule_text: str = ""
    wall_clock: float = 0.0

    def losses(self) -> np.ndarray:
        return np.asarray([r.loss for r in self.records])

    def period_records(self, period: int) -> list[EpochRecord]:
        return [r for r in self.records if r.period == period]

    def to_csv(self, num_blocks: int) -> str:
        cols = ["epoch", "period", "loss"]
        cols += [f"lr_block{i}" for i in range(1, num_blocks + 1)]
        cols += ["lr_fc", "map", "rank1"]
        lines = [",".join(cols)]
        for r in self.records:
            row = [str(r.epoch), str(r.period), format(r.loss, ".10g")]
            row += [format(r.lrs[f"block{i}"], ".10g") for i in range(1, num_blocks + 1)]
            row.append(format(r.lrs["fc"], ".10g"))
            row.append("" if r.mean_ap is None else format(r.mean_ap, ".10g"))
            row.append("" if r.rank1 is None else format(r.rank1, ".10g"))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def flip_horizontal(batch: np.ndarray) -> np.ndarray:
    """Deterministic left-right mirror along the width axis."""
    return batch[:, :, :, ::-1].copy()


def augment_flip(batch: np.ndarray, rng: np.random.Generator,
                 probability: float = 0.5) -> np.ndarray:
    """Flip each sample left-right independently with the given probability."""
    if batch.ndim != 4:
        raise ValidationError(f"augment_flip expects a 4-D batch, got {batch.shape}")
    out = batch.copy()
    mask = rng.random(batch.shape[0]) < probability
    out[mask] = out[mask][:, :, :, ::-1]
    return out


def _train_one_epoch(params: NetworkParams, optimizer: GroupedSGD,
                     images: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                     shuffle_rng, flip_rng, epoch: int) -> float:
    from .tensor import backward, softmax_cross_entropy

    tensors = params.all_tensors()
    num_classes = params.config.num_classes
    order = shuffle_rng.permutation(images.shape[0])
    total, seen = 0.0, 0
    for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        if len(idx) < 2:
            continue  # batch norm needs at least 2 samples
        xb = images[idx]
        if cfg.flip_augment:
            xb = augment_flip(xb, flip_rng)
        yb = one_hot(labels[idx], num_classes, dtype=params.config.dtype)
        loss = softmax_cross_entropy(forward_logits(xb, params, "train"), yb)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at epoch {epoch}, batch {bi}")
        optimizer.step(backward(loss, params=tensors))
        total += value * len(idx)
        seen += len(idx)
    if seen == 0:
        raise ValidationError("dataset too small for the configured batch size")
    return total / seen


def run(params: NetworkParams, data: TargetData, strategy: Strategy,
        sched_cfg: ScheduleConfig, train_cfg: TrainConfig = TrainConfig(),
        checkpoint_dir=None, eval_ranks=(1, 5, 10)
        ) -> tuple[NetworkParams, TrainLog]:
    """Execute every period plan of the strategy over the target data.

    ``params`` must hold the pre-trained weights: the rollback snapshot is
    taken from them on entry. Labels must lie in [0, num_classes).
    """
    train_cfg.validate()
    started = time.perf_counter()
    store = snapshot(params)
    plans = build_schedule(strategy, sched_cfg, params.config.num_blocks)
    log = TrainLog(
        snapshot_digests={gid: store.group_digest(gid) for gid in store.group_ids},
        schedule_text=format_schedule(strategy, plans, params.config.num_blocks))

    initial_lrs = {gid: plans[0].lrs.get(gid, sched_cfg.extractor_lr)
                   for gid, _ in parameter_groups(params)}
    optimizer = GroupedSGD(parameter_groups(params), lr=initial_lrs)

    seq = np.random.SeedSequence(train_cfg.seed)
    shuffle_rng, flip_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    if checkpoint_dir is not None:
        from pathlib import Path
        from .serialize import save_checkpoint
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    global_epoch = 0
    for plan in plans:
        pre = params_digests(params)
        pre_w = params_digests(params, include_stats=False)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir / f"period_{plan.index:02d}_pre.ckpt", params)
        period_boundary(params, optimizer, store, plan)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir / f"period_{plan.index:02d}_post.ckpt", params)
        log.boundaries.append(BoundaryRecord(
            period=plan.index, pre_digests=pre, post_digests=params_digests(params),
            pre_weight_digests=pre_w,
            post_weight_digests=params_digests(params, include_stats=False),
            lrs=optimizer.effective_lrs(), buffers_zero=optimizer.buffers_zero()))

        for e in range(plan.epochs):
            if e in plan.decay_epochs:
                optimizer.step_decay(e, sched_cfg.decay_every, sched_cfg.decay_factor)
            loss = _train_one_epoch(params, optimizer, data.train.images,
                                    data.train.labels, train_cfg,
                                    shuffle_rng, flip_rng, global_epoch)
            record = EpochRecord(epoch=global_epoch, period=plan.index, loss=loss,
                                 lrs=optimizer.effective_lrs())
            due_eval = ((train_cfg.eval_every and
                         (global_epoch + 1) % train_cfg.eval_every == 0)
                        or (train_cfg.eval_at_period_end and e == plan.epochs - 1))
            if due_eval and data.query is not None and data.gallery is not None:
                report = evaluate_retrieval(params, data.query, data.gallery,
                                            flip_fusion=train_cfg.flip_fusion,
                                            ranks=eval_ranks)
                record.mean_ap = report.mean_ap
                record.rank1 = report.cmc[1]
            log.records.append(record)
            global_epoch += 1

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir / "final.ckpt", params,
                        optimizer_state=optimizer.state_arrays())
    log.wall_clock = time.perf_counter() - started
    return params, log


def pretrain(config: NetworkConfig, source: Dataset, epochs: int, seed: int = 0,
             batch_size: int = 32, flip_augment: bool = True,
             holdout_fraction: float = 0.1, lr_blocks: float = 0.01,
             lr_head: float = 0.1, decay_every: int = 20, decay_factor: float = 0.1
             ) -> tuple[NetworkParams, TrainLog, float | None]:
    """Train from scratch on the source task, then rebuild the head for the
    target label space. Returns (params, log, held-out source accuracy)."""
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    labels = np.asarray(source.labels)
    num_source = int(labels.max()) + 1
    src_config = replace(config, num_classes=num_source)
    params = build_network(src_config, seed)
    log = TrainLog()

    # deterministic per-class holdout: the last fraction of each class
    holdout = np.zeros(len(labels), dtype=bool)
    if holdout_fraction > 0:
        for c in range(num_source):
            idx = np.flatnonzero(labels == c)
            k = max(1, int(round(holdout_fraction * len(idx))))
            holdout[idx[-k:]] = True
    train_idx = np.flatnonzero(~holdout)

    if epochs > 0:
        optimizer = GroupedSGD(
            parameter_groups(params),
            lr={gid: (lr_head if gid == "fc" else lr_blocks)
                for gid, _ in parameter_groups(params)})
        cfg = TrainConfig(batch_size=batch_size, seed=seed, flip_augment=flip_augment)
        seq = np.random.SeedSequence(seed)
        shuffle_rng, flip_rng = (np.random.default_rng(s) for s in seq.spawn(2))
        for e in range(epochs):
            optimizer.step_decay(e, decay_every, decay_factor)
            loss = _train_one_epoch(params, optimizer, source.images[train_idx],
                                    labels[train_idx], cfg, shuffle_rng, flip_rng, e)
            log.records.append(EpochRecord(epoch=e, period=1, loss=loss,
                                           lrs=optimizer.effective_lrs()))

    accuracy = None
    if holdout.any() and epochs > 0:
        accuracy = classification_accuracy(params, source.images[holdout],
                                           labels[holdout], batch_size)
    return rebuild_classifier(params, config.num_classes, seed + 1), log, accuracy


def classification_accuracy(params: NetworkParams, images: np.ndarray,
                            labels: np.ndarray, batch_size: int = 64) -> float:
    from .tensor import no_grad

    correct = 0
    with no_grad():
        for start in range(0, len(labels), batch_size):
            xb = images[start:start + batch_size]
            logits = forward_logits(xb, params, mode="eval").data
            correct += int((logits.argmax(axis=1) == labels[start:start + len(xb)]).sum())
    return correct / len(labels)
