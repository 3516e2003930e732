"""Period schedules for rollback refine-tuning and its control strategies.

``rollback`` trains in M periods: period 1 is a plain fine-tune; entering
period p >= 2 restores every block with index >= p to its pre-trained
snapshot while blocks below p (and the classifier) keep their trained
weights. ``base_cy`` replays the identical learning-rate timeline without
restoring weights, ``baseline`` is one long conventional fine-tune,
``fc_warmup`` trains the classifier on frozen blocks before a baseline
run, and ``remain_block(i)`` rolls back everything except block i after a
baseline run.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .model import FC_GROUP, NetworkParams, block_group_id
from .optim import GroupedSGD

STRATEGY_KINDS = ("rollback", "baseline", "base_cy", "fc_warmup", "remain_block")


@dataclass(frozen=True)
class Strategy:
    kind: str
    remain_index: int | None = None

    def validate(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValidationError(
                f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if self.kind == "remain_block" and self.remain_index is None:
            raise ValidationError("remain_block strategy needs a block index")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """Parse CLI notation, e.g. 'rollback' or 'remain_block=2'."""
        if text.startswith("remain_block"):
            _, _, idx = text.partition("=")
            if not idx:
                raise ValidationError("use remain_block=<index>")
            return cls("remain_block", int(idx))
        s = cls(text)
        s.validate()
        return s

    def label(self) -> str:
        if self.kind == "remain_block":
            return f"remain_block={self.remain_index}"
        return self.kind


@dataclass(frozen=True)
class ScheduleConfig:
    """Learning-rate constants and period budgets shared by all strategies."""

    periods: int = 4
    epochs_per_period: int = 40
    decay_every: int = 20
    decay_factor: float = 0.1
    extractor_lr: float = 0.01
    classifier_lr: float = 0.1
    retained_lr: float = 0.001
    refine_fc_lr: float = 0.01
    warmup_epochs: int = 20

    def validate(self) -> None:
        if self.periods < 1:
            raise ValidationError(f"periods must be >= 1, got {self.periods}")
        if self.epochs_per_period < 1 or self.warmup_epochs < 1:
            raise ValidationError("epoch budgets must be >= 1")
        if self.decay_every < 1:
            raise ValidationError(f"decay_every must be >= 1, got {self.decay_every}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValidationError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        for name in ("extractor_lr", "classifier_lr", "retained_lr", "refine_fc_lr"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")


@dataclass(frozen=True)
class PeriodPlan:
    """One refine-tuning period: block partition, lrs and epoch budget."""

    index: int
    retained: frozenset[int]
    rolled_back: frozenset[int]
    lrs: dict[str, float]
    epochs: int
    momentum_reset: bool
    restore_weights: bool
    frozen_groups: frozenset[str] = frozenset()
    decay_epochs: tuple[int, ...] = ()

    def tuned_label(self) -> str:
        if not self.retained and self.index == 1:
            return "FC" if self.frozen_groups else "none"
        parts = [f"B{i}" for i in sorted(self.retained)]
        parts.append("FC")
        return "+".join(parts)


# -- snapshot store ----------------------------------------------------


@dataclass(frozen=True)
class GroupSnapshot:
    tensors: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]


class SnapshotStore:
    """Immutable copy of the pre-trained block weights and running stats.

    The classifier group is deliberately absent: it is re-initialized per
    task and never rolled back.
    """

    def __init__(self, groups: dict[str, GroupSnapshot]):
        for snap in groups.values():
            for arr in (*snap.tensors.values(), *snap.stats.values()):
                arr.setflags(write=False)
        self._groups = groups

    @classmethod
    def from_params(cls, params: NetworkParams) -> "SnapshotStore":
        groups = {}
        for g in params.blocks:
            groups[g.group_id] = GroupSnapshot(
                tensors={name: t.data.copy() for name, t in g.tensors.items()},
                stats={name: a.copy() for name, a in g.stats.items()})
        return cls(groups)

    @property
    def group_ids(self) -> list[str]:
        return list(self._groups)

    def group(self, group_id: str) -> GroupSnapshot:
        try:
            return self._groups[group_id]
        except KeyError:
            raise ValidationError(f"snapshot has no group {group_id!r}") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        for gid in sorted(self._groups):
            h.update(group_snapshot_digest(self._groups[gid]).encode())
        return h.hexdigest()

    def group_digest(self, group_id: str) -> str:
        return group_snapshot_digest(self.group(group_id))


def _digest_arrays(items: list[tuple[str, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(items):
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def group_snapshot_digest(snap: GroupSnapshot) -> str:
    return _digest_arrays([*snap.tensors.items(), *snap.stats.items()])


def group_digest(params: NetworkParams, group_id: str,
                 include_stats: bool = True) -> str:
    g = params.group(group_id)
    items = [(n, t.data) for n, t in g.tensors.items()]
    if include_stats:
        items += list(g.stats.items())
    return _digest_arrays(items)


def params_digests(params: NetworkParams, include_stats: bool = True
                   ) -> dict[str, str]:
    return {g.group_id: group_digest(params, g.group_id, include_stats)
            for g in params.groups()}


def snapshot(params: NetworkParams) -> SnapshotStore:
    """Deep-copy all block groups; later training leaves the copy untouched."""
    return SnapshotStore.from_params(params)


def restore_blocks(params: NetworkParams, store: SnapshotStore,
                   indices) -> NetworkParams:
    """Copy the snapshot back into the listed blocks (weights and BN stats)."""
    for i in sorted(indices):
        gid = block_group_id(i)
        snap = store.group(gid)
        live = params.group(gid)
        for name, t in live.tensors.items():
            src = snap.tensors.get(name)
            if src is None or src.shape != t.data.shape:
                raise ShapeError(
                    f"snapshot mismatch for {gid}/{name}: "
                    f"{None if src is None else src.shape} vs {t.data.shape}")
            np.copyto(t.data, src)
        for name, arr in live.stats.items():
            src = snap.stats.get(name)
            if src is None or src.shape != arr.shape:
                raise ShapeError(f"snapshot mismatch for {gid}/{name}")
            np.copyto(arr, src)
    return params


def apply_rollback(params: NetworkParams, store: SnapshotStore, p: int
                   ) -> NetworkParams:
    """Roll every block with index >= p back to the snapshot.

    Blocks below p and the classifier keep their current weights.
    """
    if p < 2:
        raise ValidationError(f"rollback period index must be >= 2, got {p}")
    n = params.config.num_blocks
    return restore_blocks(params, store, [i for i in range(1, n + 1) if i >= p])


# -- schedule construction ----------------------------------------------


def _decay_epochs(total_epochs: int, cfg: ScheduleConfig) -> tuple[int, ...]:
    # decay only within the first period-length; longer plans hold the lr after it
    limit = min(total_epochs, cfg.epochs_per_period)
    return tuple(range(cfg.decay_every, limit, cfg.decay_every))


def _block_ids(num_blocks: int) -> list[str]:
    return [block_group_id(i) for i in range(1, num_blocks + 1)]


def _first_period_lrs(num_blocks: int, cfg: ScheduleConfig) -> dict[str, float]:
    lrs = {gid: cfg.extractor_lr for gid in _block_ids(num_blocks)}
    lrs[FC_GROUP] = cfg.classifier_lr
    return lrs


def _refine_lrs(num_blocks: int, retained: frozenset[int],
                cfg: ScheduleConfig) -> dict[str, float]:
    lrs = {}
    for i in range(1, num_blocks + 1):
        lrs[block_group_id(i)] = cfg.retained_lr if i in retained else cfg.extractor_lr
    lrs[FC_GROUP] = cfg.refine_fc_lr
    return lrs


def _baseline_plan(num_blocks: int, cfg: ScheduleConfig, index: int = 1) -> PeriodPlan:
    total = cfg.periods * cfg.epochs_per_period
    return PeriodPlan(index=index, retained=frozenset(), rolled_back=frozenset(),
                      lrs=_first_period_lrs(num_blocks, cfg), epochs=total,
                      momentum_reset=False, restore_weights=False,
                      decay_epochs=_decay_epochs(total, cfg))


def build_schedule(strategy: Strategy, cfg: ScheduleConfig,
                   num_blocks: int) -> list[PeriodPlan]:
    """Ordered period plans for a strategy over an N-block extractor."""
    strategy.validate()
    cfg.validate()
    e = cfg.epochs_per_period

    if strategy.kind in ("rollback", "base_cy"):
        if cfg.periods > num_blocks:
            raise ValidationError(
                f"{strategy.kind} supports at most {num_blocks} periods, got {cfg.periods}")
        plans = [PeriodPlan(index=1, retained=frozenset(), rolled_back=frozenset(),
                            lrs=_first_period_lrs(num_blocks, cfg), epochs=e,
                            momentum_reset=False, restore_weights=False,
                            decay_epochs=_decay_epochs(e, cfg))]
        for p in range(2, cfg.periods + 1):
            retained = frozenset(range(1, p))
            rolled = frozenset(range(p, num_blocks + 1))
            plans.append(PeriodPlan(index=p, retained=retained, rolled_back=rolled,
                                    lrs=_refine_lrs(num_blocks, retained, cfg), epochs=e,
                                    momentum_reset=True, restore_weights=True,
                                    decay_epochs=_decay_epochs(e, cfg)))
        if strategy.kind == "base_cy":
            # identical partition and lr timing; weights are never restored
            plans = [dataclasses.replace(p, restore_weights=False) for p in plans]
        return plans

    if strategy.kind == "baseline":
        return [_baseline_plan(num_blocks, cfg)]

    if strategy.kind == "fc_warmup":
        warm = PeriodPlan(index=1, retained=frozenset(), rolled_back=frozenset(),
                          lrs={FC_GROUP: cfg.classifier_lr}, epochs=cfg.warmup_epochs,
                          momentum_reset=False, restore_weights=False,
                          frozen_groups=frozenset(_block_ids(num_blocks)),
                          decay_epochs=_decay_epochs(cfg.warmup_epochs, cfg))
        return [warm, dataclasses.replace(_baseline_plan(num_blocks, cfg, index=2),
                                          momentum_reset=True)]

    # remain_block(i): baseline fine-tune, then roll back every other block
    i = strategy.remain_index
    if not 1 <= i <= num_blocks:
        raise ValidationError(
            f"remain_block index must be in [1, {num_blocks}], got {i}")
    retained = frozenset({i})
    rolled = frozenset(j for j in range(1, num_blocks + 1) if j != i)
    refine = PeriodPlan(index=2, retained=retained, rolled_back=rolled,
                        lrs=_refine_lrs(num_blocks, retained, cfg), epochs=e,
                        momentum_reset=True, restore_weights=True,
                        decay_epochs=_decay_epochs(e, cfg))
    return [_baseline_plan(num_blocks, cfg), refine]


def base_cy_lr_maps(plans: list[PeriodPlan]) -> list[dict[str, float]]:
    return [dict(p.lrs) for p in plans]


# -- applying a plan ------------------------------------------------------


def period_boundary(params: NetworkParams, optimizer: GroupedSGD,
                    store: SnapshotStore, plan: PeriodPlan) -> None:
    """Enter a period: restore weights if the plan demands, set per-group
    lrs, apply freezes, and zero momentum buffers when requested."""
    if plan.restore_weights:
        restore_blocks(params, store, plan.rolled_back)
    optimizer.begin_period()
    for gid in optimizer.group_ids:
        optimizer.set_frozen(gid, gid in plan.frozen_groups)
    for gid, lr in plan.lrs.items():
        optimizer.set_group_lr(gid, lr)
    if plan.momentum_reset:
        optimizer.reset_momentum()


# -- manifest / timeline ---------------------------------------------------


def _fmt(x: float) -> str:
    return format(x, "g")


def format_schedule(strategy: Strategy, plans: list[PeriodPlan],
                    num_blocks: int) -> str:
    """Human-readable one-line-per-period manifest of a schedule."""
    lines = [f"# schedule strategy={strategy.label()} periods={len(plans)}"]
    group_ids = _block_ids(num_blocks) + [FC_GROUP]
    for plan in plans:
        rolled = "+".join(f"B{i}" for i in sorted(plan.rolled_back)) or "none"
        decay = ",".join(str(e) for e in plan.decay_epochs) or "none"
        lr_parts = []
        for gid in group_ids:
            if gid in plan.frozen_groups:
                lr_parts.append(f"lr[{gid}]=frozen")
            elif gid in plan.lrs:
                lr_parts.append(f"lr[{gid}]={_fmt(plan.lrs[gid])}")
        lines.append(
            f"period={plan.index} epochs={plan.epochs} tuned={plan.tuned_label()} "
            f"rollback={rolled if plan.restore_weights else 'none'} "
            f"momentum_reset={'yes' if plan.momentum_reset else 'no'} "
            f"decay@{decay} " + " ".join(lr_parts))
    return "\n".join(lines) + "\n"


def lr_timeline(plans: list[PeriodPlan], cfg: ScheduleConfig,
                num_blocks: int) -> list[tuple[int, dict[str, float]]]:
    """Effective per-group lr for every global epoch, replaying boundaries
    and step decay exactly as the trainer applies them. Frozen groups are
    reported as lr 0."""
    group_ids = _block_ids(num_blocks) + [FC_GROUP]
    current = {gid: 0.0 for gid in group_ids}
    timeline = []
    epoch = 0
    for plan in plans:
        current.update(plan.lrs)
        for e in range(plan.epochs):
            if e in plan.decay_epochs:
                for gid in current:
                    current[gid] *= cfg.decay_factor
            effective = {gid: (0.0 if gid in plan.frozen_groups else current[gid])
                         for gid in group_ids}
            timeline.append((epoch, effective))
            epoch += 1
    return timeline
