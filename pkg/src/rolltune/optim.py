"""SGD with Nesterov momentum and weight decay over named parameter groups.

Update per tensor: g' = g + wd*theta; v <- mu*v - lr*g';
theta <- theta + mu*v - lr*g' (look-ahead form). Learning rates are
per group; momentum buffers can be zeroed explicitly and the step decay
applies once per boundary within the current period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, ScheduleError, ValidationError
from .tensor import Tensor


@dataclass
class GroupState:
    """Per-group learning rate, momentum buffers and freeze flag."""

    group_id: str
    lr: float
    tensors: list[Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: bool = False


class GroupedSGD:
    def __init__(self, groups: list[tuple[str, list[Tensor]]],
                 lr: float | Mapping[str, float] = 0.01,
                 momentum: float = 0.9, weight_decay: float = 5e-4):
        if not 0.0 <= momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0.0:
            raise ValidationError(f"weight_decay must be >= 0, got {weight_decay}")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._groups: dict[str, GroupState] = {}
        self._decayed_epochs: set[int] = set()
        for gid, tensors in groups:
            glr = lr[gid] if isinstance(lr, Mapping) else lr
            self._check_lr(glr)
            state = GroupState(gid, float(glr), list(tensors))
            for t in tensors:
                if t.name is None:
                    raise ValidationError("optimizer tensors must be named")
                state.buffers[t.name] = np.zeros_like(t.data)
            self._groups[gid] = state

    @staticmethod
    def _check_lr(lr: float) -> None:
        if not lr > 0.0:
            raise ValidationError(f"learning rate must be > 0, got {lr}")

    # -- accessors -------------------------------------------------------

    @property
    def group_ids(self) -> list[str]:
        return list(self._groups)

    def group(self, group_id: str) -> GroupState:
        try:
            return self._groups[group_id]
        except KeyError:
            raise ValidationError(
                f"unknown group {group_id!r}; have {list(self._groups)}") from None

    @property
    def lrs(self) -> dict[str, float]:
        return {gid: st.lr for gid, st in self._groups.items()}

    def effective_lrs(self) -> dict[str, float]:
        """Per-group lrs with frozen groups reported as 0."""
        return {gid: (0.0 if st.frozen else st.lr) for gid, st in self._groups.items()}

    # -- mutation --------------------------------------------------------

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        """Apply one update; every tensor of every non-frozen group needs a gradient."""
        mu = self.momentum
        wd = self.weight_decay
        for st in self._groups.values():
            if st.frozen:
                continue
            lr = st.lr
            for t in st.tensors:
                g = grads.get(t)
                if g is None:
                    raise ContractError(f"missing gradient for parameter {t.name!r}")
                dt = t.data.dtype
                gp = g + dt.type(wd) * t.data
                buf = st.buffers[t.name]
                buf *= dt.type(mu)
                buf -= dt.type(lr) * gp
                t.data += dt.type(mu) * buf - dt.type(lr) * gp

    def set_group_lr(self, group_id: str, lr: float) -> None:
        self._check_lr(lr)
        self.group(group_id).lr = float(lr)

    def set_frozen(self, group_id: str, frozen: bool) -> None:
        self.group(group_id).frozen = bool(frozen)

    def reset_momentum(self) -> None:
        """Zero every momentum buffer; learning rates are untouched."""
        for st in self._groups.values():
            for buf in st.buffers.values():
                buf[...] = 0

    def buffers_zero(self) -> bool:
        return all(not buf.any() for st in self._groups.values()
                   for buf in st.buffers.values())

    def begin_period(self) -> None:
        """Reset the decay-boundary guard at a period boundary."""
        self._decayed_epochs.clear()

    def step_decay(self, epoch_in_period: int, decay_every: int, factor: float) -> bool:
        """Multiply every group lr by ``factor`` at a decay boundary.

        Boundaries are positive multiples of ``decay_every`` within the
        current period; a boundary can be applied only once.
        """
        if decay_every < 1:
            raise ValidationError(f"decay_every must be >= 1, got {decay_every}")
        if not 0.0 < factor <= 1.0:
            raise ValidationError(f"decay factor must be in (0, 1], got {factor}")
        if epoch_in_period <= 0 or epoch_in_period % decay_every != 0:
            return False
        if epoch_in_period in self._decayed_epochs:
            raise ScheduleError(
                f"decay boundary at period epoch {epoch_in_period} already applied")
        self._decayed_epochs.add(epoch_in_period)
        for st in self._groups.values():
            st.lr *= factor
        return True

    # -- checkpointing -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "hyper/momentum": np.asarray(self.momentum, dtype=np.float64),
            "hyper/weight_decay": np.asarray(self.weight_decay, dtype=np.float64),
            "decayed_epochs": np.asarray(sorted(self._decayed_epochs), dtype=np.int64),
        }
        for gid, st in self._groups.items():
            out[f"lr/{gid}"] = np.asarray(st.lr, dtype=np.float64)
            out[f"frozen/{gid}"] = np.asarray(int(st.frozen), dtype=np.int64)
            for name, buf in st.buffers.items():
                out[f"buffer/{name}"] = buf.copy()
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.momentum = float(arrays["hyper/momentum"])
        self.weight_decay = float(arrays["hyper/weight_decay"])
        self._decayed_epochs = set(int(e) for e in arrays["decayed_epochs"])
        for gid, st in self._groups.items():
            st.lr = float(arrays[f"lr/{gid}"])
            st.frozen = bool(int(arrays[f"frozen/{gid}"]))
            for name, buf in st.buffers.items():
                np.copyto(buf, arrays[f"buffer/{name}"])
