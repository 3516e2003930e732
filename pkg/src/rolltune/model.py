"""Block-partitioned convolutional classifier.

The feature extractor is a stack of N sequential conv blocks followed by
global average pooling; the classifier head is embedding-FC -> batch norm
-> leaky ReLU -> class-FC. Every trainable tensor belongs to exactly one
named parameter group (``block1`` .. ``blockN``, ``fc``), the unit that
the rollback scheduler and the grouped optimizer operate on.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import (Tensor, add, batch_norm, conv2d, global_avg_pool,
                     leaky_relu, matmul, reshape)

FC_GROUP = "fc"


def block_group_id(index: int) -> str:
    return f"block{index}"


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; widths define the number of blocks."""

    widths: tuple[int, ...] = (8, 16, 32, 64, 128)
    input_shape: tuple[int, int, int] = (1, 32, 16)
    embedding_dim: int = 64
    num_classes: int = 10
    convs_per_block: int = 2
    kernel_size: int = 3
    leaky_slope: float = 0.1
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    precision: str = "float32"

    @property
    def num_blocks(self) -> int:
        return len(self.widths)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def validate(self) -> None:
        if self.num_blocks < 2:
            raise ValidationError(f"need >= 2 blocks, got {self.num_blocks}")
        if any(w < 1 for w in self.widths):
            raise ValidationError(f"widths must be positive, got {self.widths}")
        if self.embedding_dim < 1:
            raise ValidationError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.convs_per_block < 1:
            raise ValidationError("convs_per_block must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ValidationError(f"leaky_slope must be in [0, 1), got {self.leaky_slope}")
        if self.precision not in ("float32", "float64"):
            raise ValidationError(f"precision must be float32/float64, got {self.precision}")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ValidationError(f"bad input_shape {self.input_shape}")
        for i, (h, w) in enumerate(self.spatial_sizes(), start=1):
            if h < 1 or w < 1:
                raise ValidationError(
                    f"input {self.input_shape} collapses to {h}x{w} at block {i}")

    def block_stride(self, index: int) -> int:
        # blocks 2..N halve the resolution with their first conv
        return 1 if index == 1 else 2

    def spatial_sizes(self) -> list[tuple[int, int]]:
        """Feature-map size after each block."""
        k, p = self.kernel_size, self.kernel_size // 2
        h, w = self.input_shape[1], self.input_shape[2]
        sizes = []
        for i in range(1, self.num_blocks + 1):
            s = self.block_stride(i)
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
            sizes.append((h, w))
        return sizes


@dataclass(frozen=True)
class BlockSpec:
    """Layer layout of one block."""

    index: int
    in_channels: int
    out_channels: int
    stride: int
    convs: int

    def param_names(self) -> list[str]:
        names = []
        for k in range(1, self.convs + 1):
            names += [f"conv{k}.weight", f"conv{k}.bias", f"bn{k}.gamma", f"bn{k}.beta"]
        return names


def block_specs(config: NetworkConfig) -> list[BlockSpec]:
    specs = []
    in_c = config.input_shape[0]
    for i, width in enumerate(config.widths, start=1):
        specs.append(BlockSpec(index=i, in_channels=in_c, out_channels=width,
                               stride=config.block_stride(i),
                               convs=config.convs_per_block))
        in_c = width
    return specs


@dataclass
class ParamGroup:
    """Named trainable tensors plus non-trainable running statistics."""

    group_id: str
    tensors: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    def add_param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True, name=f"{self.group_id}/{name}")
        self.tensors[name] = t
        return t


@dataclass
class NetworkParams:
    """Ordered block groups plus the classifier group."""

    config: NetworkConfig
    blocks: list[ParamGroup]
    classifier: ParamGroup

    def groups(self) -> list[ParamGroup]:
        return [*self.blocks, self.classifier]

    def group(self, group_id: str) -> ParamGroup:
        for g in self.groups():
            if g.group_id == group_id:
                return g
        raise ValidationError(f"unknown parameter group {group_id!r}")

    def all_tensors(self) -> list[Tensor]:
        return [t for g in self.groups() for t in g.tensors.values()]


def _fan_in_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                   dtype, gain: float = 2.0) -> np.ndarray:
    # gain 2 ahead of a rectifier; gain 1 for the output layer
    std = np.sqrt(gain / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def _init_bn(group: ParamGroup, name: str, channels: int, dtype) -> None:
    group.add_param(f"{name}.gamma", np.ones(channels, dtype=dtype))
    group.add_param(f"{name}.beta", np.zeros(channels, dtype=dtype))
    group.stats[f"{name}.running_mean"] = np.zeros(channels, dtype=dtype)
    group.stats[f"{name}.running_var"] = np.ones(channels, dtype=dtype)


def _build_classifier(config: NetworkConfig, rng: np.random.Generator) -> ParamGroup:
    dt = config.dtype
    head = ParamGroup(FC_GROUP)
    d, e, l = config.feature_dim, config.embedding_dim, config.num_classes
    head.add_param("fc1.weight", _fan_in_normal(rng, (d, e), d, dt))
    head.add_param("fc1.bias", np.zeros(e, dtype=dt))
    _init_bn(head, "bn", e, dt)
    head.add_param("fc2.weight", _fan_in_normal(rng, (e, l), e, dt, gain=1.0))
    head.add_param("fc2.bias", np.zeros(l, dtype=dt))
    return head


def build_network(config: NetworkConfig, seed: int) -> NetworkParams:
    """Deterministically initialize a network from a seed.

    Conv and FC weights are fan-in-scaled normal draws, biases zero,
    batch-norm gamma 1 / beta 0, running stats (0, 1).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    dt = config.dtype
    k = config.kernel_size
    blocks = []
    for spec in block_specs(config):
        group = ParamGroup(block_group_id(spec.index))
        in_c = spec.in_channels
        for c in range(1, spec.convs + 1):
            fan_in = in_c * k * k
            group.add_param(f"conv{c}.weight",
                            _fan_in_normal(rng, (spec.out_channels, in_c, k, k), fan_in, dt))
            group.add_param(f"conv{c}.bias", np.zeros(spec.out_channels, dtype=dt))
            _init_bn(group, f"bn{c}", spec.out_channels, dt)
            in_c = spec.out_channels
        blocks.append(group)
    return NetworkParams(config, blocks, _build_classifier(config, rng))


def clone(params: NetworkParams) -> NetworkParams:
    """Independent deep copy (fresh tensors and running stats)."""
    def copy_group(g: ParamGroup) -> ParamGroup:
        out = ParamGroup(g.group_id)
        for name, t in g.tensors.items():
            out.add_param(name, t.data.copy())
        out.stats = {name: a.copy() for name, a in g.stats.items()}
        return out

    return NetworkParams(params.config, [copy_group(g) for g in params.blocks],
                         copy_group(params.classifier))


def rebuild_classifier(params: NetworkParams, num_classes: int, seed: int
                       ) -> NetworkParams:
    """Fresh classifier head for a new label space; block groups are shared."""
    config = dataclasses.replace(params.config, num_classes=num_classes)
    config.validate()
    rng = np.random.default_rng(seed)
    return NetworkParams(config, params.blocks, _build_classifier(config, rng))


def _block_forward(t: Tensor, group: ParamGroup, spec: BlockSpec,
                   config: NetworkConfig, mode: str) -> Tensor:
    pad = config.kernel_size // 2
    for c in range(1, spec.convs + 1):
        stride = spec.stride if c == 1 else 1
        t = conv2d(t, group.tensors[f"conv{c}.weight"], stride=stride, padding=pad)
        bias = group.tensors[f"conv{c}.bias"]
        t = add(t, reshape(bias, (1, bias.shape[0], 1, 1)))
        t = batch_norm(t, group.tensors[f"bn{c}.gamma"], group.tensors[f"bn{c}.beta"],
                       group.stats[f"bn{c}.running_mean"], group.stats[f"bn{c}.running_var"],
                       mode=mode, momentum=config.bn_momentum, epsilon=config.bn_epsilon)
        t = leaky_relu(t, config.leaky_slope)
    return t


def _as_input(x, config: NetworkConfig) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=config.dtype))
    if t.ndim != 4 or t.shape[1:] != config.input_shape:
        raise ShapeError(
            f"input shape {t.shape} does not match (batch, *{config.input_shape})")
    return t


def forward_features(x, params: NetworkParams, mode: str = "train") -> Tensor:
    """Blocks 1..N plus global average pooling; the classifier is not touched."""
    config = params.config
    t = _as_input(x, config)
    for group, spec in zip(params.blocks, block_specs(config)):
        t = _block_forward(t, group, spec, config, mode)
    return global_avg_pool(t)


def forward_classifier(features: Tensor, params: NetworkParams,
                       mode: str = "train") -> Tensor:
    """Classifier head on pooled features; returns pre-softmax logits."""
    head = params.classifier
    config = params.config
    t = add(matmul(features, head.tensors["fc1.weight"]), head.tensors["fc1.bias"])
    t = batch_norm(t, head.tensors["bn.gamma"], head.tensors["bn.beta"],
                   head.stats["bn.running_mean"], head.stats["bn.running_var"],
                   mode=mode, momentum=config.bn_momentum, epsilon=config.bn_epsilon)
    t = leaky_relu(t, config.leaky_slope)
    return add(matmul(t, head.tensors["fc2.weight"]), head.tensors["fc2.bias"])


def forward_logits(x, params: NetworkParams, mode: str = "train") -> Tensor:
    return forward_classifier(forward_features(x, params, mode), params, mode)


def parameter_groups(params: NetworkParams) -> list[tuple[str, list[Tensor]]]:
    """Stable (group-id, tensors) partition: block1..blockN then fc."""
    return [(g.group_id, list(g.tensors.values())) for g in params.groups()]
