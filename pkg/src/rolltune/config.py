"""Flat key = value run configuration.

Config files hold one ``key = value`` pair per line ('#' starts a
comment). Keys are typed by the schema below; command-line flags override
file values and the effective config is echoed into the run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .data import DatasetSpec
from .errors import ValidationError
from .model import NetworkConfig
from .schedule import ScheduleConfig
from .train import TrainConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "data.seed": (int, 0),
    "data.source_classes": (int, 50),
    "data.source_samples": (int, 100),
    "data.train_ids": (int, 40),
    "data.train_samples": (int, 20),
    "data.test_ids": (int, 40),
    "data.query_per_id": (int, 2),
    "data.gallery_per_id": (int, 8),
    "data.height": (int, 32),
    "data.width": (int, 16),
    "data.shift_y": (int, 3),
    "data.shift_x": (int, 2),
    "data.brightness": (float, 0.3),
    "data.noise": (float, 0.1),
    "data.occlusion": (float, 0.35),
    "model.widths": (_ints, (8, 16, 32, 64, 128)),
    "model.embedding": (int, 64),
    "model.convs_per_block": (int, 2),
    "model.kernel": (int, 3),
    "model.leaky_slope": (float, 0.1),
    "model.bn_momentum": (float, 0.1),
    "model.bn_epsilon": (float, 1e-5),
    "train.seed": (int, 0),
    "train.batch": (int, 32),
    "train.periods": (int, 4),
    "train.epochs_per_period": (int, 40),
    "train.decay_every": (int, 20),
    "train.decay_factor": (float, 0.1),
    "train.extractor_lr": (float, 0.01),
    "train.classifier_lr": (float, 0.1),
    "train.retained_lr": (float, 0.001),
    "train.refine_fc_lr": (float, 0.01),
    "train.warmup_epochs": (int, 20),
    "train.flip_augment": (_bool, True),
    "train.eval_every": (int, 0),
    "train.eval_at_period_end": (_bool, True),
    "train.flip_fusion": (_bool, True),
    "train.pretrain_epochs": (int, 10),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def hash(self) -> str:
        canon = "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()

    def as_lines(self) -> str:
        return "\n".join(f"{k} = {_render(self.values[k])}"
                         for k in sorted(self.values)) + "\n"

    def dataset_spec(self) -> DatasetSpec:
        v = self.values
        return DatasetSpec(
            seed=v["data.seed"], source_classes=v["data.source_classes"],
            source_samples=v["data.source_samples"],
            target_train_ids=v["data.train_ids"],
            target_train_samples=v["data.train_samples"],
            target_test_ids=v["data.test_ids"],
            query_per_id=v["data.query_per_id"],
            gallery_per_id=v["data.gallery_per_id"],
            image_shape=(1, v["data.height"], v["data.width"]),
            shift_max=(v["data.shift_y"], v["data.shift_x"]),
            brightness_jitter=v["data.brightness"], noise_sigma=v["data.noise"],
            occlusion_prob=v["data.occlusion"])

    def network_config(self, num_classes: int) -> NetworkConfig:
        v = self.values
        return NetworkConfig(
            widths=tuple(v["model.widths"]),
            input_shape=(1, v["data.height"], v["data.width"]),
            embedding_dim=v["model.embedding"], num_classes=num_classes,
            convs_per_block=v["model.convs_per_block"], kernel_size=v["model.kernel"],
            leaky_slope=v["model.leaky_slope"], bn_momentum=v["model.bn_momentum"],
            bn_epsilon=v["model.bn_epsilon"])

    def schedule_config(self) -> ScheduleConfig:
        v = self.values
        return ScheduleConfig(
            periods=v["train.periods"], epochs_per_period=v["train.epochs_per_period"],
            decay_every=v["train.decay_every"], decay_factor=v["train.decay_factor"],
            extractor_lr=v["train.extractor_lr"], classifier_lr=v["train.classifier_lr"],
            retained_lr=v["train.retained_lr"], refine_fc_lr=v["train.refine_fc_lr"],
            warmup_epochs=v["train.warmup_epochs"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(batch_size=v["train.batch"], seed=v["train.seed"],
                           flip_augment=v["train.flip_augment"],
                           eval_every=v["train.eval_every"],
                           eval_at_period_end=v["train.eval_at_period_end"],
                           flip_fusion=v["train.flip_fusion"])


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ValidationError(
            f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")
    parser = SCHEMA[key][0]
    try:
        return parser(text.strip())
    except ValueError as exc:
        raise ValidationError(f"bad value for {key!r}: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(
                        f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, text = line.partition("=")
                values[key.strip()] = parse_value(key.strip(), text)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ValidationError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")
        values[key] = value
    return RunConfig(values)
