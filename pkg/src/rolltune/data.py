"""Synthetic source/target datasets with disjoint-identity retrieval splits.

Each identity owns a prototype image built from a smooth low-frequency
layout plus an identity-specific band-limited texture. Source classes draw
their textures from a broader, axis-aligned frequency band while target
identities use a diagonal band, so filters pre-trained on the source
transfer to the target but are not optimal for it. Samples are prototypes
under nuisance transforms (shift, brightness, noise, occlusion).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ValidationError

SPLIT_TRAIN, SPLIT_QUERY, SPLIT_GALLERY = 0, 1, 2
SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_QUERY: "query", SPLIT_GALLERY: "gallery"}

_MAGIC = b"IDDS"
_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Desk-scale dataset sizes and nuisance-transform strengths."""

    seed: int = 0
    source_classes: int = 50
    source_samples: int = 100
    target_train_ids: int = 40
    target_train_samples: int = 20
    target_test_ids: int = 40
    query_per_id: int = 2
    gallery_per_id: int = 8
    image_shape: tuple[int, int, int] = (1, 32, 16)
    shift_max: tuple[int, int] = (3, 2)
    brightness_jitter: float = 0.3
    noise_sigma: float = 0.1
    occlusion_prob: float = 0.35
    layout_scale: float = 0.16
    texture_scale: float = 0.14
    # frequency bands (cycles/pixel) of the identity textures; the source
    # band sits below the target band so pre-trained low-level filters
    # transfer but stay suboptimal for the target domain
    target_band: tuple[float, float] = (0.22, 0.45)
    source_band: tuple[float, float] = (0.10, 0.48)

    def validate(self) -> None:
        counts = (self.source_classes, self.source_samples, self.target_train_ids,
                  self.target_train_samples, self.target_test_ids,
                  self.query_per_id, self.gallery_per_id)
        if any(c < 1 for c in counts):
            raise ValidationError(f"all dataset counts must be >= 1: {counts}")
        if self.source_classes < 2 or self.target_train_ids < 2:
            raise ValidationError("need >= 2 source classes and >= 2 train identities")
        c, h, w = self.image_shape
        if c != 1 or h < 8 or w < 8:
            raise ValidationError(f"image_shape must be (1, >=8, >=8), got {self.image_shape}")
        if self.noise_sigma < 0 or not 0 <= self.occlusion_prob <= 1:
            raise ValidationError("bad nuisance parameters")


@dataclass
class Dataset:
    """Immutable sample collection; images are float32 in [0, 1]."""

    images: np.ndarray   # N x C x H x W
    labels: np.ndarray   # N, int64 identity ids
    splits: np.ndarray   # N, uint8 split codes
    cameras: np.ndarray  # N, int16; -1 when absent

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_identities(self) -> int:
        return len(np.unique(self.labels))


@dataclass
class SynthData:
    source: Dataset
    train: Dataset
    query: Dataset
    gallery: Dataset


# -- prototype construction --------------------------------------------


def _band_noise(rng: np.random.Generator, shape: tuple[int, int], f_lo: float,
                f_hi: float, orientations: tuple[float, ...] | None = None,
                angular_width: float = np.pi / 8) -> np.ndarray:
    """Unit-variance noise band-limited in radial frequency and orientation."""
    h, w = shape
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    mask = (radius >= f_lo) & (radius <= f_hi)
    if orientations is not None:
        theta = np.arctan2(fy, fx)
        keep = np.zeros_like(mask)
        for o in orientations:
            delta = np.abs((theta - o + np.pi / 2) % np.pi - np.pi / 2)
            keep |= delta <= angular_width
        mask &= keep
    mask[0, 0] = False
    img = np.fft.ifft2(np.fft.fft2(noise) * mask).real
    sd = img.std()
    if sd < 1e-8:
        return np.zeros(shape, dtype=np.float32)
    return (img / sd).astype(np.float32)


def _prototype(rng: np.random.Generator, shape: tuple[int, int], domain: str,
               spec: DatasetSpec) -> np.ndarray:
    layout = _band_noise(rng, shape, 0.0, 0.09)
    if domain == "target":
        texture = _band_noise(rng, shape, *spec.target_band,
                              orientations=(np.pi / 4, 3 * np.pi / 4))
    else:
        texture = _band_noise(rng, shape, *spec.source_band,
                              orientations=(0.0, np.pi / 2))
    proto = 0.5 + spec.layout_scale * layout + spec.texture_scale * texture
    return np.clip(proto, 0.08, 0.92).astype(np.float32)


def _render_sample(proto: np.ndarray, rng: np.random.Generator,
                   spec: DatasetSpec) -> np.ndarray:
    h, w = proto.shape
    sy, sx = spec.shift_max
    img = np.roll(proto, (rng.integers(-sy, sy + 1), rng.integers(-sx, sx + 1)),
                  axis=(0, 1))
    scale = 1.0 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter)
    img = 0.5 + (img - 0.5) * scale
    img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    if rng.random() < spec.occlusion_prob:
        oh = int(rng.integers(h // 6, h // 3 + 1))
        ow = int(rng.integers(w // 4, w // 2 + 1))
        oy = int(rng.integers(0, h - oh + 1))
        ox = int(rng.integers(0, w - ow + 1))
        img[oy:oy + oh, ox:ox + ow] = rng.uniform(0.1, 0.9)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _make_split(protos: list[np.ndarray], labels: list[int], per_id: int,
                split_code: int, rng: np.random.Generator,
                spec: DatasetSpec) -> Dataset:
    images, ids = [], []
    for proto, label in zip(protos, labels):
        for _ in range(per_id):
            images.append(_render_sample(proto, rng, spec)[None, :, :])
            ids.append(label)
    n = len(images)
    return Dataset(images=np.stack(images),
                   labels=np.asarray(ids, dtype=np.int64),
                   splits=np.full(n, split_code, dtype=np.uint8),
                   cameras=np.full(n, -1, dtype=np.int16))


def generate(spec: DatasetSpec) -> SynthData:
    """Deterministically generate the source task and the target splits.

    Target train identities are 0..T-1 (the classifier label space); test
    identities continue from T so the two sets can never intersect.
    """
    spec.validate()
    hw = spec.image_shape[1:]
    seq = np.random.SeedSequence(spec.seed)
    proto_rng, src_rng, train_rng, query_rng, gallery_rng = (
        np.random.default_rng(s) for s in seq.spawn(5))

    source_protos = [_prototype(proto_rng, hw, "source", spec)
                     for _ in range(spec.source_classes)]
    train_protos = [_prototype(proto_rng, hw, "target", spec)
                    for _ in range(spec.target_train_ids)]
    test_protos = [_prototype(proto_rng, hw, "target", spec)
                   for _ in range(spec.target_test_ids)]

    train_ids = list(range(spec.target_train_ids))
    test_ids = [spec.target_train_ids + i for i in range(spec.target_test_ids)]

    return SynthData(
        source=_make_split(source_protos, list(range(spec.source_classes)),
                           spec.source_samples, SPLIT_TRAIN, src_rng, spec),
        train=_make_split(train_protos, train_ids, spec.target_train_samples,
                          SPLIT_TRAIN, train_rng, spec),
        query=_make_split(test_protos, test_ids, spec.query_per_id,
                          SPLIT_QUERY, query_rng, spec),
        gallery=_make_split(test_protos, test_ids, spec.gallery_per_id,
                            SPLIT_GALLERY, gallery_rng, spec),
    )


# -- on-disk format -----------------------------------------------------
#
# little-endian layout:
#   magic    4s   = b"IDDS"
#   version  u32  = 1
#   samples  u32
#   C, H, W  u32 x 3
#   idents   u32  distinct identity count
# then per sample:
#   label    i32
#   split    u8
#   camera   i16
#   pixels   f32 x C*H*W


def save(dataset: Dataset, path) -> None:
    n = len(dataset)
    c, h, w = dataset.images.shape[1:]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIIII", _VERSION, n, c, h, w, dataset.num_identities))
        for i in range(n):
            f.write(struct.pack("<ibh", int(dataset.labels[i]),
                                int(dataset.splits[i]), int(dataset.cameras[i])))
            f.write(np.ascontiguousarray(dataset.images[i], dtype=np.float32).tobytes())


def _read_exact(f, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise DataFormatError(
            f"truncated dataset file: expected {size} bytes for {what} "
            f"at offset {f.tell() - len(buf)}")
    return buf


def _read_header(f) -> tuple[int, int, int, int, int]:
    magic = _read_exact(f, 4, "magic")
    if magic != _MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at offset 0")
    version, = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != _VERSION:
        raise DataFormatError(f"unsupported dataset version {version} (expected {_VERSION})")
    return struct.unpack("<IIIII", _read_exact(f, 20, "header"))


def load(path) -> Dataset:
    with open(path, "rb") as f:
        n, c, h, w, _ = _read_header(f)
        pix = c * h * w
        images = np.empty((n, c, h, w), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        splits = np.empty(n, dtype=np.uint8)
        cameras = np.empty(n, dtype=np.int16)
        for i in range(n):
            label, split, camera = struct.unpack("<ibh", _read_exact(f, 7, "record header"))
            raw = _read_exact(f, pix * 4, f"pixels of sample {i}")
            images[i] = np.frombuffer(raw, dtype="<f4").reshape(c, h, w)
            labels[i], splits[i], cameras[i] = label, split, camera
    return Dataset(images, labels, splits, cameras)


def describe(path) -> dict:
    """Header metadata of a dataset file without loading the payload."""
    with open(path, "rb") as f:
        n, c, h, w, idents = _read_header(f)
    return {"samples": n, "channels": c, "height": h, "width": w,
            "identities": idents, "version": _VERSION}
