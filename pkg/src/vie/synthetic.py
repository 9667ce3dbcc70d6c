"""Labeled blob-world videos plus the bin-cutting and data-fraction ablations.

One shape moves across a toroidal frame at constant velocity. In
``appearance`` mode the class picks the shape and the motion is random; in
``dynamics`` mode the class picks the direction of motion and the shape is
random; ``mixed`` ties both to the class. Because starts are uniform on the
torus, any single frame of a dynamics-mode video says nothing about its
class.

Binary file layout (little-endian)::

    magic b"VIEDATA\\x00", version u8, K u32, n_videos u32, per-class counts K x u32
    per video: id u32, label u32, split u8, T u32, H u32, W u32, C u32, fps f64,
               then T*H*W*C float32 pixels
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .sampling import Video

logger = logging.getLogger(__name__)

MODES = ("appearance", "dynamics", "mixed")
N_SHAPES = 8
MAGIC = b"VIEDATA\x00"
VERSION = 1
_HEAD = struct.Struct("<IIBIIIId")


class DatasetFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class SynthSpec:
    class_count: int = 8
    videos_per_class: int = 75
    val_fraction: float = 0.2
    frame_count: int = 16
    height: int = 16
    width: int = 16
    label_mode: str = "dynamics"
    noise: float = 0.05
    speed: float = 1.0
    speed_range: tuple[float, float] = (0.5, 2.0)
    fps: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.label_mode not in MODES:
            raise ValueError(f"label_mode must be one of {MODES}")
        if self.class_count < 1 or self.videos_per_class < 1 or self.frame_count < 1:
            raise ValueError("class_count, videos_per_class and frame_count must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class LabeledDataset:
    videos: list[Video]
    labels: np.ndarray
    splits: list[str]
    class_count: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.videos)

    def subset(self, split: str) -> "LabeledDataset":
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return self.select(keep)

    def select(self, keep) -> "LabeledDataset":
        keep = list(keep)
        return LabeledDataset([self.videos[i] for i in keep], self.labels[keep].copy(),
                              [self.splits[i] for i in keep], self.class_count, dict(self.meta))

    def reindexed(self) -> "LabeledDataset":
        """Copy whose video ``index`` fields run 0..N-1 (bank row order)."""
        videos = [Video(v.frames, v.fps, i) for i, v in enumerate(self.videos)]
        return LabeledDataset(videos, self.labels.copy(), list(self.splits), self.class_count, dict(self.meta))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def stats_text(self) -> str:
        lines = [f"videos {len(self)}", f"classes {self.class_count}"]
        for s in sorted(set(self.splits)):
            lines.append(f"split {s} {self.splits.count(s)}")
        lines.append("per_class " + " ".join(map(str, self.class_counts())))
        if self.videos:
            shapes = sorted({v.frames.shape for v in self.videos})
            lines.append("frame_shapes " + " ".join("x".join(map(str, s)) for s in shapes))
            px = np.concatenate([v.frames.reshape(-1) for v in self.videos])
            lines.append(f"pixel_mean {px.mean():.6f}")
            lines.append(f"pixel_std {px.std():.6f}")
        for k, v in sorted(self.meta.items()):
            lines.append(f"meta {k} {v}")
        return "\n".join(lines) + "\n"


def _wrapped(coord: np.ndarray, centre: float, size: int) -> np.ndarray:
    return (coord - centre + size / 2.0) % size - size / 2.0


def shape_mask(shape_id: int, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Intensity of template ``shape_id`` at wrapped offsets from its centre."""
    r = np.hypot(dy, dx)
    s = shape_id % N_SHAPES
    if s == 0:
        return np.exp(-(r ** 2) / (2 * 1.0 ** 2))
    if s == 1:
        return np.exp(-(r ** 2) / (2 * 2.5 ** 2))
    if s == 2:
        return ((np.abs(dy) <= 2.5) & (np.abs(dx) <= 2.5)).astype(float)
    if s == 3:
        return (np.abs(r - 3.5) <= 0.9).astype(float)
    if s == 4:
        return ((np.abs(dy) <= 1.0) & (np.abs(dx) <= 5.0)).astype(float)
    if s == 5:
        return ((np.abs(dx) <= 1.0) & (np.abs(dy) <= 5.0)).astype(float)
    if s == 6:
        return (((np.abs(dy) <= 0.6) & (np.abs(dx) <= 4.5)) | ((np.abs(dx) <= 0.6) & (np.abs(dy) <= 4.5))).astype(float)
    return (np.abs(dy) + np.abs(dx) <= 3.5).astype(float)


def render_video(shape_id: int, start: tuple[float, float], velocity: tuple[float, float],
                 amplitude: float, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    h, w, t = spec.height, spec.width, spec.frame_count
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((t, h, w, 1), dtype=np.float32)
    for f in range(t):
        cy = (start[0] + velocity[0] * f) % h
        cx = (start[1] + velocity[1] * f) % w
        img = amplitude * shape_mask(shape_id, _wrapped(yy, cy, h), _wrapped(xx, cx, w))
        img = img + spec.noise * rng.standard_normal((h, w))
        frames[f, :, :, 0] = img
    return frames


def _direction(k: int, K: int, speed: float) -> tuple[float, float]:
    a = 2 * np.pi * k / K
    return speed * np.sin(a), speed * np.cos(a)


def generate(spec: SynthSpec) -> LabeledDataset:
    """Class-balanced dataset, deterministic per ``spec.seed``.

    Videos are ordered class-major; within each class the last
    ``round(val_fraction * videos_per_class)`` are tagged ``val``.
    """
    K = spec.class_count
    n_val = int(round(spec.val_fraction * spec.videos_per_class))
    videos, labels, splits = [], [], []
    idx = 0
    for k in range(K):
        for j in range(spec.videos_per_class):
            rng = np.random.default_rng([spec.seed, k, j])
            start = (rng.uniform(0, spec.height), rng.uniform(0, spec.width))
            amplitude = rng.uniform(0.8, 1.2)
            rand_shape = int(rng.integers(N_SHAPES))
            rand_dir = int(rng.integers(N_SHAPES))
            if spec.label_mode == "appearance":
                # class-irrelevant motion: any heading, varied speed
                angle = rng.uniform(0.0, 2 * np.pi)
                speed = spec.speed * rng.uniform(*spec.speed_range)
                shape_id, vel = k, (speed * np.sin(angle), speed * np.cos(angle))
            elif spec.label_mode == "dynamics":
                shape_id, vel = rand_shape, _direction(k, K, spec.speed)
            else:
                shape_id, vel = k, _direction(k, K, spec.speed)
            frames = render_video(shape_id, start, vel, amplitude, spec, rng)
            videos.append(Video(frames, spec.fps, idx))
            labels.append(k)
            splits.append("val" if j >= spec.videos_per_class - n_val else "train")
            idx += 1
    meta = {"label_mode": spec.label_mode, "seed": spec.seed}
    return LabeledDataset(videos, np.asarray(labels, dtype=np.int64), splits, K, meta)


def cut_into_bins(dataset: LabeledDataset, n_bins: int) -> LabeledDataset:
    """Replace each video by ``n_bins`` equal-length clips; a remainder tail is dropped."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    videos, labels, splits = [], [], []
    for v, lbl, s in zip(dataset.videos, dataset.labels, dataset.splits):
        if n_bins > v.length:
            raise ValueError(f"cannot cut a {v.length}-frame video into {n_bins} bins")
        size = v.length // n_bins
        if size * n_bins != v.length:
            logger.info("video %d: dropping %d tail frames", v.index, v.length - size * n_bins)
        for b in range(n_bins):
            videos.append(Video(v.frames[b * size:(b + 1) * size], v.fps, len(videos)))
            labels.append(int(lbl))
            splits.append(s)
    meta = dict(dataset.meta, n_bins=n_bins)
    return LabeledDataset(videos, np.asarray(labels, dtype=np.int64), splits, dataset.class_count, meta)


def subsample_fraction(dataset: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Per-class stratified uniform subsample, keeping original relative order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == k)
        if members.size == 0:
            continue
        n = int(round(fraction * members.size))
        if n == 0:
            raise ValueError(f"fraction {fraction} leaves class {k} empty")
        keep.extend(rng.choice(members, size=n, replace=False).tolist())
    out = dataset.select(sorted(keep))
    out.meta["fraction"] = fraction
    return out


def dumps(dataset: LabeledDataset) -> bytes:
    K = dataset.class_count
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<II", K, len(dataset)),
             struct.pack(f"<{K}I", *dataset.class_counts())]
    for v, lbl, s in zip(dataset.videos, dataset.labels, dataset.splits):
        t, h, w, c = v.frames.shape
        parts.append(_HEAD.pack(v.index, int(lbl), 1 if s == "val" else 0, t, h, w, c, float(v.fps)))
        parts.append(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> LabeledDataset:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise DatasetFormatError(f"truncated dataset file: wanted {n} bytes", pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise DatasetFormatError("bad magic", 0)
    (version,) = struct.unpack("<B", take(1))
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", len(MAGIC))
    K, n = struct.unpack("<II", take(8))
    counts = np.asarray(struct.unpack(f"<{K}I", take(4 * K)), dtype=np.int64)
    videos, labels, splits = [], [], []
    for _ in range(n):
        vid, lbl, split, t, h, w, c, fps = _HEAD.unpack(take(_HEAD.size))
        if lbl >= K:
            raise DatasetFormatError(f"label {lbl} out of range for {K} classes", pos - _HEAD.size)
        px = np.frombuffer(take(4 * t * h * w * c), dtype="<f4").reshape(t, h, w, c).astype(np.float32)
        videos.append(Video(px, fps, vid))
        labels.append(lbl)
        splits.append("val" if split else "train")
    if pos != len(blob):
        raise DatasetFormatError("trailing bytes", pos)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.array_equal(np.bincount(labels, minlength=K), counts):
        raise DatasetFormatError("per-class counts disagree with video headers", len(MAGIC) + 9)
    return LabeledDataset(videos, labels, splits, K)


def write_dataset(path, dataset: LabeledDataset) -> None:
    Path(path).write_bytes(dumps(dataset))


def read_dataset(path) -> LabeledDataset:
    return loads(Path(path).read_bytes())


def header_bytes(dataset: LabeledDataset) -> int:
    return len(MAGIC) + 1 + 8 + 4 * dataset.class_count + _HEAD.size * len(dataset)


def with_mode(spec: SynthSpec, mode: str) -> SynthSpec:
    return replace(spec, label_mode=mode)
