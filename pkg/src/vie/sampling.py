"""Videos, frame-sampling strategies, and per-sample consistent augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

FAMILIES = ("single", "dense_equal", "sparse_unequal", "sparse_equal", "two_pathway")
N_TEST_CLIPS = 5


@dataclass
class Video:
    frames: np.ndarray  # (T, H, W, C)
    fps: float = 25.0
    index: int = 0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"video frames must be (T>=1, H, W, C), got {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])


def static_video(frame: np.ndarray, length: int, index: int = 0, fps: float = 25.0) -> Video:
    """A still frame tiled ``length`` times."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[..., None]
    return Video(np.repeat(frame[None], length, axis=0), fps, index)


@dataclass(frozen=True)
class SamplingStrategy:
    family: str
    L: int = 1
    bin_frames: int = 4
    stride: int = 4
    dynamic: str = "sparse_equal"  # dynamic pathway of two_pathway

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown sampling family {self.family!r}")
        if self.L < 1 or self.bin_frames < 1 or self.stride < 1:
            raise ValueError("L, bin_frames and stride must be >= 1")
        if self.family == "two_pathway" and self.dynamic not in ("sparse_equal", "dense_equal"):
            raise ValueError("two_pathway dynamic pathway must be sparse_equal or dense_equal")

    @property
    def frames_per_sample(self) -> int:
        return 1 if self.family == "single" else self.L

    @property
    def span(self) -> int:
        """Number of consecutive video frames one draw covers."""
        fam = self.dynamic if self.family == "two_pathway" else self.family
        if fam == "single":
            return 1
        if fam == "dense_equal":
            return self.L
        if fam == "sparse_unequal":
            return self.L * self.bin_frames
        return (self.L - 1) * self.stride + 1

    def pathways(self) -> tuple["SamplingStrategy", "SamplingStrategy"]:
        if self.family != "two_pathway":
            raise ValueError("only two_pathway strategies have pathways")
        return (SamplingStrategy("single"),
                SamplingStrategy(self.dynamic, L=self.L, bin_frames=self.bin_frames, stride=self.stride))


def default_strategy(family: str) -> SamplingStrategy:
    return {
        "single": SamplingStrategy("single"),
        "dense_equal": SamplingStrategy("dense_equal", L=8),
        "sparse_unequal": SamplingStrategy("sparse_unequal", L=4, bin_frames=4),
        "sparse_equal": SamplingStrategy("sparse_equal", L=4, stride=4),
        "two_pathway": SamplingStrategy("two_pathway", L=4, stride=4),
    }[family]


@dataclass(frozen=True)
class AugmentationParams:
    crop_offset: tuple[int, int] = (0, 0)
    crop_size: tuple[int, int] | None = None  # None: full frame
    noise_scale: float = 0.0
    flip: bool = False
    noise_seed: int = 0

    def to_record(self) -> str:
        return (f"crop={self.crop_offset[0]},{self.crop_offset[1]}"
                f"/{'full' if self.crop_size is None else f'{self.crop_size[0]}x{self.crop_size[1]}'}"
                f" flip={int(self.flip)} noise={self.noise_scale:g}@{self.noise_seed}")


@dataclass
class FrameSample:
    video_index: int
    family: str
    indices: np.ndarray  # frame indices into the video, in sampling order
    positions: np.ndarray  # unwrapped positions, strictly increasing
    frames: np.ndarray  # (L, H, W, C) float64
    wrapped: bool = False
    parts: tuple["FrameSample", ...] = ()
    augmentation: AugmentationParams | None = None

    def to_record(self) -> str:
        if self.parts:
            body = " | ".join(f"{p.family}:{','.join(map(str, p.indices))}" for p in self.parts)
        else:
            body = ",".join(map(str, self.indices))
        aug = self.augmentation.to_record() if self.augmentation else "none"
        return f"video={self.video_index} family={self.family} idx={body} wrapped={int(self.wrapped)} aug[{aug}]"


def _make(video: Video, family: str, positions: np.ndarray) -> FrameSample:
    positions = np.asarray(positions, dtype=np.int64)
    idx = positions % video.length
    return FrameSample(video.index, family, idx, positions,
                       video.frames[idx].astype(np.float64), bool(positions.max() >= video.length))


def sample_frames(strategy: SamplingStrategy, video: Video, rng=None, start: int | None = None) -> FrameSample:
    """Draw one ordered frame subset according to ``strategy``.

    ``rng`` may be a Generator or a seed. ``start`` pins the window start
    (or first bin for ``sparse_unequal``) instead of drawing it. Videos
    shorter than the family's span are looped and the sample is flagged.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    fam = strategy.family
    t = video.length
    if fam == "two_pathway":
        static_s, dynamic_s = strategy.pathways()
        dyn = sample_frames(dynamic_s, video, rng, start)
        stat = sample_frames(static_s, video, rng)
        return FrameSample(video.index, fam, np.concatenate([stat.indices, dyn.indices]),
                           np.concatenate([stat.positions, dyn.positions]), dyn.frames,
                           stat.wrapped or dyn.wrapped, parts=(stat, dyn))
    if fam == "single":
        s = int(rng.integers(t)) if start is None else start
        return _make(video, fam, [s])
    if fam == "sparse_unequal":
        b, n_bins = strategy.bin_frames, t // strategy.bin_frames
        if n_bins >= strategy.L:
            first = int(rng.integers(n_bins - strategy.L + 1)) if start is None else start
        else:
            first = int(rng.integers(max(n_bins, 1))) if start is None else start
        offsets = rng.integers(b, size=strategy.L)
        return _make(video, fam, (first + np.arange(strategy.L)) * b + offsets)
    span = strategy.span
    slack = t - span
    if start is None:
        start = int(rng.integers(slack + 1)) if slack >= 0 else int(rng.integers(t))
    step = 1 if fam == "dense_equal" else strategy.stride
    return _make(video, fam, start + step * np.arange(strategy.L))


def _window_starts(slack: int) -> list[int]:
    if slack <= 0:
        return [0] * N_TEST_CLIPS
    return [int(np.floor(x + 0.5)) for x in np.linspace(0, slack, N_TEST_CLIPS)]


def test_time_clips(video: Video, strategy: SamplingStrategy) -> list[FrameSample]:
    """Five deterministic, equally spaced windows (no augmentation applied here)."""
    fam = strategy.family
    if fam == "two_pathway":
        static_s, dynamic_s = strategy.pathways()
        out = []
        for dyn in test_time_clips(video, dynamic_s):
            centre = int(dyn.positions[0]) + dynamic_s.span // 2
            stat = _make(video, "single", [centre])
            out.append(FrameSample(video.index, fam, np.concatenate([stat.indices, dyn.indices]),
                                   np.concatenate([stat.positions, dyn.positions]), dyn.frames,
                                   stat.wrapped or dyn.wrapped, parts=(stat, dyn)))
        return out
    starts = _window_starts(video.length - strategy.span)
    if fam == "single":
        return [_make(video, fam, [s]) for s in starts]
    if fam == "dense_equal":
        return [_make(video, fam, s + np.arange(strategy.L)) for s in starts]
    if fam == "sparse_equal":
        return [_make(video, fam, s + strategy.stride * np.arange(strategy.L)) for s in starts]
    b = strategy.bin_frames
    return [_make(video, fam, s + b * np.arange(strategy.L) + b // 2) for s in starts]


test_time_clips.__test__ = False  # keep pytest from collecting it on import


def draw_augmentation(rng: np.random.Generator, frame_hw: tuple[int, int],
                      crop_size: tuple[int, int] | None, noise_scale: float,
                      flip_prob: float = 0.5) -> AugmentationParams:
    h, w = frame_hw
    ch, cw = crop_size if crop_size is not None else (h, w)
    oy = int(rng.integers(h - ch + 1))
    ox = int(rng.integers(w - cw + 1))
    flip = bool(rng.random() < flip_prob)
    return AugmentationParams((oy, ox), crop_size, float(noise_scale), flip,
                              int(rng.integers(2**31 - 1)))


def center_crop(frame_hw: tuple[int, int], crop_size: tuple[int, int] | None) -> AugmentationParams:
    h, w = frame_hw
    ch, cw = crop_size if crop_size is not None else (h, w)
    return AugmentationParams(((h - ch) // 2, (w - cw) // 2), crop_size, 0.0, False, 0)


def _augment_frames(frames: np.ndarray, p: AugmentationParams) -> np.ndarray:
    _, h, w, c = frames.shape
    ch, cw = p.crop_size if p.crop_size is not None else (h, w)
    oy, ox = p.crop_offset
    if oy < 0 or ox < 0 or oy + ch > h or ox + cw > w:
        raise ValueError(f"crop window {p.crop_offset}+{(ch, cw)} outside frame {(h, w)}")
    out = frames[:, oy:oy + ch, ox:ox + cw, :]
    if p.flip:
        out = out[:, :, ::-1, :]
    out = np.array(out, dtype=np.float64)
    if p.noise_scale:
        field_ = np.random.default_rng(p.noise_seed).standard_normal((ch, cw, c))
        out += p.noise_scale * field_
    return out


def augment(sample: FrameSample, params: AugmentationParams) -> FrameSample:
    """Apply one crop/flip/noise draw identically to every frame of the sample."""
    if sample.parts:
        parts = tuple(augment(p, params) for p in sample.parts)
        return replace(sample, parts=parts, frames=parts[-1].frames, augmentation=params)
    return replace(sample, frames=_augment_frames(sample.frames, params), augmentation=params)
