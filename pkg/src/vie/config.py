"""Training configuration and its flat ``key=value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .embedding import SoftmaxParams
from .encoders import EncoderSpec
from .neighbors import default_k, default_m
from .sampling import SamplingStrategy


@dataclass
class TrainConfig:
    loss: str = "LA"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.003
    momentum: float = 0.9
    lr_drop: float = 0.1
    plateau_patience: int = 3
    plateau_tol: float = 1e-3
    weight_decay: float = 1e-4  # lambda
    temperature: float = 0.07
    subset_size: int = 0  # 0: min(N - 1, 512)
    exact: bool = False
    bank_momentum: float = 0.5
    clusters: int = 0  # 0: max(2, N // 4)
    neighbors: int = 0  # 0: max(1, N // 8)
    recluster_every: int = 1
    kmeans_iters: int = 20
    ir_warmup_epochs: int = 0
    family: str = "sparse_equal"
    frames: int = 4
    stride: int = 4
    bin_frames: int = 4
    dynamic: str = "sparse_equal"
    fusion: str = "post"
    widths: tuple = (32, 32, 32)
    embed_dim: int = 32
    crop: int = 14
    noise_scale: float = 0.1
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.loss = self.loss.upper()
        if self.loss not in ("IR", "LA"):
            raise ValueError(f"loss must be IR or LA, got {self.loss!r}")
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 3:
            raise ValueError("widths needs exactly three entries")
        if self.epochs < 0 or self.batch_size < 1 or self.recluster_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and recluster_every >= 1 required")
        self.strategy()  # validates family/frames

    def strategy(self) -> SamplingStrategy:
        return SamplingStrategy(self.family, L=1 if self.family == "single" else self.frames,
                                bin_frames=self.bin_frames, stride=self.stride, dynamic=self.dynamic)

    def crop_size(self, frame_hw: tuple[int, int]) -> tuple[int, int]:
        return (min(self.crop, frame_hw[0]), min(self.crop, frame_hw[1]))

    def encoder_spec(self, frame_shape: tuple[int, int, int]) -> EncoderSpec:
        ch, cw = self.crop_size(frame_shape[:2])
        st = self.strategy()
        return EncoderSpec(self.family, ch * cw * frame_shape[2], self.widths, self.embed_dim,
                           L=st.frames_per_sample, dynamic=self.dynamic, fusion=self.fusion)

    def softmax(self) -> SoftmaxParams:
        return SoftmaxParams(self.temperature, self.subset_size or None)

    def resolved_m(self, n: int) -> int:
        return min(n, self.clusters or default_m(n))

    def resolved_k(self, n: int) -> int:
        return min(n, self.neighbors or default_k(n))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        values: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key=value, got {raw!r}")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        values.update({k: str(v) for k, v in overrides.items()})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "TrainConfig":
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise KeyError(f"unknown config key {k!r}")
            kwargs[k] = _coerce(getattr(defaults, k), v)
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _coerce(default, v: str):
    if isinstance(default, bool):
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {v!r}")
    if isinstance(default, int):
        return int(v)
    if isinstance(default, float):
        return float(v)
    if isinstance(default, tuple):
        return tuple(int(x) for x in v.split(",") if x.strip())
    return v
