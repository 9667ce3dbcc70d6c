"""The five encoder families and the normalized-expectation video embedding.

Each family maps a batch of frame samples to the unit sphere and exposes
three intermediate feature taps (``layer1``..``layer3``, shallow to deep)
for linear probing. Taps of multi-frame families keep their time axis;
:func:`probe_features` averages it away.

Architectures, per sample of flattened frames ``(L, P)``:

* ``single``: three-layer perceptron on the one frame, linear head.
* ``dense_equal``: per-frame layer, temporal conv (kernel 3), per-step
  layer, mean over time, linear head.
* ``sparse_unequal``: shared two-layer per-frame perceptron, outputs
  concatenated in order, hidden layer, linear head.
* ``sparse_equal``: shared two-layer per-frame perceptron, temporal conv
  (kernel 2) across the sparse frames, mean over time, linear head.
* ``two_pathway``: a full ``single`` and a full dynamic (``sparse_equal``
  or ``dense_equal``) sub-encoder, so the embedding has ``2 * embed_dim``
  entries. With ``fusion="post"`` (default) each
  pathway output is normalized before concatenation, so both halves
  carry equal weight in every dot product; ``fusion="pre"`` concatenates
  the raw outputs and normalizes once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import DegenerateEmbeddingError
from .sampling import FAMILIES, FrameSample, SamplingStrategy, Video, augment, center_crop, sample_frames

TAPS = ("layer1", "layer2", "layer3")


class AntipodalCollapseError(DegenerateEmbeddingError):
    """Sample embeddings averaged to the zero vector."""


@dataclass(frozen=True)
class EncoderSpec:
    family: str
    input_dim: int
    widths: tuple[int, int, int] = (32, 32, 32)
    embed_dim: int = 32
    L: int = 4
    dense_kernel: int = 3
    sparse_kernel: int = 2
    dynamic: str = "sparse_equal"
    fusion: str = "post"

    def __post_init__(self):
        if self.fusion not in ("pre", "post"):
            raise ValueError("fusion must be 'pre' or 'post'")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown encoder family {self.family!r}")
        if self.family == "dense_equal" and self.L < self.dense_kernel:
            raise ValueError("dense_equal needs L >= dense_kernel")
        if self.family == "sparse_equal" and self.L < self.sparse_kernel:
            raise ValueError("sparse_equal needs L >= sparse_kernel")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")

    @property
    def out_dim(self) -> int:
        """Embedding width; a two-pathway model concatenates two full sub-encoders."""
        return 2 * self.embed_dim if self.family == "two_pathway" else self.embed_dim

    def pathways(self) -> tuple["EncoderSpec", "EncoderSpec"]:
        return (EncoderSpec("single", self.input_dim, self.widths, self.embed_dim, 1,
                            self.dense_kernel, self.sparse_kernel),
                EncoderSpec(self.dynamic, self.input_dim, self.widths, self.embed_dim,
                            self.L, self.dense_kernel, self.sparse_kernel))


def spec_for(strategy: SamplingStrategy, input_dim: int, widths=(32, 32, 32), embed_dim: int = 32,
             fusion: str = "post") -> EncoderSpec:
    return EncoderSpec(strategy.family, input_dim, tuple(widths), embed_dim,
                       L=strategy.frames_per_sample, dynamic=strategy.dynamic, fusion=fusion)


def _shapes(spec: EncoderSpec) -> dict[str, tuple[int, ...]]:
    p = spec.input_dim
    h1, h2, h3 = spec.widths
    d = spec.embed_dim
    fam = spec.family
    if fam == "two_pathway":
        st, dy = spec.pathways()
        out = {f"static.{k}": v for k, v in _shapes(st).items()}
        out.update({f"dynamic.{k}": v for k, v in _shapes(dy).items()})
        return out
    if fam == "single":
        return {"w1": (p, h1), "b1": (h1,), "w2": (h1, h2), "b2": (h2,),
                "w3": (h2, h3), "b3": (h3,), "wout": (h3, d), "bout": (d,)}
    if fam == "dense_equal":
        return {"w1": (p, h1), "b1": (h1,), "wt": (spec.dense_kernel, h1, h2), "bt": (h2,),
                "w3": (h2, h3), "b3": (h3,), "wout": (h3, d), "bout": (d,)}
    if fam == "sparse_unequal":
        return {"w1": (p, h1), "b1": (h1,), "w2": (h1, h2), "b2": (h2,),
                "w3": (spec.L * h2, h3), "b3": (h3,), "wout": (h3, d), "bout": (d,)}
    return {"w1": (p, h1), "b1": (h1,), "w2": (h1, h2), "b2": (h2,),
            "wt": (spec.sparse_kernel, h2, h3), "bt": (h3,), "wout": (h3, d), "bout": (d,)}


def init_params(spec: EncoderSpec, seed: int) -> dict[str, np.ndarray]:
    """He-scaled Gaussian weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in sorted(_shapes(spec).items()):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        gain = 1.0 if name.endswith("wout") else 2.0
        params[name] = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
    return params


def _dense(x, w, b, act=True):
    y = ad.add(ad.matmul(x, w), b)
    return ad.relu(y) if act else y


def _features(spec: EncoderSpec, p: dict[str, Tensor], x) -> tuple[Tensor, dict[str, Tensor]]:
    """Pre-normalization output and taps for one non-composite family."""
    fam = spec.family
    if fam == "single":
        x = ad.reshape(x, (x.shape[0], x.shape[-1]))
        h1 = _dense(x, p["w1"], p["b1"])
        h2 = _dense(h1, p["w2"], p["b2"])
        h3 = _dense(h2, p["w3"], p["b3"])
        return _dense(h3, p["wout"], p["bout"], act=False), {"layer1": h1, "layer2": h2, "layer3": h3}
    if fam == "dense_equal":
        h1 = _dense(x, p["w1"], p["b1"])
        h2 = ad.relu(ad.add(ad.temporal_conv1d(h1, p["wt"]), p["bt"]))
        h3 = _dense(h2, p["w3"], p["b3"])
        pooled = ad.mean(h3, axis=1)
        return _dense(pooled, p["wout"], p["bout"], act=False), {"layer1": h1, "layer2": h2, "layer3": h3}
    h1 = _dense(x, p["w1"], p["b1"])
    h2 = _dense(h1, p["w2"], p["b2"])
    if fam == "sparse_unequal":
        cat = ad.reshape(h2, (h2.shape[0], h2.shape[1] * h2.shape[2]))
        h3 = _dense(cat, p["w3"], p["b3"])
        return _dense(h3, p["wout"], p["bout"], act=False), {"layer1": h1, "layer2": h2, "layer3": h3}
    h3 = ad.relu(ad.add(ad.temporal_conv1d(h2, p["wt"]), p["bt"]))
    pooled = ad.mean(h3, axis=1)
    return _dense(pooled, p["wout"], p["bout"], act=False), {"layer1": h1, "layer2": h2, "layer3": h3}


def _time_mean(t: Tensor) -> Tensor:
    return ad.mean(t, axis=1) if t.data.ndim == 3 else t


def forward(spec: EncoderSpec, params: dict[str, Tensor], batch) -> tuple[Tensor, dict[str, Tensor]]:
    """Embed a batch on the sphere; returns ``(embeddings (B, D), taps)``.

    ``batch`` is ``(B, L, P)`` for single-pathway families and a pair
    ``(static (B, 1, P), dynamic (B, L, P))`` for ``two_pathway``.
    """
    if spec.family == "two_pathway":
        st, dy = spec.pathways()
        xs, xd = batch
        zs, ts = _features(st, {k[7:]: v for k, v in params.items() if k.startswith("static.")}, xs)
        zd, td = _features(dy, {k[8:]: v for k, v in params.items() if k.startswith("dynamic.")}, xd)
        taps = {k: ad.concat([_time_mean(ts[k]), _time_mean(td[k])], axis=-1) for k in TAPS}
        if spec.fusion == "post":
            zs, zd = ad.l2_normalize(zs), ad.l2_normalize(zd)
        return ad.l2_normalize(ad.concat([zs, zd], axis=-1)), taps
    z, taps = _features(spec, params, batch)
    return ad.l2_normalize(z), taps


def _flat(sample: FrameSample, input_dim: int) -> np.ndarray:
    f = sample.frames.reshape(sample.frames.shape[0], -1)
    if f.shape[1] != input_dim:
        raise ValueError(f"frame has {f.shape[1]} values, encoder expects {input_dim}")
    return f


def batch_inputs(spec: EncoderSpec, samples: list[FrameSample]):
    for s in samples:
        if s.family != spec.family:
            raise ValueError(f"sample family {s.family!r} does not match encoder family {spec.family!r}")
    if spec.family == "two_pathway":
        return (np.stack([_flat(s.parts[0], spec.input_dim) for s in samples]),
                np.stack([_flat(s.parts[1], spec.input_dim) for s in samples]))
    return np.stack([_flat(s, spec.input_dim) for s in samples])


def _const_params(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def encode_batch(spec: EncoderSpec, params: dict[str, np.ndarray], samples: list[FrameSample]
                 ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    emb, taps = forward(spec, _const_params(params), batch_inputs(spec, samples))
    return emb.data, {k: v.data for k, v in taps.items()}


def encode(spec: EncoderSpec, params: dict[str, np.ndarray], sample: FrameSample
           ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Embedding of one sample plus its taps (batch axis dropped)."""
    emb, taps = encode_batch(spec, params, [sample])
    return emb[0], {k: v[0] for k, v in taps.items()}


def probe_features(taps: dict[str, np.ndarray], tap: str) -> np.ndarray:
    """``(B, C)`` features for a tap, averaged over time where present."""
    if tap not in taps:
        raise KeyError(f"unknown tap {tap!r}; have {sorted(taps)}")
    f = taps[tap]
    return f.mean(axis=1) if f.ndim == 3 else f


def mean_embedding(embeddings: np.ndarray) -> np.ndarray:
    """Renormalized mean of sample embeddings on the sphere."""
    m = np.mean(np.asarray(embeddings, dtype=np.float64), axis=0)
    n = float(np.linalg.norm(m))
    if n < 1e-12:
        raise AntipodalCollapseError("sample embeddings average to the zero vector")
    return m / n


def vie_embedding(spec: EncoderSpec, params: dict[str, np.ndarray], strategy: SamplingStrategy,
                  video: Video, S: int, rng=None, crop_size=None) -> np.ndarray:
    """Normalized expectation of the sample embedding, estimated from ``S`` draws.

    Each draw is center-cropped to ``crop_size`` without noise or flipping.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    crop = center_crop(video.frame_shape[:2], crop_size)
    samples = [augment(sample_frames(strategy, video, rng), crop) for _ in range(S)]
    emb, _ = encode_batch(spec, params, samples)
    return emb[0] if S == 1 else mean_embedding(emb)
