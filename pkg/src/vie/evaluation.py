"""Frozen-encoder evaluation: linear probes, retrieval, NMI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .encoders import TAPS, encode_batch, mean_embedding, probe_features
from .neighbors import kmeans_fit
from .sampling import augment, center_crop, test_time_clips
from .synthetic import LabeledDataset
from .training import Model


@dataclass
class ClipFeatures:
    """Per-video features of the five test-time clips: ``taps[name]`` is ``(N, 5, C)``."""

    embeddings: np.ndarray  # (N, 5, D)
    taps: dict[str, np.ndarray]
    labels: np.ndarray
    splits: list[str]

    def video_embeddings(self) -> np.ndarray:
        return np.stack([mean_embedding(e) for e in self.embeddings])


def clip_features(model: Model, dataset: LabeledDataset, chunk: int = 64) -> ClipFeatures:
    crop = None
    samples = []
    for v in dataset.videos:
        crop = center_crop(v.frame_shape[:2], model.crop_size)
        samples.extend(augment(s, crop) for s in test_time_clips(v, model.strategy))
    embs, taps = [], {k: [] for k in TAPS}
    for start in range(0, len(samples), chunk):
        e, t = encode_batch(model.spec, model.params, samples[start:start + chunk])
        embs.append(e)
        for k in TAPS:
            taps[k].append(probe_features(t, k))
    n = len(dataset)
    emb = np.concatenate(embs).reshape(n, 5, -1)
    tap_arrays = {k: np.concatenate(v).reshape(n, 5, -1) for k, v in taps.items()}
    return ClipFeatures(emb, tap_arrays, dataset.labels.copy(), list(dataset.splits))


@dataclass
class LinearReadout:
    """Standardization plus an affine-softmax layer."""

    mean: np.ndarray
    scale: np.ndarray
    weight: np.ndarray  # (C, K)
    bias: np.ndarray  # (K,)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.scale) @ self.weight + self.bias

    def proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x), axis=-1)


def fit_readout(x: np.ndarray, y: np.ndarray, n_classes: int, l2: float = 1e-3,
                max_iter: int = 500) -> LinearReadout:
    """Multinomial logistic regression by L-BFGS; deterministic."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    z = (x - mu) / sd
    n, c = z.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    def objective(flat):
        w = flat[:c * n_classes].reshape(c, n_classes)
        b = flat[c * n_classes:]
        lp = log_softmax(z @ w + b, axis=1)
        loss = -np.sum(onehot * lp) / n + 0.5 * l2 * np.sum(w * w)
        g = (np.exp(lp) - onehot) / n
        gw = z.T @ g + l2 * w
        return loss, np.concatenate([gw.ravel(), g.sum(axis=0)])

    res = minimize(objective, np.zeros(c * n_classes + n_classes), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    w = res.x[:c * n_classes].reshape(c, n_classes)
    return LinearReadout(mu, sd, w, res.x[c * n_classes:])


def clip_accuracy(readout: LinearReadout, feats: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 with the five clip softmaxes averaged per video; ``feats`` is ``(N, 5, C)``."""
    p = readout.proba(feats.reshape(-1, feats.shape[-1])).reshape(feats.shape[0], feats.shape[1], -1)
    return float(np.mean(np.argmax(p.mean(axis=1), axis=1) == labels))


@dataclass
class ProbeResult:
    tap: str
    train_top1: float
    val_top1: float
    chance: float


def probe_from_features(feats: ClipFeatures, tap: str, n_classes: int, l2: float = 1e-3,
                        shuffle_seed: int | None = None) -> ProbeResult:
    """Fit on every train clip, score val videos; optionally with permuted train labels."""
    x = feats.taps[tap] if tap in feats.taps else None
    if x is None:
        raise KeyError(f"unknown tap {tap!r}")
    tr = np.array([s == "train" for s in feats.splits])
    va = ~tr if (~tr).any() else tr
    y_tr = feats.labels[tr]
    if shuffle_seed is not None:
        y_tr = np.random.default_rng(shuffle_seed).permutation(y_tr)
    x_tr = x[tr]
    readout = fit_readout(x_tr.reshape(-1, x.shape[-1]), np.repeat(y_tr, x.shape[1]), n_classes, l2)
    return ProbeResult(tap, clip_accuracy(readout, x_tr, y_tr),
                       clip_accuracy(readout, x[va], feats.labels[va]), 1.0 / n_classes)


def linear_probe(model: Model, dataset: LabeledDataset, tap: str = "layer3", l2: float = 1e-3) -> ProbeResult:
    """Train a linear-softmax readout on frozen tap features; report top-1."""
    return probe_from_features(clip_features(model, dataset), tap, dataset.class_count, l2)


def embed_videos(model: Model, dataset: LabeledDataset) -> np.ndarray:
    """One embedding per video: renormalized mean over its test-time clips."""
    return clip_features(model, dataset).video_embeddings()


def rank_gallery(query: np.ndarray, gallery: np.ndarray, gallery_ids=None) -> np.ndarray:
    """Gallery ids by decreasing dot product with the query; ties by id."""
    ids = np.arange(len(gallery)) if gallery_ids is None else np.asarray(gallery_ids)
    scores = gallery @ query
    return ids[np.lexsort((ids, -scores))]


def retrieve(model: Model, query, gallery: LabeledDataset | np.ndarray, k: int,
             gallery_ids=None) -> np.ndarray:
    """Top-``k`` gallery ids for a query video (or a precomputed query embedding)."""
    if len(gallery) == 0:
        raise ValueError("gallery is empty")
    if isinstance(gallery, LabeledDataset):
        if gallery_ids is None:
            gallery_ids = [v.index for v in gallery.videos]
        gallery = embed_videos(model, gallery)
    if not isinstance(query, np.ndarray):
        query = embed_videos(model, LabeledDataset([query], np.zeros(1, dtype=np.int64), ["val"], 1))[0]
    return rank_gallery(query, gallery, gallery_ids)[:k]


def precision_at_k(query_emb: np.ndarray, query_labels: np.ndarray, gallery_emb: np.ndarray,
                   gallery_labels: np.ndarray, k: int) -> float:
    hits = []
    for q, lbl in zip(query_emb, query_labels):
        top = rank_gallery(q, gallery_emb)[:k]
        hits.append(np.mean(gallery_labels[top] == lbl))
    return float(np.mean(hits))


def nmi(predicted, true) -> float:
    """Normalized mutual information, arithmetic-mean normalization."""
    a = np.asarray(predicted)
    b = np.asarray(true)
    if a.shape != b.shape:
        raise ValueError(f"label arrays differ in length: {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = a.size
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    pij = table / n
    pa, pb = pij.sum(axis=1), pij.sum(axis=0)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / np.outer(pa, pb)[nz])))
    ha = float(-np.sum(pa * np.log(pa)))
    hb = float(-np.sum(pb * np.log(pb)))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    denom = 0.5 * (ha + hb)
    return float(np.clip(mi / denom, 0.0, 1.0)) if denom > 0 else 0.0


@dataclass
class EvalReport:
    probes: dict[str, ProbeResult]
    precision_at_5: float
    nmi: float
    chance: float
    loss_curve: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["metric,value"]
        for tap, p in self.probes.items():
            rows.append(f"probe_{tap}_val_top1,{p.val_top1:.6f}")
            rows.append(f"probe_{tap}_train_top1,{p.train_top1:.6f}")
        rows += [f"precision_at_5,{self.precision_at_5:.6f}", f"nmi,{self.nmi:.6f}",
                 f"chance,{self.chance:.6f}"]
        rows += [f"loss_epoch_{i},{v:.6f}" for i, v in enumerate(self.loss_curve)]
        return "\n".join(rows) + "\n"


def evaluate(model: Model, dataset: LabeledDataset, loss_curve=(), seed: int = 0) -> EvalReport:
    """Probe every tap, retrieve val against train, cluster val embeddings."""
    feats = clip_features(model, dataset)
    K = dataset.class_count
    probes = {t: probe_from_features(feats, t, K) for t in TAPS}
    emb = feats.video_embeddings()
    tr = np.array([s == "train" for s in feats.splits])
    va = ~tr if (~tr).any() else tr
    p5 = precision_at_k(emb[va], feats.labels[va], emb[tr], feats.labels[tr], min(5, int(tr.sum())))
    assign = kmeans_fit(emb[va], min(K, int(va.sum())), seed=seed)
    return EvalReport(probes, p5, nmi(assign.labels, feats.labels[va]), 1.0 / K, list(loss_curve))
