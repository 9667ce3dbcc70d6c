"""The training loop: sample, augment, encode, score against the bank, step, update the bank."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .config import TrainConfig
from .embedding import MemoryBank
from .encoders import EncoderSpec, init_params, batch_inputs, forward
from .losses import DEGENERATE, ir_nll, la_nll, neighbor_masks, regularizer
from .neighbors import ClusterAssignment, background_matrix, kmeans_fit
from .sampling import SamplingStrategy, augment, draw_augmentation, sample_frames
from .synthetic import LabeledDataset

logger = logging.getLogger(__name__)

BANK_KEY = "memory_bank"
BANK_MOMENTUM_KEY = "memory_bank.momentum"


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``record`` describes the offending batch."""

    def __init__(self, msg: str, record: str):
        super().__init__(msg)
        self.record = record


@dataclass
class Model:
    """A frozen encoder plus everything needed to feed it."""

    spec: EncoderSpec
    params: dict[str, np.ndarray]
    strategy: SamplingStrategy
    crop_size: tuple[int, int]

    @classmethod
    def from_config(cls, cfg: TrainConfig, frame_shape, params=None) -> "Model":
        spec = cfg.encoder_spec(frame_shape)
        return cls(spec, params if params is not None else init_params(spec, cfg.seed),
                   cfg.strategy(), cfg.crop_size(frame_shape[:2]))


@dataclass
class TrainResult:
    config: TrainConfig
    model: Model
    bank: MemoryBank
    history: list[dict] = field(default_factory=list)
    clusters: ClusterAssignment | None = None
    audit: list[str] = field(default_factory=list)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: v for k, v in sorted(self.model.params.items())}
        out[BANK_KEY] = self.bank.rows
        out[BANK_MOMENTUM_KEY] = np.asarray([self.bank.momentum])
        return out

    def save(self, path) -> None:
        checkpoint.save(path, self.arrays())

    def metrics_csv(self) -> str:
        keys = ["epoch", "loss", "lr", "degenerate"]
        rows = [",".join(keys)]
        for h in self.history:
            rows.append(",".join(repr(h[k]) if isinstance(h[k], float) else str(h[k]) for k in keys))
        return "\n".join(rows) + "\n"


def load_model(path, cfg: TrainConfig, frame_shape) -> tuple[Model, MemoryBank]:
    arrays = checkpoint.load(path)
    rows = arrays.pop(BANK_KEY)
    mu = float(arrays.pop(BANK_MOMENTUM_KEY)[0])
    return Model.from_config(cfg, frame_shape, arrays), MemoryBank(rows, mu)


def training_videos(dataset: LabeledDataset) -> LabeledDataset:
    """The ``train`` split, reindexed so video index equals bank row."""
    if "train" in dataset.splits:
        dataset = dataset.subset("train")
    return dataset.reindexed()


def _draw_batch(cfg: TrainConfig, strategy, videos, batch, epoch, crop):
    samples = []
    for i in batch:
        r = np.random.default_rng([cfg.seed, epoch, int(i)])
        s = sample_frames(strategy, videos[i], r)
        a = draw_augmentation(r, videos[i].frame_shape[:2], crop, cfg.noise_scale, cfg.flip_prob)
        samples.append(augment(s, a))
    return samples


def train(cfg: TrainConfig, dataset: LabeledDataset, audit: bool = False) -> TrainResult:
    """Unsupervised training on the ``train`` split; labels are never read."""
    data = training_videos(dataset)
    videos = data.videos
    n = len(videos)
    if n == 0:
        raise ValueError("no training videos")
    frame_shape = videos[0].frame_shape
    model = Model.from_config(cfg, frame_shape)
    spec, params, strategy, crop = model.spec, model.params, model.strategy, model.crop_size
    bank = MemoryBank.init(n, spec.out_dim, cfg.seed + 1, cfg.bank_momentum)
    softmax = cfg.softmax()
    if cfg.subset_size > n:
        raise ValueError("subset_size exceeds training video count")
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    lr = cfg.lr
    result = TrainResult(cfg, model, bank)
    best, stale = np.inf, 0
    labels = bg = None
    for epoch in range(cfg.epochs):
        use_la = cfg.loss == "LA" and epoch >= cfg.ir_warmup_epochs
        if use_la and (labels is None or (epoch - cfg.ir_warmup_epochs) % cfg.recluster_every == 0):
            result.clusters = kmeans_fit(bank, cfg.resolved_m(n), seed=cfg.seed * 1000 + epoch,
                                         max_iters=cfg.kmeans_iters)
            labels = result.clusters.labels
            bg = background_matrix(bank, cfg.resolved_k(n))
        order = np.random.default_rng([cfg.seed, epoch, n]).permutation(n)
        losses = []
        degenerate0 = DEGENERATE.count
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            samples = _draw_batch(cfg, strategy, videos, batch, epoch, crop)
            if audit:
                result.audit.extend(f"epoch={epoch} {s.to_record()}" for s in samples)
            tape = ad.Tape()
            theta = {k: tape.parameter(k, v) for k, v in params.items()}
            e, _ = forward(spec, theta, batch_inputs(spec, samples))
            if use_la:
                num, den = neighbor_masks(batch, labels, bg, n)
                nll = la_nll(batch, e, bank, softmax, num, den)
            else:
                rng = np.random.default_rng([cfg.seed, epoch, start, 7])
                nll = ir_nll(batch, e, bank, softmax, cfg.exact, rng)
            loss = ad.mean(nll, axis=0)
            if cfg.weight_decay:
                loss = ad.add(loss, ad.scalar_mul(regularizer(theta), cfg.weight_decay))
            value = loss.item()
            if not np.isfinite(value):
                record = "\n".join(s.to_record() for s in samples)
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch offset {start}", record)
            grads = ad.backward(tape, loss)
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] + grads[k]
                params[k] = params[k] - lr * velocity[k]
            for b, i in enumerate(batch):
                bank.update(int(i), e.data[b])
            losses.append(value)
        mean_loss = float(np.mean(losses))
        result.history.append({"epoch": epoch, "loss": mean_loss, "lr": lr,
                               "degenerate": DEGENERATE.count - degenerate0})
        logger.info("epoch %d loss %.5f lr %.4g", epoch, mean_loss, lr)
        if mean_loss < best * (1 - cfg.plateau_tol):
            best, stale = mean_loss, 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                lr *= cfg.lr_drop
                stale = 0
    return result


def write_run(run_dir, result: TrainResult) -> Path:
    """Config snapshot, checkpoint, metrics, and (if recorded) the sample audit log."""
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    result.config.save(run / "config.txt")
    result.save(run / "checkpoint.bin")
    (run / "metrics.csv").write_text(result.metrics_csv())
    if result.audit:
        (run / "samples.log").write_text("\n".join(result.audit) + "\n")
    return run
