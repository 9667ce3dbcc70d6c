"""Training-data ablations: cut videos into bins, or keep a fraction of them.

Every condition trains a fresh encoder on the transformed ``train`` split
and is probed on the untouched dataset, so only the training data varies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import TrainConfig
from .encoders import TAPS
from .evaluation import clip_features, probe_from_features
from .synthetic import LabeledDataset, cut_into_bins, subsample_fraction
from .training import train

logger = logging.getLogger(__name__)


@dataclass
class AblationRow:
    condition: str
    train_videos: int
    top1: dict[str, float]
    chance: float


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def row(self, condition: str) -> AblationRow:
        for r in self.rows:
            if r.condition == condition:
                return r
        raise KeyError(condition)

    def to_csv(self) -> str:
        out = ["condition,train_videos," + ",".join(TAPS) + ",chance"]
        for r in self.rows:
            accs = ",".join(f"{r.top1[t]:.6f}" for t in TAPS)
            out.append(f"{r.condition},{r.train_videos},{accs},{r.chance:.6f}")
        return "\n".join(out) + "\n"


def _train_split(dataset: LabeledDataset) -> LabeledDataset:
    return dataset.subset("train") if "train" in dataset.splits else dataset


def ablate(base: TrainConfig, dataset: LabeledDataset, bins=(1, 2, 5), fractions=(1.0, 0.7, 0.3),
           subsample_seed: int = 0) -> AblationTable:
    """One row per condition, one column per probe tap.

    ``bins=1`` and ``fraction=1.0`` both mean the unmodified training set;
    that run is shared rather than repeated.
    """
    train_part = _train_split(dataset)
    conditions = [(f"bins={b}", lambda b=b: cut_into_bins(train_part, b)) for b in bins]
    conditions += [(f"fraction={f:g}", lambda f=f: subsample_fraction(train_part, f, subsample_seed))
                   for f in fractions]
    cache: dict[str, AblationRow] = {}
    rows = []
    for name, make in conditions:
        full = name in ("bins=1", "fraction=1")
        if full and "full" in cache:
            rows.append(AblationRow(name, cache["full"].train_videos, dict(cache["full"].top1),
                                    cache["full"].chance))
            continue
        data = make()
        logger.info("ablation %s: training on %d videos", name, len(data))
        result = train(base, data)
        feats = clip_features(result.model, dataset)
        top1 = {t: probe_from_features(feats, t, dataset.class_count).val_top1 for t in TAPS}
        row = AblationRow(name, len(data), top1, 1.0 / dataset.class_count)
        if full:
            cache["full"] = row
        rows.append(row)
    return AblationTable(rows)
