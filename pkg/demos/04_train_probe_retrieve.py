"""Train an encoder without labels, then measure what it learned with labels held out.

Run: python3 demos/04_train_probe_retrieve.py   (about half a minute)
"""

import numpy as np

from vie.config import TrainConfig
from vie.evaluation import embed_videos, evaluate, rank_gallery
from vie.synthetic import SynthSpec, generate
from vie.training import Model, train

# Dynamics mode: the class is the direction of motion, so no single frame reveals it.
data = generate(SynthSpec(label_mode="dynamics"))
print(data.stats_text())

for loss in ("LA", "IR"):
    cfg = TrainConfig(loss=loss)
    result = train(cfg, data)
    curve = [h["loss"] for h in result.history]
    report = evaluate(result.model, data, curve)
    print(f"{loss}: loss {curve[0]:.3f} -> {curve[-1]:.3f}")
    for tap, p in report.probes.items():
        print(f"  {tap} val top-1 {p.val_top1:.3f} (chance {p.chance:.3f})")
    print(f"  precision@5 {report.precision_at_5:.3f}  NMI {report.nmi:.3f}")

random_report = evaluate(Model.from_config(TrainConfig(), data.videos[0].frame_shape), data)
print(f"untrained encoder: layer3 val top-1 {random_report.probes['layer3'].val_top1:.3f}")

# Nearest neighbors of one validation video, among the training videos.
emb = embed_videos(result.model, data)
train_ids = np.array([i for i, s in enumerate(data.splits) if s == "train"])
query = next(i for i, s in enumerate(data.splits) if s == "val")
top = rank_gallery(emb[query], emb[train_ids], train_ids)[:5]
print(f"query {query} (class {data.labels[query]}) -> classes {data.labels[top].tolist()}")
