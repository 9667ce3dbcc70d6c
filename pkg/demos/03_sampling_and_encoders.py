"""The five frame-sampling families and the encoders that consume them.

Run: python3 demos/03_sampling_and_encoders.py
"""

import numpy as np

from vie.encoders import encode, init_params, spec_for, vie_embedding
from vie.sampling import FAMILIES, Video, default_strategy, sample_frames, test_time_clips
from vie.synthetic import SynthSpec, generate

video = generate(SynthSpec(class_count=1, videos_per_class=1, frame_count=24)).videos[0]
rng = np.random.default_rng(0)
for fam in FAMILIES:
    s = sample_frames(default_strategy(fam), video, rng)
    parts = " | ".join(f"{p.family}:{p.indices.tolist()}" for p in s.parts) if s.parts else s.indices.tolist()
    print(f"{fam:15s} frames {parts}")

# Test time uses five evenly spaced windows.
starts = [int(c.indices[0]) for c in test_time_clips(video, default_strategy("dense_equal"))]
print("dense_equal test-clip starts:", starts)

# Every family embeds a sample onto the unit sphere; two_pathway concatenates a static and a dynamic pathway.
frame_dim = int(np.prod(video.frame_shape))
for fam in FAMILIES:
    spec = spec_for(default_strategy(fam), frame_dim, embed_dim=8)
    params = init_params(spec, seed=0)
    e, taps = encode(spec, params, sample_frames(default_strategy(fam), video, 1))
    print(f"{fam:15s} |e| = {np.linalg.norm(e):.6f}  dim {e.shape[0]}  taps {[t.shape for t in taps.values()]}")

# The video-level embedding is the renormalized mean over many samples.
spec = spec_for(default_strategy("sparse_equal"), frame_dim, embed_dim=8)
params = init_params(spec, seed=0)
ref = vie_embedding(spec, params, default_strategy("sparse_equal"), video, S=2000, rng=0)
for S in (1, 10, 100):
    est = vie_embedding(spec, params, default_strategy("sparse_equal"), video, S=S, rng=S)
    print(f"S={S:3d}: distance to the S=2000 estimate {np.linalg.norm(est - ref):.4f}")
