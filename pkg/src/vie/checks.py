"""A fast self-check of the core invariants against independent oracles.

Used by ``vie check``. Each check returns ``(passed, detail)``; the whole
suite runs in well under a minute on one core.
"""

from __future__ import annotations

import itertools
import time
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .embedding import MemoryBank, SoftmaxParams, bank_init, instance_probability, normalize
from .encoders import batch_inputs, forward, init_params, spec_for
from .evaluation import nmi, rank_gallery
from .losses import LossConfig, ir_loss, la_loss
from .neighbors import NeighborSets, background_neighbors, kmeans_fit
from .sampling import FAMILIES, SamplingStrategy, Video, default_strategy, sample_frames, test_time_clips
from .synthetic import SynthSpec, dumps, generate, loads

CheckResult = tuple[bool, str]


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def check_loss_gradients() -> CheckResult:
    rng = np.random.default_rng(0)
    worst = 0.0
    for case in range(40):
        n, d = int(rng.integers(2, 33)), int(rng.integers(2, 9))
        bank = bank_init(n, d, seed=case)
        i, tau = int(rng.integers(n)), float(rng.uniform(0.07, 1.0))
        x = rng.standard_normal(3)
        if case % 2:
            sets = NeighborSets(frozenset({i, int(rng.integers(n))}), frozenset(range(n)))
            cfg = LossConfig("LA", lam=0.01, softmax=SoftmaxParams(tau), la_neighbors=sets)
            loss_fn = la_loss
        else:
            cfg = LossConfig("IR", lam=0.01, softmax=SoftmaxParams(tau), exact=True)
            loss_fn = ir_loss

        def f(tape, p, cfg=cfg, loss_fn=loss_fn, bank=bank, i=i, x=x):
            e = ad.l2_normalize(ad.matmul(x, p["w"]))
            return loss_fn(i, e, bank, cfg, ad.sum(ad.mul(p["w"], p["w"])))

        worst = max(worst, ad.finite_diff_check(f, {"w": rng.standard_normal((3, d))}))
    return worst <= 1e-4, f"worst relative error {worst:.2e} over 40 configs"


def check_encoder_gradients() -> CheckResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for fam in FAMILIES:
        spec = spec_for(default_strategy(fam), 20, widths=(10, 8, 6), embed_dim=4)
        videos = [Video(rng.standard_normal((16, 5, 4, 1)), 25.0, k) for k in range(2)]
        x = batch_inputs(spec, [sample_frames(default_strategy(fam), v, rng) for v in videos])
        target = rng.standard_normal((2, spec.out_dim))

        def f(tape, p, spec=spec, x=x, target=target):
            e, _ = forward(spec, p, x)
            return ad.sum(ad.mul(e, target))

        worst = max(worst, ad.finite_diff_check(f, init_params(spec, 3)))
    return worst <= 1e-4, f"worst relative error {worst:.2e} over {len(FAMILIES)} families"


def check_probability_model() -> CheckResult:
    rng = np.random.default_rng(2)
    bank = bank_init(40, 6, seed=2)
    e = normalize(rng.standard_normal(6))
    prm = SoftmaxParams(0.07)
    total = sum(instance_probability(i, e, bank, prm) for i in range(40))
    full = SoftmaxParams(0.07, subset_size=40)
    same = instance_probability(3, e, bank, full, exact=False, rng=rng) == instance_probability(3, e, bank, full)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    rot = abs(instance_probability(5, q @ e, MemoryBank(bank.rows @ q.T), prm) - instance_probability(5, e, bank, prm))
    ok = abs(total - 1) <= 1e-9 and same and rot <= 1e-9
    return ok, f"sum-1={total - 1:.1e} subset==exact {same} rotation diff {rot:.1e}"


def check_la_reduces_to_ir() -> CheckResult:
    rng = np.random.default_rng(3)
    for _ in range(50):
        n, d = int(rng.integers(2, 33)), int(rng.integers(2, 9))
        bank = bank_init(n, d, seed=int(rng.integers(1 << 30)))
        i, tau = int(rng.integers(n)), float(rng.uniform(0.07, 1.0))
        e = normalize(rng.standard_normal(d))
        la = la_loss(i, e, bank, LossConfig("LA", softmax=SoftmaxParams(tau),
                                            la_neighbors=NeighborSets(frozenset({i}), frozenset(range(n))))).item()
        ir = ir_loss(i, e, bank, LossConfig("IR", softmax=SoftmaxParams(tau), exact=True)).item()
        if abs(la - ir) > 1e-12 * max(1.0, abs(ir)):
            return False, f"LA {la!r} != IR {ir!r}"
    return True, "50 configs agree"


def check_bank() -> CheckResult:
    rng = np.random.default_rng(4)
    bank = bank_init(50, 8, seed=4)
    for _ in range(10_000):
        bank.update(int(rng.integers(50)), normalize(rng.standard_normal(8)))
    drift = float(np.max(np.abs(np.linalg.norm(bank.rows, axis=1) - 1)))
    one = MemoryBank(np.array([[1.0, 0.0, 0.0]]), 0.5)
    target = normalize([0.2, -0.7, 0.4])
    for _ in range(30):
        one.update(0, target)
    gap = float(np.linalg.norm(one.rows[0] - target))
    return drift <= 1e-6 and gap <= 1e-6, f"norm drift {drift:.1e}, 30-step gap {gap:.1e}"


def check_neighbors() -> CheckResult:
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(1, 65))
        x = _unit_rows(rng, n, 4)
        i, k = int(rng.integers(n)), int(rng.integers(1, n + 1))
        keys = sorted((j != i, -float(np.dot(x[j], x[i])), j) for j in range(n))
        if background_neighbors(x, i, k) != {key[2] for key in keys[:k]}:
            return False, "kNN disagrees with full sort"
    x = np.repeat(np.eye(3), 4, axis=0) + 0.15 * rng.standard_normal((12, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    labelings = np.array(list(itertools.product(range(3), repeat=12)), dtype=np.int8)
    score = sum(np.linalg.norm((labelings == c).astype(float) @ x, axis=1) for c in range(3))
    best = labelings[int(np.argmax(score))]
    fit = kmeans_fit(x, 3, seed=0)
    same = np.array_equal(np.equal.outer(best, best), np.equal.outer(fit.labels, fit.labels))
    monotone = bool(np.all(np.diff(fit.objective_trace) >= -1e-9))
    return same and monotone, f"kNN 100/100, exhaustive partition match {same}, monotone {monotone}"


def check_sampling() -> CheckResult:
    video = Video(np.zeros((8, 2, 2, 1)), 25.0, 0)
    rng = np.random.default_rng(6)
    strat = SamplingStrategy("sparse_unequal", L=4, bin_frames=2)
    for _ in range(1000):
        idx = sample_frames(strat, video, rng).indices
        if any(v not in (2 * j, 2 * j + 1) for j, v in enumerate(idx)):
            return False, f"bin containment violated: {idx}"
    starts = [int(c.indices[0]) for c in test_time_clips(Video(np.zeros((20, 2, 2, 1))),
                                                          SamplingStrategy("dense_equal", L=16))]
    return starts == [0, 1, 2, 3, 4], f"containment 1000/1000, test clip starts {starts}"


def check_persistence() -> CheckResult:
    rng = np.random.default_rng(7)
    arrays = {"w": rng.standard_normal((3, 4)), "memory_bank": rng.standard_normal((5, 2))}
    back = checkpoint.loads(checkpoint.dumps(arrays))
    ck = all(back[k].tobytes() == v.tobytes() for k, v in arrays.items())
    ds = generate(SynthSpec(class_count=2, videos_per_class=3, frame_count=4, height=5, width=5))
    again = loads(dumps(ds))
    dd = (all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(ds.videos, again.videos))
          and np.array_equal(ds.labels, again.labels) and ds.splits == again.splits)
    return ck and dd, f"checkpoint round trip {ck}, dataset round trip {dd}"


def check_eval_metrics() -> CheckResult:
    a = np.array([0, 0, 1, 1, 2, 2, 2, 0])
    ok = nmi(a, a) == 1.0 and nmi(np.zeros(8), a) == 0.0
    g = _unit_rows(np.random.default_rng(8), 20, 5)
    self_first = all(rank_gallery(g[i], g)[0] == i for i in range(20))
    return ok and self_first, f"nmi identities {ok}, self-retrieval {self_first}"


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "loss-gradients": check_loss_gradients,
    "encoder-gradients": check_encoder_gradients,
    "probability-model": check_probability_model,
    "la-reduces-to-ir": check_la_reduces_to_ir,
    "bank-discipline": check_bank,
    "neighbor-oracles": check_neighbors,
    "sampling": check_sampling,
    "persistence": check_persistence,
    "eval-metrics": check_eval_metrics,
}


def run_all(report: Callable[[str], None] = print) -> bool:
    passed = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        report(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
        passed &= ok
    return passed
