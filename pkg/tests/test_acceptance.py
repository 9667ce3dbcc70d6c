"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds marked "frozen" were fixed from pilot runs before this suite was
written and are not tuned to the outcome of the runs below.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from vie import autodiff as ad
from vie import checkpoint
from vie.ablation import ablate
from vie.config import TrainConfig
from vie.embedding import MemoryBank, SoftmaxParams, bank_init, instance_probability, normalize
from vie.encoders import TAPS, batch_inputs, forward, init_params, spec_for
from vie.evaluation import clip_features, embed_videos, evaluate, probe_from_features, rank_gallery
from vie.losses import LossConfig, ir_loss, la_loss, regularizer
from vie.neighbors import NeighborSets, background_neighbors, kmeans_fit, lloyd_objective
from vie.sampling import FAMILIES, Video, default_strategy, sample_frames
from vie.synthetic import SynthSpec, generate, read_dataset, with_mode, write_dataset
from vie.training import Model, train, write_run

CHANCE = 1 / 8

# frozen from the learning-signal pilot (seeds 0-2: trained 0.46-0.58, random 0.20-0.23, p@5 0.41-0.47)
MIN_TRAINED_TOP1 = 2 * CHANCE
MIN_MARGIN_OVER_RANDOM = 0.15
MIN_LOSS_DROP = 0.30
MIN_PRECISION_AT_5 = 2 * CHANCE
# LA may trail IR by at most this much at the top tap (seed-to-seed spread in the pilots is about 0.05)
LA_VS_IR_BAND = 0.10
# two-pathway slack from the criterion itself
TWO_PATHWAY_SLACK = 0.02


@pytest.fixture(scope="module")
def dynamics_data():
    return generate(SynthSpec())


@pytest.fixture(scope="module")
def appearance_data():
    return generate(with_mode(SynthSpec(), "appearance"))


@pytest.fixture(scope="module")
def default_run(dynamics_data):
    t0 = time.perf_counter()
    result = train(TrainConfig(), dynamics_data)
    return result, time.perf_counter() - t0


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_sets(rng, n, i):
    bg = set(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist()) | {i}
    close = set(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist()) | {i}
    return NeighborSets(frozenset(close), frozenset(bg))


def test_criterion_1_gradient_fidelity(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_theta = worst_e = 0.0
    n_configs = 100
    for c in range(n_configs):
        family = FAMILIES[c % len(FAMILIES)]
        strat = default_strategy(family)
        embed = int(rng.integers(1, 4)) if family == "two_pathway" else int(rng.integers(2, 8))
        spec = spec_for(strat, 12, widths=(10, 8, 6), embed_dim=embed)
        d = spec.out_dim
        n = int(rng.integers(2, 33))
        bank = bank_init(n, d, seed=int(rng.integers(2**31)))
        i, tau, lam = int(rng.integers(n)), float(rng.uniform(0.07, 1.0)), float(rng.uniform(0.0, 0.01))
        if c % 2:
            cfg = LossConfig("LA", lam=lam, softmax=SoftmaxParams(tau), la_neighbors=_random_sets(rng, n, i))
            loss_fn = la_loss
        else:
            cfg = LossConfig("IR", lam=lam, softmax=SoftmaxParams(tau), exact=True)
            loss_fn = ir_loss
        video = Video(rng.standard_normal((16, 4, 3, 1)), 25.0, 0)
        x = batch_inputs(spec, [sample_frames(strat, video, rng)])

        def through_theta(tape, p, spec=spec, x=x, cfg=cfg, loss_fn=loss_fn, bank=bank, i=i):
            e, _ = forward(spec, p, x)
            return loss_fn(i, e, bank, cfg, regularizer(p))

        def through_e(tape, p, cfg=cfg, loss_fn=loss_fn, bank=bank, i=i):
            return loss_fn(i, p["e"], bank, cfg)

        # a generic point: zero biases can leave pre-activations exactly on the ReLU kink
        theta = {k: v if v.ndim > 1 else 0.1 * rng.standard_normal(v.shape) for k, v in init_params(spec, c).items()}
        worst_theta = max(worst_theta, ad.finite_diff_check(through_theta, theta))
        worst_e = max(worst_e, ad.finite_diff_check(through_e, {"e": normalize(rng.standard_normal(d))}))
    elapsed = time.perf_counter() - t0
    ok = worst_theta <= 1e-4 and worst_e <= 1e-4 and elapsed <= 60
    criterion(1, ok, f"{n_configs} configs, max rel err theta {worst_theta:.1e} e {worst_e:.1e}, {elapsed:.0f}s")
    assert ok


def test_criterion_2_probability_model(criterion):
    rng = np.random.default_rng(7)
    sum_err = rot_err = 0.0
    subset_equal = la_ir_equal = True
    for _ in range(50):
        n, d = int(rng.integers(2, 33)), int(rng.integers(2, 8))
        bank = bank_init(n, d, seed=int(rng.integers(2**31)))
        e = normalize(rng.standard_normal(d))
        prm = SoftmaxParams(float(rng.uniform(0.07, 1.0)))
        sum_err = max(sum_err, abs(sum(instance_probability(j, e, bank, prm) for j in range(n)) - 1.0))
        i = int(rng.integers(n))
        full = SoftmaxParams(prm.temperature, subset_size=n)
        subset_equal &= (instance_probability(i, e, bank, full, exact=False, rng=rng)
                         == instance_probability(i, e, bank, prm))
        q = special_ortho_group.rvs(d, random_state=int(rng.integers(2**31)))
        rotated = MemoryBank(bank.rows @ q.T)
        rot_err = max(rot_err, abs(instance_probability(i, q @ e, rotated, prm) - instance_probability(i, e, bank, prm)))
        sets = NeighborSets(frozenset({i}), frozenset(range(n)))
        la = la_loss(i, e, bank, LossConfig("LA", softmax=prm, la_neighbors=sets)).item()
        ir = ir_loss(i, e, bank, LossConfig("IR", softmax=prm, exact=True)).item()
        la_ir_equal &= la == ir
    ok = sum_err <= 1e-9 and subset_equal and rot_err <= 1e-9 and la_ir_equal
    criterion(2, ok, f"sum-to-1 err {sum_err:.1e}, Q=N exact {subset_equal}, rotation err {rot_err:.1e}, "
                     f"LA==IR {la_ir_equal}")
    assert ok


def test_criterion_3_bank_discipline(criterion):
    rng = np.random.default_rng(3)
    bank = bank_init(64, 8, seed=3, momentum=float(rng.uniform(0.1, 0.9)))
    for _ in range(10_000):
        bank.update(int(rng.integers(64)), normalize(rng.standard_normal(8)))
    drift = float(np.max(np.abs(np.linalg.norm(bank.rows, axis=1) - 1.0)))
    gaps = []
    for s in range(20):
        r = np.random.default_rng(s)
        one = MemoryBank(_unit_rows(r.standard_normal((1, 6))), 0.5)
        target = normalize(r.standard_normal(6))
        for _ in range(30):
            one.update(0, target)
        gaps.append(float(np.linalg.norm(one.rows[0] - target)))
    ok = drift <= 1e-6 and max(gaps) <= 1e-6
    criterion(3, ok, f"norm drift {drift:.1e} after 10000 updates, worst 30-step gap {max(gaps):.1e}")
    assert ok


def _exhaustive_best(x, m):
    labelings = np.array(list(itertools.product(range(m), repeat=len(x))), dtype=np.int8)
    score = sum(np.linalg.norm((labelings == c).astype(float) @ x, axis=1) for c in range(m))
    return labelings[int(np.argmax(score))]


def _same_partition(a, b):
    return np.array_equal(np.equal.outer(a, a), np.equal.outer(b, b))


def test_criterion_4_neighbor_oracles(criterion):
    rng = np.random.default_rng(4)
    knn_cases = knn_agree = 0
    for _ in range(300):
        n, d = int(rng.integers(1, 65)), int(rng.integers(2, 8))
        x = rng.standard_normal((n, d))
        if n > 3 and rng.random() < 0.3:
            x[rng.integers(n)] = x[rng.integers(n)]  # exact ties
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        i, k = int(rng.integers(n)), int(rng.integers(1, n + 1))
        keys = sorted((j != i, -float(x[j] @ x[i]), j) for j in range(n))
        knn_cases += 1
        knn_agree += background_neighbors(x, i, k) == {key[2] for key in keys[:k]}
    # separated clusters (rotated orthonormal centres) have one global optimum for Lloyd to reach
    partition_cases = partition_agree = 0
    for seed, m in itertools.product(range(4), (2, 3)):
        r = np.random.default_rng(seed)
        centres = special_ortho_group.rvs(3, random_state=seed)[:m]
        x = _unit_rows(centres[np.arange(12) % m] + 0.2 * r.standard_normal((12, 3)))
        fit = kmeans_fit(x, m, seed=seed)
        partition_cases += 1
        partition_agree += _same_partition(_exhaustive_best(x, m), fit.labels)
    # any instance: monotone objective, and the result is a Lloyd fixpoint by brute-force reassignment
    monotone = fixpoint = True
    for seed in range(50):
        r = np.random.default_rng(100 + seed)
        n = int(r.integers(2, 65))
        x = _unit_rows(r.standard_normal((n, 4)))
        fit = kmeans_fit(x, int(r.integers(1, n + 1)), seed=seed)
        monotone &= bool(np.all(np.diff(fit.objective_trace) >= -1e-9))
        monotone &= abs(fit.objective_trace[-1] - lloyd_objective(x, fit.labels, fit.centroids)) <= 1e-9
        if fit.iteration_count < 50:
            best = [max(range(fit.n_clusters), key=lambda c: (float(x[j] @ fit.centroids[c]), -c)) for j in range(n)]
            fixpoint &= all(float(x[j] @ fit.centroids[best[j]]) - float(x[j] @ fit.centroids[fit.labels[j]]) <= 1e-12
                            for j in range(n))
    ok = knn_agree == knn_cases and partition_agree == partition_cases and monotone and fixpoint
    criterion(4, ok, f"kNN {knn_agree}/{knn_cases}, exhaustive partitions {partition_agree}/{partition_cases}, "
                     f"objective monotone {monotone}, Lloyd fixpoint {fixpoint}")
    assert ok


def test_criterion_5_learning_signal(criterion, dynamics_data, default_run):
    result, seconds = default_run
    cfg = result.config
    trained = probe_from_features(clip_features(result.model, dynamics_data), "layer3", 8).val_top1
    rand_model = Model.from_config(cfg, dynamics_data.videos[0].frame_shape)
    random = probe_from_features(clip_features(rand_model, dynamics_data), "layer3", 8).val_top1
    drop = 1 - result.history[-1]["loss"] / result.history[0]["loss"]
    ok = (trained >= MIN_TRAINED_TOP1 and trained - random >= MIN_MARGIN_OVER_RANDOM
          and drop >= MIN_LOSS_DROP and seconds <= 600)
    criterion(5, ok, f"layer3 top-1 trained {trained:.3f} vs random {random:.3f} (chance {CHANCE:.3f}), "
                     f"loss drop {drop:.0%}, train {seconds:.0f}s")
    assert ok


def test_la_versus_ir_side_by_side(dynamics_data, default_run):
    la_result, _ = default_run
    ir_result = train(TrainConfig(loss="IR"), dynamics_data)
    feats = {name: clip_features(r.model, dynamics_data) for name, r in (("LA", la_result), ("IR", ir_result))}
    rows = {name: {t: probe_from_features(f, t, 8).val_top1 for t in TAPS} for name, f in feats.items()}
    for name, row in rows.items():
        print(name, " ".join(f"{t} {v:.3f}" for t, v in row.items()))
    assert rows["LA"]["layer3"] >= rows["IR"]["layer3"] - LA_VS_IR_BAND


def _top_tap_mean(ds, family, seeds=range(5)):
    accs = []
    for seed in seeds:
        result = train(TrainConfig(loss="IR", family=family, seed=seed), ds)
        accs.append(probe_from_features(clip_features(result.model, ds), "layer3", 8).val_top1)
    return float(np.mean(accs))


def test_criterion_6_static_dynamic_dissociation(criterion, dynamics_data, appearance_data):
    t0 = time.perf_counter()
    table = {}
    for mode, ds in (("dynamics", dynamics_data), ("appearance", appearance_data)):
        table[mode] = {fam: _top_tap_mean(ds, fam) for fam in ("single", "sparse_equal", "two_pathway")}
    dyn, app = table["dynamics"], table["appearance"]
    checks = {
        "dyn sparse>single": dyn["sparse_equal"] > dyn["single"],
        "app single>=sparse": app["single"] >= app["sparse_equal"],
        "dyn two-pathway": dyn["two_pathway"] >= max(dyn["single"], dyn["sparse_equal"]) - TWO_PATHWAY_SLACK,
        "app two-pathway": app["two_pathway"] >= max(app["single"], app["sparse_equal"]) - TWO_PATHWAY_SLACK,
    }
    ok = all(checks.values())
    detail = "; ".join(f"{mode} " + " ".join(f"{f} {v:.3f}" for f, v in row.items()) for mode, row in table.items())
    failed = [k for k, v in checks.items() if not v]
    criterion(6, ok, f"5-seed mean layer3 top-1: {detail}; {time.perf_counter() - t0:.0f}s"
                     + (f"; failed {failed}" if failed else ""))
    assert ok


def test_criterion_7_ablation(criterion, appearance_data):
    table = ablate(TrainConfig(loss="IR", family="single"), appearance_data)
    names = [r.condition for r in table.rows]
    shape_ok = (names == ["bins=1", "bins=2", "bins=5", "fraction=1", "fraction=0.7", "fraction=0.3"]
                and all(set(r.top1) == set(TAPS) for r in table.rows))
    full, low = table.row("fraction=1").top1["layer3"], table.row("fraction=0.3").top1["layer3"]
    ok = shape_ok and full >= low
    criterion(7, ok, f"{len(table.rows)} conditions x {len(TAPS)} taps; layer3 full {full:.3f} vs 30% {low:.3f}; "
                     f"bins=5 {table.row('bins=5').top1['layer3']:.3f}")
    print(table.to_csv())
    assert ok


def test_criterion_8_determinism_and_persistence(criterion, dynamics_data, tmp_path):
    cfg = TrainConfig(epochs=3, family="two_pathway")
    a, b = train(cfg, dynamics_data), train(cfg, dynamics_data)
    write_run(tmp_path / "a", a)
    write_run(tmp_path / "b", b)
    same_ckpt = (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    same_log = (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()
    back = checkpoint.load(tmp_path / "a" / "checkpoint.bin")
    arrays = a.arrays()
    ckpt_round = set(back) == set(arrays) and all(back[k].tobytes() == arrays[k].tobytes() for k in arrays)
    write_dataset(tmp_path / "d.vie", dynamics_data)
    again = read_dataset(tmp_path / "d.vie")
    data_round = (np.array_equal(again.labels, dynamics_data.labels) and again.splits == dynamics_data.splits
                  and all(x.frames.tobytes() == y.frames.tobytes() and x.index == y.index
                          for x, y in zip(again.videos, dynamics_data.videos)))
    ok = same_ckpt and same_log and ckpt_round and data_round
    criterion(8, ok, f"bit-identical checkpoints {same_ckpt}, logs {same_log}, checkpoint round trip {ckpt_round}, "
                     f"dataset round trip {data_round}")
    assert ok


def test_criterion_9_retrieval(criterion, dynamics_data, default_run):
    result, _ = default_run
    emb = embed_videos(result.model, dynamics_data)
    self_first = sum(int(rank_gallery(emb[i], emb)[0] == i) for i in range(len(emb)))
    p5 = evaluate(result.model, dynamics_data).precision_at_5
    ok = self_first == len(emb) and p5 >= MIN_PRECISION_AT_5
    criterion(9, ok, f"self rank 1 for {self_first}/{len(emb)}, val precision@5 {p5:.3f} (chance {CHANCE:.3f})")
    assert ok
