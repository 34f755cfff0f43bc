"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
summary values alongside the pass/fail status.
"""

import json
import time

import numpy as np
import pytest

from sfedkd.cli import main
from sfedkd.config import resolve_config
from sfedkd.data import (ClassDistribution, PartitionSpec, generate_synthetic,
                         partition_exdir_indices)
from sfedkd.distill import (KDConfig, TeacherEnsemble, nckd_loss, tckd_loss,
                            teacher_weights, total_loss)
from sfedkd.experiment import run_experiment
from sfedkd.model import init_params, params_equal
from sfedkd.selection import (SelectionInstance, aggregate_objective,
                              brute_force_select, greedy_select, random_select)

BLOBS_10C = dict(n_per_class=200, classes=10, features=8, spread=2.5,
                 test_fraction=0.4)
ACCEPTANCE_SEEDS = [0, 1, 2, 3, 4]


def experiment_raw(seed, mode, metric="KL"):
    """The frozen desk-scale setup shared by P7, P8, and P9."""
    return {
        "master_seed": seed,
        "dataset": dict(BLOBS_10C),
        "partition": {"N": 20, "C": 2, "alpha": 0.5},
        "model": {"hidden": [32]},
        "train": {"M": 5, "K": 3, "R": 60, "E": 2, "batch_size": 64,
                  "eta": 0.07, "mode": mode, "kd": {"metric": metric}},
        "output": {"dir": "unused"},
    }


@pytest.fixture(scope="module")
def efficacy_grid():
    """Final top-1 and forgetting per (variant, seed) for P7/P8/P9."""
    variants = {
        "sfedkd": ("sfedkd", "KL"),
        "fedseq": ("fedseq", "KL"),
        "random": ("sfedkd_random_teachers", "KL"),
        "L1": ("sfedkd", "L1"),
        "L2": ("sfedkd", "L2"),
        "JS": ("sfedkd", "JS"),
    }
    grid = {}
    for label, (mode, metric) in variants.items():
        finals, fms = [], []
        for seed in ACCEPTANCE_SEEDS:
            cfg = resolve_config(experiment_raw(seed, mode, metric))
            result = run_experiment(cfg)
            finals.append(result.records[-1].top1)
            fms.append(result.records[-1].forgetting)
        grid[label] = (float(np.mean(finals)), float(np.mean(fms)))
    return grid


def test_p1_gradient_oracle():
    start = time.time()
    worst = 0.0
    step = 1e-5
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        params = init_params((4, 6, 3), seed=2000 + trial)
        X = rng.standard_normal((8, 4))
        y = rng.integers(0, 3, size=8)
        teachers = [init_params((4, 6, 3), seed=3000 + trial + i) for i in range(2)]
        t_dists, s_vec = [], rng.random(3)
        for _ in range(2):
            v = rng.random(3)
            t_dists.append(ClassDistribution(v / v.sum()))
        student = ClassDistribution(s_vec / s_vec.sum())
        tau = (1.0, 4.0)[trial % 2]
        cfg = KDConfig(tau=tau, gamma=1.0, beta=3.0)
        ens = TeacherEnsemble(teachers, t_dists, [0, 1]).with_weights(student, cfg)
        _, grads = total_loss(params, X, y, ens, cfg)
        for li in range(params.n_layers):
            for kind in ("weights", "biases"):
                arr = getattr(params, kind)[li]
                analytic = getattr(grads, kind)[li]
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    ix = it.multi_index
                    orig = arr[ix]
                    arr[ix] = orig + step
                    up = total_loss(params, X, y, ens, cfg)[0]
                    arr[ix] = orig - step
                    down = total_loss(params, X, y, ens, cfg)[0]
                    arr[ix] = orig
                    numeric = (up - down) / (2 * step)
                    rel = abs(numeric - analytic[ix]) / max(
                        abs(numeric), abs(analytic[ix]), 1e-5)
                    worst = max(worst, rel)
    elapsed = time.time() - start
    assert worst < 1e-4
    assert elapsed < 30.0
    print(f"\nP1 PASS: gradient oracle, 20 nets, max rel err {worst:.2e}, {elapsed:.1f}s")


def test_p2_dkd_decomposition_identity():
    start = time.time()
    rng = np.random.default_rng(7)
    worst = 0.0
    one = np.array([1.0])
    for c in (3, 5, 10):
        for tau in (1.0, 2.0, 4.0):
            for _ in range(112):  # 112 * 9 > 1000 logit pairs
                zs = 3 * rng.standard_normal((1, c))
                zt = 3 * rng.standard_normal((1, c))
                t = np.array([int(rng.integers(0, c))])
                q = zt[0] / tau
                q = q - q.max()
                lt = q - np.log(np.exp(q).sum())
                q = zs[0] / tau
                q = q - q.max()
                ls = q - np.log(np.exp(q).sum())
                full_kl = float((np.exp(lt) * (lt - ls)).sum())
                nckd = nckd_loss(zs, [zt], t, one, tau) / tau**2
                tckd = tckd_loss(zs, [zt], t, one, tau) / tau**2
                p_rest = 1.0 - float(np.exp(lt)[t[0]])
                worst = max(worst, abs(full_kl - (tckd + p_rest * nckd)))
    elapsed = time.time() - start
    assert worst < 1e-9
    assert elapsed < 5.0
    print(f"\nP2 PASS: decomposition identity, 1008 pairs, max dev {worst:.2e}, {elapsed:.1f}s")


def test_p3_weight_law():
    rng = np.random.default_rng(11)
    # random distance vectors exercised through distributions along a line,
    # so L1 distances are exact and sorted like the underlying offsets
    for _ in range(200):
        k = int(rng.integers(1, 7))
        offsets = rng.random(k) * 0.5
        student = ClassDistribution(np.array([0.5, 0.5]))
        teachers = [ClassDistribution(np.array([0.5 + o, 0.5 - o])) for o in offsets]
        g, h = teacher_weights(teachers, student, "L1", 1e-4)
        assert abs(g.sum() - 1.0) <= 1e-9
        assert abs(h.sum() - 1.0) <= 1e-9
        d = 2 * offsets
        for i in range(k):
            for j in range(k):
                if d[i] < d[j]:
                    assert g[i] < g[j]
                    assert h[i] > h[j]
    # hand-arithmetic examples
    g, h = teacher_weights(
        [ClassDistribution(np.array([0.6, 0.4])), ClassDistribution(np.array([0.8, 0.2]))],
        ClassDistribution(np.array([0.5, 0.5])), "L1", 1e-4)
    assert g == pytest.approx([0.25, 0.75], abs=1e-5)
    assert h == pytest.approx([0.74994, 0.25006], abs=1e-5)
    g, h = teacher_weights(
        [ClassDistribution(np.array([1.0, 0.0])), ClassDistribution(np.array([0.0, 1.0]))],
        ClassDistribution(np.array([1.0, 0.0])), "L1", 1e-4)
    assert g == pytest.approx([0.0, 1.0], abs=1e-5)
    assert h == pytest.approx([0.99995, 5.0e-5], abs=1e-5)
    print("\nP3 PASS: weight law, 200 random vectors + 2 hand examples")


def test_p4_selection_oracles():
    start = time.time()
    rng = np.random.default_rng(13)
    checked = 0
    for metric in ("L1", "L2", "KL", "JS"):
        for _ in range(60):
            m = int(rng.integers(2, 13))
            k = int(rng.integers(1, min(5, m) + 1))
            c = int(rng.integers(2, 7))
            vecs = rng.random((m, c)) + 1e-3
            cands = [ClassDistribution(v / v.sum()) for v in vecs]
            inst = SelectionInstance(cands, K=k, metric=metric)
            brute_obj = aggregate_objective(cands, brute_force_select(inst), metric)
            greedy_obj = aggregate_objective(cands, greedy_select(inst), metric)
            assert brute_obj <= greedy_obj + 1e-12
            checked += 1
    # documented suboptimality instance
    doc = [ClassDistribution(np.asarray(v, dtype=float))
           for v in ([1, 0], [0, 1], [1, 0], [0.5, 0.5])]
    inst = SelectionInstance(doc, K=2, metric="L1")
    assert brute_force_select(inst) == [0, 1]
    assert aggregate_objective(doc, [0, 1], "L1") == pytest.approx(0.0)
    assert greedy_select(inst) == [3, 0]
    assert aggregate_objective(doc, [3, 0], "L1") == pytest.approx(0.5)
    elapsed = time.time() - start
    assert elapsed < 60.0
    print(f"\nP4 PASS: selection oracles, {checked} instances, {elapsed:.1f}s")


def test_p5_mode_reduction_bitwise():
    base = {
        "master_seed": 3,
        "dataset": {"n_per_class": 40, "classes": 5, "features": 6,
                    "spread": 2.0, "test_fraction": 0.2},
        "partition": {"N": 10, "C": 2, "alpha": 0.5},
        "model": {"hidden": [16]},
        "train": {"M": 4, "K": 2, "R": 5, "E": 2, "batch_size": 16, "eta": 0.05,
                  "mode": "sfedkd", "kd": {"gamma": 0.0, "beta": 0.0}},
        "output": {"dir": "unused"},
    }
    kd = run_experiment(resolve_config(base), keep_round_models=True)
    seq_raw = json.loads(json.dumps(base))
    seq_raw["train"]["mode"] = "fedseq"
    seq_raw["train"]["kd"] = {}
    seq = run_experiment(resolve_config(seq_raw), keep_round_models=True)
    assert len(kd.round_models) == len(seq.round_models) == 5
    for a, b in zip(kd.round_models, seq.round_models):
        assert params_equal(a, b)
    print("\nP5 PASS: sfedkd(gamma=beta=0) trajectory bit-identical to fedseq over 5 rounds")


def test_p6_partition_soundness():
    draws = 0
    rng = np.random.default_rng(17)
    # lower client bounds keep the rejection sampler feasible: the uniform
    # allocation must cover all 10 classes within 1000 redraws, so C=1 needs
    # a coupon-collector-sized pool
    min_clients = {1: 16, 2: 8, 5: 3, 10: 2}
    for c_per_client in (1, 2, 5, 10):
        for alpha in (0.1, 0.5, 10.0):
            for _ in range(84):
                c_total = 10
                n_clients = int(rng.integers(min_clients[c_per_client], 25))
                labels = np.repeat(np.arange(c_total), 20)
                seed = int(rng.integers(0, 1_000_000))
                spec = PartitionSpec(N=n_clients, C=c_per_client, alpha=alpha, seed=seed)
                parts = partition_exdir_indices(labels, c_total, spec)
                merged = np.sort(np.concatenate(parts))
                assert np.array_equal(merged, np.arange(len(labels)))
                for idx in parts:
                    assert len(set(labels[idx].tolist())) <= c_per_client
                again = partition_exdir_indices(labels, c_total, spec)
                assert all(np.array_equal(x, y) for x, y in zip(parts, again))
                draws += 1
    assert draws >= 1000
    print(f"\nP6 PASS: partition soundness over {draws} draws")


def test_p7_directional_efficacy(efficacy_grid):
    start = time.time()
    kd_top1, kd_fm = efficacy_grid["sfedkd"]
    seq_top1, seq_fm = efficacy_grid["fedseq"]
    margin = 100 * (kd_top1 - seq_top1)
    assert margin >= 2.0, f"margin {margin:.2f} points"
    assert kd_fm < seq_fm, f"forgetting {kd_fm:.3f} !< {seq_fm:.3f}"
    assert time.time() - start < 600.0
    print(f"\nP7 PASS: sfedkd {100*kd_top1:.2f}% vs fedseq {100*seq_top1:.2f}% "
          f"(+{margin:.2f} points), forgetting {kd_fm:.3f} < {seq_fm:.3f}")


def test_p8_selection_vs_random(efficacy_grid):
    greedy_top1, _ = efficacy_grid["sfedkd"]
    random_top1, _ = efficacy_grid["random"]
    diff = 100 * (greedy_top1 - random_top1)
    assert diff >= -0.5, f"greedy trails random by {-diff:.2f} points"
    print(f"\nP8 PASS: greedy {100*greedy_top1:.2f}% vs random teachers "
          f"{100*random_top1:.2f}% ({diff:+.2f} points)")


def test_p9_metric_robustness(efficacy_grid):
    accs = {m: efficacy_grid[m][0] for m in ("L1", "L2", "JS")}
    accs["KL"] = efficacy_grid["sfedkd"][0]
    spread = 100 * (max(accs.values()) - min(accs.values()))
    assert spread <= 5.0, f"metric spread {spread:.2f} points"
    summary = " ".join(f"{m}={100*v:.2f}%" for m, v in accs.items())
    print(f"\nP9 PASS: {summary}, spread {spread:.2f} points")


def test_p10_end_to_end_determinism(tmp_path):
    raw = experiment_raw(0, "sfedkd")
    raw["dataset"]["n_per_class"] = 60
    raw["train"]["R"] = 8
    outputs = []
    for run_dir in ("first", "second"):
        out = tmp_path / run_dir
        raw["output"]["dir"] = str(out)
        cfg_path = tmp_path / f"{run_dir}.json"
        cfg_path.write_text(json.dumps(raw))
        assert main(["run", str(cfg_path)]) == 0
        outputs.append((out / "rounds.jsonl").read_bytes())
    assert outputs[0] == outputs[1]
    print(f"\nP10 PASS: two runs byte-identical ({len(outputs[0])} bytes of rounds.jsonl)")
