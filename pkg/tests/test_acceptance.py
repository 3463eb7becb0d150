"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary.

Criterion 6 trains the full desk-scale suite (5 seeds, 2,000 users) and takes about
half an hour on one CPU core; criterion 7 reruns the smoke pipeline.
"""

import time
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest

from conftest import ACCEPTANCE, output_hashes
from metaprofile.cli import load_run_config
from metaprofile.experiments import imbalance_direction, masking_direction, median_metric, ood_wins, run_suite
from metaprofile.heatmap import SparseHeatmap, normalize, parse_sparse, serialize_sparse
from metaprofile.metrics import aupr, auroc, auroc_fraction, auroc_pairwise, average_precision_by_hand
from metaprofile.nn import BatchNorm, Conv2D, Dense, MaxPool2D, ReLU, Sequential, Flatten, grad_check
from metaprofile.profile_net import FULL_FILTERS, build_branch, multitask_loss

SUITE_BUDGET_S = 45 * 60


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- 1


def test_c1_branch_shapes():
    rng = np.random.default_rng(0)
    x = np.zeros((32, 365, 24, 3), np.float32)
    x[rng.random(x.shape) < 0.005] = 1.0
    shapes = build_branch(3, FULL_FILTERS, rng).trace_shapes(x, train=True)
    pooled = [s for layer, s in shapes if layer in ("MaxPool2D", "Flatten")]
    want = [(32, 52, 12, 64), (32, 13, 6, 128), (32, 4, 3, 256), (32, 1, 1, 512), (32, 512)]
    convs = [s for layer, s in shapes if layer == "Conv2D"]
    ok = pooled == want and convs == [(32, 365, 24, 64), (32, 52, 12, 128), (32, 13, 6, 256), (32, 4, 3, 512)]
    record("1 branch shapes", ok, f"pooled outputs {pooled}")


# ---------------------------------------------------------------- 2


def test_c2_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 8, 6, 2))
    singles = {
        "dense": grad_check(Dense(5, 4, rng), rng.standard_normal((4, 5))).max_error,
        "conv": grad_check(Conv2D(3, 2, 2, 3, rng), x).max_error,
        "batchnorm": grad_check(BatchNorm(2), x).max_error,
        "maxpool": grad_check(MaxPool2D(2, 2), rng.permutation(np.linspace(-1, 1, x.size)).reshape(x.shape)).max_error,
        "relu": grad_check(ReLU(), np.where(np.abs(x) < 0.05, 0.5, x)).max_error,
    }
    branch = Sequential([Conv2D(3, 2, 2, 4, rng), BatchNorm(4), ReLU(), MaxPool2D(2, 2), Conv2D(2, 2, 4, 3, rng),
                         BatchNorm(3), ReLU(), MaxPool2D(2, 3), Flatten(), Dense(6, 2, rng)])
    # conv biases feeding train-mode batch norm have an exactly zero gradient
    composed = grad_check(branch, x, floor=1e-6).max_error
    worst = max(singles.values())
    record("2 gradient checks", worst < 1e-5 and composed < 1e-4,
           f"single layers max {worst:.2e} (< 1e-5), composed {composed:.2e} (< 1e-4)")


# ---------------------------------------------------------------- 3


def test_c3_multitask_loss():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n, t = rng.integers(1, 9), rng.integers(1, 6)
        z = rng.normal(scale=3, size=(n, t))
        y = rng.integers(0, 2, (n, t)).astype(float)
        w = rng.integers(0, 2, (n, t)).astype(float)
        ref = 0.0
        for i in range(t):
            denom = w[:, i].sum()
            for k in range(n):
                if denom:
                    nll = np.log1p(np.exp(-z[k, i])) if y[k, i] else np.log1p(np.exp(z[k, i]))
                    ref += w[k, i] / denom * nll
        worst = max(worst, abs(multitask_loss(z, y, w)[0] - ref))
    z = rng.normal(size=(4, 3))
    w = np.ones((4, 3))
    w[:, 2] = 0
    y = np.ones((4, 3))
    z2 = z.copy()
    z2[:, 2] = 50.0
    loss, grad = multitask_loss(z, y, w)
    zero_ok = loss == multitask_loss(z2, y, w)[0] and np.all(grad[:, 2] == 0)
    record("3 multi-task loss", worst < 1e-12 and zero_ok,
           f"max |loss - double sum| {worst:.1e} over 1000 instances; masked task contributes 0: {zero_ok}")


# ---------------------------------------------------------------- 4


def test_c4_sparse_format():
    rng = np.random.default_rng(3)
    ok = 0
    for _ in range(1000):
        k = rng.integers(0, 30)
        cells = {(int(rng.integers(365)), int(rng.integers(24)), int(rng.integers(6))): float(rng.integers(1, 10**6))
                 for _ in range(k)}
        h = SparseHeatmap(cells, 6)
        text = serialize_sparse(h)
        ok += parse_sparse(text, 6) == normalize(h) and serialize_sparse(parse_sparse(text, 6)) == text
    worked = "2, 10, 28: 5000; 100, 20, 25: 6000"
    exact = serialize_sparse(parse_sparse(worked, 30)) == worked
    record("4 sparse format", ok == 1000 and exact, f"{ok}/1000 round trips; worked example reproduced: {exact}")


# ---------------------------------------------------------------- 5


def test_c5_metric_oracles():
    rng = np.random.default_rng(4)
    exact = 0
    trials = 200
    for _ in range(trials):
        n = int(rng.integers(2, 1001))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        s = np.round(rng.normal(size=n) + y, int(rng.integers(0, 3)))
        exact += auroc_fraction(s, y) == auroc_pairwise(s, y)
    base = [(0.9, 1), (0.5, 0), (0.5, 1), (0.3, 0), (0.3, 1), (0.9, 0), (0.1, 1), (0.7, 0)]
    worst = Fraction(0)
    for n in range(1, 9):
        for perm in set(permutations(base[:n])):
            s, y = [p[0] for p in perm], [p[1] for p in perm]
            if any(y):
                worst = max(worst, abs(Fraction(aupr(s, y)) - average_precision_by_hand(s, y)))
    y = (rng.random(10_000) < 0.2).astype(int)
    s = rng.random(10_000)
    ra, rp = auroc(s, y), aupr(s, y)
    ok = exact == trials and worst < 1e-15 and abs(ra - 0.5) <= 0.02 and abs(rp - y.mean()) <= 0.05
    record("5 metric oracles", ok,
           f"AUROC exact on {exact}/{trials}; AP max error {float(worst):.1e}; random AUROC {ra:.3f}, "
           f"AUPR {rp:.3f} vs prevalence {y.mean():.3f}")


# ---------------------------------------------------------------- 6, 8


@pytest.fixture(scope="module")
def suite():
    cfg, _, _ = load_run_config("default", None)
    t0 = time.perf_counter()
    report, infos = run_suite(cfg)
    return report, infos, time.perf_counter() - t0


@pytest.mark.slow
def test_c6a_ood_direction(suite):
    report, *_ = suite
    wins = ood_wins(report)
    both = sorted(t for t, w in wins.items() if w["auroc"] and w["aupr"])
    meta = median_metric(report, "ood", "meta", "auroc")
    base = median_metric(report, "ood", "baseline", "auroc")
    cells = ", ".join(f"{t}: {meta[(t, 0.0)]:.3f}/{base[(t, 0.0)]:.3f}" for t, _ in sorted(meta))
    record("6a OOD direction", len(both) >= 6 and len(wins) == 8,
           f"meta >= baseline on AUROC and AUPR for {len(both)}/8 tasks (median AUROC meta/baseline: {cells})")


@pytest.mark.slow
def test_c6b_masking_direction(suite):
    report, *_ = suite
    d = masking_direction(report)
    meta = median_metric(report, "masking", "meta")
    base = median_metric(report, "masking", "baseline")
    key = next(k for k in meta if k[1] == 0.01)
    lead = meta[key] - base[key]
    record("6b masking direction", d["gap_low"] >= d["gap_full"] and lead >= 0.03,
           f"median AUPR gap {d['gap_low']:.3f} at 1% vs {d['gap_full']:.3f} at 100%; "
           f"meta AUPR lead at 1% {lead:.3f} (>= 0.03)")


@pytest.mark.slow
def test_c6c_imbalance_direction(suite):
    report, *_ = suite
    d = imbalance_direction(report)
    record("6c imbalance direction", d["inversions"] <= 1 and d["ratios"][0] == 0.5 and d["ratios"][-1] == 32.0,
           f"MA2 AUPR gap {[round(v, 3) for v in d['ma2']]} with {d['inversions']} inversion(s) (<= 1)")


@pytest.mark.slow
def test_c6_runtime_budget(suite):
    *_, elapsed = suite
    record("6 suite runtime", elapsed < SUITE_BUDGET_S, f"full suite {elapsed / 60:.1f} min (< 45)")


@pytest.mark.slow
def test_c8_episodic_sanity(suite):
    _, infos, _ = suite
    acc = float(np.median([i["meta_accuracy_tail"] for i in infos]))
    record("8 episodic sanity", acc >= 3 / 9,
           f"9-way 1-shot training accuracy (last 50 episodes, 5-seed median) {acc:.3f} vs 3 x chance = 0.333")


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_c7_determinism(smoke_runs):
    first, second = smoke_runs
    a, b = output_hashes(first), output_hashes(second)
    files = sum(len(v) for v in a.values())
    record("7 determinism", a == b, f"{files} output files across 5 stages hash identically on rerun")
