"""Acceptance criteria, one test per criterion.

Every test prints a single ``[PASS]``/``[FAIL]`` line (also collected into
the pytest terminal summary). The trend criteria train full-size runs on
synthetic corpora and take roughly twenty minutes together on one CPU core;
runs are cached per session so criteria that share a configuration share
the runs.

Protocol fixed before looking at results: every synthetic corpus uses
generator seed 0, model seeds are 42, 43 and 44, trend comparisons use the
mean over those seeds, and the training hyperparameters are the defaults of
``TrainConfig`` with ``d_txt=64``.
"""

from __future__ import annotations

import os
import time
from functools import lru_cache

import numpy as np
import pytest

import oracles
from stgfn import gradcheck
from stgfn.data import SyntheticSpec, generate_synthetic, load_corpus, oversample_minority, stratified_split
from stgfn.evaluation import (
    auc_roc,
    classification_metrics,
    gate_analysis,
    inequality_discrepancy,
    regression_metrics,
    wilcoxon_signed_rank,
)
from stgfn.losses import fairness_curve
from stgfn.optim import AdamW, PlateauScheduler
from stgfn.tensor import parameter
from stgfn.training import TrainConfig, Trainer, build_model, run_experiment, train

pytestmark = pytest.mark.slow

SEEDS = (42, 43, 44)
CORPORA = {
    "mixed": SyntheticSpec(n=500, seed=0, disparity=6.0, text_strength=0.7, graph_strength=0.7),
    "text_only": SyntheticSpec(n=500, seed=0, text_strength=1.0, graph_strength=0.0),
    "graph_dominant": SyntheticSpec(n=500, seed=0, text_strength=0.3, graph_strength=1.0),
}
BASE_CONFIG = TrainConfig(d_txt=64)


@lru_cache(maxsize=None)
def _split(corpus: str):
    return stratified_split(generate_synthetic(CORPORA[corpus]).instances, BASE_CONFIG.split, 0)


@lru_cache(maxsize=None)
def _run(corpus: str, arm: str, seed: int, gate_mode: str = "literal"):
    return train(_split(corpus), BASE_CONFIG.replace(gate_mode=gate_mode), seed, arm=arm)


def _mean(corpus, arm, metric, gate_mode="literal"):
    return float(np.mean([getattr(_run(corpus, arm, s, gate_mode).test, metric) for s in SEEDS]))


def _mean_gate(corpus, gate_mode):
    return float(
        np.mean([gate_analysis(_run(corpus, "fair", s, gate_mode).gate_traces).mean for s in SEEDS])
    )


def test_criterion_1_gradient_correctness(acceptance):
    start = time.perf_counter()
    results = gradcheck.run_all(range(20))
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel for r in results)
    ok = not failed and worst <= 1e-4 and elapsed < 60
    detail = (
        f"{len(results) - len(failed)}/{len(results)} checks (all ops + composed model in both gate modes), "
        f"20 seeds, worst rel err {worst:.1e}, {elapsed:.1f}s"
        + (f"; failed {failed}" if failed else "")
    )
    assert acceptance("1", ok, detail)


def test_criterion_2_metric_oracles(acceptance):
    rng = np.random.default_rng(0)
    worst = 0.0
    auc_exact = True
    for _ in range(100):
        n = int(rng.integers(2, 51))
        probs = rng.random(n).round(int(rng.integers(1, 4)))
        labels = rng.integers(0, 2, size=n)
        u_hat, u = rng.normal(10, 4, size=(n, 2)), rng.normal(10, 4, size=(n, 2))
        acc, f1 = classification_metrics(probs, labels)
        mae, mse = regression_metrics(u_hat, u)
        pairs = [
            (acc, oracles.accuracy(probs, labels)),
            (f1, oracles.f1(probs, labels)),
            (mae, oracles.mae(u_hat, u)),
            (mse, oracles.mse(u_hat, u)),
            (inequality_discrepancy(u_hat, u), oracles.inequality_discrepancy(u_hat, u)),
        ]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
        if 0 < labels.sum() < n:
            n_pairs = int(labels.sum()) * (n - int(labels.sum()))
            scaled = auc_roc(probs, labels) * n_pairs
            auc_exact &= round(2 * scaled) == 2 * oracles.auc_pairs(probs, labels) * n_pairs
            auc_exact &= abs(scaled - round(2 * scaled) / 2) < 1e-9
    p = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0]).p_value
    ok = worst <= 1e-12 and auc_exact and p == 0.0625
    detail = f"max |diff| {worst:.1e} over 100 inputs, AUC exact={auc_exact}, Wilcoxon n=5 p={p}"
    assert acceptance("2", ok, detail)


def test_criterion_3_fairness_geometry(acceptance):
    grid = np.linspace(0.0, 12.0, 1201)
    curve = fairness_curve(6.0, grid).fairness
    k = int(np.argmin(curve))
    mirrored = fairness_curve(6.0, 12.0 - grid).fairness
    asym = float(np.max(np.abs(curve - mirrored)))
    ok = grid[k] == 6.0 and curve[k] == 0.0 and asym <= 1e-12
    assert acceptance("3", ok, f"argmin at {grid[k]}, min value {curve[k]}, max asymmetry {asym:.1e}")


def test_criterion_4_fairness_trend(acceptance):
    start = time.perf_counter()
    id_nofair = _mean("mixed", "nofair", "inequality_discrepancy")
    id_fair = _mean("mixed", "fair", "inequality_discrepancy")
    acc_nofair = _mean("mixed", "nofair", "accuracy")
    acc_fair = _mean("mixed", "fair", "accuracy")
    elapsed = time.perf_counter() - start
    ok = id_fair <= 0.8 * id_nofair and acc_fair >= acc_nofair - 0.02
    detail = (
        f"ID {id_nofair:.3f} -> {id_fair:.3f} (ratio {id_fair / id_nofair:.2f}, need <= 0.80), "
        f"accuracy {acc_nofair:.3f} -> {acc_fair:.3f} (need >= {acc_nofair - 0.02:.3f}), "
        f"{elapsed / 60:.1f} min for both arms"
    )
    assert acceptance("4", ok, detail)


def test_criterion_5_utility_modelling_trend(acceptance):
    mae_base = _mean("mixed", "baseline", "mae")
    mae_nofair = _mean("mixed", "nofair", "mae")
    ok = mae_nofair < mae_base
    assert acceptance("5", ok, f"utility MAE baseline {mae_base:.3f} vs ST-GFN (lambda 0) {mae_nofair:.3f}")


def test_criterion_6_gate_adaptivity(acceptance):
    text = _mean_gate("text_only", "convex")
    graph = _mean_gate("graph_dominant", "convex")
    lit_text = _mean_gate("text_only", "literal")
    lit_graph = _mean_gate("graph_dominant", "literal")
    ok = text > graph
    detail = (
        f"convex mean z text-only {text:.3f} vs graph-dominant {graph:.3f}; "
        f"literal (not asserted) {lit_text:.3f} vs {lit_graph:.3f}"
    )
    assert acceptance("6", ok, detail)


def test_criterion_7_learnability(acceptance):
    accs = [_run("text_only", "fair", s).test.accuracy for s in SEEDS]
    ok = float(np.mean(accs)) >= 0.90
    detail = f"text-determined corpus test accuracy {np.mean(accs):.3f} (seeds {', '.join(f'{a:.3f}' for a in accs)})"
    assert acceptance("7", ok, detail)


def _expected_lr(val_losses, lr0, patience=5, factor=0.1):
    """Independent replay of the plateau rule: the LR used in epoch e+1 is
    cut once ``patience`` consecutive epochs failed to beat the best loss."""
    lrs, lr, best, bad = [], lr0, float("inf"), 0
    for v in val_losses:
        lrs.append(lr)
        if v < best:
            best, bad = v, 0
        else:
            bad += 1
        if bad == patience:
            lr, bad = lr * factor, 0
    return lrs


def test_criterion_8_training_machinery(acceptance, tmp_path):
    checks = {}
    split = _split("mixed")
    balanced = oversample_minority(split.train, 42)
    pos = sum(x.outcome for x in balanced)
    checks["1:1 balance"] = pos == len(balanced) - pos

    sched = PlateauScheduler(AdamW([parameter([0.0])], lr=1e-4), patience=5, factor=0.1)
    trace = [sched.step(1.0) for _ in range(6)]
    run = _run("mixed", "fair", 42)
    logged = [e["lr"] for e in run.epoch_log]
    replay = _expected_lr([e["val_loss"] for e in run.epoch_log], BASE_CONFIG.lr)
    checks["plateau rule"] = trace[:5] == [1e-4] * 5 and np.isclose(trace[5], 1e-5) and np.allclose(logged, replay)

    small = TrainConfig(d_txt=16, d_hidden=16, max_epochs=2, seeds=(42,))
    a, b = train(split, small, 42), train(split, small, 42)
    checks["bit-determinism"] = a.epoch_log == b.epoch_log and a.test == b.test

    def trainer():
        model = build_model("fair", split.train, small, 42)
        return Trainer(model, balanced, split.validation, small, 42, small.lam)

    straight = trainer()
    straight.fit(2)
    first = trainer()
    first.fit(1)
    first.save_checkpoint(tmp_path / "ck.npz")
    resumed = trainer()
    resumed.load_checkpoint(tmp_path / "ck.npz")
    resumed.fit(1)
    checks["checkpoint continuation"] = resumed.epoch_log == straight.epoch_log and all(
        np.array_equal(p.data, q.data) for p, q in zip(resumed.params, straight.params)
    )
    cuts = sum(1 for x, y in zip(logged, logged[1:]) if y < x)
    detail = ", ".join(f"{k}={'ok' if v else 'BROKEN'}" for k, v in checks.items())
    assert acceptance("8", all(checks.values()), f"{detail} ({cuts} LR cut(s) in a 100-epoch run)")


REAL_CORPUS = os.environ.get("STGFN_REAL_CORPUS")


@pytest.mark.skipif(not REAL_CORPUS, reason="set STGFN_REAL_CORPUS to a converted CaSiNo-shaped JSON file")
def test_criterion_9_real_data_smoke(acceptance):
    instances = load_corpus(REAL_CORPUS, os.environ.get("STGFN_REAL_FORMAT", "casino"))
    result = run_experiment(instances, BASE_CONFIG.replace(seeds=SEEDS))
    id_nofair = result.mean("nofair", "inequality_discrepancy")
    id_fair = result.mean("fair", "inequality_discrepancy")
    ok = id_fair < id_nofair
    assert acceptance("9", ok, f"{len(instances)} dialogues, ID {id_nofair:.3f} -> {id_fair:.3f}")
