"""Outcome/utility metrics, inequality discrepancy, gate-dynamics analysis,
the Wilcoxon signed-rank test and report emission."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np


class MetricError(ValueError):
    pass


def _as_pairs(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MetricError(f"expected (N, 2) utility pairs, got shape {arr.shape}")
    return arr


def _check_lengths(a, b):
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise MetricError("metric of an empty input is undefined")


# --------------------------------------------------------------------------
# outcome


def classification_metrics(probs, labels, threshold: float = 0.5) -> tuple[float, float]:
    """Accuracy and F1 of the positive (deal) class.

    F1 is 1.0 when there are neither predicted nor actual positives and 0.0
    when there are actual positives but none predicted.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    _check_lengths(probs, labels)
    pred = (probs >= threshold).astype(int)
    accuracy = float(np.mean(pred == labels))
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    if tp + fp + fn == 0:
        return accuracy, 1.0
    return accuracy, 2.0 * tp / (2.0 * tp + fp + fn)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(probs, labels) -> float:
    """P(score of a random positive > score of a random negative), ties 1/2."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    _check_lengths(probs, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC-ROC is undefined when only one class is present")
    ranks = _midranks(probs)
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


# --------------------------------------------------------------------------
# utilities


def inequality_discrepancy(u_hat, u) -> float:
    """Mean over dialogues of | |u_hat_1 - u_hat_2| - |u_1 - u_2| |."""
    u_hat, u = _as_pairs(u_hat), _as_pairs(u)
    _check_lengths(u_hat, u)
    gap_hat = np.abs(u_hat[:, 0] - u_hat[:, 1])
    gap = np.abs(u[:, 0] - u[:, 1])
    return float(np.mean(np.abs(gap_hat - gap)))


def regression_metrics(u_hat, u) -> tuple[float, float]:
    """MAE and MSE over all 2N agent utilities."""
    u_hat, u = _as_pairs(u_hat), _as_pairs(u)
    _check_lengths(u_hat, u)
    err = u_hat - u
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    auc: float | None
    mae: float
    mse: float
    inequality_discrepancy: float
    n: int
    positives: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(probs, labels, u_hat, u) -> MetricsReport:
    labels = np.asarray(labels).astype(int)
    acc, f1 = classification_metrics(probs, labels)
    try:
        auc = auc_roc(probs, labels)
    except MetricError:
        auc = None
    mae, mse = regression_metrics(u_hat, u)
    return MetricsReport(
        accuracy=acc,
        f1=f1,
        auc=auc,
        mae=mae,
        mse=mse,
        inequality_discrepancy=inequality_discrepancy(u_hat, u),
        n=int(len(labels)),
        positives=int(labels.sum()),
    )


# --------------------------------------------------------------------------
# gate dynamics

LINGUISTIC_ABOVE = 0.6
STRATEGIC_BELOW = 0.4


@dataclass
class GateAnalysis:
    mean: float
    std: float
    slope: float
    linguistic: float  # fraction of turns with z > 0.6
    mixed: float  # 0.4 <= z <= 0.6
    strategic: float  # z < 0.4
    session_means: list[float]
    volatility_success: float | None
    volatility_failure: float | None
    heatmap: np.ndarray = field(repr=False)  # sessions x turns, NaN where absent
    turn_mean: list[float] = field(default_factory=list)
    turn_std: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("heatmap")
        return d


def gate_analysis(traces: Sequence) -> GateAnalysis:
    """Pooled statistics of per-turn gate values.

    ``traces`` are GateTrace-like objects (``values``, ``outcome``) or plain
    sequences of z values (outcome unknown). The trend slope is a single
    least-squares fit of z on the 1-based turn index over all pooled points.
    """
    if not traces:
        raise MetricError("gate analysis needs at least one trace")
    series, outcomes = [], []
    for tr in traces:
        vals = getattr(tr, "values", tr)
        series.append(np.asarray(vals, dtype=np.float64))
        outcomes.append(getattr(tr, "outcome", None))
    if any(len(s) == 0 for s in series):
        raise MetricError("empty gate trace")
    z = np.concatenate(series)
    turns = np.concatenate([np.arange(1, len(s) + 1) for s in series]).astype(np.float64)
    tc = turns - turns.mean()
    denom = float(np.sum(tc * tc))
    slope = float(np.sum(tc * (z - z.mean())) / denom) if denom > 0 else 0.0

    n = len(z)
    ling = float(np.sum(z > LINGUISTIC_ABOVE)) / n
    strat = float(np.sum(z < STRATEGIC_BELOW)) / n
    mixed = float(np.sum((z >= STRATEGIC_BELOW) & (z <= LINGUISTIC_ABOVE))) / n

    def volatility(label):
        stds = [float(np.std(s)) for s, o in zip(series, outcomes) if o == label]
        return float(np.mean(stds)) if stds else None

    width = max(len(s) for s in series)
    heat = np.full((len(series), width), np.nan)
    for i, s in enumerate(series):
        heat[i, : len(s)] = s
    counts = np.sum(~np.isnan(heat), axis=0)
    turn_mean = [float(np.nanmean(heat[:, k])) for k in range(width) if counts[k]]
    turn_std = [float(np.nanstd(heat[:, k])) for k in range(width) if counts[k]]
    return GateAnalysis(
        mean=float(z.mean()),
        std=float(z.std()),
        slope=slope,
        linguistic=ling,
        mixed=mixed,
        strategic=strat,
        session_means=[float(s.mean()) for s in series],
        volatility_success=volatility(1),
        volatility_failure=volatility(0),
        heatmap=heat,
        turn_mean=turn_mean,
        turn_std=turn_std,
    )


# --------------------------------------------------------------------------
# Wilcoxon signed-rank


@dataclass
class WilcoxonResult:
    statistic: float  # W+ - W-, antisymmetric in the two samples
    w_plus: float
    w_minus: float
    p_value: float
    n: int
    exact: bool


class DegenerateTestError(MetricError):
    pass


def signed_rank_distribution(ranks) -> tuple[np.ndarray, np.ndarray]:
    """Exact null distribution of W+ for the given (mid)ranks.

    Returns (support values, probabilities). Ranks are doubled so tied
    half-integer midranks stay integral during the subset-sum count.
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=np.float64)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    support = np.nonzero(counts)[0]
    probs = counts[support] / 2.0 ** len(doubled)
    return support / 2.0, probs


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> WilcoxonResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise MetricError("paired samples must have equal length")
    if len(a) < 5:
        raise MetricError(f"need at least 5 pairs, got {len(a)}")
    d = a - b
    d = d[d != 0]
    if len(d) == 0:
        raise DegenerateTestError("all paired differences are zero")
    n = len(d)
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= exact_max_n:
        support, probs = signed_rank_distribution(ranks)
        lower = float(probs[support <= w_plus + 1e-9].sum())
        upper = float(probs[support >= w_plus - 1e-9].sum())
        p = min(1.0, 2.0 * min(lower, upper))
        exact = True
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        zscore = (w_plus - mean) / math.sqrt(var)
        p = min(1.0, math.erfc(abs(zscore) / math.sqrt(2.0)))
        exact = False
    return WilcoxonResult(w_plus - w_minus, w_plus, w_minus, p, n, exact)


# --------------------------------------------------------------------------
# aggregation / reports

REPORT_METRICS = ("accuracy", "f1", "auc", "mae", "mse", "inequality_discrepancy")


def mean_std(values: Sequence[float]) -> dict:
    """Mean and sample standard deviation (0 for a single value)."""
    vals = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return {"mean": None, "std": None}
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return {"mean": float(vals.mean()), "std": std}


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict:
    return {m: mean_std([getattr(r, m) for r in reports]) for m in REPORT_METRICS}


def reduction_in_id(id_nofair: float, id_fair: float) -> float | None:
    """Percentage drop of ID from the unregularized to the regularized arm."""
    if id_nofair == 0:
        return None
    return 100.0 * (id_nofair - id_fair) / id_nofair


def emit_report(
    arms: Mapping[str, dict],
    gates: Mapping[str, GateAnalysis] | None = None,
    nofair: str = "nofair",
    fair: str = "fair",
) -> tuple[dict, str]:
    """Build the comparison table.

    ``arms`` maps arm name to aggregated metrics ({metric: {mean, std}}).
    Returns (JSON-ready dict, aligned text table).
    """
    if nofair not in arms or fair not in arms:
        raise MetricError(f"report needs both '{nofair}' and '{fair}' arms")
    reduction = reduction_in_id(
        arms[nofair]["inequality_discrepancy"]["mean"], arms[fair]["inequality_discrepancy"]["mean"]
    )
    doc = {name: dict(metrics) for name, metrics in arms.items()}
    doc["reduction_in_id_pct"] = reduction
    if gates:
        doc["gate"] = {name: g.to_dict() for name, g in gates.items()}

    header = ["arm", "accuracy", "f1", "auc", "utility_mae", "id"]
    keys = ["accuracy", "f1", "auc", "mae", "inequality_discrepancy"]
    rows = []
    for name, metrics in arms.items():
        cells = [name]
        for k in keys:
            ms = metrics.get(k, {})
            if ms.get("mean") is None:
                cells.append("n/a")
            else:
                cells.append(f"{ms['mean']:.4f} ± {ms['std']:.4f}")
        rows.append(cells)
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    red = "n/a" if reduction is None else f"{reduction:+.1f}%"
    lines.append(f"reduction in ID ({nofair} -> {fair}): {red}")
    return doc, "\n".join(lines)


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
