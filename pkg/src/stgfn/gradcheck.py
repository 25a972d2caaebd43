"""Central finite-difference checks for every registered op and the full model.

Each op case builds random inputs, runs the op through the registry, and
projects the output onto a fixed random tensor so any output shape reduces to
a scalar objective.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from . import tensor as T

STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel: float
    max_abs: float
    checked: int
    passed: bool
    note: str = ""

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"{self.name:<16} {status}  max_rel={self.max_rel:.2e}  max_abs={self.max_abs:.2e}  n={self.checked}{note}"


def _away_from(x: np.ndarray, points: Iterable[float], margin: float = 0.05) -> np.ndarray:
    """Nudge entries that sit within ``margin`` of a kink."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


# A case returns (differentiable input arrays, fn mapping tensors to output).
Case = Callable[[np.random.Generator], tuple[list[np.ndarray], Callable]]


def _unary(name, low=-2.0, high=2.0, kinks=(), shape=(3, 4), **kwargs) -> Case:
    def case(rng):
        x = _away_from(rng.uniform(low, high, size=shape), kinks)
        return [x], lambda t: T.apply(name, t, **kwargs)

    return case


def _binary(name, sa, sb) -> Case:
    def case(rng):
        return [rng.normal(size=sa), rng.normal(size=sb)], lambda a, b: T.apply(name, a, b)

    return case


def _concat(axis) -> Case:
    def case(rng):
        shapes = [(2, 3), (2, 1), (2, 2)] if axis == -1 else [(1, 3), (2, 3)]
        return [rng.normal(size=s) for s in shapes], lambda *ts: T.apply("concat", *ts, axis=axis)

    return case


def _dropout(rng):
    mask = (rng.random((3, 4)) < 0.7) / 0.7
    return [rng.normal(size=(3, 4))], lambda t: T.apply("dropout", t, mask=mask)


def _clamp(rng):
    x = _away_from(rng.uniform(-2, 2, size=(3, 4)), (-1.0, 1.0))
    return [x], lambda t: T.apply("clamp", t, lo=-1.0, hi=1.0)


def _getitem(index) -> Case:
    def case(rng):
        return [rng.normal(size=(4, 3))], lambda t: T.apply("getitem", t, index=index)

    return case


def _embedding_bag(rng):
    indices = np.array([0, 2, 2, 5, 1, 3], dtype=np.int64)
    segments = np.array([0, 0, 0, 2, 2, 3], dtype=np.int64)
    counts = np.array([3, 0, 2, 1], dtype=np.int64)  # bag 1 is empty
    return [rng.normal(size=(6, 3))], lambda w: T.apply(
        "embedding_bag", w, indices=indices, segments=segments, counts=counts
    )


def _lstm_cell(rng):
    return [rng.normal(size=(3, 8)), rng.normal(size=(3, 2))], lambda g, c: T.apply("lstm_cell", g, c)


OP_CASES: dict[str, list[Case]] = {
    "matmul": [_binary("matmul", (3, 4), (4, 5)), _binary("matmul", (2, 3, 4), (4, 2)), _binary("matmul", (4,), (4, 3))],
    "add": [_binary("add", (3, 4), (3, 4)), _binary("add", (3, 4), (4,))],
    "sub": [_binary("sub", (3, 4), (1, 4)), _binary("sub", (2,), (3, 2))],
    "elementwise_mul": [_binary("elementwise_mul", (3, 4), (3, 4)), _binary("elementwise_mul", (3, 1), (3, 4))],
    "concat": [_concat(-1), _concat(0)],
    "sigmoid": [_unary("sigmoid", -4, 4)],
    "tanh": [_unary("tanh", -3, 3)],
    "relu": [_unary("relu", kinks=(0.0,))],
    "leaky_relu": [_unary("leaky_relu", kinks=(0.0,), slope=0.2)],
    "softmax": [_unary("softmax", axis=-1), _unary("softmax", axis=0)],
    "dropout": [_dropout],
    "mean": [_unary("mean"), _unary("mean", axis=0, keepdims=True)],
    "sum": [_unary("sum"), _unary("sum", axis=1)],
    "abs": [_unary("abs", kinks=(0.0,))],
    "square": [_unary("square")],
    "log": [_unary("log", 0.5, 3.0)],
    "exp": [_unary("exp", -2, 2)],
    "clamp": [_clamp],
    "reshape": [lambda rng: ([rng.normal(size=(3, 4))], lambda t: T.apply("reshape", t, shape=(2, 6)))],
    "transpose": [lambda rng: ([rng.normal(size=(2, 3, 4))], lambda t: T.apply("transpose", t, axes=(2, 0, 1)))],
    "getitem": [_getitem((slice(1, 3), 0)), _getitem((np.array([0, 2, 2]),))],
    "broadcast_to": [lambda rng: ([rng.normal(size=(1, 3))], lambda t: T.apply("broadcast_to", t, shape=(4, 3)))],
    "embedding_bag": [_embedding_bag],
    "lstm_cell": [_lstm_cell],
}


def _compare(auto: np.ndarray, numeric: np.ndarray) -> tuple[float, float, bool]:
    diff = np.abs(auto - numeric)
    scale = np.maximum(np.abs(auto), np.abs(numeric))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    ok = (rel <= REL_TOL) | (diff <= ABS_TOL)
    # relative error is only meaningful above the absolute floor
    rel_reported = np.where(scale > ABS_TOL, rel, 0.0)
    return float(rel_reported.max(initial=0.0)), float(diff.max(initial=0.0)), bool(ok.all())


def check_case(case: Case, seed: int) -> tuple[float, float, int, bool]:
    rng = np.random.default_rng(seed)
    arrays, fn = case(rng)
    out_shape = np.shape(fn(*[T.Tensor(a) for a in arrays]).data)
    proj = rng.normal(size=out_shape)

    def objective(*xs):
        return float(np.sum(fn(*[T.Tensor(x) for x in xs]).data * proj))

    T.new_tape()
    leaves = [T.parameter(a) for a in arrays]
    loss = T.sum_(T.mul(fn(*leaves), proj))
    T.backward(loss, leaves)

    worst_rel = worst_abs = 0.0
    ok, count = True, 0
    for k, leaf in enumerate(leaves):
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][idx] += STEP
            minus[k][idx] -= STEP
            numeric[idx] = (objective(*plus) - objective(*minus)) / (2 * STEP)
        rel, ab, good = _compare(leaf.grad, numeric)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, ab)
        ok &= good
        count += numeric.size
    return worst_rel, worst_abs, count, ok


def check_ops(seeds: Iterable[int] = range(20), names: Iterable[str] | None = None) -> list[CheckResult]:
    """One result per registered op; ops without a case are reported as failures."""
    results = []
    for name in sorted(names if names is not None else T.OPS):
        cases = OP_CASES.get(name)
        if not cases:
            results.append(CheckResult(name, float("nan"), float("nan"), 0, False, "no test case"))
            continue
        rel = ab = 0.0
        ok, n = True, 0
        for seed in seeds:
            for case in cases:
                r, a, c, good = check_case(case, seed)
                rel, ab, n, ok = max(rel, r), max(ab, a), n + c, ok and good
        results.append(CheckResult(name, rel, ab, n, ok))
    return results


def check_model(
    seeds: Iterable[int] = range(20),
    d_txt: int = 16,
    d_hidden: int = 8,
    gate_mode: str = "literal",
    coords_per_tensor: int = 4,
    lam: float = 0.7,
) -> CheckResult:
    """Finite differences on the composed loss of a toy model.

    A random subset of coordinates is probed in every parameter tensor;
    dropout stays on with a mask stream re-seeded for each evaluation.
    """
    from .data import FeatureStats, SyntheticSpec, generate_synthetic
    from .losses import composite_loss
    from .model import STGFN, EmbedderSpec, ModelConfig, build_vocab

    rel = ab = 0.0
    ok, n = True, 0
    for seed in seeds:
        corpus = generate_synthetic(SyntheticSpec(n=4, seed=seed, min_turns=2, max_turns=4))
        insts = corpus.instances
        spec = EmbedderSpec("bag", build_vocab(insts), d_txt)
        cfg = ModelConfig(d_txt=d_txt, d_hidden=d_hidden, heads=2, seq_len=4, dropout=0.3, gate_mode=gate_mode)
        model = STGFN(cfg, spec, FeatureStats.from_instances(insts), seed=seed)
        model.scaler.fit(insts)
        batch = model.collate(insts)

        def loss_value():
            out = model.forward(batch, training=True, rng=np.random.default_rng([seed, 7]))
            return composite_loss(out.prob, batch.y, out.utilities, batch.u, lam)

        params = model.parameters()
        T.new_tape()
        for p in params:
            p.grad = None
        lb = loss_value()
        T.backward(lb.total_tensor, params)
        rng = np.random.default_rng([seed, 99])
        for p in params:
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
            auto = p.grad.reshape(-1)[picks]
            numeric = np.empty(len(picks))
            with T.no_grad():
                for j, i in enumerate(picks):
                    orig = flat[i]
                    flat[i] = orig + STEP
                    up = loss_value().total
                    flat[i] = orig - STEP
                    down = loss_value().total
                    flat[i] = orig
                    numeric[j] = (up - down) / (2 * STEP)
            r, a, good = _compare(auto, numeric)
            rel, ab, ok = max(rel, r), max(ab, a), ok and good
            n += len(picks)
    return CheckResult(f"model[{gate_mode}]", rel, ab, n, ok)


@contextmanager
def corrupted(op: str, scale: float = 1.1):
    """Temporarily scale the backward rule of ``op`` (fault injection)."""
    original = T.OPS[op]

    def bad_backward(g, ctx):
        return [None if gi is None else np.asarray(gi) * scale for gi in original.backward(g, ctx)]

    T.OPS[op] = replace(original, backward=bad_backward)
    try:
        yield
    finally:
        T.OPS[op] = original


def run_all(seeds: Iterable[int] = range(20)) -> list[CheckResult]:
    seeds = list(seeds)
    results = check_ops(seeds)
    for mode in ("literal", "convex"):
        results.append(check_model(seeds, gate_mode=mode))
    return results
