"""Training loop, multi-seed experiments and checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import tensor as T
from .data import (
    CorpusSplit,
    FeatureStats,
    NegotiationInstance,
    oversample_minority,
    stratified_split,
)
from .evaluation import MetricsReport, aggregate_reports, metrics_report
from .losses import composite_loss
from .model import (
    EmbedderSpec,
    GateTrace,
    LogisticBaseline,
    ModelConfig,
    NegotiationModel,
    STGFN,
    build_vocab,
)
from .optim import AdamW, PlateauScheduler

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "stgfn-checkpoint"
CHECKPOINT_VERSION = 1
ARMS = {"baseline": None, "nofair": 0.0, "fair": "config"}


class DivergenceError(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 100
    patience: int = 5
    factor: float = 0.1
    lam: float = 0.7
    dropout: float = 0.3
    d_hidden: int = 128
    heads: int = 2
    seq_len: int = 10
    d_txt: int = 768
    seeds: tuple[int, ...] = (42, 43, 44, 45, 46)
    gate_mode: str = "literal"
    embed_mode: str = "bag"
    max_tokens: int = 128
    loss_weights: tuple[float, float] = (1.0, 1.0)
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.split = tuple(float(f) for f in self.split)
        positive = ("batch_size", "lr", "max_epochs", "patience", "d_hidden", "heads", "seq_len", "d_txt")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.factor < 1:
            raise ValueError("factor must be in (0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ValueError("invalid weight decay or dropout")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_txt=self.d_txt,
            d_hidden=self.d_hidden,
            heads=self.heads,
            seq_len=self.seq_len,
            dropout=self.dropout,
            gate_mode=self.gate_mode,
            embed_mode=self.embed_mode,
            max_tokens=self.max_tokens,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> TrainConfig:
    """Flat key/value YAML or JSON file with TrainConfig field names."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a flat mapping")
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    return TrainConfig.from_dict(raw)


@dataclass
class RunResult:
    arm: str
    seed: int
    lam: float
    epoch_log: list[dict]
    test: MetricsReport
    gate_traces: list[GateTrace]
    wall_time: float
    best_epoch: int

    @property
    def lr_trace(self) -> list[float]:
        return [e["lr"] for e in self.epoch_log]


# --------------------------------------------------------------------------
# model construction


def build_model(arm: str, train: Sequence[NegotiationInstance], config: TrainConfig, seed: int) -> NegotiationModel:
    """Vocabulary, feature ranges and the utility scale all come from the
    (pre-oversampling) training split."""
    stats = FeatureStats.from_instances(train)
    spec = EmbedderSpec(
        mode=config.embed_mode, vocab=build_vocab(train), dim=config.d_txt, max_tokens=config.max_tokens
    )
    if arm == "baseline":
        model: NegotiationModel = LogisticBaseline(spec, stats, config.seq_len, seed=seed)
    else:
        model = STGFN(config.model_config(), spec, stats, seed=seed)
    model.scaler.fit(train)
    return model


def model_meta(model: NegotiationModel) -> dict:
    meta = {
        "kind": model.kind,
        "vocab": model.spec.vocab,
        "embed_mode": model.spec.mode,
        "d_txt": model.spec.dim,
        "max_tokens": model.spec.max_tokens,
        "seq_len": model.seq_len,
        "stats": model.stats.to_dict(),
    }
    if isinstance(model, STGFN):
        meta["model_config"] = dataclasses.asdict(model.config)
        meta["gate_mode"] = model.config.gate_mode
    return meta


def model_from_meta(meta: dict) -> NegotiationModel:
    spec = EmbedderSpec(meta["embed_mode"], dict(meta["vocab"]), int(meta["d_txt"]), int(meta["max_tokens"]))
    stats = FeatureStats(**meta["stats"])
    if meta["kind"] == "baseline":
        return LogisticBaseline(spec, stats, int(meta["seq_len"]))
    if meta["kind"] == "stgfn":
        return STGFN(ModelConfig(**meta["model_config"]), spec, stats)
    raise CheckpointError(f"unknown model kind {meta['kind']!r}")


# --------------------------------------------------------------------------
# training


def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield start // size, order[start : start + size]


class Trainer:
    """One training run. Shuffling and dropout streams derive from
    (seed, epoch), so a run resumed from a checkpoint replays exactly."""

    def __init__(
        self,
        model: NegotiationModel,
        train: Sequence[NegotiationInstance],
        validation: Sequence[NegotiationInstance],
        config: TrainConfig,
        seed: int,
        lam: float,
        log_path=None,
    ):
        self.model = model
        self.train = list(train)
        self.validation = list(validation)
        self.config = config
        self.seed = seed
        self.lam = lam
        self.params = model.parameters()
        self.optimizer = AdamW(self.params, lr=config.lr, weight_decay=config.weight_decay)
        self.scheduler = PlateauScheduler(self.optimizer, patience=config.patience, factor=config.factor)
        self.epoch = 0
        self.best_val = float("inf")
        self.best_epoch = 0
        self.best_arrays = model.state_arrays()
        self.epoch_log: list[dict] = []
        self.log_path = Path(log_path) if log_path else None
        self._val_batch = model.collate(self.validation) if self.validation else None

    def steps_per_epoch(self) -> int:
        return -(-len(self.train) // self.config.batch_size)

    def loss_on(self, batch, training: bool, rng=None):
        out = self.model.forward(batch, training=training, rng=rng)
        return composite_loss(out.prob, batch.y, out.utilities, batch.u, self.lam, self.config.loss_weights)

    def validation_loss(self) -> tuple[float, float]:
        if self._val_batch is None:
            return float("nan"), float("nan")
        with T.no_grad():
            out = self.model.forward(self._val_batch, training=False)
            lb = composite_loss(
                out.prob, self._val_batch.y, out.utilities, self._val_batch.u, self.lam, self.config.loss_weights
            )
        acc = float(np.mean((out.prob.data >= 0.5) == (self._val_batch.y == 1)))
        return lb.total, acc

    def run_epoch(self) -> dict:
        epoch = self.epoch + 1
        shuffle_rng = np.random.default_rng([self.seed, epoch, 0])
        drop_rng = np.random.default_rng([self.seed, epoch, 1])
        order = shuffle_rng.permutation(len(self.train))
        sums = np.zeros(4)
        n_batches = 0
        for b_idx, idx in _batches(len(order), self.config.batch_size, order):
            batch = self.model.collate([self.train[i] for i in idx])
            T.new_tape()
            self.optimizer.zero_grad()
            try:
                lb = self.loss_on(batch, training=True, rng=drop_rng)
            except FloatingPointError as exc:
                raise DivergenceError(
                    f"epoch {epoch}, batch {b_idx} (sessions {batch.ids[:3]}...): {exc}"
                ) from exc
            if not np.isfinite(lb.total):
                raise DivergenceError(f"epoch {epoch}, batch {b_idx}: non-finite loss {lb.total}")
            T.backward(lb.total_tensor, self.params)
            self.optimizer.step()
            sums += (lb.outcome, lb.utility, lb.fairness, lb.total)
            n_batches += 1
        lr_used = self.optimizer.lr
        val_loss, val_acc = self.validation_loss()
        if np.isfinite(val_loss):
            self.scheduler.step(val_loss)
            if val_loss < self.best_val:
                self.best_val = val_loss
                self.best_epoch = epoch
                self.best_arrays = self.model.state_arrays()
        else:
            self.best_epoch = epoch
            self.best_arrays = self.model.state_arrays()
        means = sums / max(n_batches, 1)
        entry = {
            "epoch": epoch,
            "lr": lr_used,
            "loss_outcome": float(means[0]),
            "loss_utility": float(means[1]),
            "loss_fairness": float(means[2]),
            "loss_total": float(means[3]),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
        }
        self.epoch = epoch
        self.epoch_log.append(entry)
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
        return entry

    def fit(self, epochs: int | None = None) -> None:
        target = self.config.max_epochs if epochs is None else min(self.config.max_epochs, self.epoch + epochs)
        while self.epoch < target:
            self.run_epoch()

    def restore_best(self) -> None:
        self.model.load_arrays(self.best_arrays)

    # checkpointing -------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "model": model_meta(self.model),
            "seed": self.seed,
            "lam": self.lam,
            "epoch": self.epoch,
            "best_val": self.best_val,
            "best_epoch": self.best_epoch,
            "epoch_log": self.epoch_log,
            "scheduler": self.scheduler.state_dict(),
            "optimizer": {k: v for k, v in self.optimizer.state_dict().items() if k not in ("m", "v")},
        }
        opt = self.optimizer.state_dict()
        arrays = {f"param/{k}": v for k, v in self.model.state_arrays().items()}
        arrays.update({f"best/{k}": v for k, v in self.best_arrays.items()})
        arrays.update({f"opt_m/{i}": m for i, m in enumerate(opt["m"])})
        arrays.update({f"opt_v/{i}": v for i, v in enumerate(opt["v"])})
        write_checkpoint(path, meta, arrays)

    def load_checkpoint(self, path) -> None:
        """Restore all state; nothing is modified if the file is unusable."""
        meta, arrays = read_checkpoint(path)
        if meta["config_hash"] != self.config.hash():
            raise CheckpointError(
                f"config hash mismatch: checkpoint {meta['config_hash']} vs current {self.config.hash()}"
            )
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        best = {k[len("best/"):]: v for k, v in arrays.items() if k.startswith("best/")}
        n = len(self.params)
        opt_state = dict(meta["optimizer"])
        try:
            opt_state["m"] = [arrays[f"opt_m/{i}"] for i in range(n)]
            opt_state["v"] = [arrays[f"opt_v/{i}"] for i in range(n)]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks optimizer moments: {exc}") from exc
        # validate everything against a scratch copy before touching live state
        probe = model_from_meta(meta["model"])
        probe.load_arrays(params)
        probe.load_arrays(best)
        AdamW(probe.parameters()).load_state_dict(opt_state)
        self.model.load_arrays(params)
        self.optimizer.load_state_dict(opt_state)
        self.scheduler.load_state_dict(meta["scheduler"])
        self.best_arrays = best
        self.best_val = float(meta["best_val"])
        self.best_epoch = int(meta["best_epoch"])
        self.epoch = int(meta["epoch"])
        self.epoch_log = list(meta["epoch_log"])
        self.seed = int(meta["seed"])
        self.lam = float(meta["lam"])


def write_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: not a checkpoint (no metadata)")
    try:
        meta = json.loads(str(arrays.pop("__meta__")))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} is incompatible with {CHECKPOINT_VERSION}"
        )
    return meta, arrays


def load_model_checkpoint(path) -> tuple[NegotiationModel, dict]:
    """Model (best-validation parameters) plus metadata from a checkpoint."""
    meta, arrays = read_checkpoint(path)
    model = model_from_meta(meta["model"])
    prefix = "best/" if any(k.startswith("best/") for k in arrays) else "param/"
    model.load_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    return model, meta


def evaluate(model: NegotiationModel, instances: Sequence[NegotiationInstance]):
    preds, traces = model.predict_batch(instances)
    report = metrics_report(
        [p.probability for p in preds],
        [inst.outcome for inst in instances],
        [p.utilities for p in preds],
        [inst.utilities for inst in instances],
    )
    return report, traces


def arm_lambda(arm: str, config: TrainConfig) -> float:
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; expected one of {list(ARMS)}")
    return config.lam if arm == "fair" else 0.0


def train(
    split: CorpusSplit,
    config: TrainConfig,
    seed: int,
    arm: str = "fair",
    log_path=None,
    checkpoint_path=None,
    oversample: bool = True,
) -> RunResult:
    """Full run: oversample the training split, fit for ``max_epochs``, keep
    the lowest-validation-loss parameters and evaluate them on test."""
    start = time.perf_counter()
    lam = arm_lambda(arm, config)
    model = build_model(arm, split.train, config, seed)
    train_set = oversample_minority(split.train, seed) if oversample else list(split.train)
    trainer = Trainer(model, train_set, split.validation, config, seed, lam, log_path=log_path)
    trainer.fit()
    if checkpoint_path:
        trainer.save_checkpoint(checkpoint_path)
    trainer.restore_best()
    report, traces = evaluate(model, split.test)
    return RunResult(
        arm=arm,
        seed=seed,
        lam=lam,
        epoch_log=trainer.epoch_log,
        test=report,
        gate_traces=traces,
        wall_time=time.perf_counter() - start,
        best_epoch=trainer.best_epoch,
    )


@dataclass
class ExperimentResult:
    runs: dict[str, list[RunResult]] = field(default_factory=dict)

    def aggregate(self) -> dict:
        return {arm: aggregate_reports([r.test for r in runs]) for arm, runs in self.runs.items()}

    def mean(self, arm: str, metric: str) -> float:
        return float(np.mean([getattr(r.test, metric) for r in self.runs[arm]]))


def run_experiment(
    corpus,
    config: TrainConfig,
    arms: Sequence[str] = ("baseline", "nofair", "fair"),
    seeds: Sequence[int] | None = None,
    out_dir=None,
) -> ExperimentResult:
    """Train every arm for every seed on one stratified split."""
    split = corpus if isinstance(corpus, CorpusSplit) else stratified_split(corpus, config.split, config.split_seed)
    seeds = tuple(seeds) if seeds is not None else config.seeds
    if not seeds:
        raise ValueError("at least one seed is required")
    result = ExperimentResult()
    for arm in arms:
        result.runs[arm] = []
        for seed in seeds:
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / arm / f"seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
            run = train(
                split,
                config,
                seed,
                arm=arm,
                log_path=run_dir / "epochs.jsonl" if run_dir else None,
                checkpoint_path=run_dir / "checkpoint.npz" if run_dir else None,
            )
            log.info("%s seed %d: %s (%.1fs)", arm, seed, run.test, run.wall_time)
            if run_dir:
                (run_dir / "metrics.json").write_text(json.dumps(run.test.to_dict(), indent=2, sort_keys=True))
                if run.gate_traces:
                    (run_dir / "gates.json").write_text(
                        json.dumps([t.to_dict() for t in run.gate_traces], indent=1)
                    )
            result.runs[arm].append(run)
    return result
