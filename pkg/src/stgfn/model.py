"""Dual-stream negotiation model and its logistic-regression baseline.

Per dialogue: turn texts are embedded (bag-of-tokens or supplied vectors),
the two-agent strategic graph is encoded once by a trust-biased graph
attention layer, every turn embedding is fused with the graph embedding
through a scalar sigmoid gate, an LSTM runs over the fused turns and two
heads read its last hidden state (deal probability and both utilities).

All components take a leading batch axis; the single-dialogue helpers
(``gat_forward``, ``fuse``, ``lstm_forward``, ``predict``) run the same
code with a batch of one.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .data import (
    FeatureStats,
    NegotiationInstance,
    StrategicGraph,
    Turn,
    build_graph,
)
from .tensor import ShapeError, Tensor

UNK = "<unk>"
TRUST_EPS = 1e-6
LEAKY_SLOPE = 0.2
GATE_MODES = ("literal", "convex")


class ContractError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration / parameter groups


@dataclass
class EmbedderSpec:
    mode: str = "bag"  # "bag" | "passthrough"
    vocab: dict[str, int] = field(default_factory=lambda: {UNK: 0})
    dim: int = 768
    max_tokens: int = 128

    def __post_init__(self):
        if self.mode not in ("bag", "passthrough"):
            raise ValueError(f"unknown embedder mode {self.mode!r}")
        if UNK not in self.vocab:
            raise ValueError("vocabulary must reserve the UNK token")

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK])


def build_vocab(instances: Sequence[NegotiationInstance], min_count: int = 1) -> dict[str, int]:
    counts = Counter(tok for inst in instances for turn in inst.turns for tok in turn.tokens)
    words = sorted(w for w, c in counts.items() if c >= min_count and w != UNK)
    vocab = {UNK: 0}
    for w in words:
        vocab[w] = len(vocab)
    return vocab


@dataclass
class ModelConfig:
    d_txt: int = 768
    d_hidden: int = 128
    heads: int = 2
    seq_len: int = 10
    dropout: float = 0.3
    gate_mode: str = "literal"
    embed_mode: str = "bag"
    max_tokens: int = 128

    def __post_init__(self):
        if self.d_hidden % self.heads:
            raise ValueError(f"d_hidden={self.d_hidden} is not divisible by heads={self.heads}")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape), name=name)


class ParamGroup:
    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Tensor):
                yield prefix + f.name, v


@dataclass
class GATParams(ParamGroup):
    W: Tensor  # (heads, d_node, d_head)
    a: Tensor  # (heads, 2 * d_head); first half scores the target node, second the neighbour

    @property
    def heads(self) -> int:
        return self.W.shape[0]

    @property
    def d_head(self) -> int:
        return self.W.shape[2]

    @classmethod
    def init(cls, rng, d_node: int, d_hidden: int, heads: int) -> "GATParams":
        if d_hidden % heads:
            raise ValueError("d_hidden must be divisible by the head count")
        dh = d_hidden // heads
        return cls(
            _uniform(rng, (heads, d_node, dh), d_node, "gat.W"),
            _uniform(rng, (heads, 2 * dh), 2 * dh, "gat.a"),
        )


@dataclass
class FusionParams(ParamGroup):
    W_z: Tensor  # (d_txt + d_graph, 1)
    b_z: Tensor  # (1,)
    mode: str = "literal"
    # literal: joint projection of the concatenation
    W_p: Tensor | None = None
    b_p: Tensor | None = None
    # convex: separate per-modality projections
    W_txt: Tensor | None = None
    W_graph: Tensor | None = None

    @classmethod
    def init(cls, rng, d_txt: int, d_graph: int, d_hidden: int, mode: str) -> "FusionParams":
        d_c = d_txt + d_graph
        p = cls(_uniform(rng, (d_c, 1), d_c, "fusion.W_z"), _uniform(rng, (1,), d_c, "fusion.b_z"), mode)
        if mode == "literal":
            p.W_p = _uniform(rng, (d_c, d_hidden), d_c, "fusion.W_p")
            p.b_p = _uniform(rng, (d_hidden,), d_c, "fusion.b_p")
        elif mode == "convex":
            p.W_txt = _uniform(rng, (d_txt, d_hidden), d_txt, "fusion.W_txt")
            p.W_graph = _uniform(rng, (d_graph, d_hidden), d_graph, "fusion.W_graph")
        else:
            raise ValueError(f"unknown gate mode {mode!r}")
        return p


@dataclass
class LSTMParams(ParamGroup):
    W_x: Tensor  # (d_in, 4 * d_hidden), gate order i, f, g, o
    W_h: Tensor  # (d_hidden, 4 * d_hidden)
    b: Tensor  # (4 * d_hidden,)

    @property
    def d_hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def init(cls, rng, d_in: int, d_hidden: int) -> "LSTMParams":
        b = rng.uniform(-1, 1, size=4 * d_hidden) / np.sqrt(d_hidden)
        b[d_hidden : 2 * d_hidden] = 1.0
        return cls(
            _uniform(rng, (d_in, 4 * d_hidden), d_hidden, "lstm.W_x"),
            _uniform(rng, (d_hidden, 4 * d_hidden), d_hidden, "lstm.W_h"),
            T.parameter(b, name="lstm.b"),
        )


@dataclass
class HeadParams(ParamGroup):
    W_out: Tensor
    b_out: Tensor
    W_util: Tensor
    b_util: Tensor

    @classmethod
    def init(cls, rng, d_in: int, prefix: str = "head") -> "HeadParams":
        return cls(
            _uniform(rng, (d_in, 1), d_in, f"{prefix}.W_out"),
            _uniform(rng, (1,), d_in, f"{prefix}.b_out"),
            _uniform(rng, (d_in, 2), d_in, f"{prefix}.W_util"),
            _uniform(rng, (2,), d_in, f"{prefix}.b_util"),
        )


@dataclass
class GateTrace:
    session_id: str
    values: list[float]
    outcome: int

    def __post_init__(self):
        for z in self.values:
            if not 0.0 < z < 1.0:
                raise ContractError(f"{self.session_id}: gate value {z} outside (0, 1)")

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "values": list(self.values), "outcome": self.outcome}

    @classmethod
    def from_dict(cls, d: dict) -> "GateTrace":
        return cls(str(d["session_id"]), [float(x) for x in d["values"]], int(d["outcome"]))


@dataclass
class Prediction:
    probability: float
    utilities: tuple[float, float]


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: list[str]
    mask: np.ndarray  # (B, K) 1 for real turns
    lengths: np.ndarray  # (B,)
    token_idx: np.ndarray
    token_seg: np.ndarray  # row in the flattened (B*K) turn grid
    token_counts: np.ndarray  # (B*K,)
    turn_vectors: np.ndarray | None  # (B, K, d_txt) in passthrough mode
    node_features: np.ndarray  # (B, 2, 6)
    trust: np.ndarray  # (B, 2, 2)
    y: np.ndarray  # (B,)
    u: np.ndarray  # (B, 2)
    bow: np.ndarray | None = None  # (B, V) mean bag-of-token vectors

    def __len__(self) -> int:
        return len(self.ids)


def truncate_turns(turns: Sequence, cap: int):
    """Keep the newest ``cap`` turns."""
    return tuple(turns[-cap:]) if len(turns) > cap else tuple(turns)


def collate(
    instances: Sequence[NegotiationInstance],
    spec: EmbedderSpec,
    stats: FeatureStats,
    seq_len: int,
    with_bow: bool = False,
) -> Batch:
    if not instances:
        raise ContractError("cannot collate an empty batch")
    B = len(instances)
    windows = [truncate_turns(inst.turns, seq_len) for inst in instances]
    lengths = np.array([len(w) for w in windows])
    K = int(lengths.max())
    mask = (np.arange(K)[None, :] < lengths[:, None]).astype(np.float64)

    idx, seg = [], []
    counts = np.zeros(B * K, dtype=np.int64)
    for b, turns in enumerate(windows):
        for k, turn in enumerate(turns):
            toks = turn.tokens[: spec.max_tokens] or (UNK,)
            row = b * K + k
            idx.extend(spec.index(t) for t in toks)
            seg.extend([row] * len(toks))
            counts[row] = len(toks)

    turn_vectors = None
    if spec.mode == "passthrough":
        turn_vectors = np.zeros((B, K, spec.dim))
        for b, inst in enumerate(instances):
            if inst.turn_vectors is None:
                raise ContractError(f"{inst.session_id}: passthrough mode needs turn vectors")
            vecs = np.asarray(inst.turn_vectors, dtype=np.float64)
            if vecs.ndim != 2 or vecs.shape[1] != spec.dim or vecs.shape[0] != len(inst.turns):
                raise ShapeError(
                    f"{inst.session_id}: turn vectors of shape {vecs.shape}, "
                    f"expected ({len(inst.turns)}, {spec.dim})"
                )
            vecs = vecs[-seq_len:]
            turn_vectors[b, : len(vecs)] = vecs

    graphs = [build_graph(inst, stats) for inst in instances]
    bow = None
    if with_bow:
        V = len(spec.vocab)
        bow = np.zeros((B, V))
        for b, turns in enumerate(windows):
            for turn in turns:
                toks = turn.tokens[: spec.max_tokens] or (UNK,)
                vec = np.zeros(V)
                np.add.at(vec, [spec.index(t) for t in toks], 1.0 / len(toks))
                bow[b] += vec
            bow[b] /= len(turns)
    return Batch(
        ids=[inst.session_id for inst in instances],
        mask=mask,
        lengths=lengths,
        token_idx=np.asarray(idx, dtype=np.int64),
        token_seg=np.asarray(seg, dtype=np.int64),
        token_counts=counts,
        turn_vectors=turn_vectors,
        node_features=np.stack([g.features for g in graphs]),
        trust=np.stack([g.trust for g in graphs]),
        y=np.array([inst.outcome for inst in instances], dtype=np.float64),
        u=np.array([inst.utilities for inst in instances], dtype=np.float64),
        bow=bow,
    )


# --------------------------------------------------------------------------
# components


def embed_turns(turns: Sequence[Turn], spec: EmbedderSpec, weight, seq_len: int = 10) -> np.ndarray:
    """Turn embedding matrix (K x d_txt) for one dialogue in bag-of-tokens mode.

    Only the newest ``seq_len`` turns are embedded. Each row is the mean of
    the embedding rows of the turn's tokens (unknown tokens map to UNK).
    """
    if not turns:
        raise ContractError("cannot embed an empty dialogue")
    weight = T.as_tensor(weight)
    window = truncate_turns(turns, seq_len)
    idx, seg, counts = [], [], []
    for k, turn in enumerate(window):
        toks = turn.tokens[: spec.max_tokens] or (UNK,)
        idx.extend(spec.index(t) for t in toks)
        seg.extend([k] * len(toks))
        counts.append(len(toks))
    with T.no_grad():
        return T.embedding_bag(weight, idx, seg, counts).data.copy()


@dataclass
class GATOutput:
    nodes: Tensor  # (B, 2, d_hidden), agent A first
    h_graph: Tensor  # (B, 2 * d_hidden)
    attention: np.ndarray  # (B, heads, 2, 2); row i sums to 1 over neighbours j


def gat_encode(node_features, trust: np.ndarray, params: GATParams) -> GATOutput:
    """Batched trust-biased graph attention.

    logit_ij = LeakyReLU(a . [W v_i || W v_j]) + log(trust_ij + 1e-6), softmax
    over j (self-loop included), node_i = sum_j alpha_ij W v_j per head.
    """
    x = T.as_tensor(node_features)
    B = x.shape[0]
    H, dh = params.heads, params.d_head
    wv = T.matmul(T.reshape(x, (B, 1, 2, x.shape[-1])), params.W)  # (B, H, 2, dh)
    a_i = T.reshape(T.getitem(params.a, (slice(None), slice(0, dh))), (1, H, 1, dh))
    a_j = T.reshape(T.getitem(params.a, (slice(None), slice(dh, 2 * dh))), (1, H, 1, dh))
    s_i = T.sum_(T.mul(wv, a_i), axis=-1)  # (B, H, 2)
    s_j = T.sum_(T.mul(wv, a_j), axis=-1)
    logits = T.add(T.reshape(s_i, (B, H, 2, 1)), T.reshape(s_j, (B, H, 1, 2)))
    logits = T.leaky_relu(logits, LEAKY_SLOPE)
    logits = T.add(logits, np.log(np.asarray(trust)[:, None, :, :] + TRUST_EPS))
    alpha = T.softmax(logits, axis=-1)
    out = T.matmul(alpha, wv)  # (B, H, 2, dh)
    nodes = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, 2, H * dh))
    return GATOutput(nodes, T.reshape(nodes, (B, 2 * H * dh)), alpha.data.copy())


def gat_forward(graph: StrategicGraph, params: GATParams) -> GATOutput:
    if not isinstance(graph, StrategicGraph):
        raise ContractError("gat_forward expects a StrategicGraph")
    return gat_encode(graph.features[None], graph.trust[None], params)


def fuse_sequence(h_txt, h_graph, params: FusionParams) -> tuple[Tensor, Tensor]:
    """Gate and fuse every turn. ``h_txt`` is (B, K, d_txt), ``h_graph`` (B, G).

    Returns the fused sequence (B, K, d_hidden) and gates (B, K, 1).
    """
    h_txt, h_graph = T.as_tensor(h_txt), T.as_tensor(h_graph)
    B, K, _ = h_txt.shape
    g_seq = T.broadcast_to(T.reshape(h_graph, (B, 1, h_graph.shape[-1])), (B, K, h_graph.shape[-1]))
    c = T.concat([h_txt, g_seq], axis=-1)
    if c.shape[-1] != params.W_z.shape[0]:
        raise ShapeError(f"fusion input width {c.shape[-1]} != gate weight rows {params.W_z.shape[0]}")
    z = T.sigmoid(T.add(T.matmul(c, params.W_z), params.b_z))
    if params.mode == "literal":
        proj = T.relu(T.add(T.matmul(c, params.W_p), params.b_p))
        return T.mul(z, proj), z
    txt = T.relu(T.matmul(h_txt, params.W_txt))
    graph = T.relu(T.matmul(h_graph, params.W_graph))  # (B, d_hidden), static over turns
    graph = T.reshape(graph, (B, 1, graph.shape[-1]))
    return T.add(T.mul(z, txt), T.mul(T.sub(1.0, z), graph)), z


def fuse(h_txt_k, h_graph, params: FusionParams) -> tuple[Tensor, float]:
    """Single-turn fusion: vectors in, (fused vector, scalar gate) out."""
    h_txt_k, h_graph = T.as_tensor(h_txt_k), T.as_tensor(h_graph)
    fused, z = fuse_sequence(
        T.reshape(h_txt_k, (1, 1, h_txt_k.shape[-1])),
        T.reshape(h_graph, (1, h_graph.shape[-1])),
        params,
    )
    return T.reshape(fused, (fused.shape[-1],)), float(z.data.reshape(-1)[0])


def lstm_sequence(x, params: LSTMParams, mask: np.ndarray | None = None) -> Tensor:
    """Run the LSTM over (B, K, d_in) from zero state; return each row's last
    valid hidden state. Padded steps (mask 0) carry the previous state."""
    x = T.as_tensor(x)
    B, K, _ = x.shape
    d = params.d_hidden
    if K < 1:
        raise ContractError("LSTM needs at least one step")
    gates_x = T.add(T.matmul(x, params.W_x), params.b)  # (B, K, 4d)
    h = T.Tensor(np.zeros((B, d)))
    c = T.Tensor(np.zeros((B, d)))
    for k in range(K):
        g = T.add(T.getitem(gates_x, (slice(None), k)), T.matmul(h, params.W_h))
        hc = T.lstm_cell(g, c)
        h_new = T.getitem(hc, (slice(None), slice(0, d)))
        c_new = T.getitem(hc, (slice(None), slice(d, 2 * d)))
        if mask is None or mask[:, k].all():
            h, c = h_new, c_new
        else:
            m = mask[:, k : k + 1]
            h = T.add(h, T.mul(T.sub(h_new, h), m))
            c = T.add(c, T.mul(T.sub(c_new, c), m))
    return h


def lstm_forward(sequence, params: LSTMParams) -> Tensor:
    """Final hidden state h_K (d_hidden,) of a single (K, d_in) sequence."""
    seq = T.as_tensor(sequence)
    h = lstm_sequence(T.reshape(seq, (1,) + seq.shape), params)
    return T.reshape(h, (params.d_hidden,))


# --------------------------------------------------------------------------
# models


@dataclass
class ForwardOutput:
    prob: Tensor  # (B,)
    utilities: Tensor  # (B, 2) in dataset units
    gates: np.ndarray | None  # (B, K)
    mask: np.ndarray | None  # (B, K)


class UtilityScaler:
    """Fixed affine map from the heads' standardized outputs to utility
    points. Identity until fitted on training utilities."""

    def __init__(self, mean=(0.0, 0.0), std=(1.0, 1.0)):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    def fit(self, instances: Sequence[NegotiationInstance]) -> "UtilityScaler":
        u = np.array([inst.utilities for inst in instances], dtype=np.float64)
        self.mean = u.mean(axis=0)
        self.std = np.where(u.std(axis=0) > 1e-12, u.std(axis=0), 1.0)
        return self

    def apply(self, z: Tensor) -> Tensor:
        return T.add(T.mul(z, self.std), self.mean)


class NegotiationModel:
    """Shared plumbing: parameters, vocabulary, feature stats, batching."""

    kind = "base"

    def __init__(self, spec: EmbedderSpec, stats: FeatureStats, seq_len: int):
        self.spec = spec
        self.stats = stats
        self.seq_len = seq_len
        self.scaler = UtilityScaler()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def collate(self, instances: Sequence[NegotiationInstance]) -> Batch:
        return collate(instances, self.spec, self.stats, self.seq_len)

    def forward(self, batch: Batch, training: bool = False, rng=None) -> ForwardOutput:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out["scaler.mean"] = self.scaler.mean.copy()
        out["scaler.std"] = self.scaler.std.copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        expected = set(params) | {"scaler.mean", "scaler.std"}
        if set(arrays) != expected:
            diff = sorted(set(arrays) ^ expected)
            raise ValueError(f"parameter names do not match the model: {diff}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: stored shape {arrays[name].shape} != {p.shape}")
        for name, p in params.items():
            p.data = np.array(arrays[name], dtype=np.float64)
        self.scaler.mean = np.array(arrays["scaler.mean"], dtype=np.float64)
        self.scaler.std = np.array(arrays["scaler.std"], dtype=np.float64)

    def predict_batch(self, instances: Sequence[NegotiationInstance]):
        with T.no_grad():
            out = self.forward(self.collate(instances), training=False)
        preds = [
            Prediction(float(p), (float(u[0]), float(u[1])))
            for p, u in zip(out.prob.data, out.utilities.data)
        ]
        traces = []
        if out.gates is not None:
            for inst, z, m in zip(instances, out.gates, out.mask):
                traces.append(GateTrace(inst.session_id, [float(v) for v in z[m > 0]], inst.outcome))
        return preds, traces


class STGFN(NegotiationModel):
    """Semantic-temporal graph fusion network."""

    kind = "stgfn"

    def __init__(
        self,
        config: ModelConfig,
        spec: EmbedderSpec,
        stats: FeatureStats,
        seed: int = 0,
        d_node: int = 6,
    ):
        super().__init__(spec, stats, config.seq_len)
        if spec.dim != config.d_txt:
            raise ValueError(f"embedder dim {spec.dim} != d_txt {config.d_txt}")
        self.config = config
        rng = np.random.default_rng(seed)
        d, h = config.d_hidden, config.heads
        self.embedding = None
        if spec.mode == "bag":
            # one-hot inputs have a single active unit, so fan_in = 1
            self.embedding = _uniform(rng, (len(spec.vocab), config.d_txt), 1, "embedding")
        self.gat = GATParams.init(rng, d_node, d, h)
        self.fusion = FusionParams.init(rng, config.d_txt, 2 * d, d, config.gate_mode)
        self.lstm = LSTMParams.init(rng, d, d)
        self.head = HeadParams.init(rng, d)

    def named_parameters(self):
        out = []
        if self.embedding is not None:
            out.append(("embedding", self.embedding))
        out += list(self.gat.named("gat."))
        out += list(self.fusion.named("fusion."))
        out += list(self.lstm.named("lstm."))
        out += list(self.head.named("head."))
        return out

    def text_embeddings(self, batch: Batch) -> Tensor:
        B, K = batch.mask.shape
        if self.spec.mode == "passthrough":
            return T.Tensor(batch.turn_vectors)
        flat = T.embedding_bag(self.embedding, batch.token_idx, batch.token_seg, batch.token_counts)
        return T.reshape(flat, (B, K, self.config.d_txt))

    def forward(self, batch: Batch, training: bool = False, rng=None) -> ForwardOutput:
        keep = 1.0 - self.config.dropout
        h_txt = self.text_embeddings(batch)
        graph = gat_encode(batch.node_features, batch.trust, self.gat)
        fused, z = fuse_sequence(h_txt, graph.h_graph, self.fusion)
        gates = z.data[..., 0]
        valid = gates[batch.mask > 0]
        if np.any(valid <= 0.0) or np.any(valid >= 1.0):
            raise ContractError("fusion gate left the open interval (0, 1)")
        fused = T.dropout(fused, keep, rng, training)
        h_last = lstm_sequence(fused, self.lstm, batch.mask)
        h_last = T.dropout(h_last, keep, rng, training)
        logit = T.add(T.matmul(h_last, self.head.W_out), self.head.b_out)
        prob = T.reshape(T.sigmoid(logit), (len(batch),))
        util = self.scaler.apply(T.add(T.matmul(h_last, self.head.W_util), self.head.b_util))
        return ForwardOutput(prob, util, gates.copy(), batch.mask)


class LogisticBaseline(NegotiationModel):
    """Logistic regression for the outcome plus two linear regressions for the
    utilities, all on [mean bag-of-tokens vector || both nodes' features]."""

    kind = "baseline"

    def __init__(self, spec: EmbedderSpec, stats: FeatureStats, seq_len: int = 10, seed: int = 0):
        super().__init__(spec, stats, seq_len)
        rng = np.random.default_rng(seed)
        n_feat = len(spec.vocab) + 12
        self.head = HeadParams.init(rng, n_feat, prefix="baseline")

    def named_parameters(self):
        return list(self.head.named("baseline."))

    def collate(self, instances):
        return collate(instances, self.spec, self.stats, self.seq_len, with_bow=True)

    @staticmethod
    def features(batch: Batch) -> np.ndarray:
        return np.concatenate([batch.bow, batch.node_features.reshape(len(batch), -1)], axis=1)

    def forward(self, batch: Batch, training: bool = False, rng=None) -> ForwardOutput:
        x = T.Tensor(self.features(batch))
        logit = T.add(T.matmul(x, self.head.W_out), self.head.b_out)
        prob = T.reshape(T.sigmoid(logit), (len(batch),))
        util = self.scaler.apply(T.add(T.matmul(x, self.head.W_util), self.head.b_util))
        return ForwardOutput(prob, util, None, None)


def predict(instance: NegotiationInstance, model: NegotiationModel) -> tuple[Prediction, GateTrace | None]:
    preds, traces = model.predict_batch([instance])
    return preds[0], (traces[0] if traces else None)


def logistic_baseline(instance: NegotiationInstance, model: LogisticBaseline) -> Prediction:
    return predict(instance, model)[0]
