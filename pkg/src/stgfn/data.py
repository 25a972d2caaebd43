"""Negotiation corpora: schema types, JSON loaders, strategic-graph features,
oversampling, splitting and a synthetic generator with known ground truth.

Input files are JSON arrays with one object per dialogue::

    {"id": str,
     "turns": [{"speaker": "A" | "B", "text": str}],
     "agents": {"A": {"batna": num, "budget": num | null, "role": str | int | null,
                      "svo": str | null,
                      "priorities": {issue: "High" | "Medium" | "Low"} | {item: num}},
                "B": {...}},
     "outcome": 0 | 1,
     "utilities": {"A": num, "B": num} | null}
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

NODE_DIM = 6
SVO_CATEGORIES = ("prosocial", "individualistic", "competitive", "unknown")
TRUST_BY_SVO = {"prosocial": 0.8, "individualistic": 0.4, "competitive": 0.2, "unknown": 0.5}
SELF_TRUST = 1.0
PRIORITY_LEVELS = {"high": 3.0, "medium": 2.0, "low": 1.0}
# canonical issue orders; other corpora keep the file's key order
ISSUE_ORDERS = (
    ("food", "water", "firewood"),
    ("book", "hat", "ball"),
    ("books", "hats", "balls"),
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class SchemaError(ValueError):
    """A record does not follow the input schema."""


class ContractError(ValueError):
    """A precondition of a data operation is violated."""


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class AgentProfile:
    batna: float
    budget: float
    role: int
    svo: str
    priorities: tuple[float, float, float]

    def __post_init__(self):
        vals = (self.batna, self.budget, *self.priorities)
        if not all(np.isfinite(v) for v in vals):
            raise ContractError(f"non-finite value in agent profile {self}")
        if self.svo not in SVO_CATEGORIES:
            raise ContractError(f"unknown SVO category {self.svo!r}")
        if self.role not in (0, 1):
            raise ContractError(f"role flag must be 0 or 1, got {self.role!r}")


@dataclass(frozen=True)
class Turn:
    speaker: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class NegotiationInstance:
    session_id: str
    turns: tuple[Turn, ...]
    agents: tuple[AgentProfile, AgentProfile]
    outcome: int
    utilities: tuple[float, float]
    # optional precomputed turn vectors for the passthrough embedder
    turn_vectors: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.turns:
            raise ContractError(f"{self.session_id}: dialogue has no turns")
        for t in self.turns:
            if t.speaker not in ("A", "B"):
                raise ContractError(f"{self.session_id}: speaker {t.speaker!r} is not A or B")
        if self.outcome not in (0, 1):
            raise ContractError(f"{self.session_id}: outcome must be 0 or 1")
        if not all(np.isfinite(u) for u in self.utilities):
            raise ContractError(f"{self.session_id}: non-finite utilities")

    @property
    def gap(self) -> float:
        return abs(self.utilities[0] - self.utilities[1])


@dataclass(frozen=True)
class StrategicGraph:
    """Two agent nodes (A first) and a 2x2 trust matrix; ``trust[i, j]`` is
    the weight of edge i -> j and the diagonal holds the self-loops."""

    features: np.ndarray
    trust: np.ndarray

    def __post_init__(self):
        if self.features.shape != (2, NODE_DIM):
            raise ContractError(f"node features must be 2x{NODE_DIM}, got {self.features.shape}")
        if self.trust.shape != (2, 2):
            raise ContractError(f"trust matrix must be 2x2, got {self.trust.shape}")
        # NaN marks an absent edge
        if np.any(np.isnan(np.diag(self.trust))):
            raise ContractError("graph is missing a self-loop")
        if np.any(np.isnan(self.trust)):
            raise ContractError("graph is missing a directed edge between the agents")
        if np.any(self.trust < 0) or np.any(self.trust > 1):
            raise ContractError("trust values must lie in [0, 1]")


@dataclass(frozen=True)
class FeatureStats:
    batna_min: float
    batna_max: float
    budget_min: float
    budget_max: float

    @classmethod
    def from_instances(cls, instances: Sequence[NegotiationInstance]) -> "FeatureStats":
        if not instances:
            raise ContractError("cannot compute feature stats of an empty corpus")
        batna = [p.batna for inst in instances for p in inst.agents]
        budget = [p.budget for inst in instances for p in inst.agents]
        return cls(min(batna), max(batna), min(budget), max(budget))

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class CorpusSplit:
    train: list[NegotiationInstance]
    validation: list[NegotiationInstance]
    test: list[NegotiationInstance]
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0


# --------------------------------------------------------------------------
# graph construction


def _minmax(x: float, lo: float, hi: float) -> float:
    if hi - lo <= 0:
        return 0.5
    return float(np.clip((x - lo) / (hi - lo), 0.0, 1.0))


def build_node_features(profile: AgentProfile, stats: FeatureStats) -> np.ndarray:
    """``[batna_norm, budget_norm, role, p1, p2, p3]`` with min-max scaled
    economics and sum-normalized priorities."""
    vals = (profile.batna, profile.budget, *profile.priorities)
    if not all(np.isfinite(v) for v in vals):
        raise ContractError("non-finite profile value")
    pri = np.asarray(profile.priorities, dtype=np.float64)
    total = pri.sum()
    pri = pri / total if total > 0 else np.full(3, 1.0 / 3.0)
    return np.array(
        [
            _minmax(profile.batna, stats.batna_min, stats.batna_max),
            _minmax(profile.budget, stats.budget_min, stats.budget_max),
            float(profile.role),
            *pri,
        ]
    )


def derive_trust(svo_a: str, svo_b: str) -> tuple[float, float]:
    """Outgoing trust of each agent, keyed on the source agent's SVO."""
    for s in (svo_a, svo_b):
        if s not in TRUST_BY_SVO:
            raise ContractError(f"unknown SVO category {s!r}")
    return TRUST_BY_SVO[svo_a], TRUST_BY_SVO[svo_b]


def build_graph(instance: NegotiationInstance, stats: FeatureStats) -> StrategicGraph:
    a, b = instance.agents
    t_ab, t_ba = derive_trust(a.svo, b.svo)
    feats = np.stack([build_node_features(a, stats), build_node_features(b, stats)])
    trust = np.array([[SELF_TRUST, t_ab], [t_ba, SELF_TRUST]])
    return StrategicGraph(feats, trust)


# --------------------------------------------------------------------------
# loading


def _normalize_svo(raw) -> str:
    if raw is None:
        return "unknown"
    s = str(raw).strip().lower()
    if s in ("proself",):
        return "individualistic"
    return s if s in SVO_CATEGORIES else "unknown"


def _issue_order(keys: list[str]) -> list[str]:
    lowered = [k.lower() for k in keys]
    for order in ISSUE_ORDERS:
        if sorted(lowered) == sorted(order):
            return [keys[lowered.index(k)] for k in order]
    return keys


def _parse_priorities(raw) -> tuple[tuple[float, float, float], bool]:
    """Returns (weights, were_ordinal)."""
    if not isinstance(raw, dict) or len(raw) != 3:
        raise SchemaError("priorities must be an object with exactly three issues")
    keys = _issue_order(list(raw))
    out = []
    ordinal = False
    for k in keys:
        v = raw[k]
        if isinstance(v, str):
            if v.strip().lower() not in PRIORITY_LEVELS:
                raise SchemaError(f"unknown priority level {v!r}")
            out.append(PRIORITY_LEVELS[v.strip().lower()])
            ordinal = True
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(float(v))
        else:
            raise SchemaError(f"bad priority value {v!r}")
    return (out[0], out[1], out[2]), ordinal


def _role_flag(raw, role_index: dict[str, int]) -> int:
    if raw is None:
        return 0
    if isinstance(raw, bool):
        return int(raw)
    if isinstance(raw, (int, float)):
        if raw not in (0, 1):
            raise SchemaError(f"numeric role must be 0 or 1, got {raw}")
        return int(raw)
    return role_index.get(str(raw).strip().lower(), 0)


def _read_array(path) -> list:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise SchemaError(f"{path}: top level must be a JSON array")
    return records


def _role_index(records: list) -> dict[str, int]:
    names = set()
    for rec in records:
        agents = rec.get("agents") if isinstance(rec, dict) else None
        if not isinstance(agents, dict):
            continue
        for spec in agents.values():
            r = spec.get("role") if isinstance(spec, dict) else None
            if isinstance(r, str):
                names.add(r.strip().lower())
    return {name: min(i, 1) for i, name in enumerate(sorted(names))}


def _parse_turns(rec) -> tuple[Turn, ...]:
    turns = rec.get("turns")
    if not isinstance(turns, list) or not turns:
        raise SchemaError("turns must be a non-empty array")
    out = []
    for t in turns:
        if not isinstance(t, dict) or t.get("speaker") not in ("A", "B"):
            raise SchemaError("each turn needs speaker 'A' or 'B'")
        if not isinstance(t.get("text", ""), str):
            raise SchemaError("turn text must be a string")
        out.append(Turn(t["speaker"], tokenize(t.get("text", ""))))
    return tuple(out)


def _parse_utilities(rec, outcome: int, batnas: tuple[float, float]) -> tuple[float, float]:
    utils = rec.get("utilities")
    if utils is None:
        if outcome == 1:
            raise SchemaError("deal record has no utilities")
        return batnas
    if not isinstance(utils, dict) or "A" not in utils or "B" not in utils:
        raise SchemaError("utilities must be {'A': num, 'B': num}")
    return float(utils["A"]), float(utils["B"])


def _load(path, parse_one, strict: bool) -> list[NegotiationInstance]:
    records = _read_array(path)
    roles = _role_index(records)
    out, skipped = [], 0
    for i, rec in enumerate(records):
        try:
            if not isinstance(rec, dict):
                raise SchemaError("record is not an object")
            out.append(parse_one(rec, roles))
        except (SchemaError, ContractError, KeyError, TypeError, ValueError) as exc:
            if strict:
                raise SchemaError(f"{path}: record {i}: {exc}") from exc
            skipped += 1
    if skipped:
        log.warning("%s: skipped %d malformed record(s)", path, skipped)
    return out


def _parse_casino(rec: dict, roles: dict[str, int]) -> NegotiationInstance:
    turns = _parse_turns(rec)
    agents = rec["agents"]
    profiles = []
    for name in ("A", "B"):
        spec = agents[name]
        pri, _ = _parse_priorities(spec.get("priorities"))
        budget = spec.get("budget")
        profiles.append(
            AgentProfile(
                batna=float(spec["batna"]),
                budget=float(budget) if budget is not None else float(sum(pri)),
                role=_role_flag(spec.get("role"), roles),
                svo=_normalize_svo(spec.get("svo")),
                priorities=pri,
            )
        )
    outcome = rec.get("outcome")
    if outcome not in (0, 1):
        raise SchemaError("outcome must be 0 or 1")
    utils = _parse_utilities(rec, outcome, (profiles[0].batna, profiles[1].batna))
    return NegotiationInstance(str(rec["id"]), turns, (profiles[0], profiles[1]), outcome, utils)


def load_casino_like(path, strict: bool = False) -> list[NegotiationInstance]:
    """Load a CaSiNo-shaped corpus (ordinal High/Medium/Low priorities)."""
    return _load(path, _parse_casino, strict)


def _parse_dnd(rec: dict, roles: dict[str, int]) -> NegotiationInstance:
    turns = _parse_turns(rec)
    agents = rec["agents"]
    alloc = rec.get("allocation")
    no_agreement = bool(rec.get("no_agreement", False))
    if "outcome" in rec and rec["outcome"] is not None:
        outcome = rec["outcome"]
        if outcome not in (0, 1):
            raise SchemaError("outcome must be 0 or 1")
    else:
        outcome = int(alloc is not None and not no_agreement)
    counts = rec.get("counts")
    profiles, valuations = [], []
    for name in ("A", "B"):
        spec = agents[name]
        raw = spec.get("priorities") or spec.get("valuations")
        pri, _ = _parse_priorities(raw)
        keys = _issue_order(list(raw))
        valuations.append(dict(zip(keys, pri)))
        if spec.get("budget") is not None:
            budget = float(spec["budget"])
        else:
            budget = float(sum(v * float((counts or {}).get(k, 1)) for k, v in zip(keys, pri)))
        batna = spec.get("batna")
        profiles.append(
            AgentProfile(
                batna=float(batna) if batna is not None else 0.0,
                budget=budget,
                role=_role_flag(spec.get("role"), roles),
                svo=_normalize_svo(spec.get("svo")),
                priorities=pri,
            )
        )
    if rec.get("utilities") is not None:
        utils = _parse_utilities(rec, outcome, (profiles[0].batna, profiles[1].batna))
    elif outcome == 1 and alloc is not None:
        utils = tuple(
            float(sum(valuations[i][k] * float(n) for k, n in alloc[name].items()))
            for i, name in enumerate(("A", "B"))
        )
    elif outcome == 1:
        raise SchemaError("deal record has neither utilities nor an allocation")
    else:
        utils = (profiles[0].batna, profiles[1].batna)
    return NegotiationInstance(str(rec["id"]), turns, (profiles[0], profiles[1]), outcome, utils)


def load_dealornodeal_like(path, strict: bool = False) -> list[NegotiationInstance]:
    """Load a DealOrNoDeal-shaped corpus.

    Item valuations become priority weights as-is. Missing BATNA is 0,
    missing budget is the agent's total self-valuation (``counts`` per item,
    default 1), missing SVO is unknown. Without an ``outcome`` field a record
    is a deal iff it carries an ``allocation`` and no ``no_agreement`` flag;
    deal utilities default to sum(valuation * items obtained).
    """
    return _load(path, _parse_dnd, strict)


LOADERS = {"casino": load_casino_like, "dnd": load_dealornodeal_like}


def load_corpus(path, fmt: str = "casino", strict: bool = False) -> list[NegotiationInstance]:
    """Dispatch on ``fmt``; the native dump format is read by the CaSiNo loader."""
    if fmt not in LOADERS:
        raise SchemaError(f"unknown corpus format {fmt!r}; expected one of {sorted(LOADERS)}")
    return LOADERS[fmt](path, strict=strict)


def deals_without_utilities(path, fmt: str = "casino") -> list[str]:
    """Session ids of records labelled as deals that carry no utilities
    (and, for DealOrNoDeal records, no allocation to derive them from)."""
    missing = []
    for i, rec in enumerate(_read_array(path)):
        if not isinstance(rec, dict) or rec.get("outcome") != 1 or rec.get("utilities") is not None:
            continue
        if fmt == "dnd" and rec.get("allocation") is not None:
            continue
        missing.append(str(rec.get("id", f"#{i}")))
    return missing


def instance_to_record(inst: NegotiationInstance) -> dict:
    agents = {}
    for name, p in zip(("A", "B"), inst.agents):
        agents[name] = {
            "batna": p.batna,
            "budget": p.budget,
            "role": p.role,
            "svo": p.svo,
            "priorities": {f"issue{i + 1}": w for i, w in enumerate(p.priorities)},
        }
    return {
        "id": inst.session_id,
        "turns": [{"speaker": t.speaker, "text": " ".join(t.tokens)} for t in inst.turns],
        "agents": agents,
        "outcome": inst.outcome,
        "utilities": {"A": inst.utilities[0], "B": inst.utilities[1]},
    }


def dump_corpus(instances: Sequence[NegotiationInstance], path) -> None:
    Path(path).write_text(json.dumps([instance_to_record(i) for i in instances], indent=1))


# --------------------------------------------------------------------------
# preprocessing


def oversample_minority(
    train: Sequence[NegotiationInstance], seed: int
) -> list[NegotiationInstance]:
    """Resample the minority class with replacement up to an exact 1:1 ratio.
    All originals are kept; the extra copies are appended."""
    pos = [x for x in train if x.outcome == 1]
    neg = [x for x in train if x.outcome == 0]
    if not pos or not neg:
        missing = "deal (y=1)" if not pos else "no-deal (y=0)"
        raise ContractError(f"cannot oversample: training set has no {missing} instances")
    minority = neg if len(neg) < len(pos) else pos
    deficit = abs(len(pos) - len(neg))
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(minority), size=deficit)
    return list(train) + [minority[i] for i in picks]


def stratified_split(
    instances: Sequence[NegotiationInstance],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> CorpusSplit:
    """Per-class shuffled split, so validation and test keep the corpus label mix."""
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ContractError(f"split fractions must be non-negative and sum to 1: {fractions}")
    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for label in (0, 1):
        group = [x for x in instances if x.outcome == label]
        order = rng.permutation(len(group))
        n_train = int(round(fractions[0] * len(group)))
        n_val = int(round(fractions[1] * len(group)))
        for rank, idx in enumerate(order):
            which = 0 if rank < n_train else 1 if rank < n_train + n_val else 2
            parts[which].append(group[idx])
    # keep a stable, label-interleaved order inside each part
    for p in parts:
        p.sort(key=lambda x: x.session_id)
    return CorpusSplit(parts[0], parts[1], parts[2], tuple(fractions), seed)


# --------------------------------------------------------------------------
# synthetic corpus


FILLER = tuple(
    (
    "i need some more food water firewood for my trip could you give me "
    "what about we split how many would like to have think fair that "
    "works maybe one two three extra camping kids cold night thirsty hungry"
    ).split()
)
ACCEPT_MARKERS = ("accept", "agreed", "deal")
REJECT_MARKERS = ("reject", "walkaway", "nodeal")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 500
    disparity: float = 6.0
    text_strength: float = 1.0
    graph_strength: float = 0.0
    seed: int = 0
    deal_rate: float = 0.65
    pie_range: tuple[float, float] = (20.0, 40.0)
    # probability that the sign of the utility gap is a coin flip rather
    # than following the role flags
    gap_sign_noise: float = 0.5
    min_turns: int = 4
    max_turns: int = 12
    vocabulary: tuple[str, ...] = FILLER + ACCEPT_MARKERS + REJECT_MARKERS


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    instances: list[NegotiationInstance]
    # per-session ground truth of the generative rule
    truth: dict[str, dict]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Generate a corpus whose labels follow a known rule.

    Each dialogue first draws its outcome. With probability
    ``text_strength`` the closing turn carries a marker matching the outcome
    (otherwise a random marker). BATNAs are drawn from 10-45% of the pie,
    except that with probability ``graph_strength`` a failed negotiation
    draws them from 55-90%, so ``batna_A + batna_B > pie``. Deal utilities split the
    pie with a gap of mean ``disparity``: 1.5x when both agents rank the same
    issue first (probability 1/3), 0.75x otherwise. No-deal utilities are
    the BATNAs.
    """
    for name in ("text_strength", "graph_strength", "deal_rate", "gap_sign_noise"):
        v = getattr(spec, name)
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"{name} must be in [0, 1], got {v}")
    if spec.disparity < 0 or 1.5 * spec.disparity > spec.pie_range[0]:
        raise ContractError(
            f"disparity {spec.disparity} cannot be realized within a pie of {spec.pie_range[0]}"
        )
    if spec.n < 1 or not 1 <= spec.min_turns <= spec.max_turns:
        raise ContractError("invalid corpus size or turn range")
    vocab = [w for w in spec.vocabulary if w not in ACCEPT_MARKERS + REJECT_MARKERS]
    rng = np.random.default_rng(spec.seed)
    instances, truth = [], {}
    for i in range(spec.n):
        y = int(rng.random() < spec.deal_rate)
        pie = float(rng.uniform(*spec.pie_range))

        text_informative = bool(rng.random() < spec.text_strength)
        positive_marker = bool(y) if text_informative else bool(rng.random() < 0.5)
        k = int(rng.integers(spec.min_turns, spec.max_turns + 1))
        turns = []
        for j in range(k):
            # closing turns are short ("deal, thanks"), the rest 3-8 tokens
            n_tok = int(rng.integers(0, 4)) if j == k - 1 else int(rng.integers(3, 9))
            toks = [vocab[t] for t in rng.integers(0, len(vocab), size=n_tok)]
            if j == k - 1:
                pool = ACCEPT_MARKERS if positive_marker else REJECT_MARKERS
                toks.insert(int(rng.integers(0, n_tok + 1)), pool[int(rng.integers(0, len(pool)))])
            turns.append(Turn("A" if j % 2 == 0 else "B", tuple(toks)))

        graph_informative = bool(rng.random() < spec.graph_strength)
        # walk-away values normally sit below a deal share; only an
        # informative no-deal draws the incompatible (high) range
        lo, hi = (0.55, 0.9) if graph_informative and not y else (0.1, 0.45)
        batnas = pie * rng.uniform(lo, hi, size=2)
        compatible = bool(batnas.sum() <= pie)

        role_a = int(rng.integers(0, 2))
        pri = [tuple(float(x) for x in rng.permutation([3.0, 2.0, 1.0])) for _ in range(2)]
        svos = [SVO_CATEGORIES[int(rng.integers(0, 3))] for _ in range(2)]
        profiles = tuple(
            AgentProfile(float(batnas[a]), pie, role_a if a == 0 else 1 - role_a, svos[a], pri[a])
            for a in range(2)
        )

        conflict = int(np.argmax(pri[0]) == np.argmax(pri[1]))
        gap = spec.disparity * (1.5 if conflict else 0.75)
        if rng.random() < spec.gap_sign_noise:
            sign = 1.0 if rng.random() < 0.5 else -1.0
        else:
            sign = 1.0 if role_a == 1 else -1.0
        if y:
            utils = (pie / 2 + sign * gap / 2, pie / 2 - sign * gap / 2)
        else:
            utils = (float(batnas[0]), float(batnas[1]))

        sid = f"syn-{spec.seed}-{i:05d}"
        instances.append(NegotiationInstance(sid, tuple(turns), profiles, y, utils))
        truth[sid] = {
            "outcome": y,
            "text_informative": text_informative,
            "positive_marker": positive_marker,
            "graph_informative": graph_informative,
            "batna_compatible": compatible,
            "gap": gap if y else abs(float(batnas[0] - batnas[1])),
            "sign": sign,
        }
    return SyntheticCorpus(spec, instances, truth)


def marker_rule(instance: NegotiationInstance) -> int:
    """Token-only decision rule: deal iff the last accept/reject marker is an accept."""
    for turn in reversed(instance.turns):
        for tok in reversed(turn.tokens):
            if tok in ACCEPT_MARKERS:
                return 1
            if tok in REJECT_MARKERS:
                return 0
    return 0

