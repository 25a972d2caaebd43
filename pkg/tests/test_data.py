import json
import logging

import numpy as np
import pytest

from stgfn.data import (
    AgentProfile,
    ContractError,
    FeatureStats,
    NegotiationInstance,
    SchemaError,
    SyntheticSpec,
    Turn,
    build_graph,
    build_node_features,
    deals_without_utilities,
    derive_trust,
    dump_corpus,
    generate_synthetic,
    load_casino_like,
    load_corpus,
    load_dealornodeal_like,
    marker_rule,
    oversample_minority,
    stratified_split,
    tokenize,
)


def _write(tmp_path, records, name="corpus.json"):
    path = tmp_path / name
    path.write_text(json.dumps(records))
    return path


def _casino_record(sid="c1", svo_a="prosocial", utilities=None, outcome=1):
    return {
        "id": sid,
        "turns": [{"speaker": "A", "text": "Hello! I need FOOD."}, {"speaker": "B", "text": "ok, deal"}],
        "agents": {
            "A": {"batna": 5, "budget": 10, "role": "buyer", "svo": svo_a,
                  "priorities": {"water": "Medium", "firewood": "Low", "food": "High"}},
            "B": {"batna": 3, "budget": None, "role": "seller", "svo": None,
                  "priorities": {"food": "Low", "water": "High", "firewood": "Medium"}},
        },
        "outcome": outcome,
        "utilities": utilities if utilities is not None else {"A": 18, "B": 14},
    }


def test_tokenizer_lowercases_and_splits():
    assert tokenize("Hello, WORLD!! 42x") == ("hello", "world", "42x")
    assert tokenize("  ") == ()


def test_casino_priorities_follow_food_water_firewood(tmp_path):
    [inst] = load_casino_like(_write(tmp_path, [_casino_record()]))
    assert inst.agents[0].priorities == (3.0, 2.0, 1.0)
    assert inst.agents[1].priorities == (1.0, 3.0, 2.0)
    assert inst.turns[0].tokens == ("hello", "i", "need", "food")
    assert inst.utilities == (18.0, 14.0)
    assert {inst.agents[0].role, inst.agents[1].role} == {0, 1}


def test_casino_missing_svo_is_unknown_with_default_trust(tmp_path):
    [inst] = load_casino_like(_write(tmp_path, [_casino_record()]))
    assert inst.agents[1].svo == "unknown"
    graph = build_graph(inst, FeatureStats.from_instances([inst]))
    assert graph.trust[1, 0] == 0.5
    assert graph.trust[0, 1] == 0.8


def test_casino_missing_budget_falls_back_to_priority_total(tmp_path):
    [inst] = load_casino_like(_write(tmp_path, [_casino_record()]))
    assert inst.agents[1].budget == 6.0


def test_empty_array_gives_empty_corpus(tmp_path):
    assert load_casino_like(_write(tmp_path, [])) == []


def test_malformed_records_are_skipped_with_a_warning(tmp_path, caplog):
    bad = _casino_record("bad")
    bad["turns"] = []
    path = _write(tmp_path, [_casino_record(), bad, "not an object"])
    with caplog.at_level(logging.WARNING):
        out = load_casino_like(path)
    assert [i.session_id for i in out] == ["c1"]
    assert "skipped 2" in caplog.text


def test_strict_mode_names_the_record_index(tmp_path):
    bad = _casino_record("bad")
    bad["agents"]["A"]["priorities"]["food"] = "Urgent"
    with pytest.raises(SchemaError, match="record 1"):
        load_casino_like(_write(tmp_path, [_casino_record(), bad]), strict=True)


def test_unreadable_file_is_an_io_error(tmp_path):
    with pytest.raises(OSError):
        load_casino_like(tmp_path / "missing.json")


def test_no_deal_without_utilities_uses_batnas(tmp_path):
    rec = _casino_record(outcome=0)
    rec["utilities"] = None
    [inst] = load_casino_like(_write(tmp_path, [rec]))
    assert inst.utilities == (5.0, 3.0)


def test_deal_without_utilities_is_reported(tmp_path):
    rec = _casino_record("d9")
    rec["utilities"] = None
    path = _write(tmp_path, [_casino_record(), rec])
    assert deals_without_utilities(path) == ["d9"]
    assert [i.session_id for i in load_casino_like(path)] == ["c1"]


def _dnd_record(**extra):
    rec = {
        "id": "d1",
        "turns": [{"speaker": "A", "text": "i want the hats"}, {"speaker": "B", "text": "fine"}],
        "agents": {
            "A": {"valuations": {"books": 1, "hats": 4, "balls": 1}},
            "B": {"valuations": {"balls": 2, "books": 2, "hats": 2}},
        },
        "counts": {"books": 1, "hats": 2, "balls": 3},
    }
    rec.update(extra)
    return rec


def test_dnd_valuations_become_priority_weights(tmp_path):
    [inst] = load_dealornodeal_like(_write(tmp_path, [_dnd_record()]))
    assert inst.agents[0].priorities == (1.0, 4.0, 1.0)
    assert inst.agents[1].priorities == (2.0, 2.0, 2.0)


def test_dnd_without_deal_marker_is_a_no_deal(tmp_path):
    [inst] = load_dealornodeal_like(_write(tmp_path, [_dnd_record()]))
    assert inst.outcome == 0
    assert inst.utilities == (0.0, 0.0)


def test_dnd_allocation_utilities_hand_computed(tmp_path):
    # A gets 2 hats + 1 ball: 2*4 + 1*1 = 9; B gets 1 book + 2 balls: 1*2 + 2*2 = 6
    rec = _dnd_record(allocation={"A": {"hats": 2, "balls": 1}, "B": {"books": 1, "balls": 2}})
    [inst] = load_dealornodeal_like(_write(tmp_path, [rec]))
    assert inst.outcome == 1
    assert inst.utilities == (9.0, 6.0)


def test_dnd_missing_metadata_defaults(tmp_path):
    [inst] = load_dealornodeal_like(_write(tmp_path, [_dnd_record()]))
    a = inst.agents[0]
    assert (a.batna, a.svo) == (0.0, "unknown")
    assert a.budget == 1 * 1 + 4 * 2 + 1 * 3
    assert derive_trust(a.svo, inst.agents[1].svo) == (0.5, 0.5)


def test_load_corpus_dispatch(tmp_path):
    path = _write(tmp_path, [_dnd_record()])
    assert load_corpus(path, "dnd")[0].session_id == "d1"
    with pytest.raises(SchemaError):
        load_corpus(path, "xml")


# ---------------------------------------------------------------- features and trust


def _profile(batna=5.0, budget=10.0, role=0, svo="prosocial", pri=(3.0, 2.0, 1.0)):
    return AgentProfile(batna, budget, role, svo, pri)


def test_node_features_layout_and_normalization():
    stats = FeatureStats(0.0, 5.0, 10.0, 10.0)
    f = build_node_features(_profile(role=1), stats)
    np.testing.assert_allclose(f, [1.0, 0.5, 1.0, 0.5, 1 / 3, 1 / 6], atol=1e-15)


def test_batna_normalization_preserves_order(rng):
    batnas = rng.uniform(-5, 20, size=30)
    stats = FeatureStats(batnas.min(), batnas.max(), 0.0, 1.0)
    normed = [build_node_features(_profile(batna=b), stats)[0] for b in batnas]
    assert list(np.argsort(normed)) == list(np.argsort(batnas))


def test_non_finite_profile_is_rejected():
    with pytest.raises(ContractError):
        _profile(batna=float("nan"))


@pytest.mark.parametrize(
    "svo_a, svo_b, expected",
    [
        ("prosocial", "prosocial", (0.8, 0.8)),
        ("competitive", "prosocial", (0.2, 0.8)),
        ("unknown", "individualistic", (0.5, 0.4)),
    ],
)
def test_trust_depends_on_source_agent(svo_a, svo_b, expected):
    assert derive_trust(svo_a, svo_b) == expected


def test_graph_has_unit_self_loops():
    inst = NegotiationInstance(
        "x", (Turn("A", ("hi",)),), (_profile(), _profile(svo="competitive")), 0, (5.0, 5.0)
    )
    graph = build_graph(inst, FeatureStats.from_instances([inst]))
    np.testing.assert_array_equal(np.diag(graph.trust), [1.0, 1.0])
    assert graph.features.shape == (2, 6)


# ---------------------------------------------------------------- oversampling and splits


def _labelled(n_pos, n_neg):
    prof = (_profile(), _profile())
    mk = lambda i, y: NegotiationInstance(f"s{i}", (Turn("A", ("x",)),), prof, y, (1.0, 1.0))  # noqa: E731
    return [mk(i, 1) for i in range(n_pos)] + [mk(n_pos + i, 0) for i in range(n_neg)]


def test_oversampling_to_exact_balance():
    data = _labelled(80, 20)
    out = oversample_minority(data, seed=0)
    assert sum(x.outcome for x in out) == 80
    assert sum(1 - x.outcome for x in out) == 80
    assert out[:100] == data


def test_balanced_input_is_unchanged():
    data = _labelled(10, 10)
    assert oversample_minority(data, seed=0) == data


def test_oversampling_is_seeded():
    data = _labelled(30, 7)
    ids = lambda xs: [x.session_id for x in xs]  # noqa: E731
    assert ids(oversample_minority(data, 5)) == ids(oversample_minority(data, 5))
    assert ids(oversample_minority(data, 5)) != ids(oversample_minority(data, 6))


def test_single_class_cannot_be_oversampled():
    with pytest.raises(ContractError, match="no-deal"):
        oversample_minority(_labelled(5, 0), seed=0)


def test_split_is_disjoint_and_keeps_label_mix():
    data = _labelled(140, 60)
    split = stratified_split(data, (0.7, 0.15, 0.15), seed=0)
    ids = [set(x.session_id for x in part) for part in (split.train, split.validation, split.test)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert sum(map(len, ids)) == 200
    for part in (split.validation, split.test):
        assert sum(x.outcome for x in part) / len(part) == pytest.approx(0.7, abs=0.02)


def test_oversampling_leaves_evaluation_splits_alone(small_split):
    before = list(small_split.test), list(small_split.validation)
    oversample_minority(small_split.train, seed=1)
    assert (small_split.test, small_split.validation) == before


# ---------------------------------------------------------------- synthetic corpus


def test_round_trip_through_json(tmp_path):
    corpus = generate_synthetic(SyntheticSpec(n=40, seed=2)).instances
    path = tmp_path / "syn.json"
    dump_corpus(corpus, path)
    assert load_casino_like(path, strict=True) == corpus


def _deal_gaps(spec):
    return np.array([i.gap for i in generate_synthetic(spec).instances if i.outcome == 1])


def test_zero_disparity_has_zero_mean_gap():
    assert abs(_deal_gaps(SyntheticSpec(n=500, disparity=0.0, seed=0)).mean()) <= 0.1


def test_disparity_six_gives_mean_gap_near_six():
    assert _deal_gaps(SyntheticSpec(n=500, disparity=6.0, seed=0)).mean() == pytest.approx(6.0, abs=0.3)


def test_deal_rate_is_near_target():
    insts = generate_synthetic(SyntheticSpec(n=500, seed=0, deal_rate=0.65)).instances
    assert np.mean([i.outcome for i in insts]) == pytest.approx(0.65, abs=0.05)


def test_text_only_corpus_is_classified_by_markers():
    insts = generate_synthetic(SyntheticSpec(n=500, text_strength=1.0, graph_strength=0.0, seed=0)).instances
    assert all(marker_rule(i) == i.outcome for i in insts)


def test_graph_signal_marks_incompatible_batnas():
    corpus = generate_synthetic(SyntheticSpec(n=300, text_strength=0.0, graph_strength=1.0, seed=1))
    for inst in corpus.instances:
        compatible = sum(p.batna for p in inst.agents) <= inst.agents[0].budget
        assert compatible == bool(inst.outcome)
        assert corpus.truth[inst.session_id]["batna_compatible"] == compatible


def test_generation_is_seeded():
    a = generate_synthetic(SyntheticSpec(n=20, seed=4)).instances
    b = generate_synthetic(SyntheticSpec(n=20, seed=4)).instances
    assert a == b


def test_impossible_disparity_is_rejected():
    with pytest.raises(ContractError):
        generate_synthetic(SyntheticSpec(disparity=30.0))
    with pytest.raises(ContractError):
        generate_synthetic(SyntheticSpec(text_strength=1.5))
