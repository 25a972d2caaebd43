import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from stgfn import cli, gradcheck
from stgfn import tensor as T
from stgfn.training import DivergenceError

TINY = ["--max-epochs", "1", "--seeds", "42", "--d-txt", "8", "--d-hidden", "8", "--batch-size", "16"]


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "syn.json"
    assert cli.main(["synth", "--out", str(corpus), "--n", "60", "--seed", "1", "--graph-strength", "0.5"]) == 0
    cfg = root / "cfg.yaml"
    cfg.write_text("lam: 0.2\nd_hidden: 16\n")
    out = root / "run"
    code = cli.main(["train", "--data", str(corpus), "--config", str(cfg), "--lambda", "0.7", "--out", str(out), *TINY])
    assert code == 0
    return root, corpus, cfg, out


def test_synth_writes_corpus_and_ground_truth(workspace):
    root, corpus, _, _ = workspace
    records = json.loads(corpus.read_text())
    truth = json.loads(corpus.with_suffix(".truth.json").read_text())
    assert len(records) == 60
    assert set(truth["truth"]) == {r["id"] for r in records}
    assert cli.main(["synth", "--out", str(corpus), "--n", "5"]) == 1


def test_train_writes_one_directory_per_arm(workspace):
    _, _, _, out = workspace
    for arm in ("baseline", "nofair", "fair"):
        run = out / arm / "seed42"
        assert {p.name for p in run.iterdir()} >= {"epochs.jsonl", "checkpoint.npz", "metrics.json"}
    assert (out / "fair" / "seed42" / "gates.json").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["fair"]["accuracy"]["std"] == 0.0
    assert "reduction_in_id_pct" in report
    assert "reduction in ID" in (out / "report.txt").read_text()


def test_flags_beat_config_file(workspace):
    _, _, _, out = workspace
    resolved = yaml.safe_load((out / "config.yaml").read_text())
    assert resolved["lam"] == 0.7  # flag
    assert resolved["d_hidden"] == 8  # flag beats the file's 16
    assert resolved["seeds"] == [42]


def test_train_refuses_non_empty_directory(workspace):
    _, corpus, _, out = workspace
    assert cli.main(["train", "--data", str(corpus), "--out", str(out), *TINY]) == 1


def test_output_root_from_environment(workspace, tmp_path, monkeypatch):
    _, corpus, _, _ = workspace
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    args = ["train", "--data", str(corpus), "--arms", "nofair", *TINY]
    assert cli.main(args) == 0
    assert (tmp_path / "root" / "train" / "nofair" / "seed42" / "checkpoint.npz").exists()


def test_unknown_arm_is_invalid(workspace, capsys):
    _, corpus, _, _ = workspace
    assert cli.main(["train", "--data", str(corpus), "--arms", "fair,magic", *TINY]) == 1
    assert "magic" in capsys.readouterr().err


def test_divergence_exits_with_two(workspace, tmp_path, monkeypatch):
    _, corpus, _, _ = workspace

    def boom(*args, **kwargs):
        raise DivergenceError("epoch 1, batch 3: non-finite loss")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["train", "--data", str(corpus), "--out", str(tmp_path / "x"), *TINY]) == 2


def test_eval_is_byte_identical(workspace, tmp_path, capsys):
    _, corpus, _, out = workspace
    ck = out / "fair" / "seed42" / "checkpoint.npz"
    assert cli.main(["eval", str(ck), "--data", str(corpus), "--out", str(tmp_path / "a.json")]) == 0
    first = capsys.readouterr().out
    assert cli.main(["eval", str(ck), "--data", str(corpus), "--out", str(tmp_path / "b.json")]) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    report = json.loads(first)
    assert report["n"] == 60 and "positives" in report


def test_eval_with_mismatched_config_is_incompatible(workspace, tmp_path, capsys):
    _, corpus, cfg, out = workspace
    ck = out / "nofair" / "seed42" / "checkpoint.npz"
    args = ["eval", str(ck), "--data", str(corpus), "--config", str(cfg), "--out", str(tmp_path / "r.json")]
    assert cli.main(args) == 3
    assert "mismatch" in capsys.readouterr().err
    # the resolved training config matches
    assert cli.main(args[:5] + [str(out / "config.yaml"), "--out", str(tmp_path / "ok.json")]) == 0


def test_eval_of_corrupt_checkpoint_is_incompatible(workspace, tmp_path):
    _, corpus, _, _ = workspace
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    assert cli.main(["eval", str(bad), "--data", str(corpus)]) == 3


def test_eval_lists_deals_without_utilities(workspace, tmp_path, capsys):
    _, corpus, _, out = workspace
    records = json.loads(corpus.read_text())
    deal_ids = [r["id"] for r in records if r["outcome"] == 1][:2]
    for r in records:
        if r["id"] in deal_ids:
            r["utilities"] = None
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(records))
    ck = out / "fair" / "seed42" / "checkpoint.npz"
    assert cli.main(["eval", str(ck), "--data", str(broken)]) == 1
    err = capsys.readouterr().err
    assert all(i in err for i in deal_ids)


def test_gates_summary(workspace, capsys):
    _, _, _, out = workspace
    assert cli.main(["gates", str(out / "fair" / "seed42" / "gates.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["linguistic"] + doc["mixed"] + doc["strategic"] == pytest.approx(1.0)


def test_fairness_curve_csv(capsys):
    assert cli.main(["plot-data", "fairness-curve", "--true-gap", "6", "--lo", "0", "--hi", "12", "--step", "1"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["predicted_gap", "fairness_loss"]
    body = [(float(x), float(y)) for x, y in rows[1:]]
    assert len(body) == 13
    assert min(body, key=lambda r: r[1]) == (6.0, 0.0)


def test_fairness_curve_with_mean_comparison(capsys):
    cli.main(["plot-data", "fairness-curve", "--mean-gap", "3"])
    rows = _rows(capsys.readouterr().out)
    assert rows[0][-1] == "mse_to_mean_gap"
    assert float(rows[1 + 3][2]) == 0.0


def _trace_file(tmp_path, traces):
    path = tmp_path / "gates.json"
    path.write_text(json.dumps([{"session_id": s, "values": v, "outcome": o} for s, v, o in traces]))
    return str(path)


def test_dominance_hist_of_flat_traces(tmp_path, capsys):
    path = _trace_file(tmp_path, [("a", [0.5, 0.5], 1), ("b", [0.5], 0)])
    assert cli.main(["plot-data", "dominance-hist", "--traces", path]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["bucket", "count", "fraction"]
    nonzero = [r[0] for r in rows[1:] if int(r[1])]
    assert nonzero == ["mixed"]


def test_gate_evolution_and_heatmap(tmp_path, capsys):
    path = _trace_file(tmp_path, [("a", [0.2, 0.8], 1), ("b", [0.4, 0.6, 0.7], 0)])
    cli.main(["plot-data", "gate-evolution", "--traces", path])
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["turn", "mean_z", "std_z", "n"]
    assert float(rows[1][1]) == pytest.approx(0.3) and float(rows[1][2]) == pytest.approx(0.1)
    assert rows[3][3] == "1"
    cli.main(["plot-data", "gate-heatmap", "--traces", path])
    heat = _rows(capsys.readouterr().out)
    assert heat[0] == ["session_id", "turn_1", "turn_2", "turn_3"]
    assert heat[1][0] == "a" and heat[1][3] == ""


def test_csv_output_is_stable(tmp_path):
    path = _trace_file(tmp_path, [("a", [0.3, 0.65], 1)])
    for name in ("one.csv", "two.csv"):
        assert cli.main(["plot-data", "gate-heatmap", "--traces", path, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
    assert cli.main(["plot-data", "gate-heatmap", "--traces", path, "--out", str(tmp_path / "one.csv")]) == 1


def test_gate_plots_need_traces():
    assert cli.main(["plot-data", "gate-evolution"]) == 1


def test_unknown_plot_kind_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["plot-data", "pie-chart"])
    assert exc.value.code == 1


def test_gradcheck_lists_every_op(capsys):
    assert cli.main(["gradcheck", "--seeds", "2", "--ops-only"]) == 0
    out = capsys.readouterr().out
    listed = {line.split()[0] for line in out.splitlines()[:-1]}
    assert listed == set(T.OPS)
    assert f"{len(T.OPS)}/{len(T.OPS)} passed" in out


def test_corrupted_backward_fails_only_that_op(capsys):
    with gradcheck.corrupted("relu"):
        assert cli.main(["gradcheck", "--seeds", "2", "--ops-only"]) == 1
    out = capsys.readouterr().out
    failed = [line.split()[0] for line in out.splitlines() if " FAIL " in line]
    assert failed == ["relu"]
    assert "failed: relu" in out


def test_corrupted_op_is_caught_by_model_check():
    with gradcheck.corrupted("lstm_cell"):
        assert not gradcheck.check_model(range(2)).passed
    assert gradcheck.check_model(range(2)).passed


def test_op_without_case_is_reported_as_failure(monkeypatch):
    monkeypatch.setitem(T.OPS, "mystery", T.OPS["relu"])
    [result] = gradcheck.check_ops(range(1), names=["mystery"])
    assert not result.passed and "no test case" in result.note


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "stgfn.cli", "plot-data", "fairness-curve", "--hi", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1:] == ["0.0,36.0", "1.0,25.0", "2.0,16.0"]
