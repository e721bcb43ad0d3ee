import json

import pytest

from odcsim.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_volume_table(capsys):
    code, out, _ = run(capsys, "volume", "--devices", "16", "--per-node", "8", "--shard-elems", "8", "--format", "json")
    assert code == 0
    rows = json.loads(out)
    coll = next(r for r in rows if r["scheme"] == "collective" and r["op"] == "param-gather")
    assert (coll["intra"], coll["inter"], coll["total"]) == ("105", "15", "120")
    assert any(r["sharding"] == "hybrid" and r["inter"] == "0" for r in rows)


def test_simulate_csv(capsys):
    code, out, _ = run(capsys, "simulate", "--format", "csv", "--minibatch-size", "2", "--seed", "1")
    assert code == 0
    assert out.splitlines()[0].startswith("strategy,scheme,minibatch_size")
    assert out.splitlines()[-1].split(",")[3] == "all"


def test_simulate_from_config_with_trace(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_samples": 64, "scheme": "collective"}))
    trace = tmp_path / "trace.json"
    out_file = tmp_path / "report.json"
    code, _, _ = run(capsys, "simulate", "--config", str(cfg), "--trace", str(trace), "-o", str(out_file))
    assert code == 0
    assert json.loads(out_file.read_text())[-1]["scheme"] == "collective"
    assert json.loads(trace.read_text())["traceEvents"]


def test_sweep_md(capsys):
    code, out, _ = run(capsys, "sweep", "--axis", "packing_ratio", "--values", "1,2", "--format", "md", "--jobs", "2")
    assert code == 0
    assert out.splitlines()[0].startswith("| axis | value |")
    assert len(out.splitlines()) == 4


def test_partition_dump(capsys):
    code, out, _ = run(capsys, "partition", "--strategy", "lb-mini", "--step", "0")
    assert code == 0
    (step,) = json.loads(out)
    assert step["mode"] == "variable-micro" and len(step["devices"]) == 8


def test_verify_primitives(capsys):
    code, out, _ = run(capsys, "verify-primitives", "--clients", "3", "--minibatches", "10", "--seed", "4")
    assert code == 0 and out.strip() == "passed 10 failed 0"


@pytest.mark.parametrize("argv", [
    ["simulate", "--strategy", "lb-mini", "--scheme", "collective"],
    ["simulate", "--packing-ratio", "0.5"],
    ["simulate", "--devices", "12", "--per-node", "8"],
    ["sweep", "--axis", "devices", "--values", "16,8"],
    ["partition", "--step", "9999"],
    ["simulate", "--config", "/nonexistent/cfg.json"],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and "config error" in err


def test_bad_lengths_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("5\nfive\n")
    code, _, err = run(capsys, "simulate", "--lengths-file", str(bad))
    assert code == 2 and "line 2" in err


def test_infeasible_exit_3(capsys, monkeypatch):
    from odcsim import cli
    from odcsim.errors import InfeasibleError

    def boom(cfg):
        raise InfeasibleError("sample 7 too long", sample_id=7)

    monkeypatch.setattr(cli, "run_experiment", boom)
    code, _, err = run(capsys, "simulate")
    assert code == 3 and "sample 7" in err


def test_invariant_exit_4(capsys, monkeypatch):
    from odcsim import cli

    monkeypatch.setattr(cli, "verify_equivalence", lambda *a, **k: {"passed": 1, "failed": 1, "failures": [0]})
    code, out, _ = run(capsys, "verify-primitives", "--minibatches", "2")
    assert code == 4 and "failed 1" in out


def test_log_level_env(capsys, monkeypatch):
    import logging

    monkeypatch.setenv("ODC_SIM_LOG", "bogus")
    root = logging.getLogger()
    saved = root.handlers[:]
    root.handlers.clear()
    try:
        code, _, _ = run(capsys, "volume")
        assert code == 0 and root.level == logging.WARNING
    finally:
        root.handlers[:] = saved
