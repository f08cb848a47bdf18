import subprocess
import sys

import pytest

from slbag.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    return code, out


def test_validate_sl1b_passes(capsys):
    code, out = run_cli(capsys, "validate", "--algorithm", "sl-1b", "--n", "2",
                        "--workload", "p0:I1,I2;p1:T;p2:T", "--spec", "bbag", "--max-loop-iters", "2")
    assert code == 0
    assert out[-1].startswith("VERDICT pass traces=")


def test_explore_small_tree(capsys):
    code, out = run_cli(capsys, "explore", "--algorithm", "unbounded-sl", "--workload", "p0:I1;p1:T")
    assert code == 0 and out[-1].startswith("VERDICT pass")


def test_counterexample_then_replay(capsys, tmp_path):
    path = tmp_path / "w.trace"
    code, out = run_cli(capsys, "counterexamples", "--which", "lq", "--out", str(path))
    assert code == 1 and out[-1].startswith("VERDICT fail")
    assert path.exists()

    code, out = run_cli(capsys, "replay", str(path))
    assert code == 1
    assert any("violation confirmed" in line for line in out)

    lines = path.read_text().splitlines()
    # flip the response of the first event
    head, rest = lines[1].rsplit(" ", 1)
    lines[1] = head + " " + ("7" if rest != "7" else "8")
    path.write_text("\n".join(lines) + "\n")
    code, out = run_cli(capsys, "replay", str(path))
    assert code == 2 and out[-1] == "VERDICT fail traces=0 nodes=0"


def test_counterexample_alias_selects_same_fixture(capsys, tmp_path):
    code, out = run_cli(capsys, "counterexamples", "--which", "wf", "--out", str(tmp_path / "x"))
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["explore", "--algorithm", "treiber"],
    ["explore", "--algorithm", "sl-1b", "--bogus"],
    ["validate", "--algorithm", "wf-1b", "--workload", "p0:T"],
    ["replay", "/nonexistent/file.trace"],
    ["stress", "--algorithm", "sl-bb", "--executors", "1"],
    [],
])
def test_usage_errors_exit_2(capsys, argv):
    code, out = run_cli(capsys, *argv)
    assert code == 2
    assert out[-1] == "VERDICT fail traces=0 nodes=0"


def test_env_ceiling_gives_inconclusive(capsys, monkeypatch):
    monkeypatch.setenv("SLBAG_NODE_CEILING", "5")
    code, out = run_cli(capsys, "explore", "--algorithm", "unbounded-sl", "--workload", "p0:I1,I2;p1:T,T")
    assert code == 3 and out[-1].startswith("VERDICT inconclusive")


def test_flag_ceiling_beats_env(capsys, monkeypatch):
    monkeypatch.setenv("SLBAG_NODE_CEILING", "5")
    code, _ = run_cli(capsys, "explore", "--algorithm", "unbounded-sl", "--workload", "p0:I1;p1:T",
                      "--ceiling", "0")
    assert code == 0


def test_replay_plain_trace(capsys, tmp_path):
    from slbag.sim import dump_trace, parse_workload, run

    t = run(parse_workload("p0:I1;p1:T", "unbounded-sl", 2), [0, 0, 1, 1, 1, 1, 0])
    path = tmp_path / "t.trace"
    path.write_text(dump_trace(t))
    code, out = run_cli(capsys, "replay", str(path))
    assert code == 0 and "identical" in out[0]


def test_stress_small(capsys):
    code, out = run_cli(capsys, "stress", "--algorithm", "unbounded-sl", "--ops", "400", "--iterations", "2")
    assert code == 0 and out[-1] == "VERDICT pass traces=1 nodes=400"


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "slbag.cli", "explore", "--algorithm", "li-queue",
                           "--workload", "p0:I1;p1:T"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().splitlines()[-1].startswith("VERDICT pass")
