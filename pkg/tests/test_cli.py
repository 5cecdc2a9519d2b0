import hashlib
import subprocess
import sys

import pytest

from conftest import ROOT
from leaksafe.cli import EXIT_FAILURE, EXIT_LINT, EXIT_OK, EXIT_USAGE, main

PIPELINES = ROOT / "pipelines"
SCENARIOS = ROOT / "scenarios"


def digest(*paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()


def test_lint_exit_codes(capsys):
    assert main(["lint", str(PIPELINES / "model_a.dsl")]) == EXIT_LINT
    out = capsys.readouterr().out
    assert ":4:3: error P001 " in out
    assert main(["lint", str(PIPELINES / "clean.dsl")]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert main(["lint", str(PIPELINES / "accuracy_only.dsl")]) == EXIT_OK


def test_lint_with_summary(capsys):
    code = main(["lint", str(PIPELINES / "model_i.dsl"),
                 "--data-summary", str(PIPELINES / "model_i.summary.json")])
    assert code == EXIT_OK and "info P008" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["lint"], ["run", "x.dsl"], ["lint", "x", "--bogus"],
                                  ["run", "x.dsl", "--out", "o", "--reps", "-1"], ["gen", "featsel", "--out", "x"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK


def test_runtime_failures(tmp_path, capsys):
    assert main(["lint", str(tmp_path / "missing.dsl")]) == EXIT_FAILURE
    bad = tmp_path / "bad.dsl"
    bad.write_text('pipeline "x" {\n  shuffle\n}\n')
    assert main(["lint", str(bad)]) == EXIT_FAILURE
    assert "bad.dsl:2:3: unknown keyword 'shuffle'" in capsys.readouterr().err
    assert main(["gen", "patient", "--groups", "7", "--seed", "0", "--out", str(tmp_path / "d.csv")]) == EXIT_FAILURE


def test_run_twice_hash_identical_even_in_parallel(tmp_path, capsys):
    scenario = str(SCENARIOS / "oversample.dsl")
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["run", scenario, "--reps", "4", "--seed", "7", "--out", str(tmp_path / name),
                     "--workers", workers]) == EXIT_OK
    outs = [digest(tmp_path / n / "oversample.txt", tmp_path / n / "oversample.csv") for n in "abc"]
    assert len(set(outs)) == 1
    text = (tmp_path / "a" / "oversample.txt").read_text()
    assert "Incorrect oversampling" in text and "ranksum statistic=" in text


def test_run_featsel_reports_both_arms(tmp_path, capsys):
    assert main(["run", str(SCENARIOS / "featsel.dsl"), "--reps", "3", "--seed", "7", "--out", str(tmp_path)]) == 0
    csv = (tmp_path / "featsel.csv").read_text().splitlines()
    assert len(csv) == 3 and "p_value=" in capsys.readouterr().out


def test_run_batch(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["run", str(SCENARIOS / "batch.dsl"), "--out", str(tmp_path / name)]) == EXIT_OK
    assert digest(tmp_path / "a" / "batch.csv") == digest(tmp_path / "b" / "batch.csv")
    assert "marker_top_fraction=1.000000" in (tmp_path / "a" / "batch.txt").read_text()


def test_gen_then_exec_then_lint(tmp_path, capsys):
    data = tmp_path / "data.csv"
    ext = tmp_path / "external.csv"
    summary = tmp_path / "s.json"
    argv = ["gen", "batch", "--n", "200", "--n-markers", "2", "--seed", "3", "--out", str(data),
            "--external-out", str(ext), "--summary-out", str(summary)]
    assert main(argv) == EXIT_OK
    first = digest(data, ext, summary)
    assert main(argv) == EXIT_OK and digest(data, ext, summary) == first

    spec = tmp_path / "p.dsl"
    spec.write_text((SCENARIOS / "batch.dsl").read_text().split("\n\n", 1)[1])
    capsys.readouterr()
    runs = []
    for _ in range(2):
        assert main(["exec", str(spec), "--data", str(data), "--seed", "5"]) == EXIT_OK
        runs.append(capsys.readouterr().out)
    assert runs[0] == runs[1]
    assert "test: accuracy=" in runs[0] and "external: accuracy=" in runs[0] and "audit: clean" in runs[0]
    assert main(["lint", str(spec), "--data-summary", str(summary)]) == EXIT_OK
    assert "P008" in capsys.readouterr().out


def test_exec_reports_leak(tmp_path, capsys):
    data = tmp_path / "hnscc.csv"
    assert main(["gen", "oversample", "--seed", "1", "--out", str(data)]) == EXIT_OK
    assert main(["exec", str(PIPELINES / "model_a.dsl"), "--data", str(data)]) == EXIT_OK
    assert "origin_overlap" in capsys.readouterr().out


def test_phantom_and_segment(tmp_path, capsys):
    vol, truth, mask = tmp_path / "v.bin", tmp_path / "t.bin", tmp_path / "m.bin"
    outs = []
    for _ in range(2):
        assert main(["phantom", "--seed", "1", "--out-volume", str(vol), "--out-truth", str(truth)]) == EXIT_OK
        assert main(["segment", "--volume", str(vol), "--truth", str(truth), "--out", str(mask), "--report"]) == 0
        outs.append((capsys.readouterr().out, digest(vol, truth, mask)))
    assert outs[0] == outs[1]
    fields = dict(line.split("=") for line in outs[0][0].split() if "=" in line)
    assert float(fields["dice"]) >= float(fields["iou"])
    assert int(fields["extra_voxels"]) > 0


def test_phantom_rescaled_dims(tmp_path, capsys):
    assert main(["phantom", "--dims", "32", "32", "24", "--seed", "0",
                 "--out-volume", str(tmp_path / "v"), "--out-truth", str(tmp_path / "t")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("dims=32x32x24 ")


def test_segment_bad_volume(tmp_path, capsys):
    (tmp_path / "v").write_bytes(b"junk")
    assert main(["segment", "--volume", str(tmp_path / "v"), "--out", str(tmp_path / "m")]) == EXIT_FAILURE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "leaksafe", "lint", str(PIPELINES / "model_a.dsl")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_LINT and "P001" in proc.stdout
