import csv
import io
import json
import math

import pytest

from drpm.cli import main
from drpm.partition import AssignmentMatrix


def read_csv(path):
    with io.StringIO(path.read_text(encoding="utf-8")) as fh:
        return list(csv.reader(fh))


def write_params(tmp_path, omega=(1.0, 1.0), scores=(1.0, 1.0, 1.0), **extra):
    path = tmp_path / "params.json"
    obj = {"omega": list(omega), "scores": list(scores)}
    obj.update(extra)
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def write_target(tmp_path, partition, **extra):
    path = tmp_path / "target.json"
    obj = {"partition": partition}
    obj.update(extra)
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def read_json_line(capsys):
    return json.loads(capsys.readouterr().out)


# sample ---------------------------------------------------------------------


def test_sample_hard_writes_valid_partitions(tmp_path):
    params = write_params(tmp_path)
    out = tmp_path / "draws.csv"
    rc = main(["sample", "--params", params, "--num", "5", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == ["index", "partition"]
    assert len(rows) == 6
    for i, (idx, text) in enumerate(rows[1:]):
        assert int(idx) == i
        parsed = AssignmentMatrix.from_string(text)
        assert (parsed.n, parsed.K) == (3, 2)


def test_sample_reruns_and_prefixes_are_stable(tmp_path):
    params = write_params(tmp_path)
    a, b, c = (tmp_path / name for name in ("a.csv", "b.csv", "c.csv"))
    main(["sample", "--params", params, "--num", "5", "--seed", "3", "--out", str(a)])
    main(["sample", "--params", params, "--num", "5", "--seed", "3", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    # draw i depends only on (seed, i), so a shorter run is a prefix
    main(["sample", "--params", params, "--num", "3", "--seed", "3", "--out", str(c)])
    assert a.read_text(encoding="utf-8").splitlines()[:4] == (
        c.read_text(encoding="utf-8").splitlines()
    )


def test_sample_relaxed_emits_matrix_columns(tmp_path):
    params = write_params(tmp_path)
    out = tmp_path / "relaxed.csv"
    rc = main(
        ["sample", "--params", params, "--num", "4", "--mode", "relaxed",
         "--tau", "0.5", "--out", str(out)]
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == [
        "index", "partition",
        "y0_0", "y0_1", "y0_2", "y1_0", "y1_1", "y1_2",
    ]
    for cells in rows[1:]:
        assert len(cells) == 8
        AssignmentMatrix.from_string(cells[1])
        values = [float(x) for x in cells[2:]]
        assert all(0.0 <= v <= 1.0 for v in values)


def test_sample_argument_errors(tmp_path):
    params = write_params(tmp_path)
    out = str(tmp_path / "x.csv")
    assert main(["sample", "--params", params, "--num", "2", "--mode",
                 "relaxed", "--out", out]) == 2  # relaxed needs --tau
    assert main(["sample", "--params", params, "--num", "0", "--out", out]) == 2


# pmf ------------------------------------------------------------------------


def test_pmf_exact_value(tmp_path, capsys):
    params = write_params(tmp_path)
    rc = main(["pmf", "--params", params, "--partition", "110,001"])
    assert rc == 0
    got = read_json_line(capsys)
    assert got["pmf"] == pytest.approx(0.15, rel=1e-9)
    assert got["log_pmf"] == pytest.approx(math.log(0.15), rel=1e-9)


def test_pmf_bounds_values(tmp_path, capsys):
    params = write_params(tmp_path)
    rc = main(["pmf", "--params", params, "--partition", "110,001",
               "--method", "bounds"])
    assert rc == 0
    got = read_json_line(capsys)
    assert got["lower"] == pytest.approx(0.075, rel=1e-9)
    assert got["upper"] == pytest.approx(0.15, rel=1e-9)


def test_pmf_mc_estimate(tmp_path, capsys):
    params = write_params(tmp_path)
    rc = main(["pmf", "--params", params, "--partition", "110,001",
               "--method", "mc", "--samples", "20000", "--seed", "1"])
    assert rc == 0
    got = read_json_line(capsys)
    assert got["samples"] == 20000
    assert got["estimate"] == pytest.approx(0.15, abs=4 * got["stderr"])
    assert got["stderr"] == pytest.approx(
        math.sqrt(got["estimate"] * (1 - got["estimate"]) / 20000), rel=1e-12
    )


def test_pmf_out_of_support_is_zero(tmp_path, capsys):
    params = write_params(tmp_path, m=[1, 2])
    rc = main(["pmf", "--params", params, "--partition", "110,001"])
    assert rc == 0
    got = read_json_line(capsys)
    assert got["pmf"] == 0.0
    assert got["log_pmf"] == -math.inf


def test_pmf_errors(tmp_path, capsys):
    params = write_params(tmp_path)
    assert main(["pmf", "--params", params, "--partition", "10,01"]) == 2
    assert main(["pmf", "--params", params, "--partition", "1a0,001"]) == 2
    assert main(["pmf", "--params", params, "--partition", "110,001",
                 "--method", "mc"]) == 2  # mc needs --samples
    capsys.readouterr()


# parameter file handling ------------------------------------------------------


def test_params_file_errors(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert main(["pmf", "--params", missing, "--partition", "1"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["pmf", "--params", str(bad), "--partition", "1"]) == 2
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]", encoding="utf-8")
    assert main(["pmf", "--params", str(arr), "--partition", "1"]) == 2
    nokey = tmp_path / "nokey.json"
    nokey.write_text('{"scores": [1.0]}', encoding="utf-8")
    assert main(["pmf", "--params", str(nokey), "--partition", "1"]) == 2
    capsys.readouterr()


def test_guard_exit_code(tmp_path, capsys):
    # a single subset of 13 elements has 13! orderings, past the guard
    params = write_params(tmp_path, omega=(1.0,), scores=(1.0,) * 13)
    rc = main(["pmf", "--params", params, "--partition", "1111111111111"])
    assert rc == 3
    capsys.readouterr()


# bounds-ablation ---------------------------------------------------------------


def test_bounds_ablation_outputs(tmp_path, capsys):
    out = tmp_path / "report"
    rc = main(["bounds-ablation", "--n", "4", "--k", "2", "--M", "4096",
               "--config", "equal", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out.splitlines()
    assert text[0] == "config=equal n=4 K=2 M=4096"
    assert text[1] == "sandwich_fraction 1.000"
    assert len([t for t in text if t.startswith("decile ")]) == 10
    rows = read_csv(out / "bounds_equal.csv")
    assert rows[0] == ["partition", "count", "freq", "exact", "log_lower",
                       "log_upper"]
    assert len(rows) == 1 + 2 ** 4
    assert (out / "bounds_equal.png").stat().st_size > 0


def test_bounds_ablation_rerun_byte_identical(tmp_path):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        rc = main(["bounds-ablation", "--n", "3", "--k", "2", "--M", "2048",
                   "--config", "rand-both", "--seed", "5", "--out", str(out)])
        assert rc == 0
        outs.append(out)
    for fname in ("bounds_rand-both.csv", "bounds_rand-both.png"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_bounds_ablation_rejects_unknown_config(tmp_path):
    with pytest.raises(SystemExit) as ex:
        main(["bounds-ablation", "--config", "spam", "--out", str(tmp_path)])
    assert ex.value.code == 2


# gradcheck ----------------------------------------------------------------------


def test_gradcheck_passes_and_reports(tmp_path, capsys):
    params = write_params(tmp_path, omega=(1.0, 2.0), scores=(0.5, 1.5, 1.0))
    rc = main(["gradcheck", "--params", params, "--objective", "partition_entry",
               "--trials", "3", "--seed", "0"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",") == [
        "trial", "objective", "tau", "value", "max_abs_err", "max_rel_err",
        "tie_margin", "redraws", "passed",
    ]
    assert len(lines) == 4
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[1] == "partition_entry"
        assert cells[-1] == "True"
        assert float(cells[5]) < 1e-4


def test_gradcheck_errors(tmp_path, capsys):
    params = write_params(tmp_path)
    assert main(["gradcheck", "--params", params, "--objective", "bogus"]) == 2
    assert main(["gradcheck", "--params", params, "--objective",
                 "pl_log_pmf", "--trials", "0"]) == 2
    capsys.readouterr()


# fit -----------------------------------------------------------------------------


def test_fit_outputs(tmp_path, capsys):
    target = write_target(tmp_path, "10,01", n=2, K=2)
    out = tmp_path / "fitdir"
    rc = main(["fit", "--target", target, "--steps", "20", "--seed", "1",
               "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out.splitlines()
    assert stdout[0] in ("recovered true", "recovered false")
    assert stdout[1].startswith("final_partition ")
    assert stdout[2].startswith("final_loss ")
    trace = (out / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert trace[0] == "step,tau,loss,l1,l2"
    assert len(trace) == 21
    final = json.loads((out / "final_params.json").read_text(encoding="utf-8"))
    assert set(final) == {
        "log_omega", "log_scores", "final_partition", "target", "recovered",
    }
    assert final["target"] == "10,01"
    assert (out / "trace.png").stat().st_size > 0


def test_fit_rerun_byte_identical(tmp_path, capsys):
    target = write_target(tmp_path, "011,100")
    outs = []
    for name in ("f1", "f2"):
        out = tmp_path / name
        rc = main(["fit", "--target", target, "--steps", "15", "--seed", "9",
                   "--out", str(out)])
        assert rc == 0
        outs.append(out)
    capsys.readouterr()
    for fname in ("trace.csv", "final_params.json", "trace.png"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_fit_target_errors(tmp_path, capsys):
    bad_n = write_target(tmp_path, "10,01", n=3)
    out = str(tmp_path / "x")
    assert main(["fit", "--target", bad_n, "--steps", "2", "--out", out]) == 2
    nokey = tmp_path / "nokey.json"
    nokey.write_text('{"n": 2}', encoding="utf-8")
    assert main(["fit", "--target", str(nokey), "--steps", "2", "--out", out]) == 2
    capsys.readouterr()
