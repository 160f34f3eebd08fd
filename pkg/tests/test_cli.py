import csv
import json
import math
import subprocess
import sys

import pytest

from nsverify.cli import EXIT_OK, EXIT_STALLED, EXIT_USAGE, BenchmarkSummary, main

QUICK = ["--live", "20", "--iters", "100", "--no-plots"]


def run(*argv):
    return main([str(a) for a in argv])


def jsons(path):
    return sorted(path.glob("*.json"))


def test_shrink_writes_outputs(tmp_path, capsys):
    assert run("shrink", "--sampler", "rejection", "--dim", 2, *QUICK, "--out", tmp_path) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith("rejection d=2 ks_p=") and "efficiency=" in line
    stem = tmp_path / "shrink-rejection-d2-n20-seed0"
    for suffix in (".json", "-samples.csv", "-hist.csv", "-cdf.csv"):
        assert (tmp_path / f"{stem.name}{suffix}").exists()
    rec = json.loads(stem.with_suffix(".json").read_text())
    assert rec["kind"] == "shrink" and rec["n_iterations"] == 100 and 0 < rec["efficiency"] <= 1


def test_shrink_renders_figure(tmp_path):
    pytest.importorskip("matplotlib")
    assert run("shrink", "--sampler", "radfriends", "--dim", 2, "--live", 20, "--iters", 100,
               "--out", tmp_path) == EXIT_OK
    png = tmp_path / "shrink-radfriends-d2-n20-seed0.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


@pytest.mark.parametrize("argv, message", [
    (["shrink", "--sampler", "rejection", "--iters", "0"], "iterations must be positive"),
    (["shrink", "--sampler", "hamiltonian"], "sampler"),
    (["shrink", "--iters", "10"], "--sampler is required"),
    (["shrink", "--sampler", "rejection", "--live", "1"], "live"),
    (["integrate", "--sampler", "rejection", "--problem", "rosenbrock"], "rosenbrock"),
    (["integrate", "--sampler", "rejection"], "--problem is required"),
    (["integrate", "--sampler", "rejection", "--problem", "eggbox", "--tol", "0"], ""),
    (["shrink", "--sampler", "rejection", "--jobs", "0"], "jobs"),
    (["frobnicate"], ""),
    ([], "missing command"),
])
def test_usage_errors_exit_1(tmp_path, capsys, argv, message):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("error:") and message in err


def test_stall_exits_2_and_keeps_partial(tmp_path, capsys):
    # rejection on the pyramid costs about exp(k/N) per draw
    code = run("shrink", "--sampler", "rejection", "--dim", 2, "--live", 20, "--iters", 2000,
               "--no-plots", "--out", tmp_path)
    assert code == EXIT_STALLED
    assert "sampler stalled" in capsys.readouterr().err
    rec = json.loads((tmp_path / "shrink-rejection-d2-n20-seed0.json").read_text())
    assert rec["stalled"] is True and 2 <= rec["n_iterations"] < 2000


def test_integrate_stall_exits_2(tmp_path):
    code = run("integrate", "--sampler", "rejection", "--problem", "pyramid-2", "--live", 10,
               "--iters", 1000, "--repeats", 1, "--no-plots", "--out", tmp_path)
    assert code == EXIT_STALLED


def test_integrate_outputs_and_summary(tmp_path, capsys):
    assert run("integrate", "--sampler", "radfriends", "--problem", "loggamma-2", "--live", 50,
               "--repeats", 3, "--tol", "1e-2", "--seed", 5, "--no-plots", "--out", tmp_path) == EXIT_OK
    out = capsys.readouterr().out
    assert "log Z =" in out and "A =" in out
    runs = [json.loads(p.read_text()) for p in jsons(tmp_path) if "summary" not in p.name]
    assert sorted(r["seed"] for r in runs) == [5, 6, 7]
    assert all(r["stop"] == "tolerance" and r["draw_variant"] == "near_point" for r in runs)
    summary = json.loads(next(tmp_path.glob("*-summary.json")).read_text())
    assert summary["n_repeats"] == 3 and summary["seeds"] == [5, 6, 7]
    assert summary["mean_reported_err"] == sum(r["log_z_err"] for r in runs) / 3
    rms = math.sqrt(sum(r["log_z"] ** 2 for r in runs) / 3)
    assert summary["actual_scatter"] == pytest.approx(rms, rel=1e-12)
    rows = list(csv.reader(open(next(tmp_path.glob("*-summary.csv")))))
    assert rows[0] == ["seed", "log_z", "log_z_err", "n_iterations", "n_evaluations"] and len(rows) == 4
    its = next(tmp_path.glob("*seed5-iterations.csv")).read_text().splitlines()
    assert its[0] == "k,log_l,n_evals"


def test_outputs_are_reproducible(tmp_path):
    for sub in ("a", "b"):
        run("integrate", "--sampler", "mcmc-adapt-10", "--problem", "pyramid-3", "--live", 20,
            "--iters", 200, "--repeats", 2, "--no-plots", "--out", tmp_path / sub)
        run("shrink", "--sampler", "supfriends", "--dim", 3, *QUICK, "--out", tmp_path / sub)
    a, b = jsons(tmp_path / "a"), jsons(tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b] and len(a) == 4
    for pa, pb in zip(a, b):
        ra, rb = json.loads(pa.read_text()), json.loads(pb.read_text())
        ra.pop("wall_seconds", None)
        rb.pop("wall_seconds", None)
        assert ra == rb
    samples = sorted((tmp_path / "a").glob("*-samples.csv"))[0].name
    assert (tmp_path / "a" / samples).read_bytes() == (tmp_path / "b" / samples).read_bytes()


def test_parallel_repeats_match_serial(tmp_path):
    for sub, jobs in (("s", 1), ("p", 2)):
        run("integrate", "--sampler", "radfriends", "--problem", "pyramid-2", "--live", 20,
            "--iters", 100, "--repeats", 2, "--jobs", jobs, "--no-plots", "--out", tmp_path / sub)
    for pa, pb in zip(jsons(tmp_path / "s"), jsons(tmp_path / "p")):
        ra, rb = json.loads(pa.read_text()), json.loads(pb.read_text())
        ra.pop("wall_seconds", None)
        rb.pop("wall_seconds", None)
        assert ra == rb


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# campaign\nsampler = rejection\ndim = 3\nlive = 30\niters = 50  # short\n"
                   "no-plots = true\nproblem.s = 1\n")
    out = tmp_path / "o"
    assert run("shrink", "--config", cfg, "--live", 25, "--out", out) == EXIT_OK
    rec = json.loads((out / "shrink-rejection-d3-n25-seed0.json").read_text())
    assert rec["n_iterations"] == 50 and rec["dim"] == 3
    assert not list(out.glob("*.png"))


@pytest.mark.parametrize("text", ["colour = red\n", "problem.slope = 2\n", "just words\n",
                                  "no-plots = maybe\n"])
def test_bad_config_exits_1(tmp_path, capsys, text):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("sampler = rejection\n" + text)
    assert run("shrink", "--config", cfg, *QUICK, "--out", tmp_path) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_exits_1(tmp_path):
    assert run("shrink", "--config", tmp_path / "none.cfg", "--out", tmp_path) == EXIT_USAGE


def test_report_shrink_rows(tmp_path, capsys):
    for d in (1, 2, 3):
        run("shrink", "--sampler", "rejection", "--dim", d, *QUICK, "--out", tmp_path)
    capsys.readouterr()
    assert run("report", tmp_path) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("Shrinkage Test") and "Evidence" not in text
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 3 and {r["problem"] for r in rows} == {"pyramid-1", "pyramid-2", "pyramid-3"}
    assert (tmp_path / "report.txt").read_text() == text


def test_report_mixed_sections_and_malformed(tmp_path, capsys, caplog):
    run("shrink", "--sampler", "rejection", "--dim", 2, *QUICK, "--out", tmp_path)
    run("integrate", "--sampler", "radfriends", "--problem", "loggamma-2", "--live", 30,
        "--repeats", 2, "--tol", "1e-2", "--no-plots", "--out", tmp_path)
    (tmp_path / "broken.json").write_text("{not json")
    capsys.readouterr()
    assert run("report", tmp_path) == EXIT_OK
    text = capsys.readouterr().out
    assert "Shrinkage Test" in text and "Evidence" in text
    assert "broken.json" in caplog.text
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [r["section"] for r in rows] == ["shrink", "integrate"]
    assert rows[1]["problem"] == "loggamma-2"


def test_report_empty_directory(tmp_path, capsys):
    assert run("report", tmp_path) == EXIT_USAGE
    assert "no run reports" in capsys.readouterr().err
    assert run("report", tmp_path / "missing") == EXIT_USAGE


def _rec(log_z, err, seed):
    return {"problem": "p", "sampler": "s", "n_live": 10, "log_z": log_z, "log_z_err": err,
            "n_evaluations": 100 + seed, "n_iterations": 50, "seed": seed}


def test_benchmark_summary_known_truth():
    recs = [_rec(1.0, 0.1, 0), _rec(-1.0, 0.3, 1), _rec(2.0, 0.2, 2)]
    s = BenchmarkSummary.from_records(recs, true_log_z=0.0)
    assert s.actual_scatter == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert s.mean_reported_err == (0.1 + 0.3 + 0.2) / 3
    assert s.mean_log_z == pytest.approx(2 / 3) and s.mean_evaluations == 101.0
    assert s.actual_scatter >= 0 and s.mean_reported_err >= 0
    assert "warning" not in s.to_record()


def test_benchmark_summary_unknown_truth():
    s = BenchmarkSummary.from_records([_rec(1.0, 0.1, 0), _rec(3.0, 0.1, 1)])
    assert s.actual_scatter == pytest.approx(math.sqrt(2.0)) and not s.scatter_about_truth
    assert "warning" in s.to_record()
    assert BenchmarkSummary.from_records([_rec(1.0, 0.1, 0)]).actual_scatter == 0.0
    with pytest.raises(ValueError):
        BenchmarkSummary.from_records([])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nsverify", "shrink", "--sampler", "rejection",
                           *QUICK, "--out", str(tmp_path)],
                          capture_output=True, text=True, env={"NV_LOG": "error", "PATH": ""})
    assert proc.returncode == 0 and proc.stdout.startswith("rejection d=2")
    proc = subprocess.run([sys.executable, "-m", "nsverify", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "shrink" in proc.stdout
