import csv
import io

import numpy as np
import pytest

from convbss import bench
from convbss.bench import (
    RESULT_COLUMNS,
    five_numbers,
    load_config,
    parse_config,
    read_results,
    summarize,
)
from convbss.cli import main
from convbss.errors import ConfigError, FormatError

SMALL = """\
[experiment]
t60 = 0.2
seeds = 1-20
duration = 0.5
algorithms = gradiva, auxiva, trinicon-sos, oracle-td, oracle-fd

[scenario]
rir_length = 400

[stft]
window_length = 256
hop = 128

[metrics]
proj_len = 32

[gradiva]
iterations = 5

[auxiva]
iterations = 5

[trinicon-sos]
iterations = 3
filter_length = 8
block_length = 8
block_shift = 1000

[oracle-td]
n_taps = 64
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- configuration ---------------------------------------------------------


def test_parse_defaults_and_ranges():
    cfg = parse_config("[experiment]\nalgorithms = auxiva, oracle-td\nseeds = 1-3, 7\n")
    assert cfg.seeds == (1, 2, 3, 7)
    assert cfg.t60s == (0.2,)
    assert cfg.solvers["auxiva"].iterations == 100
    assert cfg.solvers["gradiva"].step_size == 0.1
    assert (cfg.trinicon.filter_length, cfg.trinicon.block_length, cfg.trinicon.block_shift) == (1024, 1024, 2048)
    assert cfg.stft.window_length == 2048 and cfg.stft.hop == 1024


@pytest.mark.parametrize(
    "text, line",
    [
        ("[experiment]\nt60 = 0.2\nalgorithms =\n", 3),
        ("[experiment]\nalgorithms = auxiva, ica\n", 2),
        ("[experiment]\nalgorithms = auxiva\nseeds = 5-2\n", 3),
        ("[experiment]\nalgorithms = auxiva\n\n[gradiva]\nstepsize = 1\n", 5),
        ("[experiment]\nalgorithms = auxiva\n[auxiva]\niterations = zero\n", 4),
        ("[experiment]\nalgorithms = auxiva\n[bogus]\n", 3),
    ],
)
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "exp.ini")
    assert info.value.line == line
    assert f"exp.ini:{line}:" in str(info.value)


def test_missing_source_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nalgorithms = auxiva\n[scenario]\nsource_files = a.wav, b.wav\n")
    with pytest.raises(ConfigError, match=":4:"):
        load_config(path)


def test_resolved_config_round_trips():
    cfg = parse_config(SMALL)
    again = parse_config(cfg.to_ini())
    assert again == cfg


# -- run -------------------------------------------------------------------


def test_run_writes_one_row_per_combination(small_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(small_config), "--out", str(out)]) == 0
    rows = read_rows(out / "results.csv")
    assert len(rows) == 1 * 20 * 5
    assert tuple(rows[0].keys()) == RESULT_COLUMNS
    expected = [(s, a) for s in range(1, 21) for a in ("gradiva", "auxiva", "trinicon-sos", "oracle-td", "oracle-fd")]
    assert [(int(r["seed"]), r["algorithm"]) for r in rows] == expected
    assert all(np.isfinite(float(r["sir_db"])) for r in rows)
    assert (out / "manifest.ini").exists()
    assert b"\r\n" not in (out / "results.csv").read_bytes()


def test_runs_are_byte_identical(small_config, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    text = small_config.read_text().replace("seeds = 1-20", "seeds = 1-3")
    small_config.write_text(text)
    assert main(["run", str(small_config), "--out", str(a)]) == 0
    assert main(["run", str(small_config), "--out", str(b)]) == 0
    assert main(["run", str(small_config), "--out", str(c), "--jobs", "2"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "results.csv").read_bytes() == (c / "results.csv").read_bytes()
    assert (a / "manifest.ini").read_text().count("cost_trace") == 15


def test_seed_offset(small_config, tmp_path):
    small_config.write_text(small_config.read_text().replace("seeds = 1-20", "seeds = 1"))
    out = tmp_path / "o"
    assert main(["run", str(small_config), "--out", str(out), "--seed-offset", "4"]) == 0
    assert {r["seed"] for r in read_rows(out / "results.csv")} == {"5"}


def test_empty_algorithm_list_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nt60 = 0.2\nalgorithms =\n")
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert f"{path}:3:" in capsys.readouterr().err


def test_solver_failure_is_flagged(small_config, tmp_path, monkeypatch, capsys):
    small_config.write_text(small_config.read_text().replace("seeds = 1-20", "seeds = 1-2"))

    def boom(*args, **kwargs):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(bench, "run_trinicon_sos", boom)
    out = tmp_path / "o"
    assert main(["run", str(small_config), "--out", str(out)]) == 0
    rows = read_rows(out / "results.csv")
    failed = [r for r in rows if r["flags"]]
    assert [r["algorithm"] for r in failed] == ["trinicon-sos", "trinicon-sos"]
    assert failed[0]["flags"] == "failed:FloatingPointError"
    assert "2 warnings" in capsys.readouterr().out


# -- verify-identities -----------------------------------------------------


def test_verify_identities_default(capsys):
    assert main(["verify-identities"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out
    assert "6/6 identities passed" in out


def test_verify_identities_single_trial(capsys):
    assert main(["verify-identities", "--trials", "1", "--tol-report"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("PASS")]
    assert len(lines) == 6 and all("trials=1 " in l and "tol=" in l for l in lines)


def test_verify_identities_broken_tolerance(capsys):
    assert main(["verify-identities", "--trials", "2", "--tol-scale", "0"]) == 1
    assert "FAIL" in capsys.readouterr().out


# -- summarize -------------------------------------------------------------


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)


def fake_row(seed, alg, sdr, sir, sar, t60=0.2):
    return [f"t60={t60:g}/seed={seed}/{alg}", f"{t60:g}", seed, alg, "mean", sdr, sir, sar, 0, 0, ""]


def test_summary_medians_match_sorting(tmp_path, capsys):
    rng = np.random.default_rng(0)
    vals = rng.normal(5, 3, size=(20, 3)).round(4)
    path = tmp_path / "r.csv"
    write_csv(path, [fake_row(i, "auxiva", *v) for i, v in enumerate(vals)])
    assert main(["summarize", str(path)]) == 0
    summary = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(summary) == 3
    for j, rec in enumerate(summary):
        s = np.sort(vals[:, j])
        assert float(rec["median"]) == pytest.approx((s[9] + s[10]) / 2, abs=1e-4)
        assert float(rec["min"]) == pytest.approx(s[0]) and float(rec["max"]) == pytest.approx(s[-1])
        assert rec["count"] == "20"


def test_summary_single_row(tmp_path):
    path, out = tmp_path / "r.csv", tmp_path / "s.csv"
    write_csv(path, [fake_row(1, "oracle-td", 1.5, 2.5, 3.5)])
    assert main(["summarize", str(path), "--out", str(out)]) == 0
    for rec in read_rows(out):
        assert len({rec[k] for k in ("min", "q1", "median", "q3", "max")}) == 1


def test_summary_groups_by_room_and_algorithm():
    rows = [
        {"room_t60": t, "algorithm": a, "sdr_db": v, "sir_db": v, "sar_db": v}
        for t in (0.2, 0.4) for a in ("x", "y") for v in (1.0, 2.0, 4.0)
    ]
    summary = summarize(rows)
    assert len(summary) == 2 * 2 * 3
    assert all(s["median"] == 2.0 for s in summary)
    assert five_numbers([1, 2, 3, 4, 5]) == (1, 2, 3, 4, 5)


@pytest.mark.parametrize(
    "content",
    [
        "",
        "run_id,seed\nx,1\n",
        ",".join(RESULT_COLUMNS) + "\nt60=0.2/seed=1/a,0.2,1,a,mean,1.0,2.0\n",
        ",".join(RESULT_COLUMNS) + "\nt60=0.2/seed=1/a,0.2,1,a,mean,abc,2.0,3.0,0,0,\n",
    ],
)
def test_malformed_csv_exits_2(tmp_path, content, capsys):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(FormatError):
        read_results(path)
    assert main(["summarize", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_csv_exits_2(tmp_path):
    assert main(["summarize", str(tmp_path / "none.csv")]) == 2
