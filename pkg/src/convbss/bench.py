"""Benchmark orchestration: configuration files, separation runs and summaries.

Configuration is an INI file.  Only ``[experiment]`` is required::

    [experiment]
    t60 = 0.2
    seeds = 1-20
    algorithms = mixture, auxiva, gradiva, trinicon-sos, oracle-td, oracle-fd

Optional sections are ``[scenario]``, ``[stft]``, ``[metrics]`` and one per
algorithm (``[gradiva]``, ``[auxiva]``, ``[fdica]``, ``[trinicon-sos]``,
``[oracle-td]``, ``[oracle-fd]``).  Every run writes one row of channel-averaged
scores to ``results.csv`` and its cost trace to ``manifest.ini``.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError
from .metrics import bss_eval
from .oracle import apply_fd_demixer, apply_td_oracle, build_oracle_demixer, fit_oracle_models
from .scene import Scenario, simulate
from .signal import StftConfig, TimeFrequencyTensor, istft, stft
from .solvers import (
    SolverConfig,
    minimum_distortion_rescale,
    run_auxiva,
    run_fdica,
    run_gradiva,
    run_trinicon_sos,
)

ALGORITHMS = ("mixture", "gradiva", "auxiva", "fdica", "trinicon-sos", "oracle-td", "oracle-fd")
RESULT_COLUMNS = (
    "run_id", "room_t60", "seed", "algorithm", "channel",
    "sdr_db", "sir_db", "sar_db", "iterations", "wall_ms", "flags",
)
SUMMARY_COLUMNS = ("room_t60", "algorithm", "metric", "count", "min", "q1", "median", "q3", "max")

_SECTION_KEYS = {
    "experiment": {"name", "t60", "seeds", "duration", "sample_rate", "algorithms", "record_wall_time"},
    "scenario": {
        "mic_spacing", "source_angles", "source_distance", "rir_length",
        "tail_level_db", "source_kind", "source_files",
    },
    "stft": {"window", "window_length", "hop", "fft_length"},
    "metrics": {"proj_len"},
    "gradiva": {"iterations", "step_size", "tolerance"},
    "auxiva": {"iterations", "tolerance"},
    "fdica": {"iterations", "step_size", "tolerance"},
    "trinicon-sos": {
        "iterations", "step_size", "tolerance", "filter_length",
        "block_length", "block_shift", "block_samples",
    },
    "oracle-td": {"n_taps", "lead", "ridge"},
    "oracle-fd": set(),
}


@dataclass(frozen=True)
class TriniconSetup:
    filter_length: int = 1024
    block_length: int = 1024
    block_shift: int = 2048
    block_samples: Optional[int] = None


@dataclass(frozen=True)
class OracleSetup:
    n_taps: Optional[int] = None
    lead: Optional[int] = None
    ridge: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved benchmark description."""

    t60s: Tuple[float, ...]
    seeds: Tuple[int, ...]
    algorithms: Tuple[str, ...]
    name: str = "experiment"
    duration: float = 10.0
    sample_rate: float = 16000.0
    scenario: Dict[str, object] = field(default_factory=dict)
    stft: StftConfig = field(default_factory=StftConfig)
    proj_len: int = 512
    solvers: Dict[str, SolverConfig] = field(default_factory=dict)
    trinicon: TriniconSetup = field(default_factory=TriniconSetup)
    oracle: OracleSetup = field(default_factory=OracleSetup)
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.t60s:
            raise ConfigError("at least one t60 value is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s): {', '.join(unknown)}")
        solvers = {a: SolverConfig.defaults(a) for a in ("gradiva", "auxiva", "fdica", "trinicon-sos")}
        solvers.update(self.solvers)
        object.__setattr__(self, "solvers", solvers)

    def scenario_for(self, t60: float, seed: int) -> Scenario:
        return Scenario(t60=t60, sample_rate=self.sample_rate, duration=self.duration, seed=seed, **self.scenario)

    def to_ini(self) -> str:
        """Resolved configuration in the same INI dialect."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "name": self.name,
            "t60": ", ".join(repr(t) for t in self.t60s),
            "seeds": ", ".join(str(s) for s in self.seeds),
            "duration": repr(self.duration),
            "sample_rate": repr(self.sample_rate),
            "algorithms": ", ".join(self.algorithms),
            "record_wall_time": str(self.record_wall_time).lower(),
        }
        cp["scenario"] = {k: _fmt(v) for k, v in sorted(self.scenario.items())}
        cp["stft"] = {
            "window": self.stft.window_kind,
            "window_length": str(self.stft.window_length),
            "hop": str(self.stft.hop),
            "fft_length": str(self.stft.fft_length),
        }
        cp["metrics"] = {"proj_len": str(self.proj_len)}
        for alg, sc in sorted(self.solvers.items()):
            cp[alg] = {"iterations": str(sc.iterations), "step_size": repr(sc.step_size), "tolerance": repr(sc.tolerance)}
            if "step_size" not in _SECTION_KEYS[alg]:
                del cp[alg]["step_size"]
        tri = self.trinicon
        cp["trinicon-sos"].update(
            filter_length=str(tri.filter_length),
            block_length=str(tri.block_length),
            block_shift=str(tri.block_shift),
            block_samples=_fmt(tri.block_samples),
        )
        cp["oracle-td"] = {k: _fmt(getattr(self.oracle, k)) for k in ("n_taps", "lead", "ridge")}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ----------------------------------------------------------------------------
# Parsing


class _Source:
    """Locates ``key`` lines inside sections for error messages."""

    def __init__(self, text: str, path: str):
        self.path = path
        self.lines: Dict[Tuple[str, Optional[str]], int] = {}
        section = None
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                self.lines.setdefault((section, None), n)
            elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
                key = line.replace(":", "=", 1).split("=", 1)[0].strip().lower()
                self.lines.setdefault((section, key), n)

    def error(self, section: str, key: Optional[str], message: str) -> ConfigError:
        n = self.lines.get((section, key)) or self.lines.get((section, None))
        where = f"{self.path}:{n}" if n else self.path
        err = ConfigError(f"{where}: {message}")
        err.line = n
        return err


def _parse_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_seeds(text: str) -> Tuple[int, ...]:
    seeds: List[int] = []
    for tok in _parse_list(text):
        if "-" in tok:
            lo, hi = (int(v) for v in tok.split("-", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {tok!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(tok))
    return tuple(seeds)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def inner(text):
        return None if text.strip() == "" else conv(text)

    return inner


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment file; errors carry ``file:line``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config(text, str(path), base_dir=path.parent)


def parse_config(text: str, path: str = "<config>", base_dir: Path = Path(".")) -> ExperimentConfig:
    src = _Source(text, path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        msg = str(exc).splitlines()[0]
        err = ConfigError(f"{path}:{line}: {msg}" if line else f"{path}: {msg}")
        err.line = line
        raise err from None

    for section in cp.sections():
        if section not in _SECTION_KEYS:
            raise src.error(section, None, f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTION_KEYS[section]:
                raise src.error(section, key, f"unknown key {key!r} in [{section}]")
    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")

    def get(section, key, conv, default=None):
        if section not in cp or key not in cp[section]:
            return default
        raw = cp[section][key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise src.error(section, key, f"invalid value for {key}: {exc}") from None

    exp = "experiment"
    algorithms = tuple(a.lower() for a in get(exp, "algorithms", _parse_list, []))
    for a in algorithms:
        if a not in ALGORITHMS:
            raise src.error(exp, "algorithms", f"unknown algorithm {a!r}; expected one of {', '.join(ALGORITHMS)}")
    if not algorithms:
        raise src.error(exp, "algorithms", "algorithm list is empty")
    t60s = tuple(float(t) for t in get(exp, "t60", _parse_list, ["0.2"]))
    if not t60s or any(not t > 0 for t in t60s):
        raise src.error(exp, "t60", "t60 values must be positive")
    seeds = get(exp, "seeds", _parse_seeds, (0,))
    if not seeds:
        raise src.error(exp, "seeds", "seed list is empty")

    scenario: Dict[str, object] = {}
    sc = "scenario"
    for key, conv in (
        ("mic_spacing", float),
        ("source_distance", float),
        ("tail_level_db", float),
        ("rir_length", _optional(int)),
        ("source_kind", str),
    ):
        val = get(sc, key, conv)
        if val is not None:
            scenario[key] = val
    angles = get(sc, "source_angles", lambda t: tuple(float(a) for a in _parse_list(t)))
    if angles is not None:
        scenario["source_angles"] = angles
    files = get(sc, "source_files", _parse_list)
    if files:
        resolved = []
        for f in files:
            fp = Path(f) if Path(f).is_absolute() else base_dir / f
            if not fp.exists():
                raise src.error(sc, "source_files", f"source file not found: {f}")
            resolved.append(str(fp))
        scenario["source_files"] = tuple(resolved)
        scenario.setdefault("source_kind", "wav")
    if scenario.get("source_kind", "speechlike") not in ("speechlike", "wav"):
        raise src.error(sc, "source_kind", "source_kind must be 'speechlike' or 'wav'")

    try:
        stft_cfg = StftConfig(
            window_kind=get("stft", "window", str, "hamming"),
            window_length=get("stft", "window_length", int, 2048),
            hop=get("stft", "hop", int, 1024),
            fft_length=get("stft", "fft_length", _optional(int)),
        )
    except ConfigError as exc:
        raise src.error("stft", None, str(exc)) from None

    solvers = {}
    for alg in ("gradiva", "auxiva", "fdica", "trinicon-sos"):
        overrides = {}
        for key, conv in (("iterations", int), ("step_size", float), ("tolerance", float)):
            val = get(alg, key, conv)
            if val is not None:
                overrides[key] = val
        try:
            solvers[alg] = SolverConfig.defaults(alg, **overrides)
        except ValueError as exc:
            raise src.error(alg, next(iter(overrides), None), str(exc)) from None

    tri = TriniconSetup(
        filter_length=get("trinicon-sos", "filter_length", int, 1024),
        block_length=get("trinicon-sos", "block_length", int, 1024),
        block_shift=get("trinicon-sos", "block_shift", int, 2048),
        block_samples=get("trinicon-sos", "block_samples", _optional(int)),
    )
    if not 1 <= tri.block_length <= tri.filter_length:
        raise src.error("trinicon-sos", "block_length", "block_length must satisfy 1 <= D <= filter_length")
    oracle = OracleSetup(
        n_taps=get("oracle-td", "n_taps", _optional(int)),
        lead=get("oracle-td", "lead", _optional(int)),
        ridge=get("oracle-td", "ridge", _optional(float)),
    )
    proj_len = get("metrics", "proj_len", int, 512)
    if proj_len < 1:
        raise src.error("metrics", "proj_len", "proj_len must be >= 1")
    duration = get(exp, "duration", float, 10.0)
    rate = get(exp, "sample_rate", float, 16000.0)
    if not duration > 0 or not rate > 0:
        raise src.error(exp, "duration" if not duration > 0 else "sample_rate", "must be positive")
    return ExperimentConfig(
        t60s=t60s,
        seeds=seeds,
        algorithms=algorithms,
        name=get(exp, "name", str, "experiment"),
        duration=duration,
        sample_rate=rate,
        scenario=scenario,
        stft=stft_cfg,
        proj_len=proj_len,
        solvers=solvers,
        trinicon=tri,
        oracle=oracle,
        record_wall_time=get(exp, "record_wall_time", _parse_bool, False),
    )


# ----------------------------------------------------------------------------
# Running


@dataclass
class RunResult:
    run_id: str
    t60: float
    seed: int
    algorithm: str
    sdr: float = math.nan
    sir: float = math.nan
    sar: float = math.nan
    iterations: int = 0
    wall_ms: float = 0.0
    flags: Tuple[str, ...] = ()
    reason: str = ""
    cost_trace: Sequence[float] = ()
    per_channel: Dict[str, List[float]] = field(default_factory=dict)


def _fd_separate(x: np.ndarray, W: np.ndarray, cfg: StftConfig, X: TimeFrequencyTensor) -> np.ndarray:
    Y = np.einsum("kqp,pkn->qkn", W, X.coefficients)
    out = istft(replace(X, coefficients=Y), length=x.shape[1])
    y = np.zeros_like(x)
    y[:, : out.n_samples] = out.samples
    return y


def separate(algorithm: str, config: ExperimentConfig, mics: np.ndarray, images: np.ndarray, rir_length: int):
    """Run one algorithm; returns ``(outputs, iterations, flags, reason, trace)``."""
    cfg = config.stft
    if algorithm == "mixture":
        return mics.copy(), 0, (), "", ()
    if algorithm in ("gradiva", "auxiva", "fdica"):
        X = stft(mics, cfg)
        solver = {"gradiva": run_gradiva, "auxiva": run_auxiva, "fdica": run_fdica}[algorithm]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report = solver(X, config.solvers[algorithm])
        flags = tuple(report.flags) + (("divergence",) if report.reason == "divergence" else ())
        W = minimum_distortion_rescale(report.demixer)
        return _fd_separate(mics, W, cfg, X), report.iterations, flags, report.reason, report.cost_trace
    if algorithm == "trinicon-sos":
        tri = config.trinicon
        report = run_trinicon_sos(
            mics, tri.filter_length, tri.block_length, tri.block_shift,
            config.solvers["trinicon-sos"], block_samples=tri.block_samples,
        )
        flags = tuple(report.flags) + (("divergence",) if report.reason == "divergence" else ())
        return report.demixer.apply(mics), report.iterations, flags, report.reason, report.cost_trace
    if algorithm == "oracle-td":
        n_taps = config.oracle.n_taps or rir_length
        models = fit_oracle_models(images, "td", n_taps=n_taps, ridge=config.oracle.ridge, lead=config.oracle.lead)
        return apply_td_oracle(build_oracle_demixer(models), mics, models[0].lead), 0, (), "", ()
    if algorithm == "oracle-fd":
        models = fit_oracle_models(images, "fd", stft_config=cfg)
        flags = ("floored-bins",) if any(np.any(m.flagged) for m in models) else ()
        W = minimum_distortion_rescale(build_oracle_demixer(models))
        return apply_fd_demixer(W, mics, cfg), 0, flags, "", ()
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_id_for(t60: float, seed: int, algorithm: str) -> str:
    return f"t60={t60:g}/seed={seed}/{algorithm}"


def run_scene(config: ExperimentConfig, t60: float, seed: int) -> List[RunResult]:
    """Simulate one scene and run every configured algorithm on it."""
    _, rirs, mics, images = simulate(config.scenario_for(t60, seed))
    x = mics.samples
    results = []
    for alg in config.algorithms:
        res = RunResult(run_id_for(t60, seed, alg), t60, seed, alg)
        start = time.perf_counter()
        try:
            y, iters, flags, reason, trace = separate(alg, config, x, images, rirs.length)
            report = bss_eval(y, images, config.proj_len)
            res.sdr, res.sir, res.sar = (float(np.mean(v)) for v in (report.sdr, report.sir, report.sar))
            res.per_channel = {"sdr": list(report.sdr), "sir": list(report.sir), "sar": list(report.sar)}
            res.iterations, res.flags, res.reason = iters, flags, reason
            res.cost_trace = [float(c) for c in trace]
        except Exception as exc:  # a failed run is reported, never fatal
            res.flags = (f"failed:{type(exc).__name__}",)
            res.reason = str(exc)
        res.wall_ms = (time.perf_counter() - start) * 1e3
        results.append(res)
    return results


def _run_scene_job(args):
    return run_scene(*args)


def run_experiment(config: ExperimentConfig, out_dir, jobs: int = 1, seed_offset: int = 0) -> List[RunResult]:
    """Run all (t60, seed, algorithm) combinations and write the outputs.

    Rows are ordered by t60, then seed, then the configured algorithm order,
    whatever the completion order of the worker pool.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = [(config, t60, seed + seed_offset) for t60 in config.t60s for seed in config.seeds]
    if jobs > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_run_scene_job, scenes))
    else:
        batches = [_run_scene_job(s) for s in scenes]
    results = [r for batch in batches for r in batch]
    write_results(results, out / "results.csv", config.record_wall_time)
    write_manifest(config, results, out / "manifest.ini", seed_offset)
    return results


def _num(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.4f}"


def write_results(results: Sequence[RunResult], path, record_wall_time: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow([
                r.run_id, f"{r.t60:g}", r.seed, r.algorithm, "mean",
                _num(r.sdr), _num(r.sir), _num(r.sar), r.iterations,
                f"{r.wall_ms:.0f}" if record_wall_time else "0",
                ";".join(r.flags),
            ])


def write_manifest(config: ExperimentConfig, results: Sequence[RunResult], path, seed_offset: int = 0) -> None:
    """Resolved configuration plus one section per run with its cost trace."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(config.to_ini())
    cp["experiment"]["seed_offset"] = str(seed_offset)
    for r in results:
        cp[f"run {r.run_id}"] = {
            "algorithm": r.algorithm,
            "room_t60": f"{r.t60:g}",
            "seed": str(r.seed),
            "iterations": str(r.iterations),
            "termination": r.reason.replace("\n", " "),
            "flags": ";".join(r.flags),
            "wall_ms": f"{r.wall_ms:.1f}",
            "sdr_db": ", ".join(_num(v) for v in r.per_channel.get("sdr", [])),
            "sir_db": ", ".join(_num(v) for v in r.per_channel.get("sir", [])),
            "sar_db": ", ".join(_num(v) for v in r.per_channel.get("sar", [])),
            "cost_trace": ", ".join(repr(c) for c in r.cost_trace),
        }
    with open(path, "w") as fh:
        cp.write(fh)


# ----------------------------------------------------------------------------
# Summaries


def read_results(path) -> List[dict]:
    """Load ``results.csv``; raises ``FormatError`` on schema or value problems."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from None
    except csv.Error as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not rows or tuple(rows[0]) != RESULT_COLUMNS:
        raise FormatError(f"{path}:1: header does not match {','.join(RESULT_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(RESULT_COLUMNS):
            raise FormatError(f"{path}:{n}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
        rec = dict(zip(RESULT_COLUMNS, row))
        try:
            for key in ("sdr_db", "sir_db", "sar_db"):
                rec[key] = float(rec[key])
            rec["room_t60"] = float(rec["room_t60"])
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from None
        out.append(rec)
    return out


def five_numbers(values: Sequence[float]) -> Tuple[float, float, float, float, float]:
    """Min, first quartile, median, third quartile and max (linear interpolation)."""
    q = np.percentile(np.asarray(values, dtype=float), [0, 25, 50, 75, 100])
    return tuple(float(v) for v in q)


def summarize(rows: Sequence[dict]) -> List[dict]:
    """Five-number summary of every metric per (room, algorithm), in first-seen order."""
    groups: Dict[Tuple[float, str], List[dict]] = {}
    for r in rows:
        groups.setdefault((r["room_t60"], r["algorithm"]), []).append(r)
    out = []
    for (t60, alg), members in groups.items():
        for metric in ("sdr_db", "sir_db", "sar_db"):
            vals = [m[metric] for m in members if np.isfinite(m[metric])]
            stats = five_numbers(vals) if vals else (math.nan,) * 5
            out.append(dict(zip(SUMMARY_COLUMNS, (t60, alg, metric, len(vals)) + stats)))
    return out


def write_summary(summary: Sequence[dict], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for s in summary:
        writer.writerow(
            [f"{s['room_t60']:g}", s["algorithm"], s["metric"], s["count"]]
            + [_num(s[k]) for k in ("min", "q1", "median", "q3", "max")]
        )
