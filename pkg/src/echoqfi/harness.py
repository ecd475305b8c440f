"""Experiment runner: strict JSON configuration, seeded studies, CSV/JSON output.

Each study returns a :class:`Table`; :func:`run` writes it as
``<out>/<study>.csv`` next to a ``<study>.json`` metadata sidecar.  Sweep
points are independent, carry their own derived seed and are merged in
index order, so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .circuits import CircuitParams, PulseErrorModel, deviation_observable, engineering_unitary
from .circuits import generator as star_generator
from .errors import CapacityError, DomainError
from .metrology import derive_seed, quench_trial_errors
from .noise import RelaxationParams
from .optimize import NmConfig, NoiseConfig, optimize_probe
from .qstate import SpinSystem, dagger
from .readout import (
    DEFAULT_STEP, default_alpha_grid, deviation_readout, purity_sweep, scaling_sweep,
    thermal_deviation_readout,
)

STUDIES = ("optimize", "delta-sweep", "precision", "scaling", "purity", "validate")
SEED_MAX = 2**64 - 1
WORKERS_ENV = "ECHOQFI_WORKERS"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_CAPACITY = 3

SQL_CONVENTION = ("deviation form: F_SQL = eps^2 sum_j gamma_j^2; "
                  "finite purity: F_SQL = N (lambda0 - lambda1)^2; "
                  "ratios are (Delta alpha / Delta alpha_SQL)^2")
OPTIMAL_THETA = (0.0, np.pi / 2, 0.0, np.pi / 2, 0.0, np.pi / 2)


class ConfigError(DomainError):
    """Invalid experiment configuration; ``problems`` lists field diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSettings:
    sigma: float = 575.46
    relaxation: bool = False
    pulse_errors: bool = False
    amplitude_sigma: float = 0.05
    bb1: bool = False
    calibrate: bool = True

    def build(self) -> NoiseConfig:
        pulses = PulseErrorModel(self.amplitude_sigma, True, self.bb1) if self.pulse_errors else None
        return NoiseConfig(self.sigma, pulses, RelaxationParams() if self.relaxation else None,
                           self.calibrate)

    @property
    def stochastic(self) -> bool:
        return self.sigma > 0 or self.pulse_errors


def _default_deltas():
    return [round(0.05 + 0.025 * k, 10) for k in range(19)]


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  Defaults mirror the reference experiment."""

    study: str
    seed: int | None = None
    output: str = "results"
    quench: float = 0.2
    system: SpinSystem = field(default_factory=SpinSystem)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    nm: NmConfig = field(default_factory=NmConfig)
    runs: int = 1
    epsilon: float = 1e-5
    readout_step: float = DEFAULT_STEP
    alpha_points: int = 256
    probe: str = "thermal"
    theta: tuple = OPTIMAL_THETA
    spins: int = 10
    deltas: tuple = field(default_factory=lambda: tuple(_default_deltas()))
    trials: int = 50
    n_values: tuple = tuple(range(4, 41, 2))
    temperatures: tuple = (0.0, 1e-3, 1e-2, 0.1, 1.0, 300.0)

    @property
    def stochastic(self) -> bool:
        if self.study == "delta-sweep":
            return True
        return self.study == "optimize" and self.noise.stochastic

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = {f.name: getattr(self.system, f.name) for f in fields(SpinSystem)}
        return d


_SECTIONS = {"system": SpinSystem, "noise": NoiseSettings, "nm": NmConfig}
_TOP = {f.name: f for f in fields(ExperimentConfig)}
_NUMBER = (int, float)


def _type_ok(value, kind) -> bool:
    if kind is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if kind is int:
        return isinstance(value, int)
    if kind is float:
        return isinstance(value, _NUMBER) and math.isfinite(value)
    if kind is str:
        return isinstance(value, str)
    return True


_FIELD_TYPES = {
    "system": {"n_peripheral": int, "j_coupling": float, "gamma_central": float,
               "gamma_peripheral": float, "tau": float, "central_weight": str,
               "gamma_normalization": str},
    "noise": {"sigma": float, "relaxation": bool, "pulse_errors": bool,
              "amplitude_sigma": float, "bb1": bool, "calibrate": bool},
    "nm": {"reflection": float, "expansion": float, "contraction": float, "shrink": float,
           "max_iterations": int, "reflection_variant": str, "spread_tol": float},
    "": {"study": str, "seed": int, "output": str, "quench": float, "runs": int,
         "epsilon": float, "readout_step": float, "alpha_points": int, "probe": str,
         "spins": int, "trials": int},
}
_LIST_TYPES = {"theta": float, "deltas": float, "n_values": int, "temperatures": float}
_NULLABLE = {"seed", "gamma_central", "gamma_peripheral", "tau", "spread_tol"}


def _check_fields(obj, section: str, problems: list) -> dict:
    prefix = f"{section}." if section else ""
    types = _FIELD_TYPES[section]
    out = {}
    for key, value in obj.items():
        name = prefix + key
        if key in _SECTIONS and not section:
            continue
        if key in _LIST_TYPES and not section:
            kind = _LIST_TYPES[key]
            if not isinstance(value, list) or not all(_type_ok(v, kind) for v in value):
                problems.append(f"{name}: expected a list of {kind.__name__}")
            else:
                out[key] = tuple(value)
            continue
        if key not in types:
            problems.append(f"{name}: unknown field")
            continue
        if value is None and key in _NULLABLE:
            out[key] = None
        elif not _type_ok(value, types[key]):
            problems.append(f"{name}: expected {types[key].__name__}, got {json.dumps(value)}")
        else:
            out[key] = float(value) if types[key] is float else value
    return out


def parse_config(text: str, validate: bool = True) -> ExperimentConfig:
    """Parse a JSON configuration; raise ConfigError with all problems.

    ``validate=False`` skips the cross-field checks so callers can apply
    overrides (such as a command-line seed) first.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    problems = []
    top = _check_fields(raw, "", problems)
    sections = {}
    for name, cls in _SECTIONS.items():
        if name not in raw:
            continue
        if not isinstance(raw[name], dict):
            problems.append(f"{name}: expected an object")
            continue
        kwargs = _check_fields(raw[name], name, problems)
        try:
            sections[name] = cls(**kwargs)
        except DomainError as exc:
            problems.append(f"{name}: {exc}")
    if "study" not in raw:
        problems.append("study: required field missing")
    elif top.get("study") not in STUDIES:
        problems.append(f"study: must be one of {', '.join(STUDIES)}")
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(**top, **sections)
    if validate:
        validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Range checks that span fields; raises ConfigError."""
    problems = []
    if cfg.seed is not None and not 0 <= cfg.seed <= SEED_MAX:
        problems.append("seed: must be a 64-bit unsigned integer")
    if cfg.stochastic and cfg.seed is None:
        problems.append(f"seed: required for the stochastic study {cfg.study!r}")
    if not 0 < cfg.quench:
        problems.append("quench: must be positive")
    if cfg.noise.sigma < 0 or cfg.noise.amplitude_sigma < 0:
        problems.append("noise: standard deviations must be non-negative")
    if cfg.runs < 1:
        problems.append("runs: must be at least 1")
    if not cfg.epsilon > 0:
        problems.append("epsilon: must be positive")
    if not cfg.readout_step > 0:
        problems.append("readout_step: must be positive")
    if cfg.alpha_points < 2:
        problems.append("alpha_points: need at least 2")
    if cfg.probe not in ("thermal", "engineered"):
        problems.append("probe: must be 'thermal' or 'engineered'")
    if len(cfg.theta) != 6:
        problems.append("theta: need exactly 6 angles")
    if cfg.spins < 1:
        problems.append("spins: must be positive")
    if not cfg.deltas or any(d <= 0 for d in cfg.deltas):
        problems.append("deltas: need a non-empty list of positive quenches")
    if cfg.trials < 1:
        problems.append("trials: must be at least 1")
    if not cfg.n_values or any(n < 1 for n in cfg.n_values):
        problems.append("n_values: need positive spin counts")
    if not cfg.temperatures or any(t < 0 for t in cfg.temperatures):
        problems.append("temperatures: need non-negative temperatures")
    if problems:
        raise ConfigError(problems)


def load_config(path, validate: bool = True) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), validate)


# --- output -----------------------------------------------------------------

@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.header)
        if any(len(r) != width for r in self.rows):
            raise DomainError("table rows must match the header width")

    def column(self, name: str) -> list:
        k = self.header.index(name)
        return [r[k] for r in self.rows]


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit_csv(table: Table, path) -> Path:
    """Write header plus rows; floats with 17 significant digits, LF, UTF-8."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.header)
        for row in table.rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def read_csv(path) -> Table:
    """Parse a file written by :func:`emit_csv`; numeric cells become floats."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            row = []
            for cell in raw:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(row)
    return Table(header, rows)


def versions() -> dict:
    import mpmath
    import scipy
    from . import __version__
    return {"echoqfi": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "mpmath": mpmath.__version__}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def emit_sidecar(cfg: ExperimentConfig, table: Table, path) -> Path:
    meta = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "gamma_convention": cfg.system.convention(),
        "sql_convention": SQL_CONVENTION,
        "columns": table.header,
        "study": table.meta,
        "versions": versions(),
    }
    path = Path(path)
    path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# --- worker pool ------------------------------------------------------------

def resolve_workers(flag: int | None = None) -> int:
    """Worker count: explicit flag, else $ECHOQFI_WORKERS, else 1."""
    if flag is None:
        env = os.environ.get(WORKERS_ENV)
        if env is None or env.strip() == "":
            return 1
        try:
            flag = int(env)
        except ValueError:
            raise ConfigError([f"{WORKERS_ENV}: expected an integer, got {env!r}"]) from None
    if flag < 1:
        raise ConfigError(["workers: must be at least 1"])
    return flag


def fan_out(fn, items, workers: int = 1) -> list:
    """Map ``fn`` over ``items`` and return results in index order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# --- studies ----------------------------------------------------------------

def _optimize_point(args):
    cfg, index = args
    seed = None if cfg.seed is None else derive_seed(cfg.seed, index)
    return optimize_probe(cfg.system, cfg.noise.build(), cfg.nm, cfg.quench, rng_seed=seed)


def study_optimize(cfg: ExperimentConfig, workers: int = 1) -> Table:
    traces = fan_out(_optimize_point, [(cfg, k) for k in range(cfg.runs)], workers)
    base = ["iter"] + [f"theta{k}" for k in range(1, 7)] + ["le_measured", "qfi_le", "qfi_exact"]
    header = base if cfg.runs == 1 else ["run"] + base
    rows = []
    for run, tr in enumerate(traces):
        for row in tr.rows():
            rows.append(row if cfg.runs == 1 else [run] + row)
    finals = [tr.final_qfi for tr in traces]
    meta = {"f_opt": traces[0].f_opt, "final_qfi": finals,
            "final_fraction": [f / traces[0].f_opt for f in finals],
            "evaluations": [tr.evaluations for tr in traces]}
    return Table(header, rows, meta)


def _delta_point(args):
    cfg, index = args
    return quench_trial_errors(cfg.system, cfg.noise.sigma, cfg.deltas, derive_seed(cfg.seed, index))


def study_delta_sweep(cfg: ExperimentConfig, workers: int = 1) -> Table:
    errors = fan_out(_delta_point, [(cfg, k) for k in range(cfg.trials)], workers)
    curve = np.mean(errors, axis=0)
    k = int(np.argmin(curve))
    rows = [[float(d), float(c)] for d, c in zip(cfg.deltas, curve)]
    meta = {"best_delta": float(cfg.deltas[k]), "interior_minimum": 0 < k < len(curve) - 1,
            "trials": cfg.trials, "sigma": cfg.noise.sigma}
    return Table(["delta", "mean_abs_error"], rows, meta)


def study_precision(cfg: ExperimentConfig, workers: int = 1) -> Table:
    grid = default_alpha_grid(cfg.alpha_points)
    if cfg.probe == "thermal":
        ro = thermal_deviation_readout(cfg.spins, cfg.epsilon)
    else:
        system = cfg.system
        u = engineering_unitary(CircuitParams(cfg.theta), system, "block")
        d0 = deviation_observable(system, "block")
        ro = deviation_readout(u @ d0 @ dagger(u), star_generator(system, "block"),
                               cfg.epsilon, system.gammas)
    rep = ro.report(grid, cfg.readout_step)
    header = ["alpha", "o_mean", "o_second", "derivative", "delta_alpha", "sql_ratio"]
    meta = {"probe": cfg.probe, "working_point": rep.working_point,
            "working_point_over_pi": rep.working_point / np.pi,
            "min_sql_ratio": rep.best_sql_ratio, "min_sql_ratio_db": 10 * np.log10(rep.best_sql_ratio),
            "qcrb": rep.qcrb, "conventions": rep.conventions}
    return Table(header, list(rep.rows()), meta)


def _scaling_point(args):
    cfg, n = args
    res = scaling_sweep([n], cfg.epsilon, "thermal", cfg.readout_step, default_alpha_grid(cfg.alpha_points))
    return res.rows[0]


def study_scaling(cfg: ExperimentConfig, workers: int = 1) -> Table:
    rows = fan_out(_scaling_point, [(cfg, int(n)) for n in cfg.n_values], workers)
    table = np.array(rows, dtype=float)
    slope = float(np.polyfit(np.log(table[:, 0]), np.log(table[:, 1]), 1)[0]) if len(rows) > 1 else float("nan")
    ratio = float(np.exp(np.mean(np.log(table[:, 5]))))
    header = ["n", "delta_alpha", "delta_alpha_sql", "delta_alpha_opt", "alpha_tilde", "ratio"]
    return Table(header, rows, {"slope": slope, "ratio_geometric_mean": ratio})


def _purity_point(args):
    cfg, temp = args
    grid, res = purity_sweep([temp], cfg.spins, default_alpha_grid(cfg.alpha_points), cfg.readout_step)
    return grid, res[0]


def study_purity(cfg: ExperimentConfig, workers: int = 1) -> Table:
    results = fan_out(_purity_point, [(cfg, float(t)) for t in cfg.temperatures], workers)
    rows, meta = [], {"qcrb_ratio": {}, "min_sql_ratio": {}}
    for grid, r in results:
        for a, v in zip(grid, r["curve"]):
            rows.append([r["temperature"], r["lambda0"], float(a), float(v)])
        meta["qcrb_ratio"][str(r["temperature"])] = r["qcrb_ratio"]
        meta["min_sql_ratio"][str(r["temperature"])] = float(np.min(r["curve"]))
    return Table(["temperature", "lambda0", "alpha", "sql_ratio"], rows, meta)


def study_validate(cfg: ExperimentConfig | None = None, workers: int = 1) -> Table:
    from .validation import run_checks
    results = run_checks()
    rows = [[r.name, r.passed, r.detail] for r in results]
    return Table(["check", "passed", "detail"], rows, {"all_passed": all(r.passed for r in results)})


STUDY_FUNCS = {
    "optimize": study_optimize,
    "delta-sweep": study_delta_sweep,
    "precision": study_precision,
    "scaling": study_scaling,
    "purity": study_purity,
    "validate": study_validate,
}


@dataclass
class RunResult:
    exit_code: int
    table: Table | None = None
    csv_path: Path | None = None
    json_path: Path | None = None
    message: str = ""


def run(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> RunResult:
    """Run one study and write its CSV and JSON sidecar.

    Exit codes: 0 success, 1 failed validation, 3 capacity or I/O error.
    """
    out = Path(cfg.output if out_dir is None else out_dir)
    try:
        table = STUDY_FUNCS[cfg.study](cfg, workers)
    except CapacityError as exc:
        return RunResult(EXIT_CAPACITY, message=f"capacity exceeded: {exc}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = emit_csv(table, out / f"{cfg.study}.csv")
        json_path = emit_sidecar(cfg, table, out / f"{cfg.study}.json")
    except OSError as exc:
        return RunResult(EXIT_CAPACITY, table, message=f"cannot write output: {exc}")
    code = EXIT_OK
    if cfg.study == "validate" and not table.meta["all_passed"]:
        code = EXIT_FAILED
    return RunResult(code, table, csv_path, json_path)


def print_table(table: Table, stream=None) -> None:
    stream = sys.stdout if stream is None else stream
    widths = [max(len(format_cell(v)) for v in [h] + [r[k] for r in table.rows])
              for k, h in enumerate(table.header)]
    for row in [table.header] + table.rows:
        stream.write("  ".join(format_cell(v).ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")
