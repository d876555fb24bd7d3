"""Monte Carlo experiment runner.

An experiment sweeps a grid of network configurations (source antennas,
relay layout, relay power, uncertainty ratio) and evaluates a list of
methods on the same channel draws at every grid point.  Results are
reduced per grid point and written as CSV with a JSON sidecar.

Three kinds of experiment are supported:

``snr``
    Mean worst-case SNR of source/relay designs.
``iterations``
    Iteration counts of Dinkelbach's method and of bisection for the robust
    power allocation.
``convergence``
    Relative error of the polyblock lower and upper bounds per iteration.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import itertools
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .closedform import jing_power_allocation, perfect_snr
from .conic import SolverError
from .convex import FEASTOL, GAPTOL, STATS
from .dinkelbach import DinkelbachError, bisection_solve, dinkelbach_solve
from .heuristics import nonrobust_design, robust_gradient, simplified_robust
from .model import NetworkConfig, db_to_linear, effective_gains, generate_channels, linear_to_db, vertex_set
from .pa import MAX_ITER as PA_MAX_ITER
from .pa import nonrobust_start, pa_solve
from .snr import SnrContext, worst_case_snr

log = logging.getLogger(__name__)

SNR_METHODS = (
    "perfect_optimal",
    "perfect_gradient",
    "robust_optimal",
    "robust_gradient",
    "simplified_robust",
    "nonrobust",
)
ITERATION_METHODS = ("dinkelbach", "bisection")
CONVERGENCE_METHODS = ("pa",)
KINDS = {"snr": SNR_METHODS, "iterations": ITERATION_METHODS, "convergence": CONVERGENCE_METHODS}
MAX_FAILURE_RATE = 0.05
AVERAGING_NOTE = "mean_snr_db is 10*log10 of the mean linear SNR; std_db is the standard deviation of per-trial dB values"
TRIAL_ERRORS = (SolverError, DinkelbachError, np.linalg.LinAlgError)


class ExperimentAborted(RuntimeError):
    """Raised when too many trials of a sweep point fail."""


@dataclass
class ExperimentSpec:
    """Sweep definition.

    The grid is the Cartesian product of ``n_t``, ``relay_antennas`` (each
    entry lists the antenna count of every relay), ``relay_power_db`` and
    ``rho``.  Powers are in dB relative to the unit noise variance.
    """

    name: str
    methods: list
    kind: str = "snr"
    n_t: list = field(default_factory=lambda: [2])
    relay_antennas: list = field(default_factory=lambda: [[2, 2]])
    relay_power_db: list = field(default_factory=lambda: [float(p) for p in range(0, 45, 5)])
    rho: list = field(default_factory=lambda: [0.3])
    n_trials: int = 100
    base_seed: int = 0
    delta1: float = 0.01
    delta2: float = 0.1
    p_s_db: float = 10.0
    sigma2_r: float = 1.0
    sigma2_d: float = 1.0
    pa_max_iter: int = PA_MAX_ITER
    # convergence experiments: iterations reported and stopping gap of the reference run
    track_iterations: int = 30
    reference_delta2: float = 0.01

    def __post_init__(self):
        self.n_t = [int(x) for x in _as_list(self.n_t)]
        ra = _as_list(self.relay_antennas)
        if ra and not isinstance(ra[0], (list, tuple)):
            ra = [ra]
        self.relay_antennas = [[int(m) for m in layout] for layout in ra]
        self.relay_power_db = [float(x) for x in _as_list(self.relay_power_db)]
        self.rho = [float(x) for x in _as_list(self.rho)]
        self.methods = [str(m) for m in _as_list(self.methods)]
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if int(self.n_trials) < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        allowed = KINDS[self.kind]
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ValueError(f"methods {bad} not valid for kind {self.kind!r}; allowed: {list(allowed)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate method")
        for name in ("n_t", "relay_antennas", "relay_power_db", "rho"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(x < 1 for x in self.n_t):
            raise ValueError("n_t entries must be positive")
        if any(not layout or min(layout) < 1 for layout in self.relay_antennas):
            raise ValueError("relay layouts need at least one relay with positive antenna counts")
        if any(not 0.0 <= r < 1.0 for r in self.rho):
            raise ValueError("rho entries must lie in [0, 1)")
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("tolerances must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def points(self):
        """Sweep points in deterministic order."""
        return [
            SweepPoint(n_t, tuple(layout), power, rho)
            for n_t, layout, power, rho in itertools.product(self.n_t, self.relay_antennas, self.relay_power_db, self.rho)
        ]

    def config(self, point: "SweepPoint") -> NetworkConfig:
        r = len(point.relay_antennas)
        p_relay = float(db_to_linear(point.relay_power_db))
        return NetworkConfig(
            point.n_t,
            point.relay_antennas,
            float(db_to_linear(self.p_s_db)),
            (p_relay,) * r,
            self.sigma2_r,
            self.sigma2_d,
            point.rho,
        )


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


@dataclass(frozen=True)
class SweepPoint:
    n_t: int
    relay_antennas: tuple
    relay_power_db: float
    rho: float


def trial_seed(base_seed: int, trial: int) -> int:
    """Channel seed of a trial; independent of the sweep point and the method."""
    return int(np.random.SeedSequence([int(base_seed), int(trial)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# single trials
# --------------------------------------------------------------------------
def _snr_trial(spec, ch, cfg):
    out = {}
    need_perfect = {"perfect_optimal", "nonrobust", "simplified_robust", "robust_optimal"}
    nominal = ch.nominal()
    perfect = pa_solve(nominal, cfg, spec.delta2, delta1=spec.delta1, max_iter=spec.pa_max_iter) if need_perfect & set(spec.methods) else None
    base = nonrobust_design(ch, cfg, g=perfect.g) if perfect is not None else None
    for m in spec.methods:
        if m == "perfect_optimal":
            out[m] = (perfect.snr, perfect.state.iteration, perfect.state.converged)
        elif m == "nonrobust":
            out[m] = (base.snr, 0, True)
        elif m == "simplified_robust":
            out[m] = (simplified_robust(ch, cfg, g=perfect.g)[2], 0, True)
        elif m == "robust_optimal":
            res = pa_solve(
                ch, cfg, spec.delta2, delta1=spec.delta1, g_init=perfect.g, c_init=base.c, max_iter=spec.pa_max_iter
            )
            out[m] = (res.snr, res.state.iteration, res.state.converged)
        elif m == "perfect_gradient":
            res = robust_gradient(nominal, cfg)
            out[m] = (res.snr, res.steps, True)
        elif m == "robust_gradient":
            res = robust_gradient(ch, cfg)
            out[m] = (res.snr, res.steps, True)
    return out


def _iteration_trial(spec, ch, cfg):
    g = nonrobust_start(ch, cfg)
    u = effective_gains(ch, g).u_norms
    ctx = SnrContext.from_config(cfg, u)
    verts = vertex_set(ch)
    fn = ch.f_norms
    c_nr = jing_power_allocation(u, fn, cfg.p_relay, cfg.sigma2_r, cfg.sigma2_d).c
    lo, _ = worst_case_snr(c_nr, verts, ctx)
    hi = perfect_snr(c_nr, u, fn, cfg.sigma2_r, cfg.sigma2_d)
    out = {}
    for m in spec.methods:
        if m == "dinkelbach":
            res = dinkelbach_solve(u, verts, ctx, spec.delta1)
        else:
            res = bisection_solve(u, verts, ctx, spec.delta1, lo, hi)
        out[m] = (res.gamma, res.iterations)
    return out


def _convergence_trial(spec, ch, cfg):
    res = pa_solve(ch, cfg, spec.reference_delta2, delta1=spec.delta1, max_iter=max(spec.pa_max_iter, spec.track_iterations))
    f_opt = res.snr
    trace = res.trace
    lower = np.empty(spec.track_iterations + 1)
    upper = np.empty(spec.track_iterations + 1)
    j = 0
    for k in range(spec.track_iterations + 1):
        while j + 1 < len(trace) and trace[j + 1][0] <= k:
            j += 1
        lower[k] = (trace[j][1] - f_opt) / f_opt
        upper[k] = (trace[j][2] - f_opt) / f_opt
    return {"pa": (lower, upper, res.state.converged)}


_TRIALS = {"snr": _snr_trial, "iterations": _iteration_trial, "convergence": _convergence_trial}


def run_trial(spec: ExperimentSpec, point: SweepPoint, trial: int):
    """Evaluate all methods of ``spec`` on one channel draw.

    Returns ``(trial, results or None, error text or None, solver stats)``.
    """
    cfg = spec.config(point)
    saved = STATS.as_dict()
    STATS.reset()
    try:
        ch = generate_channels(cfg, trial_seed(spec.base_seed, trial))
        out, err = _TRIALS[spec.kind](spec, ch, cfg), None
    except TRIAL_ERRORS as exc:
        out, err = None, f"{type(exc).__name__}: {exc}"
        log.warning("trial %d at %s failed: %s", trial, point, err)
    stats = STATS.as_dict()
    STATS.reset()
    STATS.merge(saved)
    STATS.merge(stats)
    return trial, out, err, stats


def _run_task(args):
    return run_trial(*args)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------
@dataclass
class ResultTable:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)


def _sweep_columns(spec):
    cols = []
    if len(spec.n_t) > 1:
        cols.append("n_t")
    if len(spec.relay_antennas) > 1:
        cols.append("relay_antennas")
    return cols + ["relay_power_db", "rho"]


def _point_values(point, cols):
    vals = {
        "n_t": point.n_t,
        "relay_antennas": "-".join(str(m) for m in point.relay_antennas),
        "relay_power_db": point.relay_power_db,
        "rho": point.rho,
    }
    return [vals[c] for c in cols]


def _reduce_point(spec, point, results, cols):
    ok = [r for r in results if r is not None]
    n_ok = len(ok)
    key = _point_values(point, cols)
    rows, extra = [], []
    for m in spec.methods:
        if spec.kind == "snr":
            snr = np.array([r[m][0] for r in ok], dtype=float)
            its = np.array([r[m][1] for r in ok], dtype=float)
            db = linear_to_db(snr)
            mean_db = float(linear_to_db(snr.mean())) if n_ok else float("nan")
            std_db = float(db.std()) if n_ok else float("nan")
            rows.append(key + [m, mean_db, std_db, n_ok])
            extra.append(
                {
                    "point": key,
                    "method": m,
                    "mean_of_db": float(db.mean()) if n_ok else float("nan"),
                    "mean_linear": float(snr.mean()) if n_ok else float("nan"),
                    "mean_iterations": float(its.mean()) if n_ok else float("nan"),
                    # trials where the polyblock search stopped at its iteration cap
                    "unconverged": sum(not r[m][2] for r in ok),
                }
            )
        elif spec.kind == "iterations":
            its = np.array([r[m][1] for r in ok], dtype=float)
            rows.append(
                key
                + [m, float(its.mean()) if n_ok else float("nan"), float(its.std()) if n_ok else float("nan"), n_ok]
            )
        else:
            lower = np.array([r[m][0] for r in ok]).reshape(n_ok, -1)
            upper = np.array([r[m][1] for r in ok]).reshape(n_ok, -1)
            conv = sum(bool(r[m][2]) for r in ok)
            for k in range(spec.track_iterations + 1):
                lo = float(lower[:, k].mean()) if n_ok else float("nan")
                up = float(upper[:, k].mean()) if n_ok else float("nan")
                rows.append(key + [m, k, lo, up, n_ok])
            extra.append({"point": key, "method": m, "reference_converged": conv})
    return rows, extra


def _columns(spec, cols):
    if spec.kind == "snr":
        return cols + ["method", "mean_snr_db", "std_db", "n_ok"]
    if spec.kind == "iterations":
        return cols + ["method", "mean_iterations", "std_iterations", "n_ok"]
    return cols + ["method", "iteration", "mean_lower_err", "mean_upper_err", "n_ok"]


def run_experiment(spec: ExperimentSpec, *, threads: int = 1, progress=None) -> ResultTable:
    """Run every sweep point of ``spec`` over ``n_trials`` channel draws.

    Trial ``t`` uses the same channel seed at every sweep point and for
    every method.  Trials that raise a solver error are excluded and
    counted; more than 5% failures at a point raises
    :class:`ExperimentAborted`.  The output does not depend on ``threads``.
    """
    spec.validate()
    cols = _sweep_columns(spec)
    points = spec.points()
    n = int(spec.n_trials)
    tasks = [(spec, p, t) for p in points for t in range(n)]
    results = {}
    stats_total = {}
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            for (_, p, _), res in zip(tasks, pool.map(_run_task, tasks, chunksize=1)):
                results[(p, res[0])] = res
                if progress:
                    progress(len(results), len(tasks))
    else:
        for task in tasks:
            res = _run_task(task)
            results[(task[1], res[0])] = res
            if progress:
                progress(len(results), len(tasks))

    rows, extra, failures = [], [], []
    for p in points:
        per = [results[(p, t)] for t in range(n)]
        for _, _, _, st in per:
            _merge_stats(stats_total, st)
        bad = [(t, err) for t, out, err, _ in per if out is None]
        if bad:
            failures.append({"point": _point_values(p, cols), "failed": len(bad), "errors": [e for _, e in bad]})
        if len(bad) > MAX_FAILURE_RATE * n:
            raise ExperimentAborted(f"{len(bad)} of {n} trials failed at {p}: {bad[0][1]}")
        r, e = _reduce_point(spec, p, [out for _, out, _, _ in per], cols)
        rows.extend(r)
        extra.extend(e)

    meta = {
        "name": spec.name,
        "version": __version__,
        "kind": spec.kind,
        "seed": spec.base_seed,
        "n_trials": n,
        "tolerances": {
            "delta1": spec.delta1,
            "delta2": spec.delta2,
            "pa_max_iter": spec.pa_max_iter,
            "solver_feastol": FEASTOL,
            "solver_gaptol": GAPTOL,
        },
        "averaging": AVERAGING_NOTE if spec.kind == "snr" else "arithmetic mean over successful trials",
        "spec": spec.to_dict(),
        "failures": failures,
        "solver": stats_total,
        "per_method": extra,
    }
    return ResultTable(_columns(spec, cols), rows, meta)


def _merge_stats(total, st):
    for k, v in st.items():
        if k.startswith("max_"):
            total[k] = max(total.get(k, 0.0), v)
        else:
            total[k] = total.get(k, 0) + v


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------
def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(table.columns)
    for row in table.rows:
        wr.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_csv(table: ResultTable, path) -> str:
    """Write ``table`` as UTF-8 CSV with a header row; returns the path."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table_to_csv(table))
    return str(path)


def emit_meta(table: ResultTable, path) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return str(path)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_outputs(table: ResultTable, out_dir, name=None):
    """Write ``<name>.csv`` and ``<name>.meta.json`` into ``out_dir``."""
    name = name or table.meta.get("name", "experiment")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = emit_csv(table, os.path.join(out_dir, f"{name}.csv"))
    meta_path = emit_meta(table, os.path.join(out_dir, f"{name}.meta.json"))
    return csv_path, meta_path


# --------------------------------------------------------------------------
# spec files and presets
# --------------------------------------------------------------------------
def preset_names():
    files = resources.files("relaybf").joinpath("presets").iterdir()
    return sorted(f.name.rsplit(".", 1)[0] for f in files if f.name.endswith(".json"))


def load_preset(name: str) -> ExperimentSpec:
    path = resources.files("relaybf").joinpath("presets", f"{name}.json")
    if not path.is_file():
        raise ValueError(f"unknown preset {name!r}; available: {preset_names()}")
    return ExperimentSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_spec(path) -> ExperimentSpec:
    """Read a spec from a ``.toml`` or ``.json`` file."""
    path = str(path)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    elif path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        raise ValueError("spec files must end in .toml or .json")
    return ExperimentSpec.from_dict(data)


def resolve_spec(ref: str) -> ExperimentSpec:
    """A preset name or the path of a spec file."""
    if os.path.exists(ref):
        return load_spec(ref)
    return load_preset(ref)


__all__ = [
    "ExperimentAborted",
    "ExperimentSpec",
    "ResultTable",
    "SweepPoint",
    "emit_csv",
    "emit_meta",
    "load_preset",
    "load_spec",
    "preset_names",
    "resolve_spec",
    "run_experiment",
    "run_trial",
    "table_to_csv",
    "trial_seed",
    "write_outputs",
]
