"""Closed-loop experiments: MPCT controller driving the simulated robot."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from mpct.errors import ContractError, MpctError
from mpct.plant import PendulumParams, apply_impulse, simulate_interval
from mpct.problem import MpctProblem, PenaltySpec, build_offline, load_problem, pendulum_problem
from mpct.solver import MpctController, SolveOptions

STATE_COLUMNS = ("phi", "phi_dot", "theta_dot")
CSV_COLUMNS = (
    "t", "phi", "phi_dot", "theta_dot", "u", "iters", "residual_inf", "status", "solve_time_s",
    "xref_phi", "xref_phi_dot", "xref_theta_dot", "u_ref",
)
BUILTIN_PREFIX = "builtin:"


def data_path(name: str) -> Path:
    """Path of a file bundled in ``mpct/data``."""
    return Path(str(resources.files("mpct").joinpath("data", name)))


@dataclass
class ExperimentConfig:
    problem: MpctProblem
    penalty: PenaltySpec
    plant_params: PendulumParams = field(default_factory=PendulumParams)
    plant_type: str = "nonlinear"
    substeps: int = 20
    duration: float = 10.0
    Ts: float = 0.02
    initial_state: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbances: list[tuple[float, float]] = field(default_factory=list)
    references: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)
    solver: SolveOptions = field(default_factory=lambda: SolveOptions(tol=1e-3, warm_start=True))
    seed: int = 0
    log_timing: bool = True

    def __post_init__(self):
        if self.plant_type not in ("nonlinear", "linear"):
            raise ContractError(f"unknown plant type {self.plant_type!r}")
        if self.plant_type == "nonlinear" and self.problem.n != 3:
            raise ContractError("the nonlinear pendulum plant needs a 3-state problem")
        if abs(self.Ts - self.problem.model.Ts) > 1e-12:
            raise ContractError(f"config Ts={self.Ts} differs from model Ts={self.problem.model.Ts}")
        steps = self.duration / self.Ts
        if abs(steps - round(steps)) > 1e-9 or steps < 1:
            raise ContractError("duration must be a positive multiple of Ts")
        for sched in (self.disturbances, self.references):
            times = [entry[0] for entry in sched]
            if times != sorted(times):
                raise ContractError("schedules must be sorted by time")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.Ts))

    def step_of(self, t: float) -> int:
        return int(round(t / self.Ts))


@dataclass
class TrajectoryLog:
    records: list[dict[str, Any]] = field(default_factory=list)
    error: str | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass(frozen=True)
class IterationStats:
    max: float
    min: float
    median: float
    mean: float

    def to_dict(self) -> dict[str, float]:
        return {"max": self.max, "min": self.min, "median": self.median, "mean": self.mean}


def _stats(values) -> IterationStats:
    vals = np.sort(np.asarray(values, dtype=float))
    if vals.size == 0:
        raise ContractError("cannot compute statistics of an empty log")
    # lower-middle element for even counts
    return IterationStats(float(vals[-1]), float(vals[0]), float(vals[(vals.size - 1) // 2]), float(vals.mean()))


def compute_stats(log: TrajectoryLog | list) -> dict[str, IterationStats]:
    """Max/min/median/mean of iteration counts and solve times."""
    if isinstance(log, TrajectoryLog):
        iters = log.column("iters") if len(log) else []
        times = log.column("solve_time_s") if len(log) else []
    else:
        iters, times = log, [0.0] * len(log)
    it = _stats(iters)
    return {"iters": it, "time_s": _stats(times)}


def _vec(val, size: int, name: str) -> np.ndarray:
    arr = np.asarray(val, dtype=float).reshape(-1)
    if arr.size != size:
        raise ContractError(f"{name}: expected {size} values, got {arr.size}")
    return arr


def config_from_dict(d: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from its JSON form.

    ``problem`` is a path (relative to ``base_dir``) to a problem file, or
    ``"builtin:pendulum"``/absent for the case-study controller.
    """
    base_dir = base_dir or Path.cwd()
    try:
        plant = d.get("plant", {})
        params = PendulumParams(**plant.get("params", {}))
        if "phi0" in plant:
            params = params.replace(phi0=float(plant["phi0"]))

        prob_ref = d.get("problem", BUILTIN_PREFIX + "pendulum")
        if prob_ref == BUILTIN_PREFIX + "pendulum":
            prob, pen = pendulum_problem(), PenaltySpec()
        else:
            path = Path(prob_ref)
            if prob_ref.startswith(BUILTIN_PREFIX):
                path = data_path(prob_ref[len(BUILTIN_PREFIX):] + ".json")
            elif not path.is_absolute():
                path = base_dir / path
            prob, pen = load_problem(path)
        n, m = prob.n, prob.m

        solver = d.get("solver", {})
        opts = SolveOptions(
            tol=float(solver.get("tol", 1e-3)),
            max_iters=int(solver.get("max_iters", 4000)),
            warm_start=bool(solver.get("warm_start", True)),
        )
        seed = int(d.get("seed", 0))

        dist = d.get("disturbances", [])
        if isinstance(dist, dict):
            dist = _random_pushes(dist, float(d["duration"]), seed)
        disturbances = [(float(t), float(dv)) for t, dv in dist]

        refs = [
            (float(t), _vec(xr, n, "x_ref"), _vec(ur, m, "u_ref"))
            for t, xr, ur in d.get("references", [])
        ]
        return ExperimentConfig(
            problem=prob,
            penalty=pen,
            plant_params=params,
            plant_type=plant.get("type", "nonlinear"),
            substeps=int(plant.get("substeps", 20)),
            duration=float(d["duration"]),
            Ts=float(d.get("Ts", prob.model.Ts)),
            initial_state=_vec(d.get("initial_state", [0.0] * n), n, "initial_state"),
            disturbances=disturbances,
            references=refs,
            solver=opts,
            seed=seed,
            log_timing=bool(d.get("log_timing", True)),
        )
    except KeyError as exc:
        raise ContractError(f"config is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"malformed config: {exc}") from exc


def _random_pushes(spec: dict, duration: float, seed: int) -> list[tuple[float, float]]:
    """Pushes every ``interval`` s from ``start`` with random sign and a
    magnitude drawn uniformly from ``[min_fraction, 1] * magnitude``."""
    rng = np.random.default_rng(seed)
    start, interval = float(spec.get("start", 2.0)), float(spec.get("interval", 2.0))
    magnitude = float(spec.get("magnitude", 1.5))
    lo = float(spec.get("min_fraction", 0.5))
    times = np.arange(start, duration, interval)
    signs = rng.choice([-1.0, 1.0], size=times.size)
    mags = rng.uniform(lo, 1.0, size=times.size) * magnitude
    return [(float(t), float(s * a)) for t, s, a in zip(times, signs, mags)]


def load_config(path: str | Path) -> ExperimentConfig:
    path_str = str(path)
    if path_str.startswith(BUILTIN_PREFIX):
        path = data_path(path_str[len(BUILTIN_PREFIX):] + ".json")
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ContractError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ContractError(f"{path}: expected a JSON object")
    return config_from_dict(data, path.parent)


def run_closed_loop(cfg: ExperimentConfig) -> TrajectoryLog:
    """Simulate ``cfg.duration`` seconds of exact-state-feedback control.

    Each period: solve at the current state, hold ``u0`` for ``Ts`` on the
    plant, then apply the pushes scheduled for the end of the period.
    Solver or plant failures stop the run; the partial log is returned with
    ``error`` set.
    """
    off = build_offline(cfg.problem, cfg.penalty)
    ctl = MpctController(off, cfg.solver)
    model = cfg.problem.model
    n, m = cfg.problem.n, cfg.problem.m

    pushes: dict[int, float] = {}
    for t, dv in cfg.disturbances:
        k = cfg.step_of(t)
        pushes[k] = pushes.get(k, 0.0) + dv
    ref_steps = [(cfg.step_of(t), xr, ur) for t, xr, ur in cfg.references]
    x_ref, u_ref = np.zeros(n), np.zeros(m)

    x = np.array(cfg.initial_state, dtype=float)
    if 0 in pushes:
        x = apply_impulse(x, pushes[0])
    log = TrajectoryLog()
    ref_idx = 0
    for k in range(cfg.steps):
        while ref_idx < len(ref_steps) and ref_steps[ref_idx][0] <= k:
            _, x_ref, u_ref = ref_steps[ref_idx]
            ref_idx += 1
        tic = time.perf_counter()
        try:
            sol = ctl.solve(x, x_ref, u_ref)
        except MpctError as exc:
            log.error = f"solver failure at t={k * cfg.Ts:.3f}: {exc}"
            break
        elapsed = time.perf_counter() - tic if cfg.log_timing else 0.0
        u = sol.u0.copy()

        rec: dict[str, Any] = {"t": k * cfg.Ts}
        names = STATE_COLUMNS if n == 3 else tuple(f"x{i}" for i in range(n))
        for name, val in zip(names, x):
            rec[name] = float(val)
        rec.update(
            u=float(u[0]),
            iters=sol.iters,
            residual_inf=sol.residual_inf,
            status=sol.status,
            solve_time_s=elapsed,
            xref_phi=float(x_ref[0]),
            xref_phi_dot=float(x_ref[1]) if n > 1 else 0.0,
            xref_theta_dot=float(x_ref[2]) if n > 2 else 0.0,
            u_ref=float(u_ref[0]),
        )
        log.records.append(rec)

        try:
            if cfg.plant_type == "linear":
                x = model.step(x, u)
            else:
                x = simulate_interval(x, float(u[0]), cfg.Ts, cfg.plant_params, cfg.substeps)
        except MpctError as exc:
            log.error = f"plant failure at t={(k + 1) * cfg.Ts:.3f}: {exc}"
            break
        if k + 1 in pushes:
            x = apply_impulse(x, pushes[k + 1])
        if not np.all(np.isfinite(x)):
            log.error = f"plant state became non-finite at t={(k + 1) * cfg.Ts:.3f}"
            break
    return log


def write_outputs(log: TrajectoryLog, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``trajectory.csv`` and ``stats.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, stats_path = out / "trajectory.csv", out / "stats.json"
    csv_path.write_text(log.to_csv())
    payload: dict[str, Any] = {}
    if len(log):
        payload = {k: v.to_dict() for k, v in compute_stats(log).items()}
    if log.error:
        payload["error"] = log.error
    stats_path.write_text(json.dumps(payload, indent=2) + "\n")
    return csv_path, stats_path


def settling_times(log: TrajectoryLog, push_times, threshold: float = 0.01) -> list[float]:
    """Time from each push until ``|phi|`` first drops back below ``threshold``
    after its post-push peak; ``inf`` if it never does before the next push."""
    t = log.column("t")
    phi = np.abs(log.column("phi"))
    out = []
    push_times = list(push_times)
    for i, tp in enumerate(push_times):
        t_end = push_times[i + 1] if i + 1 < len(push_times) else t[-1] + 1.0
        window = (t >= tp - 1e-9) & (t < t_end - 1e-9)
        tw, pw = t[window], phi[window]
        if tw.size == 0:
            out.append(np.inf)
            continue
        peak = int(np.argmax(pw))
        below = np.flatnonzero(pw[peak:] < threshold)
        out.append(float(tw[peak + below[0]] - tp) if below.size else np.inf)
    return out
