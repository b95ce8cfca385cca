"""Time propagation of the variational state and trajectory records.

The default integrator is adaptive Runge-Kutta (RK45): the polarized
initial condition excites modes spanning many decades of frequency, so
fixed steps are wasteful.  A fixed-step classic RK4 is available for
convergence-order checks.  Observables are recorded every
``record_stride``, not every step, so trajectory files stay small for runs
of hundreds of time units.

This module also hosts the full run description (RunSpec: physics + scheme
+ solver + integrator + initial condition), the one-call driver
run_trajectory, and the convergence_study helper that re-runs a base
configuration while varying the discretization base, the mode count or the
multiplicity.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from . import deviation as deviation_mod
from .bath import (DiscretizationKind, DiscretizationScheme, DiscretizedBath,
                   SpectralParams, discretize)
from .eom import SolverConfig, assemble_and_solve, inject_noise
from .errors import (InvalidParameterError, NormalizerDegenerateError,
                     SpinBosonError, StiffnessError)
from .state import (MultiD1State, ObservableSample, SystemParams,
                    initial_state, observe)

__all__ = [
    "IntegrationMethod",
    "IntegratorConfig",
    "TrajectoryRecord",
    "RunSpec",
    "ConvergenceReport",
    "evolve",
    "run_trajectory",
    "run_many",
    "convergence_study",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

CSV_COLUMNS = ("t", "pz", "px", "py", "entropy", "norm", "energy", "energy_bath")


class IntegrationMethod(str, Enum):
    RK45_ADAPTIVE = "rk45"
    RK4_FIXED = "rk4"


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control and recording cadence for one run."""

    t_end: float
    record_stride: float
    method: IntegrationMethod = IntegrationMethod.RK45_ADAPTIVE
    rtol: float = 1e-8
    atol: float = 1e-10
    dt: float | None = None
    record_sigma: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", IntegrationMethod(self.method))
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise InvalidParameterError(f"t_end must be > 0, got {self.t_end}")
        if not (0 < self.record_stride <= self.t_end):
            raise InvalidParameterError(
                f"record_stride must lie in (0, t_end], got {self.record_stride}")
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidParameterError("tolerances must be positive")
        if self.method is IntegrationMethod.RK4_FIXED:
            if self.dt is None or not (0 < self.dt <= self.record_stride):
                raise InvalidParameterError(
                    "fixed-step integration requires 0 < dt <= record_stride")


@dataclass
class TrajectoryRecord:
    """Recorded observables of one run, columnar, plus run metadata.

    ``sigma`` is present only when the run recorded the relative deviation;
    ``raw_deviation`` holds the unnormalized residual norms it derives from.
    """

    t: np.ndarray
    pz: np.ndarray
    px: np.ndarray
    py: np.ndarray
    entropy: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    energy_bath: np.ndarray
    sigma: np.ndarray | None = None
    raw_deviation: np.ndarray | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for name in CSV_COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.t.size == 0:
            raise InvalidParameterError("trajectory must contain samples")
        if self.t[0] != 0.0:
            raise InvalidParameterError("first sample must sit at t = 0")
        if np.any(np.diff(self.t) <= 0):
            raise InvalidParameterError("sample times must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return self.t.size

    def sample(self, i: int) -> ObservableSample:
        return ObservableSample(
            t=float(self.t[i]), pz=float(self.pz[i]), px=float(self.px[i]),
            py=float(self.py[i]), entropy=float(self.entropy[i]),
            norm=float(self.norm[i]), energy=float(self.energy[i]),
            energy_bath=float(self.energy_bath[i]),
            sigma=None if self.sigma is None else float(self.sigma[i]))

    def __iter__(self):
        return (self.sample(i) for i in range(self.n_samples))

    def write(self, csv_path) -> None:
        write_trajectory_csv(self, csv_path)


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to reproduce one trajectory."""

    spectral: SpectralParams
    scheme: DiscretizationScheme
    system: SystemParams
    solver: SolverConfig
    integrator: IntegratorConfig
    multiplicity: int = 1
    mu: float = 0.0

    def __post_init__(self):
        if self.multiplicity < 1:
            raise InvalidParameterError("multiplicity must be >= 1")
        if not (0.0 <= self.mu <= 1.0):
            raise InvalidParameterError(f"mu must lie in [0, 1], got {self.mu}")


def _meta_complex(z: complex) -> list[float]:
    return [z.real, z.imag]


def build_meta(spec: RunSpec, bath: DiscretizedBath) -> dict:
    """Deterministic, JSON-ready description of a run."""
    return {
        "system": {
            "delta": spec.system.delta,
            "epsilon": spec.system.epsilon,
            "spin_init": [_meta_complex(z) for z in spec.system.spin_init],
        },
        "bath": {
            "s": spec.spectral.s,
            "alpha": spec.spectral.alpha,
            "omega_c": spec.spectral.omega_c,
            "kind": spec.scheme.kind.value,
            "n_modes": spec.scheme.n_modes,
            "omega_max": spec.scheme.omega_max,
            "lambda_base": spec.scheme.lambda_base,
            "omega_min_edge": bath.omega_min_edge,
            "omega_min_mode": bath.omega_min_mode,
            "recurrence_time": bath.recurrence_time,
            "coupling_weight": bath.coupling_weight(),
        },
        "initial": {"mu": spec.mu, "multiplicity": spec.multiplicity},
        "solver": dataclasses.asdict(spec.solver),
        "integrator": {**dataclasses.asdict(spec.integrator),
                       "method": spec.integrator.method.value},
    }


def evolve(state0: MultiD1State, system: SystemParams, bath: DiscretizedBath,
           solver_config: SolverConfig, integrator_config: IntegratorConfig,
           extra_meta: dict | None = None,
           diagnostics_path=None) -> TrajectoryRecord:
    """Propagate a t = 0 state (noise already injected) and record observables.

    Embeds the norm and total-energy drifts over the run in the metadata;
    when sigma recording is on, also the deviation series normalizer and
    maximum.  ``diagnostics_path`` streams per-sample solver diagnostics as
    CSV rows ``t,cond_up,cond_down,residual_up,residual_down``.
    """
    if state0.time != 0.0:
        raise InvalidParameterError("evolution starts at t = 0")
    m, n = state0.multiplicity, state0.n_modes
    cfg = integrator_config
    grid = np.arange(0.0, cfg.t_end + 0.5 * cfg.record_stride, cfg.record_stride)
    grid = grid[grid <= cfg.t_end + 1e-12 * cfg.t_end]
    if grid[-1] < cfg.t_end - 1e-9 * cfg.t_end:
        grid = np.append(grid, cfg.t_end)

    n_evals = 0

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        nonlocal n_evals
        n_evals += 1
        try:
            d = assemble_and_solve(MultiD1State.unpack(y, m, n, t), system,
                                   bath, solver_config)
        except SpinBosonError as exc:
            if getattr(exc, "t", None) is None and hasattr(exc, "t"):
                exc.t = t
            raise
        return np.concatenate([d.dA, d.dB, d.df.ravel(), d.dg.ravel()])

    y0 = state0.pack()
    if cfg.method is IntegrationMethod.RK45_ADAPTIVE:
        sol = solve_ivp(rhs, (0.0, cfg.t_end), y0, method="RK45",
                        rtol=cfg.rtol, atol=cfg.atol, t_eval=grid)
        if not sol.success:
            reached = float(sol.t[-1]) if sol.t.size else 0.0
            raise StiffnessError(
                f"adaptive integration failed at t = {reached:g}: {sol.message}",
                t=reached)
        times, ys = sol.t, sol.y.T
    else:
        times, ys = _rk4_fixed(rhs, y0, grid, cfg.dt)

    diag_file = None
    diag_writer = None
    if diagnostics_path is not None:
        diag_file = open(diagnostics_path, "w", newline="")
        diag_writer = csv.writer(diag_file)
        diag_writer.writerow(["t", "cond_up", "cond_down",
                              "residual_up", "residual_down"])

    want_extras = cfg.record_sigma or diag_writer is not None
    columns = {name: [] for name in CSV_COLUMNS}
    raw_dev = [] if cfg.record_sigma else None
    try:
        for t_i, y_i in zip(times, ys):
            st = MultiD1State.unpack(y_i, m, n, float(t_i))
            sample = observe(st, system, bath)
            for name in CSV_COLUMNS:
                columns[name].append(getattr(sample, name))
            if want_extras:
                deriv, diag = assemble_and_solve(st, system, bath,
                                                 solver_config,
                                                 with_diagnostics=True)
                if diag_writer is not None:
                    diag_writer.writerow([repr(float(t_i)),
                                          repr(diag.cond_up),
                                          repr(diag.cond_down),
                                          repr(diag.residual_up),
                                          repr(diag.residual_down)])
                if raw_dev is not None:
                    raw_dev.append(math.sqrt(deviation_mod.deviation_norm_sq(
                        st, deriv, system, bath)))
    finally:
        if diag_file is not None:
            diag_file.close()

    record = TrajectoryRecord(
        **{name: np.asarray(vals) for name, vals in columns.items()},
        raw_deviation=None if raw_dev is None else np.asarray(raw_dev),
        meta=dict(extra_meta or {}))
    record.meta.update({
        "norm_drift": float(np.abs(record.norm - record.norm[0]).max()),
        "energy_drift": float(np.abs(record.energy - record.energy[0]).max()),
        "n_rhs_evals": n_evals,
    })
    if cfg.record_sigma:
        series = deviation_mod.sigma_series(record)
        record.sigma = series.sigma
        record.meta["ebar_bath"] = series.ebar_bath
        record.meta["ebar_bath_window"] = "full"
        record.meta["sigma_max"] = series.sigma_max
    return record


def _rk4_fixed(rhs, y0: np.ndarray, grid: np.ndarray, dt: float):
    """Classic RK4 marching exactly onto the sample grid."""
    ys = [y0.copy()]
    y = y0.copy()
    t = 0.0
    for target in grid[1:]:
        span = target - t
        n_steps = max(1, round(span / dt))
        h = span / n_steps
        for _ in range(n_steps):
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        t = float(target)
        ys.append(y.copy())
    return grid, np.asarray(ys)


def run_trajectory(spec: RunSpec, extra_meta: dict | None = None,
                   diagnostics_path=None) -> TrajectoryRecord:
    """Discretize, prepare the noisy initial state, evolve, attach metadata."""
    bath = discretize(spec.spectral, spec.scheme)
    state0 = inject_noise(
        initial_state(spec.system, bath, spec.multiplicity, spec.mu),
        spec.solver)
    meta = build_meta(spec, bath)
    if extra_meta:
        meta.update(extra_meta)
    return evolve(state0, spec.system, bath, spec.solver, spec.integrator,
                  extra_meta=meta, diagnostics_path=diagnostics_path)


def _run_worker(spec: RunSpec):
    try:
        return run_trajectory(spec)
    except Exception as exc:  # noqa: BLE001 - transported to the parent
        return exc


def run_many(specs, max_workers: int | None = None) -> list:
    """Run independent trajectories, one result (record or exception) per spec.

    Worker processes isolate the runs; each spec carries its own RNG seed,
    so results are independent of scheduling order.
    """
    specs = list(specs)
    if max_workers is None:
        max_workers = 1
    if max_workers <= 1 or len(specs) <= 1:
        return [_run_worker(spec) for spec in specs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_worker, specs))


def _respec(base: RunSpec, vary: str, value) -> RunSpec:
    if vary == "lambda_base":
        if base.scheme.kind is not DiscretizationKind.LOGARITHMIC:
            raise InvalidParameterError(
                "lambda_base varies only for logarithmic discretization")
        scheme = dataclasses.replace(base.scheme, lambda_base=float(value))
        return dataclasses.replace(base, scheme=scheme)
    if vary == "n_modes":
        scheme = dataclasses.replace(base.scheme, n_modes=int(value))
        return dataclasses.replace(base, scheme=scheme)
    if vary == "multiplicity":
        return dataclasses.replace(base, multiplicity=int(value))
    raise InvalidParameterError(
        f"vary must be one of lambda_base, n_modes, multiplicity; got {vary!r}")


def _count_extrema(t: np.ndarray, pz: np.ndarray, t_from: float,
                   prominence: float = 1e-3) -> int:
    """Count interior extrema of pz(t >= t_from) deeper than ``prominence``.

    Depth is the topographic prominence of the peak (or of the valley on
    the negated signal), so slow smooth oscillations register while
    integrator-level jitter does not.
    """
    z = pz[t >= t_from]
    if z.size < 3:
        return 0
    n_max = find_peaks(z, prominence=prominence)[0].size
    n_min = find_peaks(-z, prominence=prominence)[0].size
    return n_max + n_min


@dataclass
class ConvergenceReport:
    """Pairwise agreement of runs that differ in one discretization knob."""

    vary: str
    values: list
    records: list
    max_dev: np.ndarray
    threshold: float
    converged: bool
    late_extrema: list[int]

    def max_deviation(self, i: int, j: int) -> float:
        return float(self.max_dev[i, j])

    def artifact_present(self, i: int, reference: int = 0) -> bool:
        """More late-window oscillation than the reference run shows."""
        return self.late_extrema[i] > self.late_extrema[reference]


def convergence_study(base: RunSpec, vary: str, values,
                      threshold: float = 0.05,
                      max_workers: int | None = None) -> ConvergenceReport:
    """Re-run ``base`` for each value of one knob and compare Pz curves.

    All runs share the base seed so the initial noise is identical and the
    comparison isolates the discretization change.
    """
    values = list(values)
    if len(values) < 2:
        raise InvalidParameterError("convergence study needs at least 2 values")
    specs = [_respec(base, vary, v) for v in values]
    results = run_many(specs, max_workers=max_workers)
    for value, res in zip(values, results):
        if isinstance(res, Exception):
            res.args = (f"[{vary}={value}] {res.args[0] if res.args else ''}",
                        *res.args[1:])
            raise res
    t_ref = results[0].t
    n_common = min(r.t.size for r in results)
    devs = np.zeros((len(values), len(values)))
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            d = float(np.abs(results[i].pz[:n_common]
                             - results[j].pz[:n_common]).max())
            devs[i, j] = devs[j, i] = d
    # an oscillation smaller than the agreement threshold is not an artifact
    late = [_count_extrema(r.t, r.pz, t_ref[n_common - 1] / 2.0,
                           prominence=threshold)
            for r in results]
    return ConvergenceReport(
        vary=vary, values=values, records=results, max_dev=devs,
        threshold=threshold, converged=bool(devs.max() < threshold),
        late_extrema=late)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(record: TrajectoryRecord, csv_path) -> None:
    """Write the trajectory CSV plus its meta JSON sidecar (same basename)."""
    csv_path = Path(csv_path)
    with_sigma = record.sigma is not None
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CSV_COLUMNS) + (["sigma"] if with_sigma else []))
        for i in range(record.n_samples):
            row = [_fmt(getattr(record, name)[i]) for name in CSV_COLUMNS]
            if with_sigma:
                row.append(_fmt(record.sigma[i]))
            writer.writerow(row)
    with open(csv_path.with_suffix(".meta.json"), "w") as fh:
        json.dump(record.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_trajectory_csv(csv_path) -> TrajectoryRecord:
    """Read a trajectory CSV (and its meta sidecar when present)."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:len(CSV_COLUMNS)] != list(CSV_COLUMNS):
            raise InvalidParameterError(
                f"unexpected trajectory header in {csv_path}: {header}")
        with_sigma = len(header) > len(CSV_COLUMNS)
        rows = [[float(cell) for cell in row] for row in reader if row]
    data = np.asarray(rows)
    meta_path = csv_path.with_suffix(".meta.json")
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    return TrajectoryRecord(
        **{name: data[:, i] for i, name in enumerate(CSV_COLUMNS)},
        sigma=data[:, len(CSV_COLUMNS)] if with_sigma else None,
        meta=meta)
