"""Command-line orchestration with a full determinism contract.

Every command is driven by a single JSON configuration document; flags
exist only for output paths, the worker count, and a seed override.  Given
the same document and seed the outputs are byte-identical: directory names
derive from the config hash, floats are written in shortest round-trip
form, and scan points receive their seeds deterministically before any
work is dispatched.

Exit codes: 0 success, 2 configuration or parse error, 3 numerical
failure, 4 capacity (problem size) refusal, 1 anything else including
partially failed scans.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as ana
from .bath import discretize, write_bath_csv
from .config import (AnalysisSettings, RunConfig, config_hash, load_config,
                     parse_analysis_only)
from .deviation import fit_sigma_max
from .errors import (CapacityError, ConfigError, InvalidParameterError,
                     ParseError, SpinBosonError)
from .heom import fit_correlation, heom_evolve, write_fit_json
from .integrate import build_meta, read_trajectory_csv, run_many, run_trajectory

__all__ = ["main"]

#: Environment variable naming the default output root directory.
OUT_ROOT_ENV = "SPINBOSON_OUT_ROOT"


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, ParseError, InvalidParameterError)):
        return 2
    if isinstance(exc, CapacityError):
        return 4
    if isinstance(exc, SpinBosonError):
        return 3
    return 1


def _out_dir(args, command: str, cfg_hash: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        out = Path(root) / f"{command}-{cfg_hash[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_safe(value):
    """Replace NaN by None so reports stay strict JSON."""
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def _spawn_seeds(base_seed: int, n: int) -> list[int]:
    """Independent per-point seeds, assigned before any dispatch."""
    children = np.random.SeedSequence(base_seed).spawn(n)
    return [int(c.generate_state(1, np.uint32)[0]) for c in children]


def cmd_evolve(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, "evolve", cfg.hash)
    diagnostics = Path(args.diagnostics) if args.diagnostics else None
    record = run_trajectory(cfg.spec, extra_meta={"config_hash": cfg.hash},
                            diagnostics_path=diagnostics)
    csv_path = out / "trajectory.csv"
    record.write(csv_path)
    print(csv_path)
    return 0


def _verdict_doc(verdict: ana.CrossoverVerdict) -> dict:
    return {
        "s": verdict.s,
        "alpha": verdict.alpha,
        "label": verdict.label.value,
        "p_eq": verdict.p_eq,
        "n_extrema": verdict.n_extrema,
        "min_depth": verdict.min_depth,
        "reason": verdict.reason,
    }


def cmd_scan(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    if cfg.scan is None:
        raise ConfigError("scan requires a scan section in the config",
                          field="scan")
    points = list(cfg.scan.points())
    seeds = _spawn_seeds(cfg.seed, len(points))
    out = _out_dir(args, "scan", cfg.hash)
    specs = []
    for (s, alpha, mu, mult), seed in zip(points, seeds):
        spectral = dataclasses.replace(cfg.spec.spectral, s=s, alpha=alpha)
        solver = dataclasses.replace(cfg.spec.solver, rng_seed=seed)
        specs.append(dataclasses.replace(cfg.spec, spectral=spectral,
                                         solver=solver, mu=mu,
                                         multiplicity=mult))
    results = run_many(specs, max_workers=args.workers)

    verdicts = []
    entries = []
    n_failed = 0
    for idx, ((s, alpha, mu, mult), seed, res) in enumerate(
            zip(points, seeds, results)):
        subdir = out / f"point-{idx:04d}"
        entry = {"index": idx, "subdir": subdir.name, "s": s, "alpha": alpha,
                 "mu": mu, "multiplicity": mult, "seed": seed}
        if isinstance(res, Exception):
            n_failed += 1
            verdict = ana.CrossoverVerdict(
                s=s, alpha=alpha, label=ana.Label.INDETERMINATE,
                p_eq=math.nan, n_extrema=0, min_depth=0.0,
                reason=f"run failed: {res}")
            entry["status"] = "failed"
            entry["error"] = f"{type(res).__name__}: {res}"
        else:
            res.meta["config_hash"] = cfg.hash
            subdir.mkdir(exist_ok=True)
            res.write(subdir / "trajectory.csv")
            verdict = ana.classify(res, cfg.analysis.transient_fraction,
                                   cfg.analysis.threshold, s=s, alpha=alpha)
            entry["status"] = "ok"
            entry["error"] = None
            entry["sigma_max"] = res.meta.get("sigma_max")
        entry.update(_verdict_doc(verdict))
        verdicts.append(verdict)
        entries.append(entry)

    ana.write_phase_csv(verdicts, out / "phase.csv")
    _write_json(_sidecar(out / "phase.csv"),
                {"config_hash": cfg.hash, "seed": cfg.seed,
                 "n_points": len(points), "n_failed": n_failed})
    _write_json(out / "points.json",
                {"config_hash": cfg.hash, "seed": cfg.seed,
                 "points": entries})
    if len(cfg.scan.mu) == 1 and len(cfg.scan.multiplicity) == 1 \
            and len(cfg.scan.alpha) >= 2:
        diagram = ana.PhaseDiagram.from_verdicts(verdicts)
        ana.write_boundaries_json(diagram.boundaries, diagram.s_c_estimate,
                                  out / "boundaries.json",
                                  extra={"config_hash": cfg.hash})
    print(out)
    if n_failed:
        print(f"{n_failed} of {len(points)} points failed", file=sys.stderr)
        return 1
    return 0


def _run_heom(cfg: RunConfig, out: Path):
    """Fit the bath kernel, write the fit, and propagate the hierarchy."""
    if cfg.spec.mu != 0.0:
        raise ConfigError(
            "the hierarchy engine requires a factorized initial bath "
            f"(initial.mu = 0), got mu = {cfg.spec.mu}", field="initial.mu")
    t_end = cfg.spec.integrator.t_end
    t_max = cfg.heom.t_max if cfg.heom.t_max is not None else t_end
    fit = fit_correlation(cfg.spec.spectral, cfg.heom.n_real_terms,
                          cfg.heom.n_imag_terms, t_max)
    write_fit_json(fit, out / "fit.json")
    _write_json(_sidecar(out / "fit.json"), {"config_hash": cfg.hash})
    record = heom_evolve(cfg.spec.system, fit, n_trun=cfg.heom.n_trun,
                         t_end=t_end, dt=cfg.heom.dt,
                         record_stride=cfg.spec.integrator.record_stride)
    record.meta["config_hash"] = cfg.hash
    return record


def cmd_heom(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, "heom", cfg.hash)
    record = _run_heom(cfg, out)
    csv_path = out / "trajectory.csv"
    record.write(csv_path)
    print(csv_path)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, "compare", cfg.hash)
    records = []
    for label, engine in zip(("a", "b"), cfg.compare.engines):
        if engine == "variational":
            rec = run_trajectory(cfg.spec,
                                 extra_meta={"config_hash": cfg.hash})
        else:
            rec = _run_heom(cfg, out)
        rec.write(out / f"trajectory-{label}-{engine}.csv")
        records.append(rec)
    rec_a, rec_b = records
    if rec_a.t.shape != rec_b.t.shape or not np.allclose(rec_a.t, rec_b.t):
        raise ConfigError(
            "engines recorded different time grids; align integrator "
            "record_stride and heom dt", field="integrator.record_stride")
    dpz = np.abs(rec_a.pz - rec_b.pz)
    i_max = int(np.argmax(dpz))
    _write_json(out / "diff.json", {
        "config_hash": cfg.hash,
        "engine_a": cfg.compare.engines[0],
        "engine_b": cfg.compare.engines[1],
        "max_abs_dpz": float(dpz[i_max]),
        "t_at_max": float(rec_a.t[i_max]),
        "n_samples": int(rec_a.t.size),
        "window": [float(rec_a.t[0]), float(rec_a.t[-1])],
    })
    print(out / "diff.json")
    return 0


def cmd_discretize(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, "discretize", cfg.hash)
    bath = discretize(cfg.spec.spectral, cfg.spec.scheme)
    csv_path = out / "bath.csv"
    write_bath_csv(bath, csv_path)
    meta = build_meta(cfg.spec, bath)
    meta["config_hash"] = cfg.hash
    _write_json(_sidecar(csv_path), meta)
    print(csv_path)
    return 0


def _analysis_settings_from(path):
    """Analysis knobs from a config file that may omit physics sections."""
    if path is None:
        return AnalysisSettings(), None
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}",
                         line=exc.lineno) from exc
    return parse_analysis_only(doc), config_hash(doc)


def cmd_classify(args) -> int:
    record = read_trajectory_csv(args.trajectory)
    settings, cfg_hash = _analysis_settings_from(args.config)
    bath_meta = record.meta.get("bath", {}) if record.meta else {}
    verdict = ana.classify(record, settings.transient_fraction,
                           settings.threshold,
                           s=bath_meta.get("s", math.nan),
                           alpha=bath_meta.get("alpha", math.nan))
    doc = _verdict_doc(verdict)
    doc["config_hash"] = cfg_hash
    doc["trajectory"] = Path(args.trajectory).name
    payload = json.dumps(_json_safe(doc), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def cmd_fit_deviation(args) -> int:
    path = Path(args.scan_dir)
    if path.is_dir():
        path = path / "points.json"
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}",
                         line=exc.lineno) from exc
    entries = doc.get("points", [])
    points = [(e["multiplicity"], e["sigma_max"]) for e in entries
              if e.get("sigma_max") is not None]
    if not points:
        raise ConfigError(
            f"{path} carries no sigma_max records; rerun the scan with "
            "integrator.record_sigma = true", field="integrator.record_sigma")
    a1, a0 = fit_sigma_max(points)
    report = {
        "a1": a1,
        "a0": a0,
        "points": [[int(m), float(s)] for m, s in points],
        "config_hash": doc.get("config_hash"),
    }
    payload = json.dumps(_json_safe(report), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _add_common(sub, config_arg=True):
    if config_arg:
        sub.add_argument("config", help="path to the JSON configuration")
    sub.add_argument("--out", default=None,
                     help="output directory (default: $%s/<command>-<hash>)"
                     % OUT_ROOT_ENV)
    sub.add_argument("--seed", type=int, default=None,
                     help="override the configured seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinboson",
        description="Variational and hierarchy solvers for sub-Ohmic "
                    "spin-boson dynamics")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("evolve", help="run one trajectory")
    _add_common(p)
    p.add_argument("--diagnostics", default=None,
                   help="also write per-step solver diagnostics to this path")
    p.set_defaults(func=cmd_evolve)

    p = commands.add_parser("scan", help="run a parameter grid and classify")
    _add_common(p)
    p.add_argument("--workers", type=int, default=None,
                   help="process pool size (default: serial)")
    p.set_defaults(func=cmd_scan)

    p = commands.add_parser("heom", help="run the hierarchy engine")
    _add_common(p)
    p.set_defaults(func=cmd_heom)

    p = commands.add_parser("compare", help="diff two engines on one config")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = commands.add_parser("discretize", help="write the discretized bath")
    _add_common(p)
    p.set_defaults(func=cmd_discretize)

    p = commands.add_parser("classify",
                            help="label an existing trajectory CSV")
    p.add_argument("trajectory", help="path to a trajectory CSV")
    p.add_argument("--config", default=None,
                   help="JSON config supplying the analysis section")
    p.add_argument("--out", default=None, help="also write the verdict here")
    p.set_defaults(func=cmd_classify)

    p = commands.add_parser("fit-deviation",
                            help="fit sigma_max against 1/M from a scan")
    p.add_argument("scan_dir",
                   help="scan output directory or points.json path")
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_fit_deviation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpinBosonError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
