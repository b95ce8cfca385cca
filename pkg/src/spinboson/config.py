"""Run configuration: one JSON document drives every command.

The document groups each module's knobs under its own section and is
validated strictly: unknown keys are rejected with their dotted path, so a
typo cannot silently fall back to a default.  The canonical hash of the
document is embedded in every output's meta sidecar, which together with
the seed policy gives byte-identical reruns.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass

from .bath import DiscretizationKind, DiscretizationScheme, SpectralParams
from .eom import SolverConfig
from .errors import ConfigError, InvalidParameterError, ParseError
from .integrate import IntegrationMethod, IntegratorConfig, RunSpec
from .state import SystemParams

__all__ = [
    "RunConfig",
    "HeomSettings",
    "AnalysisSettings",
    "CompareSettings",
    "ScanGrid",
    "load_config",
    "parse_config",
    "config_hash",
]

#: Aliases for the initial spin amplitudes (a_up, a_down).
SPIN_ALIASES = {
    "up": (1.0, 0.0),
    "down": (0.0, 1.0),
    "plus": (math.sqrt(0.5), math.sqrt(0.5)),
}


@dataclass(frozen=True)
class HeomSettings:
    """Kernel-fit and hierarchy knobs for the density-operator engine."""

    n_real_terms: int = 4
    n_imag_terms: int = 4
    n_trun: int = 6
    dt: float = 0.01
    t_max: float | None = None

    def __post_init__(self):
        if self.n_real_terms < 1 or self.n_imag_terms < 1:
            raise InvalidParameterError("exponential term counts must be >= 1")
        if self.n_trun < 1:
            raise InvalidParameterError("n_trun must be >= 1")
        if not (self.dt > 0):
            raise InvalidParameterError("dt must be > 0")
        if self.t_max is not None and not (self.t_max > 0):
            raise InvalidParameterError("t_max must be > 0")


@dataclass(frozen=True)
class AnalysisSettings:
    """Classification knobs shared by the scan and classify commands."""

    transient_fraction: float = 0.1
    threshold: float = 1e-3

    def __post_init__(self):
        if not (0.0 <= self.transient_fraction < 1.0):
            raise InvalidParameterError(
                "transient_fraction must lie in [0, 1)")
        if not (self.threshold > 0):
            raise InvalidParameterError("threshold must be > 0")


#: Engines the compare command can pit against each other.
ENGINE_NAMES = ("variational", "heom")


@dataclass(frozen=True)
class CompareSettings:
    """Engine pair diffed by the compare command."""

    engines: tuple = ENGINE_NAMES

    def __post_init__(self):
        if len(self.engines) != 2:
            raise InvalidParameterError("compare.engines needs exactly two")
        for name in self.engines:
            if name not in ENGINE_NAMES:
                raise InvalidParameterError(
                    f"unknown engine {name!r}; choose from {ENGINE_NAMES}")


@dataclass(frozen=True)
class ScanGrid:
    """Cross-product grid over physics parameters for batch runs.

    Axes omitted in the config fall back to the single value of the base
    run; points iterate in row-major order (s, alpha, mu, multiplicity),
    which also fixes the per-point seed assignment.
    """

    s: tuple
    alpha: tuple
    mu: tuple
    multiplicity: tuple

    def __post_init__(self):
        for name in ("s", "alpha", "mu", "multiplicity"):
            vals = getattr(self, name)
            if len(vals) == 0:
                raise ConfigError(f"scan grid axis {name} is empty",
                                  field=f"scan.{name}")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(
                    f"scan grid axis {name} must be strictly increasing",
                    field=f"scan.{name}")

    @property
    def n_points(self) -> int:
        return (len(self.s) * len(self.alpha) * len(self.mu)
                * len(self.multiplicity))

    def points(self):
        """Yield (s, alpha, mu, multiplicity) tuples in deterministic order."""
        return itertools.product(self.s, self.alpha, self.mu,
                                 self.multiplicity)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration document.

    ``spec`` is the fully assembled base run; scan/heom/analysis sections
    keep their own settings.  ``seed`` feeds the noise generator directly
    for single runs and seeds the per-point sequence for scans.
    """

    spec: RunSpec
    seed: int
    heom: HeomSettings
    analysis: AnalysisSettings
    compare: CompareSettings
    scan: ScanGrid | None
    hash: str


def config_hash(doc: dict) -> str:
    """SHA-256 of the canonical JSON serialization of the document."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name} must be an object", field=name)
    return sec


def _check_keys(section: dict, name: str, allowed) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError("unknown key", field=_path(name, key))


def _path(name: str, key: str) -> str:
    return f"{name}.{key}" if name else key


def _number(section: dict, name: str, key: str, default=None, required=False):
    path = _path(name, key)
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {path}", field=path)
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path} must be a number, got {val!r}", field=path)
    return float(val)


def _integer(section: dict, name: str, key: str, default=None, required=False):
    path = _path(name, key)
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {path}", field=path)
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{path} must be an integer, got {val!r}",
                          field=path)
    return val


def _boolean(section: dict, name: str, key: str, default=False):
    val = section.get(key, default)
    if not isinstance(val, bool):
        path = _path(name, key)
        raise ConfigError(f"{path} must be true or false, got {val!r}",
                          field=path)
    return val


def _string(section: dict, name: str, key: str, default=None, required=False):
    path = _path(name, key)
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {path}", field=path)
        return default
    val = section[key]
    if not isinstance(val, str):
        raise ConfigError(f"{path} must be a string, got {val!r}", field=path)
    return val


def _number_list(section: dict, name: str, key: str):
    if key not in section:
        return None
    path = _path(name, key)
    val = section[key]
    if not isinstance(val, list):
        raise ConfigError(f"{path} must be a list of numbers", field=path)
    out = []
    for item in val:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(
                f"{path} must contain only numbers, got {item!r}",
                field=path)
        out.append(item)
    return out


@contextmanager
def _wrap(name: str):
    """Rewrap parameter-validation errors with the owning section name."""
    try:
        yield
    except ConfigError:
        raise
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field=name) from exc


def _parse_spin(section: dict, name: str):
    if "spin" not in section:
        return SPIN_ALIASES["up"]
    val = section["spin"]
    if isinstance(val, str):
        if val not in SPIN_ALIASES:
            raise ConfigError(
                f"{name}.spin must be one of {sorted(SPIN_ALIASES)} or a "
                f"4-number list, got {val!r}", field=f"{name}.spin")
        return SPIN_ALIASES[val]
    if isinstance(val, list) and len(val) == 4 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool)
            for x in val):
        return (complex(val[0], val[1]), complex(val[2], val[3]))
    raise ConfigError(
        f"{name}.spin must be an alias or [re_up, im_up, re_down, im_down]",
        field=f"{name}.spin")


def _parse_system(doc: dict) -> SystemParams:
    sec = _section(doc, "system")
    _check_keys(sec, "system", {"delta", "epsilon", "spin"})
    delta = _number(sec, "system", "delta", required=True)
    epsilon = _number(sec, "system", "epsilon", default=0.0)
    spin = _parse_spin(sec, "system")
    with _wrap("system"):
        return SystemParams(delta=delta, epsilon=epsilon, spin_init=spin)


def _parse_bath(doc: dict) -> tuple[SpectralParams, DiscretizationScheme]:
    sec = _section(doc, "bath")
    _check_keys(sec, "bath", {"s", "alpha", "omega_c", "kind", "n_modes",
                              "omega_max", "lambda_base"})
    s = _number(sec, "bath", "s", required=True)
    alpha = _number(sec, "bath", "alpha", required=True)
    omega_c = _number(sec, "bath", "omega_c", default=1.0)
    kind_name = _string(sec, "bath", "kind", default="logarithmic")
    try:
        kind = DiscretizationKind(kind_name)
    except ValueError:
        raise ConfigError(
            f"bath.kind must be one of "
            f"{[k.value for k in DiscretizationKind]}, got {kind_name!r}",
            field="bath.kind") from None
    n_modes = _integer(sec, "bath", "n_modes", required=True)
    omega_max = _number(sec, "bath", "omega_max", required=True)
    lambda_base = _number(sec, "bath", "lambda_base", default=None)
    with _wrap("bath"):
        params = SpectralParams(s=s, alpha=alpha, omega_c=omega_c)
        scheme = DiscretizationScheme(kind=kind, n_modes=n_modes,
                                      omega_max=omega_max,
                                      lambda_base=lambda_base)
    return params, scheme


def _parse_initial(doc: dict) -> tuple[float, int]:
    sec = _section(doc, "initial")
    _check_keys(sec, "initial", {"mu", "multiplicity"})
    mu = _number(sec, "initial", "mu", default=0.0)
    multiplicity = _integer(sec, "initial", "multiplicity", default=1)
    if not (0.0 <= mu <= 1.0):
        raise ConfigError(f"initial.mu must lie in [0, 1], got {mu}",
                          field="initial.mu")
    if multiplicity < 1:
        raise ConfigError("initial.multiplicity must be >= 1",
                          field="initial.multiplicity")
    return mu, multiplicity


_SOLVER_KEYS = {"tikhonov", "rank_tolerance", "noise_amp_spin",
                "noise_amp_disp", "rng_seed", "size_cap", "amplitude_floor"}


def _parse_solver(doc: dict) -> SolverConfig:
    sec = _section(doc, "solver")
    _check_keys(sec, "solver", _SOLVER_KEYS)
    defaults = SolverConfig()
    kwargs = {}
    for key in ("tikhonov", "rank_tolerance", "noise_amp_spin",
                "noise_amp_disp", "amplitude_floor"):
        kwargs[key] = _number(sec, "solver", key, getattr(defaults, key))
    kwargs["rng_seed"] = _integer(sec, "solver", "rng_seed",
                                  defaults.rng_seed)
    kwargs["size_cap"] = _integer(sec, "solver", "size_cap",
                                  defaults.size_cap)
    with _wrap("solver"):
        return SolverConfig(**kwargs)


def _parse_integrator(doc: dict) -> IntegratorConfig:
    sec = _section(doc, "integrator")
    _check_keys(sec, "integrator", {"t_end", "record_stride", "method",
                                    "rtol", "atol", "dt", "record_sigma"})
    t_end = _number(sec, "integrator", "t_end", required=True)
    stride = _number(sec, "integrator", "record_stride", required=True)
    method_name = _string(sec, "integrator", "method", default="rk45")
    try:
        method = IntegrationMethod(method_name)
    except ValueError:
        raise ConfigError(
            f"integrator.method must be one of "
            f"{[m.value for m in IntegrationMethod]}, got {method_name!r}",
            field="integrator.method") from None
    rtol = _number(sec, "integrator", "rtol", default=1e-8)
    atol = _number(sec, "integrator", "atol", default=1e-10)
    dt = _number(sec, "integrator", "dt", default=None)
    record_sigma = _boolean(sec, "integrator", "record_sigma", default=False)
    with _wrap("integrator"):
        return IntegratorConfig(t_end=t_end, record_stride=stride,
                                method=method, rtol=rtol, atol=atol, dt=dt,
                                record_sigma=record_sigma)


def _parse_heom(doc: dict) -> HeomSettings:
    sec = _section(doc, "heom")
    _check_keys(sec, "heom", {"n_real_terms", "n_imag_terms", "n_trun",
                              "dt", "t_max"})
    defaults = HeomSettings()
    with _wrap("heom"):
        return HeomSettings(
            n_real_terms=_integer(sec, "heom", "n_real_terms",
                                  defaults.n_real_terms),
            n_imag_terms=_integer(sec, "heom", "n_imag_terms",
                                  defaults.n_imag_terms),
            n_trun=_integer(sec, "heom", "n_trun", defaults.n_trun),
            dt=_number(sec, "heom", "dt", defaults.dt),
            t_max=_number(sec, "heom", "t_max", defaults.t_max))


def _parse_analysis(doc: dict) -> AnalysisSettings:
    sec = _section(doc, "analysis")
    _check_keys(sec, "analysis", {"transient_fraction", "threshold"})
    defaults = AnalysisSettings()
    with _wrap("analysis"):
        return AnalysisSettings(
            transient_fraction=_number(sec, "analysis", "transient_fraction",
                                       defaults.transient_fraction),
            threshold=_number(sec, "analysis", "threshold",
                              defaults.threshold))


def _parse_compare(doc: dict) -> CompareSettings:
    sec = _section(doc, "compare")
    _check_keys(sec, "compare", {"engines"})
    if "engines" not in sec:
        return CompareSettings()
    engines = sec["engines"]
    if not isinstance(engines, list) or not all(
            isinstance(e, str) for e in engines):
        raise ConfigError("compare.engines must be a list of engine names",
                          field="compare.engines")
    with _wrap("compare"):
        return CompareSettings(engines=tuple(engines))


def _parse_scan(doc: dict, spectral: SpectralParams, mu: float,
                multiplicity: int) -> ScanGrid | None:
    if "scan" not in doc:
        return None
    sec = _section(doc, "scan")
    _check_keys(sec, "scan", {"s", "alpha", "mu", "multiplicity"})
    s_vals = _number_list(sec, "scan", "s")
    alpha_vals = _number_list(sec, "scan", "alpha")
    mu_vals = _number_list(sec, "scan", "mu")
    m_vals = sec.get("multiplicity")
    if m_vals is not None:
        if not isinstance(m_vals, list) or any(
                isinstance(m, bool) or not isinstance(m, int)
                for m in m_vals):
            raise ConfigError("scan.multiplicity must be a list of integers",
                              field="scan.multiplicity")
    return ScanGrid(
        s=tuple(float(v) for v in s_vals) if s_vals is not None
        else (spectral.s,),
        alpha=tuple(float(v) for v in alpha_vals) if alpha_vals is not None
        else (spectral.alpha,),
        mu=tuple(float(v) for v in mu_vals) if mu_vals is not None
        else (mu,),
        multiplicity=tuple(m_vals) if m_vals is not None
        else (multiplicity,))


_TOP_KEYS = {"system", "bath", "initial", "solver", "integrator", "heom",
             "analysis", "compare", "scan", "seed"}


def parse_config(doc: dict, seed_override: int | None = None) -> RunConfig:
    """Validate a configuration document and assemble the run blueprint.

    ``seed_override`` replaces the document seed without changing the
    config hash (the hash always reflects the document as written).
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a JSON object",
                          field="")
    _check_keys(doc, "", _TOP_KEYS)
    system = _parse_system(doc)
    spectral, scheme = _parse_bath(doc)
    mu, multiplicity = _parse_initial(doc)
    solver = _parse_solver(doc)
    integrator = _parse_integrator(doc)
    heom = _parse_heom(doc)
    analysis = _parse_analysis(doc)
    compare = _parse_compare(doc)
    scan = _parse_scan(doc, spectral, mu, multiplicity)
    seed = _integer(doc, "", "seed", default=solver.rng_seed)
    if seed_override is not None:
        seed = seed_override
    solver = dataclasses.replace(solver, rng_seed=seed)
    spec = RunSpec(spectral=spectral, scheme=scheme, system=system,
                   solver=solver, integrator=integrator,
                   multiplicity=multiplicity, mu=mu)
    return RunConfig(spec=spec, seed=seed, heom=heom, analysis=analysis,
                     compare=compare, scan=scan, hash=config_hash(doc))


def parse_analysis_only(doc: dict) -> AnalysisSettings:
    """Validate just the analysis section of a possibly partial document.

    Used by commands that operate on existing trajectory files and need
    only the classification knobs; unknown sections are still rejected.
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a JSON object",
                          field="")
    _check_keys(doc, "", _TOP_KEYS)
    return _parse_analysis(doc)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    """Read, hash, and validate a JSON configuration file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}",
                         line=exc.lineno) from exc
    return parse_config(doc, seed_override=seed_override)
