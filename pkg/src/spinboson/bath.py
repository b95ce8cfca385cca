"""Discretized bath representations of the sub-Ohmic spectral density.

The continuum bath is characterized by

    J(omega) = 2 * alpha * omega_c**(1 - s) * omega**s * exp(-omega / omega_c)

with spectral exponent s (s = 1 Ohmic, s < 1 sub-Ohmic), dimensionless
coupling strength alpha and cutoff omega_c.  Units are fixed by omega_c = 1
and hbar = 1 throughout; times are measured in 1/omega_c.

Two star discretizations map the continuum onto n_modes harmonic modes:

* linear: a uniform grid omega_l = l * d_omega with coupling weights
  lambda_l**2 = J(omega_l) * d_omega; it carries an artificial recurrence
  at T_p = 2*pi/d_omega.
* logarithmic: one mode per geometric bin [L**-(l+1), L**-l] * omega_max;
  lambda_l**2 is the bin integral of J and omega_l the J-weighted bin mean,
  which packs modes densely near omega = 0 where the sub-Ohmic bath has
  most of its weight.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import InvalidParameterError, ParseError, QuadratureError

__all__ = [
    "SpectralParams",
    "DiscretizationKind",
    "DiscretizationScheme",
    "DiscretizedBath",
    "spectral_density",
    "discretize",
    "discretize_linear",
    "discretize_log",
    "initial_displacements",
    "write_bath_csv",
    "read_bath_csv",
]


@dataclass(frozen=True)
class SpectralParams:
    """Parameters of the power-law spectral density with exponential cutoff.

    Attributes
    ----------
    s : float
        Spectral exponent; 0 < s <= 1 is the validated regime, larger
        values are accepted unvalidated.
    alpha : float
        Dimensionless coupling strength, >= 0.
    omega_c : float
        Cutoff frequency; the energy unit (default 1).
    """

    s: float
    alpha: float
    omega_c: float = 1.0

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise InvalidParameterError(f"spectral exponent s must be > 0, got {self.s}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"coupling alpha must be >= 0, got {self.alpha}")
        if not (self.omega_c > 0 and math.isfinite(self.omega_c)):
            raise InvalidParameterError(f"cutoff omega_c must be > 0, got {self.omega_c}")


class DiscretizationKind(str, Enum):
    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"


@dataclass(frozen=True)
class DiscretizationScheme:
    """How the continuum is mapped onto discrete modes.

    ``omega_max`` defaults to 4*omega_c when built through :func:`discretize`;
    ``lambda_base`` is the geometric base L > 1 and applies to the
    logarithmic kind only.
    """

    kind: DiscretizationKind
    n_modes: int
    omega_max: float
    lambda_base: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DiscretizationKind(self.kind))
        if self.n_modes < 1:
            raise InvalidParameterError(f"n_modes must be >= 1, got {self.n_modes}")
        if not (self.omega_max > 0 and math.isfinite(self.omega_max)):
            raise InvalidParameterError(f"omega_max must be > 0, got {self.omega_max}")
        if self.kind is DiscretizationKind.LOGARITHMIC:
            if self.lambda_base is None or not (self.lambda_base > 1):
                raise InvalidParameterError(
                    f"lambda_base must be > 1 for logarithmic discretization, "
                    f"got {self.lambda_base}")

    @property
    def omega_min(self) -> float | None:
        """Lowest bin edge L**-n_modes * omega_max (logarithmic only)."""
        if self.kind is not DiscretizationKind.LOGARITHMIC:
            return None
        return self.lambda_base ** (-self.n_modes) * self.omega_max


@dataclass(frozen=True)
class DiscretizedBath:
    """A star bath: mode frequencies, couplings and their provenance.

    ``scheme``/``params`` are None for baths re-imported from CSV.
    """

    omegas: np.ndarray
    couplings: np.ndarray
    scheme: DiscretizationScheme | None = None
    params: SpectralParams | None = None

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=float)
        couplings = np.asarray(self.couplings, dtype=float)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "couplings", couplings)
        if omegas.ndim != 1 or couplings.shape != omegas.shape:
            raise InvalidParameterError("omegas and couplings must be equal-length vectors")
        if not (np.all(np.isfinite(omegas)) and np.all(np.isfinite(couplings))):
            raise InvalidParameterError("bath entries must be finite")
        if not np.all(omegas > 0):
            raise InvalidParameterError("mode frequencies must be positive")
        if not np.all(np.diff(omegas) > 0):
            raise InvalidParameterError("mode frequencies must be strictly increasing")
        if not np.all(couplings >= 0):
            raise InvalidParameterError("couplings must be non-negative")
        omegas.setflags(write=False)
        couplings.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.omegas.size

    @property
    def recurrence_time(self) -> float | None:
        """Poincare recurrence time 2*pi/d_omega of the linear grid."""
        if self.scheme is None or self.scheme.kind is not DiscretizationKind.LINEAR:
            return None
        return 2.0 * math.pi / (self.scheme.omega_max / self.scheme.n_modes)

    @property
    def omega_min_edge(self) -> float | None:
        """Lowest bin edge of the logarithmic scheme."""
        return None if self.scheme is None else self.scheme.omega_min

    @property
    def omega_min_mode(self) -> float:
        """Lowest averaged mode frequency actually present."""
        return float(self.omegas[0])

    def coupling_weight(self) -> float:
        """Sum of squared couplings, the discrete analogue of the J integral."""
        return float(np.sum(self.couplings ** 2))


def spectral_density(params: SpectralParams, omega) -> np.ndarray:
    """Evaluate J(omega); vectorized, J(omega <= 0) = 0."""
    omega = np.asarray(omega, dtype=float)
    out = np.zeros_like(omega)
    pos = omega > 0
    w = omega[pos]
    out[pos] = (2.0 * params.alpha * params.omega_c ** (1.0 - params.s)
                * w ** params.s * np.exp(-w / params.omega_c))
    if not np.all(np.isfinite(out)):
        raise InvalidParameterError("spectral density evaluated to a non-finite value")
    return out


def _power_exp_integral(n: int, a: float, b: float, c: float) -> float:
    """Closed form of the integral of x**n * exp(-x/c) over [a, b], integer n >= 0."""
    if b <= 2.0 * c and a <= 0.5 * c:
        # Term-by-term expansion; the antiderivative difference cancels
        # catastrophically on narrow low-frequency bins.
        log_r = math.log(a / b) if a > 0 else -math.inf
        acc = 0.0
        sign = 1.0
        inv_fact_cj = 1.0
        for j in range(200):
            m = n + j + 1
            span = -math.expm1(m * log_r) if a > 0 else 1.0  # 1 - (a/b)**m
            term = sign * inv_fact_cj * b ** m * span / m
            acc += term
            if abs(term) < 1e-18 * abs(acc):
                break
            sign = -sign
            inv_fact_cj /= (j + 1) * c
        return acc

    def antider(x: float) -> float:
        # -c*exp(-x/c) * sum_{k=0..n} n!/k! * c^(n-k) * x^k
        acc = 0.0
        coeff = 1.0
        for k in range(n, -1, -1):
            # coeff = n!/k! * c^(n-k), built from k=n downward
            acc += coeff * x ** k
            coeff *= k * c
        return -c * math.exp(-x / c) * acc

    return antider(b) - antider(a)


def _bin_moments(params: SpectralParams, lo: float, hi: float,
                 bin_index: int | None = None) -> tuple[float, float]:
    """Return (integral of J, integral of J*omega) over [lo, hi]."""
    s, alpha, c = params.s, params.alpha, params.omega_c
    pref = 2.0 * alpha * c ** (1.0 - s)
    if float(s).is_integer():
        n = int(round(s))
        return (pref * _power_exp_integral(n, lo, hi, c),
                pref * _power_exp_integral(n + 1, lo, hi, c))
    vals = []
    for extra in (0.0, 1.0):
        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            try:
                val, _ = quad(lambda w: w ** (s + extra) * math.exp(-w / c),
                              lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
            except IntegrationWarning as exc:
                raise QuadratureError(
                    f"bin integral did not converge on [{lo:g}, {hi:g}]: {exc}",
                    bin_index=bin_index) from exc
        vals.append(pref * val)
    return vals[0], vals[1]


def discretize_linear(params: SpectralParams, n_modes: int,
                      omega_max: float | None = None) -> DiscretizedBath:
    """Uniform-grid discretization.

    Modes sit at omega_l = l * d_omega for l = 1..n_modes with
    d_omega = omega_max / n_modes, and lambda_l**2 = J(omega_l) * d_omega.
    """
    scheme = DiscretizationScheme(
        DiscretizationKind.LINEAR, n_modes,
        4.0 * params.omega_c if omega_max is None else omega_max)
    d_omega = scheme.omega_max / n_modes
    omegas = d_omega * np.arange(1, n_modes + 1, dtype=float)
    couplings = np.sqrt(spectral_density(params, omegas) * d_omega)
    return DiscretizedBath(omegas, couplings, scheme, params)


def discretize_log(params: SpectralParams, n_modes: int,
                   omega_max: float | None = None,
                   lambda_base: float = 1.1) -> DiscretizedBath:
    """Logarithmic-bin discretization.

    Bin l spans [L**-(l+1), L**-l] * omega_max for l = 0..n_modes-1;
    lambda_l**2 is the bin integral of J and omega_l the J-weighted mean
    frequency of the bin.  Modes are returned sorted ascending.
    """
    scheme = DiscretizationScheme(
        DiscretizationKind.LOGARITHMIC, n_modes,
        4.0 * params.omega_c if omega_max is None else omega_max,
        lambda_base)
    omegas = np.empty(n_modes)
    weights = np.empty(n_modes)
    for l in range(n_modes):
        hi = scheme.omega_max * lambda_base ** (-l)
        lo = scheme.omega_max * lambda_base ** (-(l + 1))
        m0, m1 = _bin_moments(params, lo, hi, bin_index=l)
        if m0 <= 0.0:
            raise QuadratureError(
                f"bin {l} carries no spectral weight (underflow on [{lo:g}, {hi:g}])",
                bin_index=l)
        weights[l] = m0
        omegas[l] = m1 / m0
    order = np.argsort(omegas)
    return DiscretizedBath(omegas[order], np.sqrt(weights[order]), scheme, params)


def discretize(params: SpectralParams, scheme: DiscretizationScheme) -> DiscretizedBath:
    """Dispatch on scheme kind."""
    if scheme.kind is DiscretizationKind.LINEAR:
        return discretize_linear(params, scheme.n_modes, scheme.omega_max)
    return discretize_log(params, scheme.n_modes, scheme.omega_max,
                          scheme.lambda_base)


def initial_displacements(bath: DiscretizedBath, mu: float) -> np.ndarray:
    """Per-mode initial coherent displacement -mu * lambda_l / (2 * omega_l).

    mu = 0 is the factorized condition (bath vacuum); mu = 1 the polarized
    condition (bath relaxed around spin-up).
    """
    if not (0.0 <= mu <= 1.0):
        raise InvalidParameterError(f"mu must lie in [0, 1], got {mu}")
    return -mu * bath.couplings / (2.0 * bath.omegas)


def write_bath_csv(bath: DiscretizedBath, path) -> None:
    """Export as CSV with header ``l,omega,lambda`` (round-trip exact)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["l", "omega", "lambda"])
        for l, (w, lam) in enumerate(zip(bath.omegas, bath.couplings)):
            writer.writerow([l, repr(float(w)), repr(float(lam))])


def read_bath_csv(path) -> DiscretizedBath:
    """Import a bath written by :func:`write_bath_csv`; scheme/params are not recoverable."""
    omegas: list[float] = []
    couplings: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["l", "omega", "lambda"]:
            raise ParseError(f"expected header 'l,omega,lambda', got {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 columns, got {len(row)}", line=lineno)
            try:
                omegas.append(float(row[1]))
                couplings.append(float(row[2]))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    if not omegas:
        raise ParseError("no data rows", line=1)
    return DiscretizedBath(np.asarray(omegas), np.asarray(couplings))
