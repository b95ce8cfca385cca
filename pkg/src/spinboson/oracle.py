"""Exact references for tests: truncated Fock propagation and closed forms.

For baths of at most three modes the Schrodinger equation is solved
directly in a number-state basis, giving an answer limited only by the
boson cutoff; the cutoff doubles automatically until boundary-level
population is negligible, since a silently truncated oracle would poison
every comparison built on it.  The pure-dephasing and free-spin limits
additionally admit closed forms, which check the Fock route itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .bath import DiscretizedBath
from .eom import DerivativeVector
from .errors import CutoffError, InvalidParameterError
from .integrate import TrajectoryRecord
from .state import (MultiD1State, SystemParams, norm as state_norm,
                    von_neumann_entropy)

__all__ = [
    "FockConfig",
    "DephasingCurves",
    "fock_evolve",
    "fock_expectation_h",
    "fock_deviation_norm_sq",
    "dephasing_exponent",
    "dephasing_exact",
    "free_spin_exact",
]

MAX_MODES = 3
DIM_CAP = 100_000
LEAKAGE_TOL = 1e-8


@dataclass(frozen=True)
class FockConfig:
    """Cutoff and sampling controls for the number-state propagator."""

    t_end: float
    dt: float
    n_max: int = 8
    leakage_tol: float = LEAKAGE_TOL
    dim_cap: int = DIM_CAP

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise InvalidParameterError(f"t_end must be > 0, got {self.t_end}")
        if not (0 < self.dt <= self.t_end):
            raise InvalidParameterError("dt must lie in (0, t_end]")
        if self.n_max < 1:
            raise InvalidParameterError("n_max must be >= 1")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidParameterError("t_end must be a multiple of dt")

    @property
    def n_samples(self) -> int:
        return round(self.t_end / self.dt) + 1


def _check_mode_count(bath: DiscretizedBath) -> None:
    if bath.n_modes > MAX_MODES:
        raise InvalidParameterError(
            f"Fock oracle handles at most {MAX_MODES} modes, "
            f"got {bath.n_modes}")


def _coherent(f: complex, n_max: int) -> np.ndarray:
    """Number-state column of |f>: exp(-|f|^2/2) f^n / sqrt(n!)."""
    c = np.empty(n_max + 1, dtype=complex)
    c[0] = math.exp(-0.5 * (f.real * f.real + f.imag * f.imag))
    for n in range(1, n_max + 1):
        c[n] = c[n - 1] * f / math.sqrt(n)
    return c


def _coherent_dt(f: complex, fdot: complex, n_max: int) -> np.ndarray:
    """Time derivative of the column of |f(t)> for a given fdot."""
    c = _coherent(f, n_max)
    d = -(f.conjugate() * fdot).real * c
    d[1:] += fdot * np.sqrt(np.arange(1, n_max + 1)) * c[:-1]
    return d


def _kron_chain(columns) -> np.ndarray:
    vec = np.ones(1, dtype=complex)
    for col in columns:
        vec = np.kron(vec, col)
    return vec


def _branch_vector(amps: np.ndarray, rows: np.ndarray, n_max: int) -> np.ndarray:
    dim = (n_max + 1) ** rows.shape[1]
    out = np.zeros(dim, dtype=complex)
    for amp, row in zip(amps, rows):
        out += amp * _kron_chain(_coherent(f, n_max) for f in row)
    return out


def _branch_vector_dt(amps, rows, damps, drows, n_max: int) -> np.ndarray:
    dim = (n_max + 1) ** rows.shape[1]
    out = np.zeros(dim, dtype=complex)
    for amp, damp, row, drow in zip(amps, damps, rows, drows):
        cols = [_coherent(f, n_max) for f in row]
        out += damp * _kron_chain(cols)
        for l, (f, fd) in enumerate(zip(row, drow)):
            cols_l = list(cols)
            cols_l[l] = _coherent_dt(f, fd, n_max)
            out += amp * _kron_chain(cols_l)
    return out


def fock_vector(state: MultiD1State, n_max: int) -> np.ndarray:
    """Expand the trial state into the number basis; shape (2, dim_bath)."""
    return np.stack([
        _branch_vector(state.amplitudes_up, state.disp_up, n_max),
        _branch_vector(state.amplitudes_down, state.disp_down, n_max),
    ])


def fock_vector_dt(state: MultiD1State, derivative: DerivativeVector,
                   n_max: int) -> np.ndarray:
    return np.stack([
        _branch_vector_dt(state.amplitudes_up, state.disp_up,
                          derivative.dA, derivative.df, n_max),
        _branch_vector_dt(state.amplitudes_down, state.disp_down,
                          derivative.dB, derivative.dg, n_max),
    ])


def _bath_operators(bath: DiscretizedBath, n_max: int):
    """(sum omega_l n_l, sum lambda_l (a_l + a_l^dag)) on the bath space."""
    per = n_max + 1
    k = bath.n_modes
    levels = np.arange(per)
    lower = sparse.diags(np.sqrt(levels[1:]), 1)
    number = sparse.diags(levels)
    h_bath = None
    coupling = None
    for l in range(k):
        before = sparse.identity(per ** l, format="csr")
        after = sparse.identity(per ** (k - 1 - l), format="csr")
        n_l = sparse.kron(sparse.kron(before, number), after)
        x_l = sparse.kron(sparse.kron(before, lower + lower.T), after)
        h_bath = bath.omegas[l] * n_l + (h_bath if h_bath is not None else 0)
        coupling = bath.couplings[l] * x_l + (coupling if coupling is not None else 0)
    return h_bath.tocsr(), coupling.tocsr()


def _hamiltonians(system: SystemParams, bath: DiscretizedBath, n_max: int):
    """(full H, bath-only part) as sparse matrices on spin x bath."""
    h_bath, coupling = _bath_operators(bath, n_max)
    eye_b = sparse.identity(h_bath.shape[0], format="csr")
    sz = sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    sx = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    eye_2 = sparse.identity(2, format="csr")
    bath_term = sparse.kron(eye_2, h_bath, format="csr")
    h = (sparse.kron(sz, 0.5 * system.epsilon * eye_b + 0.5 * coupling)
         - 0.5 * system.delta * sparse.kron(sx, eye_b)
         + bath_term).tocsr()
    return h, bath_term


def _boundary_mask(n_max: int, n_modes: int) -> np.ndarray:
    """Mask of bath basis states with any mode at the top level n_max."""
    digits = np.arange((n_max + 1) ** n_modes)
    mask = np.zeros(digits.size, dtype=bool)
    for _ in range(n_modes):
        mask |= digits % (n_max + 1) == n_max
        digits = digits // (n_max + 1)
    return mask


def _expand_checked(state: MultiD1State, n_max: int, tol: float) -> np.ndarray:
    psi = fock_vector(state, n_max)
    target = state_norm(state)
    got = float(np.vdot(psi, psi).real)
    if abs(got - target) > tol * max(1.0, target):
        raise CutoffError(
            f"truncation at n_max={n_max} loses norm "
            f"{abs(got - target):.2e}; increase n_max", n_max=n_max)
    return psi


def fock_evolve(system: SystemParams, bath: DiscretizedBath,
                config: FockConfig, initial: MultiD1State) -> TrajectoryRecord:
    """Exact propagation of a trial state in the truncated number basis.

    The cutoff doubles until the population of the boundary shell (any mode
    at occupation n_max) stays below the leakage tolerance along the whole
    trajectory; exceeding the dimension cap raises instead.
    """
    _check_mode_count(bath)
    if initial.time != 0.0:
        raise InvalidParameterError("evolution starts at t = 0")
    n_max = config.n_max
    while True:
        dim = 2 * (n_max + 1) ** bath.n_modes
        if dim > config.dim_cap:
            raise CutoffError(
                f"cutoff n_max={n_max} needs Hilbert dimension {dim} "
                f"over the cap {config.dim_cap}; leakage still above "
                f"{config.leakage_tol}", n_max=n_max)
        psi0 = _expand_checked(initial, n_max, config.leakage_tol)
        h, bath_term = _hamiltonians(system, bath, n_max)
        flat = expm_multiply(-1j * h.tocsc(), psi0.ravel(), start=0.0,
                             stop=config.t_end, num=config.n_samples,
                             endpoint=True)
        states = flat.reshape(config.n_samples, 2, -1)
        shell = _boundary_mask(n_max, bath.n_modes)
        leak = float(np.abs(states[:, :, shell] ** 2).sum(axis=(1, 2)).max())
        if leak <= config.leakage_tol:
            break
        n_max *= 2

    times = np.linspace(0.0, config.t_end, config.n_samples)
    cols = {name: np.empty(config.n_samples) for name in
            ("pz", "px", "py", "entropy", "norm", "energy", "energy_bath")}
    for i, psi in enumerate(states):
        up, down = psi
        cross = np.vdot(up, down)
        pz = float(np.vdot(up, up).real - np.vdot(down, down).real)
        px, py = 2.0 * cross.real, 2.0 * cross.imag
        flat_i = psi.ravel()
        cols["pz"][i] = pz
        cols["px"][i] = px
        cols["py"][i] = py
        cols["entropy"][i] = von_neumann_entropy(px, py, pz)
        cols["norm"][i] = float(np.vdot(flat_i, flat_i).real)
        cols["energy"][i] = float(np.vdot(flat_i, h @ flat_i).real)
        cols["energy_bath"][i] = float(np.vdot(flat_i, bath_term @ flat_i).real)
    return TrajectoryRecord(
        t=times, meta={"engine": "fock", "n_max": n_max, "leakage": leak,
                       "dt": config.dt}, **cols)


def fock_expectation_h(state: MultiD1State, system: SystemParams,
                       bath: DiscretizedBath, n_max: int) -> float:
    """<H> evaluated in the number basis; cross-checks the analytic energy."""
    _check_mode_count(bath)
    psi = _expand_checked(state, n_max, LEAKAGE_TOL).ravel()
    h, _ = _hamiltonians(system, bath, n_max)
    return float(np.vdot(psi, h @ psi).real)


def fock_deviation_norm_sq(state: MultiD1State, derivative: DerivativeVector,
                           system: SystemParams, bath: DiscretizedBath,
                           n_max: int) -> float:
    """||i d/dt |D> - H |D>||^2 evaluated in the number basis."""
    _check_mode_count(bath)
    psi = _expand_checked(state, n_max, LEAKAGE_TOL).ravel()
    dpsi = fock_vector_dt(state, derivative, n_max).ravel()
    h, _ = _hamiltonians(system, bath, n_max)
    residual = 1j * dpsi - h @ psi
    return float(np.vdot(residual, residual).real)


class DephasingCurves(NamedTuple):
    px: np.ndarray
    py: np.ndarray
    pz: np.ndarray


def dephasing_exponent(bath: DiscretizedBath, times) -> np.ndarray:
    """Decoherence exponent sum_l (lambda_l/omega_l)^2 (1 - cos omega_l t)."""
    t = np.asarray(times, dtype=float)
    ratios = (bath.couplings / bath.omegas) ** 2
    return (ratios * (1.0 - np.cos(np.multiply.outer(t, bath.omegas)))).sum(axis=-1)


def dephasing_exact(bath: DiscretizedBath, weights: tuple[complex, complex],
                    times, delta: float = 0.0) -> DephasingCurves:
    """Closed-form spin observables for the pure-dephasing limit.

    Valid for a spin decoupled from its own tunneling (delta = 0, no bias)
    with the bath starting in its vacuum.  The population is frozen while
    the coherence decays as exp(-Gamma(t)) with no additional phase.
    """
    if delta != 0.0:
        raise InvalidParameterError(
            "closed-form dephasing requires delta = 0")
    a, b = complex(weights[0]), complex(weights[1])
    if abs(abs(a) ** 2 + abs(b) ** 2 - 1.0) > 1e-9:
        raise InvalidParameterError("spin weights must be normalized")
    t = np.asarray(times, dtype=float)
    coherence = 2.0 * a.conjugate() * b * np.exp(-dephasing_exponent(bath, t))
    pz = np.full_like(t, abs(a) ** 2 - abs(b) ** 2)
    return DephasingCurves(px=coherence.real, py=coherence.imag, pz=pz)


def free_spin_exact(system: SystemParams, times) -> DephasingCurves:
    """Exact Bloch components of an isolated spin (no bath coupling)."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    h = np.array([[0.5 * system.epsilon, -0.5 * system.delta],
                  [-0.5 * system.delta, -0.5 * system.epsilon]])
    evals, vecs = np.linalg.eigh(h)
    psi0 = np.array(system.spin_init, dtype=complex)
    modes = vecs.conj().T @ psi0
    # psi(t) columns: V diag(exp(-i E t)) V^dag psi0, vectorized over t
    phases = np.exp(-1j * np.multiply.outer(evals, t))
    psi_t = vecs @ (phases * modes[:, None])
    up, down = psi_t[0], psi_t[1]
    cross = up.conj() * down
    shape = np.shape(times)
    return DephasingCurves(px=(2.0 * cross.real).reshape(shape),
                           py=(2.0 * cross.imag).reshape(shape),
                           pz=(np.abs(up) ** 2 - np.abs(down) ** 2).reshape(shape))
