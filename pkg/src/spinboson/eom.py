"""Assembly and solution of the variational equations of motion.

The time-dependent variational principle projects i d|D>/dt = H|D> onto the
tangent space of the trial manifold.  In the raw parameters (A_n, f_nl) the
tangent space is not closed under multiplication by i, so the implicit
equations could not be solved as one complex linear system.  The solver
therefore works in transformed derivative coordinates

    kappa_u = dA_u - A_u * sum_l Re(df_ul * conj(f_ul)),
    phi_ul  = A_u * df_ul,

in which the branch tangent vector is the complex-linear combination

    |dD_up> = sum_u kappa_u |f_u> + sum_{u,l} phi_ul b_l^+ |f_u>,

and likewise for the down branch.  Testing against the tangent basis
{ |f_m>, b_l^+ |f_m> } yields, per spin branch, one Hermitian
positive-semidefinite system

    S x = -i h,      dim(x) = M * (N_b + 1),

whose Gram matrix S couples only same-branch components; the opposite
branch enters only through the tunneling (Delta) terms on the right-hand
side.  The solution is mapped back to (dA, df) afterwards.

Coherent states of nearby displacements make S ill-conditioned, so the
solve applies a Tikhonov ridge scaled to the matrix norm, polishes with
iterative refinement against the unregularized system, and falls back to
truncated-SVD least squares: the returned derivatives must satisfy the
original system to a relative residual below 1e-8 or the solve reports a
singularity with its condition estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import zpocon

from .bath import DiscretizedBath
from .errors import (CapacityError, InconsistentStateError,
                     InvalidParameterError, SingularityError)
from .state import MultiD1State, SystemParams, norm, overlap_matrix

__all__ = [
    "SolverConfig",
    "DerivativeVector",
    "SolveDiagnostics",
    "assemble_and_solve",
    "inject_noise",
]

#: Relative residual the returned solution must satisfy on the

#: unregularized system.
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the per-step linear solves and of initial noise injection.

    tikhonov scales the ridge relative to the 1-norm of the Gram matrix;
    rank_tolerance is the relative singular-value cutoff of the fallback
    least-squares solve; the noise amplitudes are the half-widths of the
    uniform perturbations applied once at t = 0.
    """

    tikhonov: float = 1e-12
    rank_tolerance: float = 1e-10
    noise_amp_spin: float = 1e-4
    noise_amp_disp: float = 1e-2
    rng_seed: int = 0
    size_cap: int = 6000
    amplitude_floor: float = 1e-12

    def __post_init__(self):
        if self.tikhonov < 0 or not math.isfinite(self.tikhonov):
            raise InvalidParameterError("tikhonov must be >= 0")
        for name in ("rank_tolerance", "amplitude_floor"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidParameterError(f"{name} must be positive")
        if self.noise_amp_spin < 0 or self.noise_amp_disp < 0:
            raise InvalidParameterError("noise amplitudes must be >= 0")
        if self.size_cap < 1:
            raise InvalidParameterError("size_cap must be >= 1")


@dataclass(frozen=True)
class DerivativeVector:
    """Time derivatives of all variational parameters (one instant)."""

    dA: np.ndarray
    dB: np.ndarray
    df: np.ndarray
    dg: np.ndarray


@dataclass(frozen=True)
class SolveDiagnostics:
    """Condition estimates and relative residuals of the two branch solves."""

    cond_up: float
    cond_down: float
    residual_up: float
    residual_down: float


def _branch_system(amps: np.ndarray, disp: np.ndarray,
                   other_amps: np.ndarray, other_disp: np.ndarray,
                   sign: float, system: SystemParams,
                   bath: DiscretizedBath) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix S and right-hand side h of one spin branch.

    ``sign`` is +1 for the up branch and -1 for the down branch; it flips
    the bias and the linear bath coupling.
    """
    m_dim, n_modes = disp.shape
    omegas, lams = bath.omegas, bath.couplings
    r = overlap_matrix(disp, disp)
    r_cross = overlap_matrix(disp, other_disp)
    fc = disp.conj()

    w_pair = (fc * omegas) @ disp.T
    lam_row = fc @ lams
    theta = (sign * 0.5 * system.epsilon + w_pair
             + sign * 0.5 * (lam_row[:, None] + (disp @ lams)[None, :]))

    dim = m_dim * (n_modes + 1)
    s = np.empty((dim, dim), dtype=complex)
    s[:m_dim, :m_dim] = r
    s[:m_dim, m_dim:] = np.einsum("mu,mk->muk", r, fc).reshape(m_dim, -1)
    s[m_dim:, :m_dim] = np.einsum("mu,ul->mlu", r, disp).reshape(-1, m_dim)
    z = np.einsum("mu,mk,ul->mluk", r, fc, disp)
    for l in range(n_modes):
        z[:, l, :, l] += r
    s[m_dim:, m_dim:] = z.reshape(dim - m_dim, dim - m_dim)

    half_delta = 0.5 * system.delta
    r_amp = r * amps[None, :]
    cross_amp = r_cross * other_amps[None, :]
    h_amp = (r_amp * theta).sum(axis=1) - half_delta * cross_amp.sum(axis=1)
    h_disp = ((r_amp * theta) @ disp
              + omegas[None, :] * (r_amp @ disp)
              + sign * 0.5 * np.outer(r_amp.sum(axis=1), lams)
              - half_delta * (cross_amp @ other_disp))
    return s, np.concatenate([h_amp, h_disp.ravel()])


def _freeze_components(s: np.ndarray, h: np.ndarray, inactive: np.ndarray,
                       m_dim: int, n_modes: int) -> None:
    """Remove displacement directions of amplitude-dead components in place.

    A component with |A_u| below the floor cannot realize phi_u = A_u*df_u,
    so its displacement rows drop out of the tangent space; the rows/cols
    are replaced by trivial equations phi_u = 0.
    """
    idx = (m_dim + np.arange(n_modes)[None, :]
           + n_modes * np.flatnonzero(inactive)[:, None]).ravel()
    s[idx, :] = 0.0
    s[:, idx] = 0.0
    s[idx, idx] = 1.0
    h[idx] = 0.0


def _solve_branch(s: np.ndarray, h: np.ndarray,
                  config: SolverConfig) -> tuple[np.ndarray, float, float]:
    """Solve S x = -i h; returns (x, condition estimate, relative residual)."""
    rhs = -1j * h
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(h), 1.0, 0.0

    anorm = np.linalg.norm(s, 1)
    ridged = s.copy()
    ridged.flat[::s.shape[0] + 1] += config.tikhonov * anorm
    x = None
    cond = math.inf
    try:
        factor = sla.cho_factor(ridged, lower=False, check_finite=False)
        rcond, info = zpocon(factor[0], anorm)
        if info == 0 and rcond > 0:
            cond = 1.0 / rcond
        x = sla.cho_solve(factor, rhs, check_finite=False)
        for _ in range(3):
            residual = rhs - s @ x
            if np.linalg.norm(residual) <= 0.1 * RESIDUAL_TOL * rhs_norm:
                break
            x = x + sla.cho_solve(factor, residual, check_finite=False)
    except np.linalg.LinAlgError:
        x = None
    if x is not None:
        rel = np.linalg.norm(rhs - s @ x) / rhs_norm
        if rel < RESIDUAL_TOL:
            return x, cond, rel

    # Cholesky unusable or refinement stalled: rank-revealing fallback.
    x, _, rank, svals = np.linalg.lstsq(s, rhs, rcond=config.rank_tolerance)
    if svals.size and svals[-1] > 0:
        cond = float(svals[0] / svals[-1])
    rel = np.linalg.norm(rhs - s @ x) / rhs_norm
    if rel >= RESIDUAL_TOL:
        raise SingularityError(
            f"variational system unsolvable: relative residual {rel:.3e} "
            f"(rank {rank}/{s.shape[0]})", condition=cond)
    return x, cond, rel


def _branch_derivatives(amps: np.ndarray, disp: np.ndarray,
                        other_amps: np.ndarray, other_disp: np.ndarray,
                        sign: float, system: SystemParams,
                        bath: DiscretizedBath, config: SolverConfig,
                        amp_scale: float):
    m_dim, n_modes = disp.shape
    s, h = _branch_system(amps, disp, other_amps, other_disp, sign,
                          system, bath)
    inactive = np.abs(amps) < config.amplitude_floor * amp_scale
    if inactive.any():
        _freeze_components(s, h, inactive, m_dim, n_modes)
    x, cond, rel = _solve_branch(s, h, config)

    kappa = x[:m_dim]
    phi = x[m_dim:].reshape(m_dim, n_modes)
    d_disp = np.zeros_like(phi)
    active = ~inactive
    d_disp[active] = phi[active] / amps[active, None]
    d_amps = kappa + amps * np.sum((d_disp * disp.conj()).real, axis=1)
    return d_amps, d_disp, cond, rel


def assemble_and_solve(state: MultiD1State, system: SystemParams,
                       bath: DiscretizedBath, config: SolverConfig,
                       with_diagnostics: bool = False):
    """Time derivatives of all variational parameters at ``state``.

    Returns a DerivativeVector, or (DerivativeVector, SolveDiagnostics)
    when ``with_diagnostics`` is set.

    Raises
    ------
    CapacityError
        If the per-branch dimension M*(N_b+1) exceeds config.size_cap.
    SingularityError
        If a branch system is rank deficient beyond Tikhonov repair.
    """
    dim = state.multiplicity * (state.n_modes + 1)
    if dim > config.size_cap:
        raise CapacityError(
            f"branch dimension {dim} exceeds size cap {config.size_cap}")
    a, b = state.amplitudes_up, state.amplitudes_down
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    da, df, cond_up, res_up = _branch_derivatives(
        a, state.disp_up, b, state.disp_down, +1.0, system, bath, config, scale)
    db, dg, cond_down, res_down = _branch_derivatives(
        b, state.disp_down, a, state.disp_up, -1.0, system, bath, config, scale)
    deriv = DerivativeVector(da, db, df, dg)
    if with_diagnostics:
        return deriv, SolveDiagnostics(cond_up, cond_down, res_up, res_down)
    return deriv


def inject_noise(state: MultiD1State, config: SolverConfig) -> MultiD1State:
    """Perturb a t = 0 state with uniform noise and renormalize.

    Independent uniform draws in [-amp, amp] are added to the real and
    imaginary parts of every amplitude (noise_amp_spin) and every
    displacement (noise_amp_disp); the perturbed state is rescaled to unit
    norm.  Deterministic under config.rng_seed.  With both amplitudes zero
    the state is returned unchanged.
    """
    if state.time != 0.0:
        raise InvalidParameterError("noise injection is defined at t = 0 only")
    if config.noise_amp_spin == 0.0 and config.noise_amp_disp == 0.0:
        return state
    rng = np.random.default_rng(config.rng_seed)

    def perturb(arr: np.ndarray, amp: float) -> np.ndarray:
        noise = rng.uniform(-amp, amp, arr.shape) + \
            1j * rng.uniform(-amp, amp, arr.shape)
        return arr + noise

    noisy = MultiD1State(
        perturb(state.amplitudes_up, config.noise_amp_spin),
        perturb(state.amplitudes_down, config.noise_amp_spin),
        perturb(state.disp_up, config.noise_amp_disp),
        perturb(state.disp_down, config.noise_amp_disp),
        state.time)
    total = norm(noisy)
    if total <= 0.0:
        raise InconsistentStateError("noise produced a zero-norm state")
    scale = 1.0 / math.sqrt(total)
    return MultiD1State(
        noisy.amplitudes_up * scale, noisy.amplitudes_down * scale,
        noisy.disp_up, noisy.disp_down, state.time)
