"""Ansatz-fidelity measure: the relative deviation of the trial dynamics.

The residual of the Schroedinger equation on the trial manifold,

    |delta> = i d|D>/dt - H|D>,

measures how much of the exact flow escapes the variational subspace.  Both
i d|D>/dt (in the transformed derivative coordinates of the eom module) and
H|D> are sums of terms of the form

    (c + sum_l beta_l b_l^+) |coherent row>,

so <delta|delta> reduces to a Gram form over such first-degree polynomials
of creation operators against coherent states:

    <(c, beta) F | (c', beta') F'> =
        R(F*, F') * [ (conj(c) + conj(beta).F') (c' + beta'.conj(F)) + conj(beta).beta' ],

which covers <dD|dD>, the cross terms, and the normal-ordered <D|H^2|D>
in one pass of O(M^2 N_b) work per branch.  The relative deviation is
sigma(t) = sqrt(<delta|delta>) / Ebar_bath with Ebar_bath the full-window
time average of the bath energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bath import DiscretizedBath
from .errors import (InsufficientDataError, InvalidParameterError,
                     MatrixElementError, NormalizerDegenerateError)
from .state import MultiD1State, SystemParams, overlap_matrix

__all__ = [
    "DeviationSeries",
    "deviation_norm_sq",
    "expectation_h_squared",
    "sigma_series",
    "fit_sigma_max",
    "holomorphic_rates",
]


@dataclass(frozen=True)
class DeviationSeries:
    """Relative deviation along one trajectory."""

    times: np.ndarray
    sigma: np.ndarray
    sigma_max: float
    ebar_bath: float


def holomorphic_rates(amps: np.ndarray, disp: np.ndarray,
                      d_amps: np.ndarray, d_disp: np.ndarray):
    """Map (dA, df) to the linear tangent coordinates (kappa, phi)."""
    phi = amps[:, None] * d_disp
    kappa = d_amps - amps * np.sum((d_disp * disp.conj()).real, axis=1)
    return kappa, phi


def _h_poly(amps: np.ndarray, disp: np.ndarray, sign: float,
            system: SystemParams, bath: DiscretizedBath):
    """Same-branch part of H|D>: per-component (constant, linear-in-b^+)."""
    const = amps * (sign * 0.5 * system.epsilon
                    + sign * 0.5 * (disp @ bath.couplings))
    lin = amps[:, None] * (bath.omegas * disp + sign * 0.5 * bath.couplings)
    return const, lin


def _poly_gram(rows: np.ndarray, consts: np.ndarray,
               lins: np.ndarray) -> complex:
    """<v|v> for v = sum_j (c_j + beta_j . b^+) |row_j>."""
    r = overlap_matrix(rows, rows)
    left = consts.conj()[:, None] + lins.conj() @ rows.T
    right = consts[None, :] + rows.conj() @ lins.T
    bb = lins.conj() @ lins.T
    return complex(np.sum(r * (left * right + bb)))


def _branch_residual(amps, disp, kappa, phi, other_amps, other_disp,
                     system, bath, sign):
    """Terms of i|dD_branch> - (branch component of H|D>)."""
    h_const, h_lin = _h_poly(amps, disp, sign, system, bath)
    m = amps.size
    rows = np.vstack([disp, other_disp])
    consts = np.concatenate([1j * kappa - h_const,
                             0.5 * system.delta * other_amps])
    lins = np.vstack([1j * phi - h_lin, np.zeros_like(other_disp)])
    return rows, consts, lins


def deviation_norm_sq(state: MultiD1State, derivative, system: SystemParams,
                      bath: DiscretizedBath) -> float:
    """<delta|delta> of the Schroedinger residual for the given derivative.

    ``derivative`` needs attributes dA, dB, df, dg (an eom DerivativeVector
    or equivalent).  The result is clamped at 0; a negative or complex
    value beyond round-off tolerance raises MatrixElementError, since the
    Gram form is positive semidefinite by construction.
    """
    a, b = state.amplitudes_up, state.amplitudes_down
    f, g = state.disp_up, state.disp_down
    kap_u, phi_u = holomorphic_rates(a, f, derivative.dA, derivative.df)
    kap_d, phi_d = holomorphic_rates(b, g, derivative.dB, derivative.dg)
    value = 0.0 + 0.0j
    for args in ((a, f, kap_u, phi_u, b, g, +1.0),
                 (b, g, kap_d, phi_d, a, f, -1.0)):
        amps, disp, kappa, phi, oamps, odisp, sign = args
        rows, consts, lins = _branch_residual(
            amps, disp, kappa, phi, oamps, odisp, system, bath, sign)
        value += _poly_gram(rows, consts, lins)
    scale = max(1.0, expectation_h_squared(state, system, bath))
    if abs(value.imag) > 1e-10 * scale or value.real < -1e-10 * scale:
        raise MatrixElementError(
            f"<delta|delta> = {value} violates positivity at scale {scale}")
    return max(value.real, 0.0)


def expectation_h_squared(state: MultiD1State, system: SystemParams,
                          bath: DiscretizedBath) -> float:
    """<D|H^2|D> = squared norm of H|D> (unnormalized state)."""
    a, b = state.amplitudes_up, state.amplitudes_down
    f, g = state.disp_up, state.disp_down
    value = 0.0 + 0.0j
    for amps, disp, oamps, odisp, sign in ((a, f, b, g, +1.0),
                                           (b, g, a, f, -1.0)):
        h_const, h_lin = _h_poly(amps, disp, sign, system, bath)
        rows = np.vstack([disp, odisp])
        consts = np.concatenate([h_const, -0.5 * system.delta * oamps])
        lins = np.vstack([h_lin, np.zeros_like(odisp)])
        value += _poly_gram(rows, consts, lins)
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise MatrixElementError(f"<H^2> = {value} is not real")
    return max(value.real, 0.0)


def sigma_series(trajectory, normalizer: float | None = None) -> DeviationSeries:
    """Normalize recorded residual norms into the relative deviation series.

    The normalizer defaults to the full-window trapezoid time average of
    the recorded bath energy; pass ``normalizer`` to substitute another
    scale (e.g. a total-energy scale when the bath energy vanishes).
    """
    raw = trajectory.raw_deviation
    if raw is None:
        raise InvalidParameterError(
            "trajectory carries no deviation records; rerun with record_sigma")
    times = trajectory.t
    if normalizer is None:
        span = times[-1] - times[0]
        normalizer = float(np.trapezoid(trajectory.energy_bath, times) / span) \
            if span > 0 else float(trajectory.energy_bath[0])
    if not (normalizer > 0 and math.isfinite(normalizer)):
        raise NormalizerDegenerateError(
            f"mean bath energy {normalizer} cannot normalize the deviation")
    sigma = np.asarray(raw, dtype=float) / normalizer
    return DeviationSeries(times=np.asarray(times, dtype=float), sigma=sigma,
                           sigma_max=float(sigma.max()), ebar_bath=normalizer)


def fit_sigma_max(points) -> tuple[float, float]:
    """Least-squares line sigma_max = a1/M + a0 over points with M > 1.

    Returns (a1, a0).
    """
    pts = [(int(m), float(s)) for m, s in points if m > 1]
    if len(pts) < 2 or len({m for m, _ in pts}) < 2:
        raise InsufficientDataError(
            "need at least two distinct multiplicities M > 1 to fit")
    inv_m = np.array([1.0 / m for m, _ in pts])
    vals = np.array([s for _, s in pts])
    a1, a0 = np.polyfit(inv_m, vals, 1)
    return float(a1), float(a0)
