"""Shared builders for small test systems."""

import numpy as np
import pytest

from spinboson.bath import (DiscretizationKind, DiscretizationScheme,
                            DiscretizedBath, SpectralParams)
from spinboson.eom import SolverConfig
from spinboson.integrate import IntegratorConfig, RunSpec
from spinboson.state import MultiD1State, SystemParams


def tiny_bath(omegas, couplings) -> DiscretizedBath:
    """Bath with hand-picked modes, bypassing any discretization scheme."""
    return DiscretizedBath(omegas=np.asarray(omegas, dtype=float),
                           couplings=np.asarray(couplings, dtype=float))


def make_state(amps_up, amps_down, disp_up, disp_down, t=0.0) -> MultiD1State:
    return MultiD1State(
        amplitudes_up=np.asarray(amps_up, dtype=complex),
        amplitudes_down=np.asarray(amps_down, dtype=complex),
        disp_up=np.asarray(disp_up, dtype=complex),
        disp_down=np.asarray(disp_down, dtype=complex),
        time=t)


def random_state(rng, multiplicity, n_modes, scale=0.4) -> MultiD1State:
    """Generic state with O(scale) displacements, normalized amplitudes."""
    def cplx(shape):
        return rng.uniform(-1, 1, shape) + 1j * rng.uniform(-1, 1, shape)

    a = cplx(multiplicity)
    b = cplx(multiplicity)
    weight = np.sqrt(np.sum(np.abs(a) ** 2 + np.abs(b) ** 2))
    return make_state(a / weight, b / weight,
                      scale * cplx((multiplicity, n_modes)),
                      scale * cplx((multiplicity, n_modes)))


def make_run_spec(s=0.25, alpha=0.03, delta=0.1, epsilon=0.0, n_modes=40,
                  lambda_base=1.2, omega_max=4.0, t_end=20.0, stride=0.5,
                  rtol=1e-8, atol=1e-10, multiplicity=2, mu=0.0, seed=7,
                  record_sigma=False, kind=DiscretizationKind.LOGARITHMIC,
                  method="rk45", dt=None, spin=(1.0 + 0.0j, 0.0j),
                  noise_spin=1e-4, noise_disp=1e-2) -> RunSpec:
    return RunSpec(
        spectral=SpectralParams(s=s, alpha=alpha, omega_c=1.0),
        scheme=DiscretizationScheme(kind=kind, n_modes=n_modes,
                                    omega_max=omega_max,
                                    lambda_base=lambda_base),
        system=SystemParams(delta=delta, epsilon=epsilon, spin_init=spin),
        solver=SolverConfig(rng_seed=seed, noise_amp_spin=noise_spin,
                            noise_amp_disp=noise_disp),
        integrator=IntegratorConfig(t_end=t_end, record_stride=stride,
                                    method=method, rtol=rtol, atol=atol,
                                    dt=dt, record_sigma=record_sigma),
        multiplicity=multiplicity, mu=mu)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
