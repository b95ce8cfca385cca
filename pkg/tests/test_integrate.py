"""Propagation driver: closed-form dynamics, step control, records, files."""

import dataclasses
import math

import numpy as np
import pytest

from conftest import make_run_spec, make_state, tiny_bath
from spinboson.bath import DiscretizationKind
from spinboson.eom import SolverConfig
from spinboson.errors import CapacityError, InvalidParameterError
from spinboson.integrate import (CSV_COLUMNS, IntegratorConfig, RunSpec,
                                 TrajectoryRecord, convergence_study, evolve,
                                 read_trajectory_csv, run_many,
                                 run_trajectory, write_trajectory_csv)
from spinboson.oracle import dephasing_exact, free_spin_exact
from spinboson.state import SystemParams, initial_state

QUIET = SolverConfig(noise_amp_spin=0.0, noise_amp_disp=0.0)


def _evolve_clean(system, bath, t_end, stride, multiplicity=1, mu=0.0,
                  **integ_kwargs):
    cfg = IntegratorConfig(t_end=t_end, record_stride=stride,
                           **integ_kwargs)
    state0 = initial_state(system, bath, multiplicity, mu)
    return evolve(state0, system, bath, QUIET, cfg)


class TestClosedFormDynamics:
    def test_rabi_oscillation(self):
        bath = tiny_bath([1.0], [0.0])
        system = SystemParams(delta=1.0, epsilon=0.0)
        rec = _evolve_clean(system, bath, 10.0, 0.25, rtol=1e-10, atol=1e-12)
        assert np.allclose(rec.pz, np.cos(rec.t), atol=1e-7)
        assert np.allclose(rec.py, np.sin(rec.t), atol=1e-7)
        assert np.allclose(rec.px, 0.0, atol=1e-7)

    def test_biased_free_spin_matches_oracle(self):
        bath = tiny_bath([1.0], [0.0])
        system = SystemParams(delta=0.4, epsilon=0.3)
        rec = _evolve_clean(system, bath, 10.0, 0.25, rtol=1e-10, atol=1e-12)
        exact = free_spin_exact(system, rec.t)
        assert np.allclose(rec.pz, exact.pz, atol=1e-7)
        assert np.allclose(rec.px, exact.px, atol=1e-7)
        assert np.allclose(rec.py, exact.py, atol=1e-7)

    def test_pure_dephasing_matches_oracle(self):
        bath = tiny_bath([1.0], [0.2])
        amp = math.sqrt(0.5)
        system = SystemParams(delta=0.0, epsilon=0.0, spin_init=(amp, amp))
        rec = _evolve_clean(system, bath, 2.0 * math.pi, math.pi / 8,
                            rtol=1e-10, atol=1e-12)
        exact = dephasing_exact(bath, system.spin_init, rec.t)
        assert np.allclose(rec.pz, exact.pz, atol=1e-8)
        assert np.allclose(rec.px, exact.px, atol=1e-7)
        assert np.allclose(rec.py, exact.py, atol=1e-7)
        # full coherence revival after one period of the single mode
        assert rec.px[-1] == pytest.approx(rec.px[0], abs=1e-6)


class TestStepControl:
    def _reference(self, system, bath):
        return _evolve_clean(system, bath, 2.0, 2.0, rtol=1e-12,
                             atol=1e-14).pz[-1]

    def test_rk4_fourth_order(self):
        bath = tiny_bath([1.3], [0.4])
        system = SystemParams(delta=1.0, epsilon=0.0)
        ref = self._reference(system, bath)
        errors = []
        for dt in (0.2, 0.1, 0.05):
            rec = _evolve_clean(system, bath, 2.0, 2.0, method="rk4", dt=dt)
            errors.append(abs(rec.pz[-1] - ref))
        assert errors[0] > errors[1] > errors[2]
        for coarse, fine in zip(errors, errors[1:]):
            assert 10.0 < coarse / fine < 30.0

    def test_tighter_rtol_reduces_drift(self):
        spec_loose = make_run_spec(n_modes=20, t_end=20.0, rtol=1e-5,
                                   atol=1e-8)
        spec_tight = make_run_spec(n_modes=20, t_end=20.0, rtol=1e-9,
                                   atol=1e-12)
        drift_loose = run_trajectory(spec_loose).meta["norm_drift"]
        drift_tight = run_trajectory(spec_tight).meta["norm_drift"]
        assert drift_tight < drift_loose / 10.0

    def test_record_grid_hits_endpoint(self):
        bath = tiny_bath([1.0], [0.0])
        system = SystemParams(delta=1.0)
        rec = _evolve_clean(system, bath, 1.0, 0.3)
        assert np.allclose(rec.t, [0.0, 0.3, 0.6, 0.9, 1.0])

    def test_nonzero_start_time_rejected(self):
        bath = tiny_bath([1.0], [0.0])
        state = make_state([1.0], [0.0], [[0.0]], [[0.0]], t=1.0)
        with pytest.raises(InvalidParameterError):
            evolve(state, SystemParams(delta=0.1), bath, QUIET,
                   IntegratorConfig(t_end=1.0, record_stride=0.5))

    def test_fixed_step_requires_dt(self):
        with pytest.raises(InvalidParameterError):
            IntegratorConfig(t_end=1.0, record_stride=0.5, method="rk4")

    def test_stride_beyond_t_end_rejected(self):
        with pytest.raises(InvalidParameterError):
            IntegratorConfig(t_end=1.0, record_stride=2.0)


class TestRunTrajectory:
    def test_deterministic_given_seed(self):
        spec = make_run_spec(n_modes=12, t_end=5.0, stride=1.0)
        a = run_trajectory(spec)
        b = run_trajectory(spec)
        assert np.array_equal(a.pz, b.pz)
        assert np.array_equal(a.energy, b.energy)

    def test_seed_moves_noise(self):
        base = make_run_spec(n_modes=12, t_end=5.0, stride=1.0, seed=1)
        other = dataclasses.replace(
            base, solver=dataclasses.replace(base.solver, rng_seed=2))
        a = run_trajectory(base)
        b = run_trajectory(other)
        assert np.max(np.abs(a.pz - b.pz)) > 0.0

    def test_initial_sample_is_normalized(self):
        rec = run_trajectory(make_run_spec(n_modes=12, t_end=2.0, stride=1.0))
        assert rec.norm[0] == pytest.approx(1.0, abs=1e-12)
        assert rec.pz[0] == pytest.approx(1.0, abs=2e-4)

    def test_meta_describes_run(self):
        spec = make_run_spec(n_modes=12, t_end=2.0, stride=1.0)
        rec = run_trajectory(spec, extra_meta={"tag": "x"})
        assert rec.meta["tag"] == "x"
        assert rec.meta["bath"]["n_modes"] == 12
        assert rec.meta["integrator"]["method"] == "rk45"
        assert rec.meta["solver"]["rng_seed"] == 7
        assert rec.meta["n_rhs_evals"] > 0
        assert rec.meta["norm_drift"] < 1e-6

    def test_sigma_recording(self):
        spec = make_run_spec(n_modes=12, t_end=2.0, stride=0.5,
                             record_sigma=True)
        rec = run_trajectory(spec)
        assert rec.sigma is not None and rec.sigma.shape == rec.t.shape
        assert rec.meta["sigma_max"] == pytest.approx(float(rec.sigma.max()))
        assert rec.meta["ebar_bath"] > 0.0

    def test_diagnostics_stream(self, tmp_path):
        path = tmp_path / "diag.csv"
        spec = make_run_spec(n_modes=12, t_end=1.0, stride=0.5)
        rec = run_trajectory(spec, diagnostics_path=path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,cond_up,cond_down,residual_up,residual_down"
        assert len(lines) == rec.n_samples + 1


class TestRunMany:
    def test_transports_failures(self):
        good = make_run_spec(n_modes=8, t_end=1.0, stride=0.5)
        bad = dataclasses.replace(
            good, solver=dataclasses.replace(good.solver, size_cap=3))
        results = run_many([good, bad])
        assert isinstance(results[0], TrajectoryRecord)
        assert isinstance(results[1], CapacityError)


class TestConvergenceStudy:
    def test_varies_mode_count(self):
        base = make_run_spec(n_modes=20, t_end=5.0, stride=1.0)
        report = convergence_study(base, "n_modes", [20, 30])
        assert report.values == [20, 30]
        assert report.max_deviation(0, 1) >= 0.0
        assert report.converged == (report.max_dev.max() < report.threshold)

    def test_needs_two_values(self):
        base = make_run_spec(n_modes=20, t_end=5.0, stride=1.0)
        with pytest.raises(InvalidParameterError):
            convergence_study(base, "n_modes", [20])

    def test_rejects_unknown_knob(self):
        base = make_run_spec(n_modes=20, t_end=5.0, stride=1.0)
        with pytest.raises(InvalidParameterError):
            convergence_study(base, "rtol", [1e-6, 1e-8])

    def test_lambda_base_needs_log_scheme(self):
        base = make_run_spec(n_modes=20, t_end=5.0, stride=1.0,
                             kind=DiscretizationKind.LINEAR)
        with pytest.raises(InvalidParameterError):
            convergence_study(base, "lambda_base", [1.1, 1.2])


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path):
        spec = make_run_spec(n_modes=12, t_end=2.0, stride=0.5,
                             record_sigma=True)
        rec = run_trajectory(spec)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(rec, path)
        back = read_trajectory_csv(path)
        for name in CSV_COLUMNS:
            assert np.array_equal(getattr(back, name), getattr(rec, name))
        assert np.array_equal(back.sigma, rec.sigma)
        assert back.meta["bath"]["n_modes"] == 12

    def test_sidecar_written(self, tmp_path):
        rec = run_trajectory(make_run_spec(n_modes=8, t_end=1.0, stride=0.5))
        rec.write(tmp_path / "traj.csv")
        assert (tmp_path / "traj.meta.json").exists()

    def test_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(InvalidParameterError):
            read_trajectory_csv(path)

    def test_record_validates_time_axis(self):
        cols = {name: np.array([0.0, 1.0]) for name in CSV_COLUMNS}
        cols["t"] = np.array([1.0, 2.0])
        with pytest.raises(InvalidParameterError):
            TrajectoryRecord(**cols)


@pytest.mark.slow
class TestMultiplicityMatters:
    def test_single_branch_differs_from_four(self):
        base = make_run_spec(n_modes=40, t_end=60.0, stride=1.0, alpha=0.1,
                             multiplicity=1, rtol=1e-7, atol=1e-9)
        rich = dataclasses.replace(base, multiplicity=4)
        rec1 = run_trajectory(base)
        rec4 = run_trajectory(rich)
        n = min(rec1.t.size, rec4.t.size)
        assert np.max(np.abs(rec1.pz[:n] - rec4.pz[:n])) > 0.05
