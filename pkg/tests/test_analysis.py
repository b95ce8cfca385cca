"""Tests for trajectory classification and the crossover phase diagram."""

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from spinboson.analysis import (BoundaryEstimate, CrossoverVerdict, Label,
                                PhaseDiagram, boundaries_from_labels, classify,
                                classify_series, compare_to_reference,
                                estimate_sc, ingest_reference, read_phase_csv,
                                scan_alpha, write_boundaries_json,
                                write_phase_csv)
from spinboson.errors import (ExtrapolationError, InvalidParameterError,
                              ParseError)
from spinboson.integrate import run_trajectory

from conftest import make_run_spec


def damped_cosine(n=601, t_end=60.0, rate=0.1):
    t = np.linspace(0.0, t_end, n)
    return t, 0.5 + 0.4 * np.exp(-rate * t) * np.cos(t)


def monotone_decay(n=601, t_end=60.0):
    t = np.linspace(0.0, t_end, n)
    return t, 0.5 + 0.5 * np.exp(-0.15 * t)


class TestClassifySeries:
    def test_damped_oscillation_is_coherent(self):
        t, z = damped_cosine()
        v = classify_series(t, z, s=0.3, alpha=0.1)
        assert v.label is Label.COHERENT
        assert v.n_extrema >= 1
        assert v.min_depth > 0.1
        assert v.p_eq == pytest.approx(0.5, abs=0.01)
        assert (v.s, v.alpha) == (0.3, 0.1)
        assert v.reason is None

    def test_monotone_decay_is_incoherent(self):
        t, z = monotone_decay()
        v = classify_series(t, z)
        assert v.label is Label.INCOHERENT
        assert v.n_extrema == 0
        assert v.min_depth == 0.0

    def test_too_few_samples_is_indeterminate(self):
        t = np.linspace(0.0, 1.0, 5)
        v = classify_series(t, np.full(5, 0.5))
        assert v.label is Label.INDETERMINATE
        assert v.reason == "only 5 samples; too short to classify"
        assert math.isnan(v.p_eq)

    def test_unsettled_tail_is_indeterminate(self):
        # undamped oscillation: the final quarter never goes quiet
        t = np.linspace(0.0, 60.0, 601)
        v = classify_series(t, np.cos(t))
        assert v.label is Label.INDETERMINATE
        assert "window too short" in v.reason

    def test_depth_threshold_separates_shallow_ringing(self):
        t, z = damped_cosine()
        deepest = classify_series(t, z).min_depth
        assert classify_series(t, z, threshold=2 * deepest).label \
            is Label.INCOHERENT
        assert classify_series(t, z, threshold=0.5 * deepest).label \
            is Label.COHERENT

    def test_transient_fraction_can_hide_early_dips(self):
        # single dip at t ~ 3 on an otherwise flat curve
        t = np.linspace(0.0, 40.0, 401)
        z = 0.5 - 0.2 * np.exp(-((t - 3.0) ** 2))
        assert classify_series(t, z, transient_fraction=0.05).label \
            is Label.COHERENT
        assert classify_series(t, z, transient_fraction=0.5).label \
            is Label.INCOHERENT

    def test_plateau_minimum_counts_once(self):
        t = np.arange(20.0)
        z = np.array([0.5] * 4 + [0.4] * 3 + [0.5] * 13)
        v = classify_series(t, z, transient_fraction=0.0)
        assert v.label is Label.COHERENT
        assert v.n_extrema == 1
        assert v.min_depth == pytest.approx(0.1)

    def test_downsampling_does_not_flip_labels(self):
        for t, z in (damped_cosine(n=1201), monotone_decay(n=1201)):
            full = classify_series(t, z)
            half = classify_series(t[::2], z[::2])
            assert half.label is full.label

    def test_knob_validation(self):
        t, z = damped_cosine()
        with pytest.raises(InvalidParameterError):
            classify_series(t, z, transient_fraction=1.0)
        with pytest.raises(InvalidParameterError):
            classify_series(t, z, transient_fraction=-0.1)
        with pytest.raises(InvalidParameterError):
            classify_series(t, z, threshold=0.0)
        with pytest.raises(InvalidParameterError):
            classify_series(t, z[:-1])
        with pytest.raises(InvalidParameterError):
            classify_series(t.reshape(-1, 1), z.reshape(-1, 1))

    def test_classify_wrapper_uses_trajectory_columns(self, tmp_path):
        spec = make_run_spec(alpha=0.05, delta=0.0, n_modes=6, t_end=12.0,
                             multiplicity=1, method="rk45", rtol=1e-6)
        rec = run_trajectory(spec)
        v = classify(rec, s=0.25, alpha=0.05)
        # pure dephasing freezes the population, so nothing can dip
        assert v.label is Label.INCOHERENT
        assert v.p_eq == pytest.approx(1.0, abs=1e-6)


class TestCrossoverVerdict:
    def test_coherent_requires_a_minimum(self):
        with pytest.raises(InvalidParameterError):
            CrossoverVerdict(s=0.3, alpha=0.1, label=Label.COHERENT,
                             p_eq=0.5, n_extrema=0, min_depth=0.0)


class TestBoundaries:
    def test_bracketing_midpoints(self):
        alphas = [0.1, 0.2, 0.3, 0.4, 0.5]
        labels = [Label.COHERENT, Label.COHERENT, Label.INCOHERENT,
                  Label.INCOHERENT, Label.COHERENT]
        b = boundaries_from_labels(0.45, alphas, labels)
        assert b.lower == pytest.approx(0.25)
        assert b.upper == pytest.approx(0.45)
        assert b.gap == pytest.approx(0.2)
        assert b.reliable

    def test_no_flip_means_no_boundary(self):
        labels = [Label.COHERENT] * 3
        b = boundaries_from_labels(0.3, [0.1, 0.2, 0.3], labels)
        assert b.lower is None and b.upper is None and b.gap is None

    def test_upper_needs_a_lower_first(self):
        # incoherent start: there is no coherent-to-incoherent flip to anchor
        labels = [Label.INCOHERENT, Label.COHERENT]
        b = boundaries_from_labels(0.3, [0.1, 0.2], labels)
        assert b.lower is None and b.upper is None

    def test_indeterminate_marks_unreliable(self):
        labels = [Label.COHERENT, Label.INCOHERENT, Label.INDETERMINATE]
        b = boundaries_from_labels(0.3, [0.1, 0.2, 0.3], labels)
        assert b.lower == pytest.approx(0.15)
        assert not b.reliable

    def test_grid_validation(self):
        with pytest.raises(InvalidParameterError):
            boundaries_from_labels(0.3, [], [])
        with pytest.raises(InvalidParameterError):
            boundaries_from_labels(0.3, [0.1, 0.1], [Label.COHERENT] * 2)
        with pytest.raises(InvalidParameterError):
            boundaries_from_labels(0.3, [0.1, 0.2], [Label.COHERENT])

    @given(st.floats(0.12, 0.88), st.integers(6, 40))
    @settings(max_examples=40, deadline=None)
    def test_refinement_shifts_boundary_by_less_than_spacing(self, a_star, n):
        # labels from a sharp threshold: the midpoint estimate must sit
        # within one grid spacing of the true flip
        grid = np.linspace(0.05, 1.0, n)
        assume(grid[0] < a_star < grid[-1])
        labels = [Label.COHERENT if a < a_star else Label.INCOHERENT
                  for a in grid]
        assume(labels[0] is Label.COHERENT and labels[-1] is Label.INCOHERENT)
        b = boundaries_from_labels(0.3, grid, labels)
        spacing = grid[1] - grid[0]
        assert b.lower is not None
        assert abs(b.lower - a_star) <= 0.5 * spacing + 1e-12


class TestEstimateSc:
    def test_linear_root(self):
        pts = [BoundaryEstimate(s=0.45, lower=0.1, upper=0.19),
               BoundaryEstimate(s=0.55, lower=0.1, upper=0.29)]
        assert estimate_sc(pts) == pytest.approx(0.36, abs=1e-12)

    def test_points_without_gaps_are_skipped(self):
        pts = [BoundaryEstimate(s=0.45, lower=0.1, upper=0.19),
               BoundaryEstimate(s=0.55, lower=0.1, upper=None)]
        with pytest.raises(ExtrapolationError, match="2 values"):
            estimate_sc(pts)

    def test_nonpositive_gap_rejected(self):
        pts = [BoundaryEstimate(s=0.45, lower=0.2, upper=0.2),
               BoundaryEstimate(s=0.55, lower=0.1, upper=0.3)]
        with pytest.raises(ExtrapolationError, match="positive"):
            estimate_sc(pts)

    def test_needs_distinct_s(self):
        pts = [BoundaryEstimate(s=0.45, lower=0.1, upper=0.2),
               BoundaryEstimate(s=0.45, lower=0.1, upper=0.3)]
        with pytest.raises(ExtrapolationError, match="distinct"):
            estimate_sc(pts)

    def test_flat_gap_has_no_root(self):
        pts = [BoundaryEstimate(s=0.45, lower=0.1, upper=0.2),
               BoundaryEstimate(s=0.55, lower=0.2, upper=0.3)]
        with pytest.raises(ExtrapolationError, match="degenerate"):
            estimate_sc(pts)


class TestScanAlpha:
    def test_dephasing_scan_is_all_incoherent(self):
        spec = make_run_spec(delta=0.0, n_modes=6, t_end=12.0,
                             multiplicity=1, method="rk45", rtol=1e-6)
        est, verdicts = scan_alpha(0.25, [0.05, 0.1], spec)
        assert [v.label for v in verdicts] == [Label.INCOHERENT] * 2
        assert [v.alpha for v in verdicts] == [0.05, 0.1]
        assert all(v.s == 0.25 for v in verdicts)
        assert est.lower is None and est.reliable

    def test_failed_runs_become_indeterminate(self):
        spec = make_run_spec(n_modes=6, t_end=12.0, multiplicity=1)
        crippled = dataclasses.replace(
            spec, solver=dataclasses.replace(spec.solver, size_cap=3))
        est, verdicts = scan_alpha(0.25, [0.05, 0.1], crippled)
        assert all(v.label is Label.INDETERMINATE for v in verdicts)
        assert all(v.reason.startswith("run failed:") for v in verdicts)
        assert not est.reliable

    def test_grid_validation(self):
        spec = make_run_spec(n_modes=6, t_end=12.0, multiplicity=1)
        with pytest.raises(InvalidParameterError):
            scan_alpha(0.25, [], spec)
        with pytest.raises(InvalidParameterError):
            scan_alpha(0.25, [0.1, 0.1], spec)


def _verdict(s, alpha, label):
    n = 1 if label is Label.COHERENT else 0
    return CrossoverVerdict(s=s, alpha=alpha, label=label, p_eq=0.5,
                            n_extrema=n, min_depth=0.01 * n)


class TestPhaseDiagram:
    def test_from_verdicts_groups_rows_and_extrapolates(self):
        c, i = Label.COHERENT, Label.INCOHERENT
        verdicts = [
            _verdict(0.45, 0.00, c), _verdict(0.45, 0.06, i),
            _verdict(0.45, 0.10, i), _verdict(0.45, 0.16, c),
            _verdict(0.55, 0.00, c), _verdict(0.55, 0.06, i),
            _verdict(0.55, 0.20, i), _verdict(0.55, 0.26, c),
            # a lone point cannot bracket anything and is skipped
            _verdict(0.65, 0.10, c),
        ]
        diag = PhaseDiagram.from_verdicts(verdicts)
        assert [b.s for b in diag.boundaries] == [0.45, 0.55]
        assert diag.boundaries[0].gap == pytest.approx(0.10)
        assert diag.boundaries[1].gap == pytest.approx(0.20)
        # gap(s) = s - 0.35 vanishes at 0.35
        assert diag.s_c_estimate == pytest.approx(0.35, abs=1e-12)

    def test_sc_is_none_when_extrapolation_fails(self):
        c, i = Label.COHERENT, Label.INCOHERENT
        verdicts = [_verdict(0.45, 0.0, c), _verdict(0.45, 0.1, i)]
        diag = PhaseDiagram.from_verdicts(verdicts)
        assert diag.s_c_estimate is None
        assert diag.boundaries[0].upper is None


class TestPhaseFiles:
    def test_phase_csv_round_trip(self, tmp_path):
        verdicts = [_verdict(0.45, 0.1, Label.COHERENT),
                    _verdict(0.45, 0.2, Label.INCOHERENT),
                    _verdict(0.55, 1 / 3, Label.INDETERMINATE)]
        path = tmp_path / "phase.csv"
        write_phase_csv(verdicts, path)
        back = read_phase_csv(path)
        assert len(back) == 3
        for orig, rt in zip(verdicts, back):
            assert rt.s == orig.s and rt.alpha == orig.alpha
            assert rt.label is orig.label
            assert rt.p_eq == orig.p_eq
            assert rt.n_extrema == orig.n_extrema

    def test_phase_csv_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ParseError) as err:
            read_phase_csv(path)
        assert err.value.line == 1

    def test_phase_csv_reports_bad_row_line(self, tmp_path):
        path = tmp_path / "phase.csv"
        path.write_text("s,alpha,label,p_eq,n_extrema\n"
                        "0.45,0.1,Coherent,0.5,1\n"
                        "0.45,oops,Coherent,0.5,1\n")
        with pytest.raises(ParseError) as err:
            read_phase_csv(path)
        assert err.value.line == 3

    def test_boundaries_json(self, tmp_path):
        path = tmp_path / "boundaries.json"
        bounds = [BoundaryEstimate(s=0.45, lower=0.13, upper=0.27),
                  BoundaryEstimate(s=0.55, lower=None, upper=None,
                                   reliable=False)]
        write_boundaries_json(bounds, 0.37, path, extra={"note": "demo"})
        text = path.read_text()
        assert text.endswith("\n")
        doc = json.loads(text)
        assert doc["s_c_estimate"] == 0.37
        assert doc["note"] == "demo"
        assert doc["boundaries"][0] == {"s": 0.45, "lower": 0.13,
                                        "upper": 0.27, "reliable": True}
        assert doc["boundaries"][1]["lower"] is None


class TestReferenceCurves:
    def test_ingest_sorts_each_series(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("x,y,series\n"
                        "2.0,0.3,weak\n"
                        "0.0,1.0,weak\n"
                        "1.0,0.6,weak\n"
                        "0.0,0.9,strong\n")
        curves = ingest_reference(path)
        assert set(curves) == {"weak", "strong"}
        x, y = curves["weak"]
        assert x.tolist() == [0.0, 1.0, 2.0]
        assert y.tolist() == [1.0, 0.6, 0.3]

    def test_ingest_error_paths(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ParseError) as err:
            ingest_reference(empty)
        assert err.value.line == 1

        wrong = tmp_path / "wrong.csv"
        wrong.write_text("time,value\n0,1\n")
        with pytest.raises(ParseError, match="x,y,series"):
            ingest_reference(wrong)

        bad_row = tmp_path / "bad.csv"
        bad_row.write_text("x,y,series\n0.0,1.0,a\nnope,1.0,a\n")
        with pytest.raises(ParseError) as err:
            ingest_reference(bad_row)
        assert err.value.line == 3

        short_row = tmp_path / "short.csv"
        short_row.write_text("x,y,series\n0.0,1.0\n")
        with pytest.raises(ParseError, match="3 columns"):
            ingest_reference(short_row)

        no_rows = tmp_path / "norows.csv"
        no_rows.write_text("x,y,series\n")
        with pytest.raises(ParseError, match="no data rows"):
            ingest_reference(no_rows)

    def test_compare_interpolates_onto_reference(self):
        spec = make_run_spec(alpha=0.02, n_modes=6, t_end=10.0,
                             multiplicity=1, method="rk45", rtol=1e-6)
        rec = run_trajectory(spec)
        x = rec.t[::4]
        assert compare_to_reference(rec, x, rec.pz[::4]) == 0.0
        shifted = compare_to_reference(rec, x, rec.pz[::4] + 0.02)
        assert shifted == pytest.approx(0.02, abs=1e-12)
        with pytest.raises(InvalidParameterError):
            compare_to_reference(rec, x + 100.0, rec.pz[::4])
