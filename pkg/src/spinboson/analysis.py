"""Coherent/incoherent classification and the crossover phase diagram.

A trajectory is called coherent when, after discarding an initial
transient, the population difference still dips below its quasi-steady
value by more than a depth threshold at some local minimum.  The
quasi-steady value is the mean over the final quarter of the window; for
these baths the true equilibration is far slower than any simulated
window, so this is an average position, not an equilibrium value.  Both
knobs (transient fraction, depth threshold) are explicit parameters since
the underlying criterion in the literature is visual.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (ExtrapolationError, InvalidParameterError, ParseError,
                     SpinBosonError)
from .integrate import RunSpec, TrajectoryRecord, run_many

__all__ = [
    "Label",
    "CrossoverVerdict",
    "BoundaryEstimate",
    "PhaseDiagram",
    "classify_series",
    "classify",
    "boundaries_from_labels",
    "scan_alpha",
    "estimate_sc",
    "ingest_reference",
    "compare_to_reference",
    "write_phase_csv",
    "read_phase_csv",
    "write_boundaries_json",
]

DEFAULT_TRANSIENT_FRACTION = 0.1
DEFAULT_DEPTH_THRESHOLD = 1e-3
STEADY_WINDOW_SPREAD = 0.05


class Label(str, Enum):
    COHERENT = "Coherent"
    INCOHERENT = "Incoherent"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class CrossoverVerdict:
    """Classification of one (s, alpha) trajectory."""

    s: float
    alpha: float
    label: Label
    p_eq: float
    n_extrema: int
    min_depth: float
    reason: str | None = None

    def __post_init__(self):
        if self.label is Label.COHERENT and self.n_extrema < 1:
            raise InvalidParameterError(
                "coherent verdict requires at least one qualifying minimum")


def _local_minima(values: np.ndarray) -> list[int]:
    """Indices of strict interior minima; plateaus count once, at entry."""
    idx = []
    i = 1
    n = values.size
    while i < n - 1:
        j = i
        while j < n - 1 and values[j + 1] == values[j]:
            j += 1
        if j >= n - 1:
            break
        if values[i] < values[i - 1] and values[j + 1] > values[j]:
            idx.append(i)
        i = j + 1
    return idx


def classify_series(times, pz, transient_fraction: float = DEFAULT_TRANSIENT_FRACTION,
                    threshold: float = DEFAULT_DEPTH_THRESHOLD,
                    s: float = math.nan, alpha: float = math.nan) -> CrossoverVerdict:
    """Label a population-difference curve as coherent or incoherent.

    The final quarter must be quasi-steady (peak-to-peak < 0.05), otherwise
    the verdict is Indeterminate; coherence means at least one
    post-transient local minimum dips more than ``threshold`` below the
    final-quarter mean.
    """
    if not (0.0 <= transient_fraction < 1.0):
        raise InvalidParameterError(
            f"transient_fraction must lie in [0, 1), got {transient_fraction}")
    if threshold <= 0:
        raise InvalidParameterError("depth threshold must be > 0")
    t = np.asarray(times, dtype=float)
    z = np.asarray(pz, dtype=float)
    if t.ndim != 1 or t.shape != z.shape:
        raise InvalidParameterError("times and pz must be equal-length vectors")

    def indeterminate(reason: str) -> CrossoverVerdict:
        return CrossoverVerdict(s=s, alpha=alpha, label=Label.INDETERMINATE,
                                p_eq=math.nan, n_extrema=0, min_depth=0.0,
                                reason=reason)

    if t.size < 8:
        return indeterminate(f"only {t.size} samples; too short to classify")
    quarter = z[t >= t[0] + 0.75 * (t[-1] - t[0])]
    spread = float(quarter.max() - quarter.min())
    if spread >= STEADY_WINDOW_SPREAD:
        return indeterminate(
            f"final quarter still varies by {spread:.3f}; window too short")
    p_eq = float(quarter.mean())

    start = np.searchsorted(t, t[0] + transient_fraction * (t[-1] - t[0]))
    tail = z[start:]
    depths = [p_eq - tail[i] for i in _local_minima(tail)]
    qualifying = [d for d in depths if d > threshold]
    label = Label.COHERENT if qualifying else Label.INCOHERENT
    return CrossoverVerdict(
        s=s, alpha=alpha, label=label, p_eq=p_eq,
        n_extrema=len(qualifying),
        min_depth=max(qualifying) if qualifying else 0.0)


def classify(trajectory: TrajectoryRecord,
             transient_fraction: float = DEFAULT_TRANSIENT_FRACTION,
             threshold: float = DEFAULT_DEPTH_THRESHOLD,
             s: float = math.nan, alpha: float = math.nan) -> CrossoverVerdict:
    return classify_series(trajectory.t, trajectory.pz, transient_fraction,
                           threshold, s=s, alpha=alpha)


@dataclass(frozen=True)
class BoundaryEstimate:
    """Crossover couplings along one line of constant s.

    ``lower`` is the first coherent-to-incoherent flip, ``upper`` the
    incoherent-to-coherent recurrence, both as bracketing-pair midpoints;
    None when the flip is absent.  ``reliable`` is False when any grid
    point was Indeterminate.
    """

    s: float
    lower: float | None
    upper: float | None
    reliable: bool = True

    @property
    def gap(self) -> float | None:
        if self.lower is None or self.upper is None:
            return None
        return self.upper - self.lower


def boundaries_from_labels(s: float, alphas, labels) -> BoundaryEstimate:
    """Bracketing midpoints of the label flips along an alpha grid."""
    alphas = [float(a) for a in alphas]
    labels = list(labels)
    if len(alphas) != len(labels) or not alphas:
        raise InvalidParameterError("need one label per grid point")
    if any(np.diff(alphas) <= 0):
        raise InvalidParameterError("alpha grid must be strictly increasing")
    reliable = all(lab is not Label.INDETERMINATE for lab in labels)
    lower = upper = None
    for (a0, l0), (a1, l1) in zip(zip(alphas, labels), zip(alphas[1:], labels[1:])):
        if lower is None:
            if l0 is Label.COHERENT and l1 is Label.INCOHERENT:
                lower = 0.5 * (a0 + a1)
        elif upper is None:
            if l0 is Label.INCOHERENT and l1 is Label.COHERENT:
                upper = 0.5 * (a0 + a1)
    return BoundaryEstimate(s=s, lower=lower, upper=upper, reliable=reliable)


def scan_alpha(s: float, alpha_grid, base: RunSpec,
               transient_fraction: float = DEFAULT_TRANSIENT_FRACTION,
               threshold: float = DEFAULT_DEPTH_THRESHOLD,
               max_workers: int | None = None
               ) -> tuple[BoundaryEstimate, list[CrossoverVerdict]]:
    """Run and classify every coupling on the grid; extract the boundaries.

    A point whose run raises is recorded as Indeterminate with the error
    message as the reason, and makes the boundary estimate unreliable.
    """
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise InvalidParameterError("alpha grid must not be empty")
    if any(np.diff(alphas) <= 0):
        raise InvalidParameterError("alpha grid must be strictly increasing")
    specs = []
    for a in alphas:
        spectral = dataclasses.replace(base.spectral, s=s, alpha=a)
        specs.append(dataclasses.replace(base, spectral=spectral))
    results = run_many(specs, max_workers=max_workers)
    verdicts = []
    for a, res in zip(alphas, results):
        if isinstance(res, SpinBosonError):
            verdicts.append(CrossoverVerdict(
                s=s, alpha=a, label=Label.INDETERMINATE, p_eq=math.nan,
                n_extrema=0, min_depth=0.0, reason=f"run failed: {res}"))
        elif isinstance(res, Exception):
            raise res
        else:
            verdicts.append(classify(res, transient_fraction, threshold,
                                     s=s, alpha=a))
    estimate = boundaries_from_labels(s, alphas, [v.label for v in verdicts])
    return estimate, verdicts


def estimate_sc(boundaries) -> float:
    """Critical exponent from the vanishing of the crossover gap.

    Fits gap(s) = upper(s) - lower(s) linearly and returns its root; the
    gap must be positive and vary across the provided s values.
    """
    points = [(b.s, b.gap) for b in boundaries if b.gap is not None]
    if len(points) < 2:
        raise ExtrapolationError(
            "need both boundaries at >= 2 values of s to extrapolate")
    s_vals = np.array([p[0] for p in points])
    gaps = np.array([p[1] for p in points])
    if np.any(gaps <= 0):
        raise ExtrapolationError("crossover gaps must be positive")
    if np.unique(s_vals).size < 2:
        raise ExtrapolationError("need >= 2 distinct s values")
    slope, intercept = np.polyfit(s_vals, gaps, 1)
    if abs(slope) < 1e-12 * max(1.0, float(np.abs(gaps).max())):
        raise ExtrapolationError(
            "degenerate fit: gap does not vary with s, no root")
    root = -intercept / slope
    if not math.isfinite(root):
        raise ExtrapolationError("extrapolated root is not finite")
    return float(root)


@dataclass
class PhaseDiagram:
    """Grid of verdicts plus per-s boundary estimates and the s_c root."""

    verdicts: list
    boundaries: list
    s_c_estimate: float | None = None

    @classmethod
    def from_verdicts(cls, verdicts) -> "PhaseDiagram":
        verdicts = list(verdicts)
        by_s: dict[float, list[CrossoverVerdict]] = {}
        for v in verdicts:
            by_s.setdefault(v.s, []).append(v)
        boundaries = []
        for s_val in sorted(by_s):
            row = sorted(by_s[s_val], key=lambda v: v.alpha)
            if len(row) < 2:
                continue
            boundaries.append(boundaries_from_labels(
                s_val, [v.alpha for v in row], [v.label for v in row]))
        try:
            s_c = estimate_sc(boundaries)
        except ExtrapolationError:
            s_c = None
        return cls(verdicts=verdicts, boundaries=boundaries, s_c_estimate=s_c)


def write_phase_csv(verdicts, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "alpha", "label", "p_eq", "n_extrema"])
        for v in verdicts:
            writer.writerow([repr(float(v.s)), repr(float(v.alpha)),
                             v.label.value, repr(float(v.p_eq)),
                             v.n_extrema])


def read_phase_csv(path) -> list[CrossoverVerdict]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["s", "alpha", "label", "p_eq", "n_extrema"]:
            raise ParseError(f"unexpected phase-diagram header: {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(CrossoverVerdict(
                    s=float(row[0]), alpha=float(row[1]), label=Label(row[2]),
                    p_eq=float(row[3]), n_extrema=int(row[4]), min_depth=0.0))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return out


def write_boundaries_json(boundaries, s_c_estimate, path,
                          extra: dict | None = None) -> None:
    doc = {
        "boundaries": [{"s": b.s, "lower": b.lower, "upper": b.upper,
                        "reliable": b.reliable} for b in boundaries],
        "s_c_estimate": s_c_estimate,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ingest_reference(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Load digitized curves from a CSV with header ``x,y,series``.

    Returns {series name: (x, y)} with x sorted ascending per series; no
    processing beyond that is applied.
    """
    series: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"reference file {path} is empty", line=1)
        if [h.strip() for h in header] != ["x", "y", "series"]:
            raise ParseError(
                f"expected header x,y,series; got {header}", line=1)
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 columns, got {len(row)}",
                                 line=lineno)
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            name = row[2].strip()
            if not name:
                raise ParseError("empty series name", line=lineno)
            series.setdefault(name, []).append((x, y))
            n_rows += 1
    if n_rows == 0:
        raise ParseError(f"reference file {path} has no data rows", line=2)
    out = {}
    for name, pts in series.items():
        pts.sort(key=lambda p: p[0])
        xs = np.asarray([p[0] for p in pts])
        ys = np.asarray([p[1] for p in pts])
        out[name] = (xs, ys)
    return out


def compare_to_reference(record: TrajectoryRecord, reference_x, reference_y,
                         column: str = "pz") -> float:
    """Max absolute difference against a digitized curve on its own window.

    The engine column is linearly interpolated onto the reference abscissae;
    reference points outside the simulated window are ignored.
    """
    x = np.asarray(reference_x, dtype=float)
    y = np.asarray(reference_y, dtype=float)
    mask = (x >= record.t[0]) & (x <= record.t[-1])
    if not mask.any():
        raise InvalidParameterError(
            "reference window does not overlap the trajectory")
    ours = np.interp(x[mask], record.t, getattr(record, column))
    return float(np.abs(ours - y[mask]).max())
