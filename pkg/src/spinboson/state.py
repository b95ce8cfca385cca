"""The multi-D1 trial state and its static functionals.

The trial state is a superposition of M spin-up and M spin-down products of
multimode coherent states,

    |D> = |up> sum_n A_n |f_n> + |down> sum_n B_n |g_n>,

where |f_n> is the normalized coherent state with displacement row f_n.
Overlaps between coherent-state rows reduce to Debye-Waller factors

    R(a*, b) = exp( sum_l (conj(a_l) b_l - |a_l|^2/2 - |b_l|^2/2) ),

and every observable below is a dense M x M double sum weighted by such
factors.  Exponents are accumulated fully before a single exponentiation so
that strongly displaced states (hundreds of modes near -lambda/2omega)
underflow gracefully instead of overflowing.

The spin Hamiltonian is

    H = (eps/2) sigma_z - (Delta/2) sigma_x
        + sum_l omega_l b_l^+ b_l + (sigma_z/2) sum_l lambda_l (b_l^+ + b_l).
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np

from .bath import DiscretizedBath, initial_displacements
from .errors import InconsistentStateError, InvalidParameterError

__all__ = [
    "SystemParams",
    "MultiD1State",
    "ObservableSample",
    "debye_waller",
    "overlap_matrix",
    "norm",
    "spin_observables",
    "von_neumann_entropy",
    "energy",
    "observe",
    "initial_state",
    "state_to_dict",
    "state_from_dict",
    "save_state",
    "load_state",
]


@dataclass(frozen=True)
class SystemParams:
    """Spin parameters: tunneling delta, bias epsilon, initial spin (a, b)."""

    delta: float
    epsilon: float = 0.0
    spin_init: tuple[complex, complex] = (1.0 + 0.0j, 0.0j)

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidParameterError(f"delta must be >= 0, got {self.delta}")
        if not math.isfinite(self.epsilon):
            raise InvalidParameterError("epsilon must be finite")
        a, b = complex(self.spin_init[0]), complex(self.spin_init[1])
        object.__setattr__(self, "spin_init", (a, b))
        nrm = abs(a) ** 2 + abs(b) ** 2
        if abs(nrm - 1.0) > 1e-9:
            raise InvalidParameterError(
                f"spin_init must be normalized, |a|^2+|b|^2 = {nrm}")


@dataclass(frozen=True)
class MultiD1State:
    """Variational parameters at one instant.

    amplitudes_up/down have length M; disp_up/down are M x N_b complex
    displacement matrices (row n = coherent displacement of component n).
    """

    amplitudes_up: np.ndarray
    amplitudes_down: np.ndarray
    disp_up: np.ndarray
    disp_down: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.ascontiguousarray(self.amplitudes_up, dtype=complex)
        b = np.ascontiguousarray(self.amplitudes_down, dtype=complex)
        f = np.ascontiguousarray(self.disp_up, dtype=complex)
        g = np.ascontiguousarray(self.disp_down, dtype=complex)
        if a.ndim != 1 or b.shape != a.shape:
            raise InvalidParameterError("amplitude vectors must share one length M")
        if f.ndim != 2 or f.shape[0] != a.size or g.shape != f.shape:
            raise InvalidParameterError("displacement matrices must be M x N_b")
        for arr in (a, b, f, g):
            if not np.all(np.isfinite(arr.view(float))):
                raise InconsistentStateError("state entries must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "amplitudes_up", a)
        object.__setattr__(self, "amplitudes_down", b)
        object.__setattr__(self, "disp_up", f)
        object.__setattr__(self, "disp_down", g)

    @property
    def multiplicity(self) -> int:
        return self.amplitudes_up.size

    @property
    def n_modes(self) -> int:
        return self.disp_up.shape[1]

    def pack(self) -> np.ndarray:
        """Flatten to a single complex vector (A, B, f rows, g rows)."""
        return np.concatenate([
            self.amplitudes_up, self.amplitudes_down,
            self.disp_up.ravel(), self.disp_down.ravel()])

    @classmethod
    def unpack(cls, y: np.ndarray, multiplicity: int, n_modes: int,
               time: float) -> "MultiD1State":
        m, n = multiplicity, n_modes
        y = np.asarray(y, dtype=complex)
        return cls(y[:m].copy(), y[m:2 * m].copy(),
                   y[2 * m:2 * m + m * n].reshape(m, n).copy(),
                   y[2 * m + m * n:].reshape(m, n).copy(), time)


@dataclass(frozen=True)
class ObservableSample:
    """One recorded point of a trajectory (field order = CSV column order)."""

    t: float
    pz: float
    px: float
    py: float
    entropy: float
    norm: float
    energy: float
    energy_bath: float
    sigma: float | None = None


def debye_waller(row_a: np.ndarray, row_b: np.ndarray) -> complex:
    """Overlap <a|b> of two coherent-state displacement rows."""
    a = np.asarray(row_a, dtype=complex)
    b = np.asarray(row_b, dtype=complex)
    if a.shape != b.shape:
        raise InvalidParameterError("displacement rows must have equal length")
    exponent = (np.vdot(a, b)
                - 0.5 * np.vdot(a, a).real - 0.5 * np.vdot(b, b).real)
    return cmath.exp(exponent)


def overlap_matrix(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """Matrix R[m, u] = <a_m|b_u> of pairwise coherent-state overlaps."""
    a = np.asarray(rows_a, dtype=complex)
    b = np.asarray(rows_b, dtype=complex)
    exponent = a.conj() @ b.T
    exponent -= 0.5 * np.einsum("ml,ml->m", a.conj(), a).real[:, None]
    exponent -= 0.5 * np.einsum("ul,ul->u", b.conj(), b).real[None, :]
    return np.exp(exponent)


def norm(state: MultiD1State) -> float:
    """<D|D>; the Hermitian double sum has vanishing imaginary part."""
    a, b = state.amplitudes_up, state.amplitudes_down
    value = (a.conj() @ overlap_matrix(state.disp_up, state.disp_up) @ a
             + b.conj() @ overlap_matrix(state.disp_down, state.disp_down) @ b)
    return value.real


def spin_observables(state: MultiD1State) -> tuple[float, float, float]:
    """Bloch components (px, py, pz) of the (unnormalized) reduced spin state."""
    a, b = state.amplitudes_up, state.amplitudes_down
    r_uu = overlap_matrix(state.disp_up, state.disp_up)
    r_dd = overlap_matrix(state.disp_down, state.disp_down)
    r_ud = overlap_matrix(state.disp_up, state.disp_down)
    cross = a.conj() @ r_ud @ b
    pz = (a.conj() @ r_uu @ a - b.conj() @ r_dd @ b).real
    return 2.0 * cross.real, 2.0 * cross.imag, pz


def von_neumann_entropy(px: float, py: float, pz: float) -> float:
    """Entropy of a qubit with Bloch vector (px, py, pz); 0*ln 0 = 0."""
    p = math.sqrt(px * px + py * py + pz * pz)
    if p > 1.0 + 1e-9:
        raise InconsistentStateError(f"Bloch vector length {p} exceeds 1")
    p = min(p, 1.0)
    s = 0.0
    for w in ((1.0 + p) / 2.0, (1.0 - p) / 2.0):
        if w > 0.0:
            s -= w * math.log(w)
    return s


def _mode_sums(rows_m: np.ndarray, rows_u: np.ndarray,
               bath: DiscretizedBath) -> tuple[np.ndarray, np.ndarray]:
    """Frequency-weighted and coupling-weighted pair sums.

    Returns W[m,u] = sum_l omega_l conj(a_ml) b_ul and
    L[m,u] = (1/2) sum_l lambda_l (conj(a_ml) + b_ul).
    """
    w = (rows_m.conj() * bath.omegas) @ rows_u.T
    lam_m = rows_m.conj() @ bath.couplings
    lam_u = rows_u @ bath.couplings
    return w, 0.5 * (lam_m[:, None] + lam_u[None, :])


def energy(state: MultiD1State, system: SystemParams,
           bath: DiscretizedBath) -> tuple[float, float]:
    """Expectation (<H>, <H_bath>) in the (unnormalized) trial state."""
    a, b = state.amplitudes_up, state.amplitudes_down
    f, g = state.disp_up, state.disp_down
    r_uu = overlap_matrix(f, f)
    r_dd = overlap_matrix(g, g)
    r_ud = overlap_matrix(f, g)
    w_uu, l_uu = _mode_sums(f, f, bath)
    w_dd, l_dd = _mode_sums(g, g, bath)
    half_eps = 0.5 * system.epsilon
    up = a.conj() @ ((w_uu + l_uu + half_eps) * r_uu) @ a
    down = b.conj() @ ((w_dd - l_dd - half_eps) * r_dd) @ b
    cross = a.conj() @ r_ud @ b
    total = up + down - system.delta * cross.real
    bath_part = (a.conj() @ (w_uu * r_uu) @ a + b.conj() @ (w_dd * r_dd) @ b)
    return total.real, bath_part.real


def observe(state: MultiD1State, system: SystemParams, bath: DiscretizedBath,
            sigma: float | None = None) -> ObservableSample:
    """Evaluate all recorded observables at the state's time."""
    px, py, pz = spin_observables(state)
    total, bath_part = energy(state, system, bath)
    return ObservableSample(
        t=state.time, pz=pz, px=px, py=py,
        entropy=von_neumann_entropy(px, py, pz),
        norm=norm(state), energy=total, energy_bath=bath_part, sigma=sigma)


def initial_state(system: SystemParams, bath: DiscretizedBath,
                  multiplicity: int, mu: float = 0.0) -> MultiD1State:
    """Product initial state: spin (a, b) times identically displaced bath rows.

    All M components start on the same displacement; noise injection
    (eom module) breaks the degeneracy so the extra components activate.
    """
    if multiplicity < 1:
        raise InvalidParameterError(f"multiplicity must be >= 1, got {multiplicity}")
    a0, b0 = system.spin_init
    amps_up = np.zeros(multiplicity, dtype=complex)
    amps_down = np.zeros(multiplicity, dtype=complex)
    amps_up[0] = a0
    amps_down[0] = b0
    disp = np.tile(initial_displacements(bath, mu).astype(complex),
                   (multiplicity, 1))
    return MultiD1State(amps_up, amps_down, disp, disp.copy(), 0.0)


def _complex_to_pairs(arr: np.ndarray):
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def state_to_dict(state: MultiD1State) -> dict:
    """JSON-ready snapshot {M, N_b, t, A, B, f, g} with complex as [re, im]."""
    return {
        "M": state.multiplicity,
        "N_b": state.n_modes,
        "t": state.time,
        "A": _complex_to_pairs(state.amplitudes_up),
        "B": _complex_to_pairs(state.amplitudes_down),
        "f": _complex_to_pairs(state.disp_up),
        "g": _complex_to_pairs(state.disp_down),
    }


def state_from_dict(doc: dict) -> MultiD1State:
    state = MultiD1State(
        _pairs_to_complex(doc["A"]), _pairs_to_complex(doc["B"]),
        _pairs_to_complex(doc["f"]), _pairs_to_complex(doc["g"]),
        float(doc["t"]))
    if state.multiplicity != doc["M"] or state.n_modes != doc["N_b"]:
        raise InvalidParameterError("snapshot dimensions disagree with arrays")
    return state


def save_state(state: MultiD1State, path) -> None:
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=2, sort_keys=True)


def load_state(path) -> MultiD1State:
    with open(path) as fh:
        return state_from_dict(json.load(fh))
