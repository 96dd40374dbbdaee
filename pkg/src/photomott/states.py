"""Initial states: Mott insulator and localized doublon/holon injection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dynamics import TimeGrid, evolve_pure
from .hilbert import (
    LatticeSpec,
    basis_index,
    build_hamiltonian,
    embed,
    local_annihilation,
    total_number,
)

TARGETS = ("mott", "doublon", "holon")


class InvalidStateError(ValueError):
    """State does not satisfy the precondition of a preparation step."""


@dataclass(frozen=True)
class PreparationReport:
    target: str
    fidelity: float
    method: str
    duration: float = 0.0
    drive_amplitude: float = 0.0


def fock_state(spec: LatticeSpec, occupations) -> np.ndarray:
    if len(occupations) != spec.L:
        raise ValueError(f"need {spec.L} occupations, got {len(occupations)}")
    psi = np.zeros(spec.dim, dtype=complex)
    psi[basis_index(occupations, spec.cutoff)] = 1.0
    return psi


def mott_state(spec: LatticeSpec) -> np.ndarray:
    """|1, 1, ..., 1>."""
    return fock_state(spec, [1] * spec.L)


def center_site(spec: LatticeSpec) -> int:
    if spec.L % 2 == 0:
        raise ValueError(f"chain of even length {spec.L} has no central site")
    return (spec.L - 1) // 2


def _single_site_rdm(psi, site: int, spec: LatticeSpec) -> np.ndarray:
    d = spec.cutoff
    m = np.moveaxis(np.asarray(psi).reshape((d,) * spec.L), site, 0).reshape(d, -1)
    return m @ m.conj().T


def _relabel(psi, site: int, spec: LatticeSpec, new_level: int) -> np.ndarray:
    d = spec.cutoff
    if not 0 <= site < spec.L:
        raise ValueError(f"site {site} out of range for L={spec.L}")
    if new_level >= d:
        raise ValueError(f"level {new_level} exceeds cutoff {d}")
    rdm = _single_site_rdm(psi, site, spec)
    unit = np.zeros((d, d))
    unit[1, 1] = 1.0
    if np.max(np.abs(rdm - unit)) > 1e-12:
        raise InvalidStateError(f"site {site} is not in the Fock state |1>")
    t = np.moveaxis(np.asarray(psi, dtype=complex).reshape((d,) * spec.L), site, 0)
    out = np.zeros_like(t)
    out[new_level] = t[1]
    return np.moveaxis(out, 0, site).reshape(-1)


def inject_doublon(psi, site: int, spec: LatticeSpec) -> np.ndarray:
    """Relabel |1> -> |2> on ``site`` (no bosonic sqrt(2) factor)."""
    return _relabel(psi, site, spec, 2)


def inject_holon(psi, site: int, spec: LatticeSpec) -> np.ndarray:
    """Relabel |1> -> |0> on ``site``."""
    return _relabel(psi, site, spec, 0)


def prepare_ideal(spec: LatticeSpec, target: str, site: int | None = None):
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    psi = mott_state(spec)
    if target != "mott":
        site = center_site(spec) if site is None else site
        psi = (inject_doublon if target == "doublon" else inject_holon)(psi, site, spec)
    return psi, PreparationReport(target=target, fidelity=1.0, method="ideal")


def pulse_duration(drive_amplitude: float, target: str) -> float:
    """pi-pulse length for the |1> -> |2> (sqrt(2) Omega) or |1> -> |0> (Omega) coupling."""
    if drive_amplitude <= 0:
        raise ValueError("drive amplitude must be positive")
    coupling = np.sqrt(2) * drive_amplitude if target == "doublon" else drive_amplitude
    return np.pi / (2 * coupling)


def prepare_via_pulse(spec: LatticeSpec, site: int, drive_amplitude: float,
                      target: str = "doublon", n_steps: int | None = None):
    """Drive ``site`` of the Mott state with a resonant pi-pulse.

    The drive Omega (b e^{i w t} + h.c.) is simulated in the frame rotating at
    the drive frequency, w = omega_c + U for the doublon and w = omega_c for
    the holon, where it is time independent.  Hopping stays on.  Returns the
    final rotating-frame state and its fidelity against the ideal injected
    state (global phases do not enter the fidelity).
    """
    if target not in ("doublon", "holon"):
        raise ValueError("target must be 'doublon' or 'holon'")
    omega_d = spec.omega_c + spec.U if target == "doublon" else spec.omega_c
    b = local_annihilation(spec.cutoff)
    drive = embed(b + b.conj().T, site, spec)
    H = build_hamiltonian(spec) - omega_d * total_number(spec) + drive_amplitude * drive
    H = sp.csr_matrix(H)
    duration = pulse_duration(drive_amplitude, target)
    if n_steps is None:
        dt = min(0.02 / max(spec.U, 4 * spec.J, drive_amplitude), duration / 200)
        n_steps = int(np.ceil(duration / dt))
    grid = TimeGrid(t_max=duration, dt=duration / n_steps)
    psi0 = mott_state(spec)
    ev = evolve_pure(psi0, H, grid, store_states=True, max_dim=None)
    final = ev.states[-1] / np.linalg.norm(ev.states[-1])
    ideal, _ = prepare_ideal(spec, target, site)
    fidelity = float(abs(np.vdot(ideal, final)) ** 2)
    report = PreparationReport(
        target=target, fidelity=min(fidelity, 1.0), method="pulse",
        duration=float(duration), drive_amplitude=float(drive_amplitude),
    )
    return final, report


def single_site_purity(psi, site: int, spec: LatticeSpec) -> float:
    rdm = _single_site_rdm(psi, site, spec)
    return float(np.trace(rdm @ rdm).real)

