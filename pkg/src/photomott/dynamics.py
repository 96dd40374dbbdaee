"""Fixed-step RK4 integration of the Lindblad and Schroedinger equations.

When the initial state has no coherences between different total photon
numbers (every protocol here starts from a Fock product state) the density
matrix stays block diagonal in the photon number: the Hamiltonian and the
dephasing operators conserve it, and each loss jump moves weight from block
``n + 1`` to block ``n``.  :func:`evolve_master` then integrates only the
blocks, which is an order of magnitude cheaper than the dense ``d**L`` matrix.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .entanglement import SectorPairReducer, partial_trace_pair
from .hilbert import (
    DENSE_DIM_CAP,
    PURE_DIM_CAP,
    FockSector,
    LatticeSpec,
    basis_digits,
    build_hamiltonian,
    build_jump_operators,
    check_dim,
    photon_number_of,
)

log = logging.getLogger(__name__)

# RK4 is stable for |lambda dt| up to ~2.78 on the imaginary axis.
STABILITY_BOUND = 2.5
POSITIVITY_ABORT = -1e-6


class StepSizeError(ValueError):
    """Integrator step too large for the operator norms involved."""


class PositivityError(RuntimeError):
    """Density matrix developed a clearly negative eigenvalue."""


def default_dt(spec: LatticeSpec) -> float:
    scale = max(spec.U, 4 * spec.J, spec.gamma, 2 * spec.gamma_phi)
    if scale <= 0:
        raise ValueError("cannot pick a default dt when U, J and all rates vanish")
    return 0.02 / scale


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    dt: float
    save_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max < self.dt:
            raise ValueError("t_max must be at least dt")
        if int(self.save_stride) != self.save_stride or self.save_stride < 1:
            raise ValueError("save_stride must be a positive integer")

    @classmethod
    def for_spec(cls, spec: LatticeSpec, t_max: float, save_every: float | None = None,
                 dt: float | None = None) -> "TimeGrid":
        """Grid with the default step; ``save_every`` is rounded to a multiple of dt."""
        dt = default_dt(spec) if dt is None else dt
        stride = 1 if save_every is None else max(1, int(round(save_every / dt)))
        return cls(t_max=t_max, dt=dt, save_stride=stride)

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.t_max / self.dt + 1e-9))

    @property
    def save_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.save_stride)

    @property
    def save_times(self) -> np.ndarray:
        return self.save_steps * self.dt

    @property
    def save_interval(self) -> float:
        return self.save_stride * self.dt


@dataclass
class Evolution:
    """Saved observables of one deterministic run.

    ``rdms`` maps a site pair to an array of shape (n_saves, d*d, d*d).
    ``states`` is only filled when requested.
    """

    times: np.ndarray
    rdms: dict
    n_photons: np.ndarray
    trace: np.ndarray
    purity: np.ndarray
    states: list | None = None
    energy: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _row_norm(op) -> float:
    if op.shape[0] == 0:
        return 0.0
    return float(abs(op).sum(axis=1).max())


def _shifted_norm(H) -> float:
    """Row-sum bound on ||H - c|| with c the midpoint of the diagonal."""
    diag = H.diagonal().real
    c = 0.5 * (diag.max() + diag.min()) if diag.size else 0.0
    return _row_norm(H - c * sp.identity(H.shape[0], format="csr"))


def check_step(dt: float, rate_scale: float, what: str) -> None:
    if dt * rate_scale > STABILITY_BOUND:
        raise StepSizeError(
            f"dt={dt:g} too large for {what}: dt*scale={dt * rate_scale:.3g} exceeds "
            f"{STABILITY_BOUND} (RK4 stability); reduce dt below {STABILITY_BOUND / rate_scale:.3g}"
        )


def rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + (0.5 * dt) * k1)
    k3 = f(y + (0.5 * dt) * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lindblad_rhs(rho, H, jumps) -> np.ndarray:
    """Right-hand side -i[H, rho] + sum_k (J rho J^dag - {J^dag J, rho}/2)."""
    rho = np.asarray(rho)
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or H.shape != (dim, dim):
        raise ValueError("rho and H must be square with matching dimension")
    out = -1j * (H @ rho - rho @ H)
    for Jk in jumps:
        if Jk.shape != (dim, dim):
            raise ValueError("jump operator dimension mismatch")
        Jd = Jk.conj().T
        JdJ = Jd @ Jk
        out += Jk @ (rho @ Jd) - 0.5 * (JdJ @ rho + rho @ JdJ)
    return out


class _BlockLindblad:
    """Lindblad generator restricted to photon-number blocks of a chain."""

    def __init__(self, spec: LatticeSpec, photon_numbers):
        self.spec = spec
        ns = set(photon_numbers)
        if spec.gamma > 0:
            ns |= set(range(0, max(ns) + 1))
        self.ns = sorted(ns, reverse=True)
        self.sectors = {n: FockSector(spec, n, max_dim=None) for n in self.ns}
        self.sectors = {n: s for n, s in self.sectors.items() if s.dim > 0}
        self.ns = [n for n in self.ns if n in self.sectors]
        self.offsets = {}
        pos = 0
        for n in self.ns:
            dim = self.sectors[n].dim
            self.offsets[n] = (pos, dim)
            pos += dim * dim
        self.size = pos
        self.H = {}
        self.decay = {}
        self.gain = {}
        scale = 0.0
        for n in self.ns:
            sec = self.sectors[n]
            self.H[n] = sec.hamiltonian()
            occ = sec.occupation
            tot = occ.sum(axis=1)
            decay = -0.5 * spec.gamma * (tot[:, None] + tot[None, :])
            if spec.gamma_phi > 0:
                sq = (occ**2).sum(axis=1)
                mism = sq[:, None] + sq[None, :] - 2.0 * occ @ occ.T
                decay = decay - spec.gamma_phi * mism
            self.decay[n] = decay
            scale = max(scale, 2 * _shifted_norm(self.H[n]) + float(np.abs(decay).max(initial=0.0)))
            if spec.gamma > 0 and (n + 1) in self.sectors:
                up = self.sectors[n + 1]
                # row-major vec(B rho B^T) = (B kron B) vec(rho); b_i is real
                S = None
                for i in range(spec.L):
                    B = up.lowering(i, sec)
                    term = sp.kron(B, B, format="csr")
                    S = term if S is None else S + term
                self.gain[n] = (spec.gamma * S).tocsr()
        self.rate_scale = scale

    def view(self, y, n):
        pos, dim = self.offsets[n]
        return y[pos:pos + dim * dim].reshape(dim, dim)

    def rhs(self, y):
        out = np.empty_like(y)
        for n in self.ns:
            rho = self.view(y, n)
            d = self.view(out, n)
            X = self.H[n] @ rho
            np.subtract(X.conj().T, X, out=d)
            d *= 1j
            d += self.decay[n] * rho
            if n in self.gain:
                pos, du = self.offsets[n + 1]
                d += (self.gain[n] @ y[pos:pos + du * du]).reshape(d.shape)
        return out

    def pack(self, blocks: dict) -> np.ndarray:
        y = np.zeros(self.size, dtype=complex)
        for n, block in blocks.items():
            self.view(y, n)[...] = block
        return y

    def lift(self, y) -> np.ndarray:
        full = np.zeros((self.spec.dim, self.spec.dim), dtype=complex)
        for n in self.ns:
            idx = self.sectors[n].states
            full[np.ix_(idx, idx)] = self.view(y, n)
        return full


def _photon_blocks(rho0, spec: LatticeSpec):
    """Split rho0 into photon-number blocks, or None if it has cross-block coherences."""
    totals = basis_digits(spec).sum(axis=1, dtype=np.int64)
    blocks = {}
    kept = 0.0
    for n in np.unique(totals):
        idx = np.flatnonzero(totals == n)
        block = rho0[np.ix_(idx, idx)]
        if np.any(block != 0):
            blocks[int(n)] = block
            kept += float(np.sum(np.abs(block) ** 2))
    if kept < float(np.sum(np.abs(rho0) ** 2)):
        return None
    return blocks


def evolve_master(rho0, spec: LatticeSpec, grid: TimeGrid, pairs=(), *,
                  store_states: bool = False, check_positivity: bool = True,
                  method: str = "auto", max_dim: int | None = DENSE_DIM_CAP) -> Evolution:
    """Integrate the master equation of ``spec`` from ``rho0``.

    ``rho0`` is a dense density matrix or a state vector (taken as a
    projector).  Two-site reduced density matrices for ``pairs`` are
    extracted at every save point.  ``method`` selects the photon-number
    block engine ("blocks"), the dense full-space engine ("dense"), or the
    former whenever rho0 allows it ("auto").
    """
    if method not in ("auto", "blocks", "dense"):
        raise ValueError(f"unknown method {method!r}")
    check_dim(spec, max_dim)
    rho0 = np.asarray(rho0, dtype=complex)
    pairs = [tuple(p) for p in pairs]
    wall = time.perf_counter()

    blocks = None
    if rho0.ndim == 1 and method == "dense":
        rho0 = np.outer(rho0, rho0.conj())
    if rho0.ndim == 1:
        n = photon_number_of(rho0, spec)
        if n is not None:
            sec = FockSector(spec, n, max_dim=None)
            v = sec.project(rho0)
            blocks = {n: np.outer(v, v.conj())}
        else:
            rho0 = np.outer(rho0, rho0.conj())
    if blocks is None:
        if rho0.shape != (spec.dim, spec.dim):
            raise ValueError(f"rho0 must be {spec.dim}x{spec.dim}")
        blocks = None if method == "dense" else _photon_blocks(rho0, spec)
        if blocks is None and method == "blocks":
            raise ValueError("rho0 has coherences between photon-number sectors")

    if blocks is not None:
        engine = _BlockLindblad(spec, blocks.keys())
        y = engine.pack(blocks)
        f = engine.rhs
        reducers = {p: {n: SectorPairReducer(engine.sectors[n], *p) for n in engine.ns} for p in pairs}
        counts = {n: engine.sectors[n].occupation.sum(axis=1) for n in engine.ns}
        scale = engine.rate_scale

        def observe(y):
            views = {n: engine.view(y, n) for n in engine.ns}
            tr = sum(np.trace(v).real for v in views.values())
            num = sum(float(counts[n] @ np.diagonal(v).real) for n, v in views.items())
            pur = sum(float(np.sum(np.abs(v) ** 2)) for v in views.values())
            rd = {p: sum(reducers[p][n].from_block(views[n]) for n in engine.ns) for p in pairs}
            lam_min = min(np.linalg.eigvalsh(v)[0] for v in views.values()) if check_positivity else 0.0
            return tr, num, pur, rd, lam_min

        to_full = engine.lift
        mode = "blocks"
    else:
        H = build_hamiltonian(spec, max_dim=None)
        jumps = build_jump_operators(spec, max_dim=None)
        dim = spec.dim
        y = rho0.ravel().copy()
        scale = 2 * _shifted_norm(H) + sum(_row_norm(Jk.conj().T @ Jk) for Jk in jumps)

        def f(v):
            return lindblad_rhs(v.reshape(dim, dim), H, jumps).ravel()

        num_diag = np.asarray(basis_digits(spec).sum(axis=1), dtype=float)

        def observe(y):
            rho = y.reshape(dim, dim)
            diag = np.diagonal(rho).real
            rd = {p: partial_trace_pair(rho, p[0], p[1], spec) for p in pairs}
            lam_min = np.linalg.eigvalsh(rho)[0] if check_positivity else 0.0
            return diag.sum(), float(num_diag @ diag), float(np.sum(np.abs(rho) ** 2)), rd, lam_min

        def to_full(y):
            return y.reshape(dim, dim).copy()

        mode = "dense"

    check_step(grid.dt, scale, "the Lindblad generator")
    log.debug("evolve_master: mode=%s size=%d steps=%d", mode, y.size, grid.n_steps)

    times, traces, nums, purs, states = [], [], [], [], []
    rdms = {p: [] for p in pairs}
    min_eig = np.inf

    def save(step, y):
        nonlocal min_eig
        t = step * grid.dt
        tr, num, pur, rd, lam_min = observe(y)
        if check_positivity:
            min_eig = min(min_eig, lam_min)
            if lam_min < POSITIVITY_ABORT:
                raise PositivityError(
                    f"eigenvalue {lam_min:.3e} at t={t:g}; dt={grid.dt:g} is likely too large"
                )
        times.append(t)
        traces.append(tr)
        nums.append(num)
        purs.append(pur)
        for p in pairs:
            rdms[p].append(rd[p])
        if store_states:
            states.append(to_full(y))

    save(0, y)
    for step in range(1, grid.n_steps + 1):
        y = rk4_step(f, y, grid.dt)
        if step % grid.save_stride == 0:
            save(step, y)

    return Evolution(
        times=np.array(times),
        rdms={p: np.array(v) for p, v in rdms.items()},
        n_photons=np.array(nums),
        trace=np.array(traces),
        purity=np.array(purs),
        states=states if store_states else None,
        diagnostics={
            "solver": "exact",
            "mode": mode,
            "steps": grid.n_steps,
            "min_eigenvalue": float(min_eig) if check_positivity else None,
            "wall_time_s": time.perf_counter() - wall,
        },
    )


def evolve_pure(psi0, H=None, grid: TimeGrid | None = None, *, spec: LatticeSpec | None = None,
                pairs=(), store_states: bool = False,
                max_dim: int | None = PURE_DIM_CAP, method: str = "rk4") -> Evolution:
    """Schroedinger evolution of a state vector under a time-independent H.

    With ``H=None`` the chain Hamiltonian of ``spec`` is used; if ``psi0``
    has a definite photon number only that sector is propagated.  The state
    is evolved under ``H - E0`` with ``E0 = <psi0|H|psi0>`` (a pure global
    phase, restored on stored states), which keeps the RK4 phase error small.

    ``method="expm"`` replaces the RK4 steps by one truncated-Taylor
    :func:`scipy.sparse.linalg.expm_multiply` call per save interval; the
    result is then exact to roughly machine precision and ``grid.dt`` only
    sets the save times.
    """
    if method not in ("rk4", "expm"):
        raise ValueError("method must be 'rk4' or 'expm'")
    if grid is None:
        raise ValueError("a TimeGrid is required")
    psi0 = np.asarray(psi0, dtype=complex)
    pairs = [tuple(p) for p in pairs]
    if (pairs or H is None) and spec is None:
        raise ValueError("spec is required for pairs or the default Hamiltonian")
    if spec is not None:
        check_dim(spec, max_dim)
    elif max_dim is not None and psi0.size > max_dim:
        raise ValueError(f"state dimension {psi0.size} exceeds cap {max_dim}")
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("psi0 must be normalized")
    wall = time.perf_counter()

    sector = None
    if H is None:
        n = photon_number_of(psi0, spec)
        if n is not None:
            sector = FockSector(spec, n, max_dim=None)
            H = sector.hamiltonian()
        else:
            H = build_hamiltonian(spec, max_dim=None)
    H = sp.csr_matrix(H)
    y = sector.project(psi0) if sector is not None else psi0.copy()
    if H.shape != (y.size, y.size):
        raise ValueError("Hamiltonian and state dimensions differ")

    E0 = float(np.vdot(y, H @ y).real)
    Hs = (H - E0 * sp.identity(H.shape[0], format="csr")).tocsr()
    if method == "rk4":
        check_step(grid.dt, _row_norm(Hs), "the Hamiltonian")

    def f(v):
        return -1j * (Hs @ v)

    if sector is not None:
        reducers = {p: SectorPairReducer(sector, *p) for p in pairs}

        def rdm(v, p):
            return reducers[p].from_vector(v)

        lift = sector.lift
    else:
        def rdm(v, p):
            return partial_trace_pair(v, p[0], p[1], spec)

        def lift(v):
            return v.copy()

    times, norms, energies, states = [], [], [], []
    rdms = {p: [] for p in pairs}

    def save(step, v):
        t = step * grid.dt
        nrm2 = float(np.vdot(v, v).real)
        times.append(t)
        norms.append(nrm2)
        energies.append(E0 + float(np.vdot(v, Hs @ v).real) / nrm2)
        vn = v / np.sqrt(nrm2)
        for p in pairs:
            rdms[p].append(rdm(vn, p))
        if store_states:
            states.append(lift(v) * np.exp(-1j * E0 * t))

    save(0, y)
    if method == "expm":
        A = (-1j * grid.save_interval) * Hs
        for step in grid.save_steps[1:]:
            y = expm_multiply(A, y)
            save(step, y)
    else:
        for step in range(1, grid.n_steps + 1):
            y = rk4_step(f, y, grid.dt)
            if step % grid.save_stride == 0:
                save(step, y)

    norms = np.array(norms)
    if spec is not None and sector is not None:
        n_photons = np.full(len(times), float(sector.n_photons))
    else:
        n_photons = np.full(len(times), np.nan)
    return Evolution(
        times=np.array(times),
        rdms={p: np.array(v) for p, v in rdms.items()},
        n_photons=n_photons,
        trace=norms,
        purity=np.ones(len(times)),
        states=states if store_states else None,
        energy=np.array(energies),
        diagnostics={
            "solver": "pure",
            "method": method,
            "mode": "sector" if sector is not None else "full",
            "dim": int(y.size),
            "steps": grid.n_steps,
            "max_norm_drift": float(np.max(np.abs(norms - 1))),
            "wall_time_s": time.perf_counter() - wall,
        },
    )
