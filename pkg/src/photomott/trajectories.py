"""Monte Carlo wave-function unraveling of the chain master equation.

Each trajectory owns a random stream keyed by ``(master_seed, traj_index)``
through :class:`numpy.random.SeedSequence`, so the ensemble is reproducible
bit for bit whatever the number of workers.  Trajectories are propagated in
fixed chunks (columns of one dense block) under ``H_eff = H - i/2 sum J^dag J``;
a jump happens when the squared norm falls to a uniform draw, the crossing
time being located by bisection inside the step.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .dynamics import Evolution, TimeGrid, _row_norm, check_step, rk4_step
from .hilbert import (
    PURE_DIM_CAP,
    LatticeSpec,
    basis_digits,
    build_hamiltonian,
    build_jump_operators,
    check_dim,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrajectoryConfig:
    n_traj: int
    master_seed: int = 0
    dt: float = 0.002
    t_max: float = 1.0
    save_stride: int = 1
    jump_tolerance: float = 1e-10
    chunk_size: int = 32

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(t_max=self.t_max, dt=self.dt, save_stride=self.save_stride)

    def with_grid(self, grid: TimeGrid) -> "TrajectoryConfig":
        return replace(self, t_max=grid.t_max, dt=grid.dt, save_stride=grid.save_stride)


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(traj_index,)))


def effective_hamiltonian(H, jumps) -> sp.csr_matrix:
    """H - (i/2) sum_k J_k^dag J_k."""
    H = sp.csr_matrix(H, dtype=complex)
    out = H.copy()
    for Jk in jumps:
        if Jk.shape != H.shape:
            raise ValueError("jump operator dimension mismatch")
        out = out - 0.5j * (Jk.conj().T @ Jk)
    return out.tocsr()


def apply_jump(psi, jump) -> np.ndarray:
    """Normalized post-jump state J psi / ||J psi||."""
    out = jump @ np.asarray(psi, dtype=complex)
    nrm = np.linalg.norm(out)
    if nrm == 0:
        raise ValueError("jump annihilates the state")
    return out / nrm


@dataclass
class TrajectoryResult:
    times: np.ndarray
    states: np.ndarray
    jumps: list


class _Unraveling:
    def __init__(self, H, jumps, cfg: TrajectoryConfig):
        heff = effective_hamiltonian(H, jumps)
        diag = heff.diagonal().real
        self.shift = 0.5 * (diag.max() + diag.min())
        self.heff = (heff - self.shift * sp.identity(heff.shape[0], format="csr")).tocsr()
        self.jumps = [sp.csr_matrix(Jk) for Jk in jumps]
        self.cfg = cfg
        check_step(cfg.dt, _row_norm(self.heff), "the effective Hamiltonian")

    def f(self, y):
        return -1j * (self.heff @ y)

    def step(self, y, dt):
        return rk4_step(self.f, y, dt)

    def _jump(self, psi, rng):
        amps = [Jk @ psi for Jk in self.jumps]
        w = np.array([np.vdot(a, a).real for a in amps])
        u = rng.random() * w.sum()
        k = int(min(np.searchsorted(np.cumsum(w), u, side="right"), len(w) - 1))
        return amps[k] / np.sqrt(w[k]), k

    def resolve(self, psi, rem, target, rng, t_start, record):
        """Advance ``psi`` by ``rem`` applying every jump that falls inside."""
        tol = self.cfg.jump_tolerance
        while True:
            end = self.step(psi, rem)
            if np.vdot(end, end).real > target:
                return end, target
            lo, hi = 0.0, rem
            mid, pm = rem, end
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                pm = self.step(psi, mid)
                nm = np.vdot(pm, pm).real
                if abs(nm - target) <= tol * target:
                    break
                if nm > target:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * self.cfg.dt:
                    break
            psi, k = self._jump(pm, rng)
            record.append((t_start + mid, k))
            target = rng.random()
            t_start += mid
            rem -= mid
            if rem <= 0:
                return psi, target


def _pair_rdms(Psi, spec: LatticeSpec, pairs):
    """(B, P, d*d, d*d) reduced density matrices of the normalized columns of Psi."""
    d, L = spec.cutoff, spec.L
    B = Psi.shape[1]
    t = Psi.reshape((d,) * L + (B,))
    out = np.empty((B, len(pairs), d * d, d * d), dtype=complex)
    for k, (a, b) in enumerate(pairs):
        others = [s for s in range(L) if s not in (a, b)]
        m = t.transpose([a, b] + others + [L]).reshape(d * d, -1, B)
        out[:, k] = np.einsum("irb,jrb->bij", m, m.conj())
    return out


def _run_chunk(unr: _Unraveling, psi0, spec, cfg: TrajectoryConfig, indices, pairs,
               number_diag, keep_states=False):
    grid = cfg.grid
    B = len(indices)
    rngs = [trajectory_rng(cfg.master_seed, int(i)) for i in indices]
    targets = np.array([g.random() for g in rngs])
    Psi = np.repeat(np.asarray(psi0, dtype=complex)[:, None], B, axis=1)
    records = [[] for _ in range(B)]
    n_save = len(grid.save_steps)
    rdms = np.empty((B, n_save, len(pairs), spec.cutoff**2, spec.cutoff**2), dtype=complex)
    nums = np.empty((B, n_save))
    states = np.empty((B, n_save, Psi.shape[0]), dtype=complex) if keep_states else None

    def save(k, Psi):
        n2 = np.einsum("ij,ij->j", Psi.conj(), Psi).real
        P = Psi / np.sqrt(n2)
        if pairs:
            rdms[:, k] = _pair_rdms(P, spec, pairs)
        nums[:, k] = number_diag @ (np.abs(P) ** 2)
        if keep_states:
            states[:, k] = P.T

    save(0, Psi)
    k = 1
    for step in range(1, grid.n_steps + 1):
        new = unr.step(Psi, cfg.dt)
        n2 = np.einsum("ij,ij->j", new.conj(), new).real
        for j in np.flatnonzero(n2 <= targets):
            col, targets[j] = unr.resolve(
                np.ascontiguousarray(Psi[:, j]), cfg.dt, targets[j], rngs[j],
                (step - 1) * cfg.dt, records[j],
            )
            new[:, j] = col
        Psi = new
        if step % grid.save_stride == 0:
            save(k, Psi)
            k += 1
    return rdms, nums, records, states


def _operators(spec: LatticeSpec, H, jumps, max_dim):
    check_dim(spec, max_dim)
    if H is None:
        H = build_hamiltonian(spec, max_dim=None)
    if jumps is None:
        jumps = build_jump_operators(spec, max_dim=None)
    return H, jumps


def run_trajectory(psi0, spec: LatticeSpec, cfg: TrajectoryConfig, traj_index: int, *,
                   H=None, jumps=None, max_dim: int | None = PURE_DIM_CAP) -> TrajectoryResult:
    """One quantum trajectory; states are normalized at the save points."""
    H, jumps = _operators(spec, H, jumps, max_dim)
    unr = _Unraveling(H, jumps, cfg)
    number_diag = basis_digits(spec).sum(axis=1).astype(float)
    _, _, records, states = _run_chunk(unr, psi0, spec, cfg, [traj_index], [], number_diag,
                                       keep_states=True)
    return TrajectoryResult(times=cfg.grid.save_times, states=states[0], jumps=records[0])


class EnsembleAccumulator:
    """Running sum of per-trajectory reduced density matrices in index order."""

    def __init__(self, shape, n_times):
        self.sum = np.zeros(shape, dtype=complex)
        self.num = np.zeros(n_times)
        self.count = 0

    def add(self, traj_index: int, rdms, nums):
        if traj_index != self.count:
            raise RuntimeError(f"trajectory {traj_index} merged out of order (expected {self.count})")
        self.sum += rdms
        self.num += nums
        self.count += 1

    def mean(self):
        return self.sum / self.count, self.num / self.count


def ensemble_average(psi0, spec: LatticeSpec, cfg: TrajectoryConfig, pairs, times=None, *,
                     n_workers: int = 1, H=None, jumps=None,
                     max_dim: int | None = PURE_DIM_CAP) -> Evolution:
    """Trajectory average of the two-site reduced density matrices of ``pairs``.

    ``times``, if given, must be a subset of the save grid of ``cfg``.
    """
    wall = time.perf_counter()
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("psi0 must be normalized")
    pairs = [tuple(p) for p in pairs]
    H, jumps = _operators(spec, H, jumps, max_dim)
    unr = _Unraveling(H, jumps, cfg)
    number_diag = basis_digits(spec).sum(axis=1).astype(float)
    grid = cfg.grid
    save_times = grid.save_times
    keep = np.arange(len(save_times))
    if times is not None:
        keep = np.array([int(np.argmin(np.abs(save_times - t))) for t in times])
        if np.any(np.abs(save_times[keep] - np.asarray(times)) > 1e-9):
            raise ValueError("requested times are not on the save grid")

    chunks = [range(s, min(s + cfg.chunk_size, cfg.n_traj)) for s in range(0, cfg.n_traj, cfg.chunk_size)]
    d2 = spec.cutoff**2
    acc = EnsembleAccumulator((len(save_times), len(pairs), d2, d2), len(save_times))
    jump_counts = np.zeros(cfg.n_traj, dtype=int)

    def work(idx):
        return _run_chunk(unr, psi0, spec, cfg, list(idx), pairs, number_diag)

    with ThreadPoolExecutor(max_workers=max(1, int(n_workers))) as pool:
        for idx, (rdms, nums, records, _) in zip(chunks, pool.map(work, chunks)):
            for j, i in enumerate(idx):
                acc.add(i, rdms[j], nums[j])
                jump_counts[i] = len(records[j])

    mean_rdm, mean_num = acc.mean()
    mean_rdm = mean_rdm[keep]
    return Evolution(
        times=save_times[keep],
        rdms={p: mean_rdm[:, k] for k, p in enumerate(pairs)},
        n_photons=mean_num[keep],
        trace=np.array([np.trace(mean_rdm[t, 0]).real if pairs else 1.0 for t in range(len(keep))]),
        purity=np.full(len(keep), np.nan),
        diagnostics={
            "solver": "trajectory",
            "n_traj": cfg.n_traj,
            "master_seed": cfg.master_seed,
            "steps": grid.n_steps,
            "jumps_total": int(jump_counts.sum()),
            "jump_counts": jump_counts,
            "wall_time_s": time.perf_counter() - wall,
        },
    )
