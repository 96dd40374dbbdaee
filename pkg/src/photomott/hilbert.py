"""Truncated Fock space of a Bose-Hubbard chain.

Basis convention: a basis index is the base-``d`` number whose most
significant digit is the occupation of site 0, i.e.
``index = sum_i n_i * d**(L - 1 - i)``.  Partial traces and tomography rely
on this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

DENSE_DIM_CAP = 3**7
PURE_DIM_CAP = 3**14


class DimensionError(RuntimeError):
    """Hilbert-space dimension exceeds the configured cap."""


@dataclass(frozen=True)
class LatticeSpec:
    """Chain length, local cutoff and physical parameters.

    ``cutoff`` is the local dimension ``d`` (max photons per site + 1).
    ``gamma`` is the photon loss rate and ``gamma_phi`` the pure dephasing
    rate.
    """

    L: int
    cutoff: int = 3
    omega_c: float = 0.0
    U: float = 0.0
    J: float = 1.0
    gamma: float = 0.0
    gamma_phi: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise ValueError(f"cutoff must be an integer >= 2, got {self.cutoff!r}")
        for name in ("J", "gamma", "gamma_phi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def d(self) -> int:
        return self.cutoff

    @property
    def dim(self) -> int:
        return self.cutoff**self.L

    def with_(self, **changes) -> "LatticeSpec":
        return replace(self, **changes)


def check_dim(spec: LatticeSpec, cap: int | None) -> None:
    if cap is not None and spec.dim > cap:
        raise DimensionError(
            f"Hilbert-space dimension {spec.cutoff}^{spec.L} = {spec.dim} exceeds cap {cap}"
        )


def local_annihilation(cutoff: int) -> sp.csr_matrix:
    """Truncated annihilation operator with <n-1|b|n> = sqrt(n)."""
    if int(cutoff) != cutoff or cutoff < 2:
        raise ValueError(f"cutoff must be an integer >= 2, got {cutoff!r}")
    n = np.arange(1, cutoff)
    return sp.csr_matrix(
        (np.sqrt(n).astype(complex), (n - 1, n)), shape=(cutoff, cutoff)
    )


def local_creation(cutoff: int) -> sp.csr_matrix:
    return local_annihilation(cutoff).conj().T.tocsr()


def local_number(cutoff: int) -> sp.csr_matrix:
    return sp.diags(np.arange(cutoff, dtype=complex), format="csr")


def embed(site_op, site: int, spec: LatticeSpec) -> sp.csr_matrix:
    """Act with ``site_op`` on ``site`` and with the identity elsewhere."""
    d = spec.cutoff
    if not 0 <= site < spec.L:
        raise ValueError(f"site {site} out of range for L={spec.L}")
    site_op = sp.csr_matrix(site_op, dtype=complex)
    if site_op.shape != (d, d):
        raise ValueError(f"site operator must be {d}x{d}, got {site_op.shape}")
    left = sp.identity(d**site, dtype=complex, format="csr")
    right = sp.identity(d ** (spec.L - site - 1), dtype=complex, format="csr")
    out = sp.kron(sp.kron(left, site_op, format="csr"), right, format="csr")
    out.eliminate_zeros()
    return out


def total_number(spec: LatticeSpec) -> sp.csr_matrix:
    return sp.diags(basis_digits(spec).sum(axis=1).astype(complex), format="csr")


def basis_digits(spec: LatticeSpec) -> np.ndarray:
    """Occupation table of shape (d**L, L), site 0 first."""
    d, L = spec.cutoff, spec.L
    idx = np.arange(d**L)
    weights = d ** np.arange(L - 1, -1, -1)
    return ((idx[:, None] // weights[None, :]) % d).astype(np.int8)


def basis_index(occupations, cutoff: int) -> int:
    idx = 0
    for n in occupations:
        if not 0 <= n < cutoff:
            raise ValueError(f"occupation {n} outside cutoff {cutoff}")
        idx = idx * cutoff + int(n)
    return idx


def build_hamiltonian(spec: LatticeSpec, max_dim: int | None = PURE_DIM_CAP) -> sp.csr_matrix:
    """Open-chain Bose-Hubbard Hamiltonian on the full truncated space."""
    check_dim(spec, max_dim)
    d = spec.cutoff
    b = local_annihilation(d)
    bd = local_creation(d)
    onsite = spec.omega_c * (bd @ b) + 0.5 * spec.U * (bd @ bd @ b @ b)
    H = sp.csr_matrix((spec.dim, spec.dim), dtype=complex)
    for i in range(spec.L):
        H = H + embed(onsite, i, spec)
    if spec.J != 0:
        for i in range(spec.L - 1):
            hop = embed(bd, i, spec) @ embed(b, i + 1, spec)
            H = H - spec.J * (hop + hop.conj().T)
    H = H.tocsr()
    H.eliminate_zeros()
    return H


def build_jump_operators(spec: LatticeSpec, max_dim: int | None = PURE_DIM_CAP) -> list[sp.csr_matrix]:
    """Loss operators sqrt(gamma) b_i followed by dephasing sqrt(2 gamma_phi) n_i."""
    check_dim(spec, max_dim)
    d = spec.cutoff
    jumps = []
    if spec.gamma > 0:
        b = local_annihilation(d)
        jumps += [np.sqrt(spec.gamma) * embed(b, i, spec) for i in range(spec.L)]
    if spec.gamma_phi > 0:
        n = local_number(d)
        jumps += [np.sqrt(2 * spec.gamma_phi) * embed(n, i, spec) for i in range(spec.L)]
    return jumps


class FockSector:
    """Fixed total photon number subspace of the truncated chain.

    ``states`` holds the sorted full-space indices of the sector; operators
    built here act on vectors indexed by position in ``states``.
    """

    def __init__(self, spec: LatticeSpec, n_photons: int, max_dim: int | None = PURE_DIM_CAP):
        check_dim(spec, max_dim)
        self.spec = spec
        self.n_photons = int(n_photons)
        self.weights = spec.cutoff ** np.arange(spec.L - 1, -1, -1, dtype=np.int64)
        digits = basis_digits(spec)
        mask = digits.sum(axis=1, dtype=np.int64) == self.n_photons
        self.states = np.flatnonzero(mask).astype(np.int64)
        self.digits = digits[mask]

    @property
    def dim(self) -> int:
        return len(self.states)

    def locate(self, full_indices) -> np.ndarray:
        pos = np.searchsorted(self.states, full_indices)
        if np.any(pos >= self.dim) or np.any(self.states[np.minimum(pos, self.dim - 1)] != full_indices):
            raise KeyError("index not in sector")
        return pos

    def project(self, psi) -> np.ndarray:
        return np.asarray(psi)[self.states]

    def lift(self, vec) -> np.ndarray:
        out = np.zeros(self.spec.dim, dtype=complex)
        out[self.states] = vec
        return out

    @cached_property
    def occupation(self) -> np.ndarray:
        return self.digits.astype(float)

    def hamiltonian(self) -> sp.csr_matrix:
        spec = self.spec
        n = self.occupation
        diag = (spec.omega_c * n + 0.5 * spec.U * n * (n - 1)).sum(axis=1)
        rows, cols, vals = [np.arange(self.dim)], [np.arange(self.dim)], [diag.astype(complex)]
        if spec.J != 0:
            for i in range(spec.L - 1):
                # b_i^dag b_{i+1}: photon hops from i+1 to i
                ok = (self.digits[:, i] < spec.cutoff - 1) & (self.digits[:, i + 1] > 0)
                src = np.flatnonzero(ok)
                dst = self.locate(self.states[src] + self.weights[i] - self.weights[i + 1])
                amp = -spec.J * np.sqrt((n[src, i] + 1) * n[src, i + 1])
                rows += [dst, src]
                cols += [src, dst]
                vals += [amp.astype(complex)] * 2
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim),
        ).tocsr()
        H.eliminate_zeros()
        return H

    def lowering(self, site: int, target: "FockSector") -> sp.csr_matrix:
        """Matrix of b_site from this sector into ``target`` (one photon fewer)."""
        if target.n_photons != self.n_photons - 1:
            raise ValueError("target sector must hold one photon fewer")
        src = np.flatnonzero(self.digits[:, site] > 0)
        dst = target.locate(self.states[src] - self.weights[site])
        amp = np.sqrt(self.occupation[src, site]).astype(complex)
        return sp.csr_matrix((amp, (dst, src)), shape=(target.dim, self.dim))


def photon_number_of(psi, spec: LatticeSpec, atol: float = 0.0) -> int | None:
    """Total photon number if ``psi`` lies in a single sector, else None."""
    psi = np.asarray(psi)
    support = np.flatnonzero(np.abs(psi) > atol)
    if support.size == 0:
        return None
    weights = spec.cutoff ** np.arange(spec.L - 1, -1, -1, dtype=np.int64)
    totals = ((support[:, None] // weights) % spec.cutoff).sum(axis=1)
    if np.all(totals == totals[0]):
        return int(totals[0])
    return None
