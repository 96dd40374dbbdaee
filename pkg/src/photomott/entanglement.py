"""Two-site reduced density matrices, negativity and SU(3) moment tomography."""
from __future__ import annotations

import json

import numpy as np

from .hilbert import LatticeSpec, embed, local_annihilation, local_creation

NEGATIVITY_THRESHOLD = 1e-12


def _check_pair(a: int, b: int, L: int) -> None:
    if a == b:
        raise ValueError("partial trace needs two distinct sites")
    for s in (a, b):
        if not 0 <= s < L:
            raise ValueError(f"site {s} out of range for L={L}")


def partial_trace_pair(state, a: int, b: int, spec: LatticeSpec) -> np.ndarray:
    """Reduced density matrix of sites ``(a, b)``; site ``a`` is the left factor.

    ``state`` is either a state vector of length d**L or a dense density
    matrix of shape (d**L, d**L).
    """
    _check_pair(a, b, spec.L)
    d, L = spec.cutoff, spec.L
    state = np.asarray(state)
    if state.ndim == 1:
        psi = state.reshape((d,) * L)
        m = np.moveaxis(psi, (a, b), (0, 1)).reshape(d * d, -1)
        return m @ m.conj().T
    others = [s for s in range(L) if s not in (a, b)]
    ket = [a, b] + others
    rho = state.reshape((d,) * (2 * L)).transpose(ket + [L + s for s in ket])
    rest = d ** (L - 2)
    rho = rho.reshape(d * d, rest, d * d, rest)
    return np.einsum("iRjR->ij", rho)


def swap_sites(rdm: np.ndarray) -> np.ndarray:
    """Exchange the two factors of a bipartite density matrix."""
    d = int(round(np.sqrt(rdm.shape[0])))
    return rdm.reshape(d, d, d, d).transpose(1, 0, 3, 2).reshape(d * d, d * d)


def partial_transpose(rdm: np.ndarray, subsystem: str = "A") -> np.ndarray:
    d = int(round(np.sqrt(rdm.shape[0])))
    t = np.asarray(rdm).reshape(d, d, d, d)
    if subsystem == "A":
        t = t.transpose(2, 1, 0, 3)
    elif subsystem == "B":
        t = t.transpose(0, 3, 2, 1)
    else:
        raise ValueError("subsystem must be 'A' or 'B'")
    return t.reshape(d * d, d * d)


def negativity(rdm: np.ndarray, threshold: float = NEGATIVITY_THRESHOLD) -> float:
    """Sum of |lambda| over negative eigenvalues of the partial transpose.

    Eigenvalues in (-threshold, 0) are treated as zero.
    """
    pt = partial_transpose(rdm, "A")
    lam = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    s = -lam[lam < -threshold].sum()
    return float(s) if s > 0 else 0.0


def rdm_eigensystem(rdm: np.ndarray):
    """Eigenvalues (descending) and eigenvectors of a reduced density matrix."""
    lam, vecs = np.linalg.eigh(0.5 * (rdm + rdm.conj().T))
    order = np.argsort(lam)[::-1]
    return lam[order], vecs[:, order]


def generator_basis() -> np.ndarray:
    """Identity plus the eight Gell-Mann matrices, shape (9, 3, 3).

    Fock ordering |0>, |1>, |2>.  The last generator is diag(1, 1, -2)/sqrt(3),
    which makes the set trace-orthogonal.
    """
    lam = np.zeros((9, 3, 3), dtype=complex)
    lam[0] = np.eye(3)

    def herm(i, r, s, v):
        lam[i, r, s] = v
        lam[i, s, r] = np.conj(v)

    herm(1, 0, 1, 1)
    herm(2, 0, 1, -1j)
    lam[3] = np.diag([1, -1, 0])
    herm(4, 0, 2, 1)
    herm(5, 0, 2, -1j)
    herm(6, 1, 2, 1)
    herm(7, 1, 2, -1j)
    lam[8] = np.diag([1, 1, -2]) / np.sqrt(3)
    return lam


def bosonic_generator_forms(cutoff: int = 3) -> np.ndarray:
    """The same nine generators written as polynomials in truncated b, b^dag.

    The antisymmetric generators (2, 5, 7) carry the sign that reproduces the
    matrix forms of :func:`generator_basis`; with the opposite sign they give
    the transposed matrices.
    """
    if cutoff != 3:
        raise ValueError("generator forms are defined for cutoff 3 only")
    b = local_annihilation(3).toarray()
    bd = local_creation(3).toarray()
    mp = np.linalg.matrix_power
    s2, s3 = np.sqrt(2), np.sqrt(3)
    return np.array(
        [
            np.eye(3),
            0.5 * (b @ mp(bd, 2) + mp(b, 2) @ bd),
            0.5j * (b @ mp(bd, 2) - mp(b, 2) @ bd),
            0.75 * mp(b, 2) @ mp(bd, 2) - 0.5 * b @ bd,
            (mp(bd, 2) + mp(b, 2)) / s2,
            1j * (mp(bd, 2) - mp(b, 2)) / s2,
            (mp(bd, 2) @ b + bd @ mp(b, 2)) / s2,
            1j * (mp(bd, 2) @ b - bd @ mp(b, 2)) / s2,
            (b @ bd - bd @ b) / s3,
        ],
        dtype=complex,
    )


def _moment_norms(lam: np.ndarray) -> np.ndarray:
    # tr((A x B)^2) = tr(A^2) tr(B^2)
    t = np.einsum("iab,iba->i", lam, lam).real
    return np.outer(t, t)


def measure_moments(state, a: int | None = None, b: int | None = None,
                    spec: LatticeSpec | None = None) -> np.ndarray:
    """Table of <Lambda_i (x) Lambda_j> for sites ``a`` (first) and ``b``.

    ``state`` may be a 9x9 two-site density matrix (sites ignored), or a
    full-chain state vector / density matrix, in which case the moments are
    evaluated with the embedded operators on the whole chain.
    """
    lam = generator_basis()
    state = np.asarray(state)
    if state.shape == (9, 9) and spec is None:
        m = np.einsum("iab,jcd,bdac->ij", lam, lam, state.reshape(3, 3, 3, 3))
    else:
        if spec is None or a is None or b is None:
            raise ValueError("full-chain moments need spec and both sites")
        if spec.cutoff != 3:
            raise ValueError("moment tomography requires cutoff 3")
        _check_pair(a, b, spec.L)
        ops_a = [embed(x, a, spec) for x in lam]
        ops_b = [embed(x, b, spec) for x in lam]
        m = np.empty((9, 9), dtype=complex)
        for i, oa in enumerate(ops_a):
            for j, ob in enumerate(ops_b):
                op = (oa @ ob).tocsr()
                if state.ndim == 1:
                    m[i, j] = np.vdot(state, op @ state)
                else:
                    # tr(rho O) = sum_xy O_xy rho_yx
                    coo = op.tocoo()
                    m[i, j] = np.sum(coo.data * state[coo.col, coo.row])
    if np.max(np.abs(m.imag)) > 1e-8:
        raise ValueError("moments are not real; state is not Hermitian")
    return m.real


def tomography_reconstruct(moments: np.ndarray) -> np.ndarray:
    """Two-site density matrix from its 81 generator moments."""
    lam = generator_basis()
    coeff = np.asarray(moments) / _moment_norms(lam)
    rho = np.einsum("ij,iab,jcd->acbd", coeff, lam, lam)
    return rho.reshape(9, 9)


def rdm_to_json(rdm: np.ndarray, sites=None) -> str:
    """Row-major list of [re, im] pairs plus the site labels."""
    rdm = np.asarray(rdm)
    payload = {
        "sites": list(sites) if sites is not None else None,
        "shape": list(rdm.shape),
        "data": [[float(z.real), float(z.imag)] for z in rdm.ravel()],
    }
    return json.dumps(payload)


def rdm_from_json(text: str) -> np.ndarray:
    payload = json.loads(text)
    flat = np.array([complex(re, im) for re, im in payload["data"]])
    return flat.reshape(payload["shape"])


class SectorPairReducer:
    """Two-site reduction of states stored in a fixed photon-number sector.

    Precomputes the index pairs (x, y) of sector basis states that agree on
    every site outside the pair, so that
    ``rdm[p(x), p(y)] += rho[x, y]`` is a single weighted bincount.
    """

    def __init__(self, sector, a: int, b: int):
        spec = sector.spec
        _check_pair(a, b, spec.L)
        d = spec.cutoff
        dig = sector.digits.astype(np.int64)
        weights = sector.weights
        p = dig[:, a] * d + dig[:, b]
        rest = sector.states - dig[:, a] * weights[a] - dig[:, b] * weights[b]
        order = np.argsort(rest, kind="stable")
        rest_sorted = rest[order]
        _, counts = np.unique(rest_sorted, return_counts=True)
        gmax = int(counts.max()) if counts.size else 1
        xs, ys = [], []
        n = len(order)
        for k in range(-(gmax - 1), gmax):
            i = np.arange(max(0, -k), min(n, n - k))
            same = rest_sorted[i] == rest_sorted[i + k]
            xs.append(order[i[same]])
            ys.append(order[i[same] + k])
        self.x = np.concatenate(xs)
        self.y = np.concatenate(ys)
        self.flat = p[self.x] * d * d + p[self.y]
        self.size = d**4
        self.d2 = d * d

    def _collect(self, w: np.ndarray) -> np.ndarray:
        re = np.bincount(self.flat, weights=w.real, minlength=self.size)
        im = np.bincount(self.flat, weights=w.imag, minlength=self.size)
        return (re + 1j * im).reshape(self.d2, self.d2)

    def from_vector(self, vec: np.ndarray) -> np.ndarray:
        return self._collect(vec[self.x] * np.conj(vec[self.y]))

    def from_block(self, block: np.ndarray) -> np.ndarray:
        return self._collect(block[self.x, self.y])


__all__ = [
    "partial_trace_pair",
    "partial_transpose",
    "negativity",
    "swap_sites",
    "rdm_eigensystem",
    "generator_basis",
    "bosonic_generator_forms",
    "measure_moments",
    "tomography_reconstruct",
    "rdm_to_json",
    "rdm_from_json",
    "SectorPairReducer",
]

