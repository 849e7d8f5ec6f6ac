"""Dense exact simulation of the 1D transverse-field Ising chain.

    H = -sum_<ij> Z_i Z_j + h_x sum_i X_i

Basis convention: site ``i`` is bit ``i`` of the computational-basis index
(site 0 is the least significant bit) and bit value 0 is the +1
eigenstate of Z.  States are complex numpy vectors of length 2^L and
density matrices are 2^L x 2^L complex arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _accel
from .errors import NumericalError, ResourceGuardError

MAX_SITES = 14
DEGENERACY_TOL = 1e-9
PIVOT_TOL = 1e-8


def guard_sites(num_sites: int, limit: int = MAX_SITES) -> int:
    num_sites = int(num_sites)
    if num_sites < 1:
        raise ValueError(f"need at least one site, got {num_sites}")
    if num_sites > limit:
        raise ResourceGuardError(
            f"{num_sites} sites exceeds the dense-simulation limit of {limit}"
        )
    return num_sites


def num_sites_of(dim: int) -> int:
    L = int(dim).bit_length() - 1
    if L < 0 or 1 << L != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return L


@dataclass(frozen=True)
class TfimParams:
    num_sites: int
    h_x: float
    boundary: str = "open"

    def __post_init__(self):
        if self.num_sites < 2:
            raise ValueError("the Ising chain needs at least two sites")
        guard_sites(self.num_sites)
        if not self.h_x >= 0:
            raise ValueError(f"h_x must be non-negative, got {self.h_x}")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")

    @property
    def bonds(self) -> list[tuple[int, int]]:
        L = self.num_sites
        out = [(i, i + 1) for i in range(L - 1)]
        if self.boundary == "periodic" and L > 2:
            out.append((L - 1, 0))
        return out


def build_hamiltonian(params: TfimParams) -> np.ndarray:
    """Real symmetric Hamiltonian matrix in the computational basis."""
    L = params.num_sites
    dim = 1 << L
    k = np.arange(dim)
    spins = 1 - 2 * ((k[:, None] >> np.arange(L)) & 1)
    diag = np.zeros(dim)
    for i, j in params.bonds:
        diag -= spins[:, i] * spins[:, j]
    H = np.diag(diag)
    if params.h_x:
        for i in range(L):
            H[k, k ^ (1 << i)] += params.h_x
    return H


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    num_sites: int

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T

    def blocks(self, tol: float = DEGENERACY_TOL) -> list[slice]:
        """Slices of degenerate eigenvalue groups (adjacent gaps below ``tol``)."""
        E = self.eigenvalues
        cuts = np.flatnonzero(np.diff(E) >= tol) + 1
        edges = np.concatenate([[0], cuts, [E.shape[0]]])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _canonical_block(Vb: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of span(Vb).

    Basis vectors are the Gram-Schmidt images of e_0, e_1, ... projected
    into the subspace, keeping those with a residual above PIVOT_TOL.
    Each kept vector has its first significant component at its pivot,
    real and positive, and pivots increase with the vector index.
    """
    m = Vb.shape[1]
    out = np.zeros_like(Vb)
    found = 0
    for pivot in range(Vb.shape[0]):
        r = Vb @ Vb[pivot].conj()
        for _ in range(2):
            if found:
                Q = out[:, :found]
                r = r - Q @ (Q.conj().T @ r)
        norm = np.linalg.norm(r)
        if norm > PIVOT_TOL:
            out[:, found] = r / norm
            found += 1
            if found == m:
                break
    if found < m:
        raise NumericalError("could not build a canonical basis for a degenerate block")
    return out


def _fix_phase(v: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(np.abs(v) > PIVOT_TOL)
    if idx.size:
        c = v[idx[0]]
        v = v * (np.conj(c) / abs(c))
    return v


def spectral_decompose(H: np.ndarray, num_sites: int | None = None,
                       degeneracy_tol: float = DEGENERACY_TOL) -> SpectralDecomposition:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    asym = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if asym > 1e-8:
        raise ValueError(f"matrix is not Hermitian (max asymmetry {asym:.3g})")
    if num_sites is None:
        num_sites = num_sites_of(H.shape[0])
    E, V = np.linalg.eigh(H)
    V = V.copy()
    start = 0
    while start < E.shape[0]:
        stop = start + 1
        while stop < E.shape[0] and E[stop] - E[stop - 1] < degeneracy_tol:
            stop += 1
        if stop - start == 1:
            V[:, start] = _fix_phase(V[:, start])
        else:
            V[:, start:stop] = _canonical_block(V[:, start:stop])
        start = stop
    return SpectralDecomposition(E, V, int(num_sites))


def diagonalize(params: TfimParams) -> SpectralDecomposition:
    return spectral_decompose(build_hamiltonian(params), params.num_sites)


# --------------------------------------------------------------------------
# States
# --------------------------------------------------------------------------

def ghz_state(num_sites: int) -> np.ndarray:
    L = guard_sites(num_sites)
    psi = np.zeros(1 << L, dtype=np.complex128)
    psi[0] = psi[-1] = np.sqrt(0.5)
    return psi


def ferro_state(num_sites: int) -> np.ndarray:
    L = guard_sites(num_sites)
    psi = np.zeros(1 << L, dtype=np.complex128)
    psi[0] = 1.0
    return psi


def check_state(psi, tol: float = 1e-8) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.ndim != 1:
        raise ValueError("state vector must be one-dimensional")
    num_sites_of(psi.shape[0])
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state is not normalized (norm^2 = {norm:.12g})")
    return psi


def _spectral_coefficients(psi0, spec: SpectralDecomposition) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (spec.dim,):
        raise ValueError(
            f"state of length {psi0.shape[0]} does not match dimension {spec.dim}"
        )
    return spec.eigenvectors.conj().T @ psi0


def evolve(psi0, spec: SpectralDecomposition, t: float) -> np.ndarray:
    """exp(-iHt) |psi0> through the eigenbasis."""
    c = _spectral_coefficients(psi0, spec)
    return spec.eigenvectors @ (np.exp(-1j * spec.eigenvalues * t) * c)


def evolve_many(psi0, spec: SpectralDecomposition, times) -> np.ndarray:
    """States at each time as rows of a (len(times), 2^L) array."""
    c = _spectral_coefficients(psi0, spec)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    phases = np.exp(-1j * np.outer(times, spec.eigenvalues)) * c
    return phases @ spec.eigenvectors.T


# --------------------------------------------------------------------------
# Pauli strings
# --------------------------------------------------------------------------

_SPARSE = re.compile(r"([IXYZ])(\d+)")


def parse_pauli(descriptor, num_sites: int) -> tuple[int, int, int]:
    """Return (flip_mask, zy_mask, num_y) for a Pauli-string descriptor.

    Accepted forms: a length-L string over IXYZ (character l acts on site
    l), a sparse string such as ``"Z0 Z1"`` or ``"X0X1X2"``, or a mapping
    ``{site: "X"}``.
    """
    ops: dict[int, str] = {}
    if isinstance(descriptor, Mapping):
        items = descriptor.items()
    elif isinstance(descriptor, str):
        text = descriptor.replace(" ", "").upper()
        matches = list(_SPARSE.finditer(text))
        if len(text) == num_sites and set(text) <= set("IXYZ"):
            items = enumerate(text)
        elif text and "".join(m.group(0) for m in matches) == text:
            items = ((int(m.group(2)), m.group(1)) for m in matches)
        else:
            raise ValueError(f"malformed Pauli string {descriptor!r}")
    else:
        items = descriptor
    for site, op in items:
        site = int(site)
        op = str(op).upper()
        if op not in ("I", "X", "Y", "Z"):
            raise ValueError(f"unknown Pauli operator {op!r}")
        if not 0 <= site < num_sites:
            raise ValueError(f"site {site} out of range for {num_sites} sites")
        if site in ops:
            raise ValueError(f"site {site} appears twice in {descriptor!r}")
        ops[site] = op
    flip = zy = ny = 0
    for site, op in ops.items():
        if op in ("X", "Y"):
            flip |= 1 << site
        if op in ("Z", "Y"):
            zy |= 1 << site
        ny += op == "Y"
    return flip, zy, ny


def _y_phase(ny: int) -> complex:
    # P|k> = i^nY (-1)^popcount(k & zy) |k ^ flip>; the kernels supply the sign.
    return 1j**ny


def expectation(psi, op, num_sites: int | None = None) -> float:
    """<psi|P|psi> for a Pauli string P, from bit operations on the amplitudes."""
    psi = np.asarray(psi, dtype=np.complex128)
    L = num_sites if num_sites is not None else num_sites_of(psi.shape[0])
    flip, zy, ny = parse_pauli(op, L)
    val = _y_phase(ny) * _accel.pauli_expval(psi, flip, zy)
    return float(val.real)


def expectation_dm(rho, op, num_sites: int | None = None) -> float:
    """Tr(rho P) for a Pauli string P."""
    rho = np.asarray(rho, dtype=np.complex128)
    L = num_sites if num_sites is not None else num_sites_of(rho.shape[0])
    flip, zy, ny = parse_pauli(op, L)
    val = _y_phase(ny) * _accel.pauli_trace(rho, flip, zy)
    return float(val.real)


def pauli_matrix(op, num_sites: int) -> np.ndarray:
    """Dense matrix of a Pauli string; meant for tests and small systems."""
    flip, zy, ny = parse_pauli(op, num_sites)
    dim = 1 << num_sites
    k = np.arange(dim)
    signs = 1.0 - 2.0 * (np.bitwise_count((k & zy).astype(np.uint64)) & 1)
    M = np.zeros((dim, dim), dtype=np.complex128)
    M[k ^ flip, k] = _y_phase(ny) * signs
    return M


def apply_pauli_sum(axis: str, arr: np.ndarray, num_sites: int) -> np.ndarray:
    """Apply sum_i sigma^axis_i along the first axis of ``arr``."""
    axis = axis.upper()
    dim = 1 << num_sites
    k = np.arange(dim)
    out = np.zeros_like(arr, dtype=np.complex128)
    extra = (slice(None),) + (None,) * (arr.ndim - 1)
    for i in range(num_sites):
        bit = (k >> i) & 1
        sign = (1.0 - 2.0 * bit)[extra]
        if axis == "X":
            out += arr[k ^ (1 << i)]
        elif axis == "Z":
            out += sign * arr
        elif axis == "Y":
            out += -1j * sign * arr[k ^ (1 << i)]
        else:
            raise ValueError(f"axis must be X, Y or Z, got {axis!r}")
    return out


# --------------------------------------------------------------------------
# Ensembles
# --------------------------------------------------------------------------

def vn_ensemble(psi0, spec: SpectralDecomposition,
                degeneracy_tol: float = DEGENERACY_TOL) -> np.ndarray:
    """Infinite-time average: sum_n P_n |psi0><psi0| P_n over degenerate blocks."""
    if not degeneracy_tol > 0:
        raise ValueError("degeneracy_tol must be positive")
    c = _spectral_coefficients(psi0, spec)
    V = spec.eigenvectors
    W = np.stack([V[:, b] @ c[b] for b in spec.blocks(degeneracy_tol)], axis=1)
    return W @ W.conj().T


def window_average(psi0, spec: SpectralDecomposition, t0: float, t1: float) -> np.ndarray:
    """Exact (1/(t1-t0)) int_{t0}^{t1} |psi(t)><psi(t)| dt."""
    if not t1 > t0:
        raise ValueError("time window must have t1 > t0")
    c = _spectral_coefficients(psi0, spec)
    E = spec.eigenvalues
    w = E[:, None] - E[None, :]
    small = np.abs(w) < 1e-12
    safe = np.where(small, 1.0, w)
    kern = (np.exp(-1j * safe * t1) - np.exp(-1j * safe * t0)) / (-1j * safe * (t1 - t0))
    kern = np.where(small, 1.0, kern)
    V = spec.eigenvectors
    return V @ (np.outer(c, c.conj()) * kern) @ V.conj().T


def microcanonical_ensemble(spec: SpectralDecomposition, energy: float, delta: float) -> np.ndarray:
    """Maximally mixed state over eigenstates with energy in [energy, energy + delta]."""
    E = spec.eigenvalues
    inside = (E >= energy) & (E <= energy + delta)
    count = int(inside.sum())
    if count == 0:
        raise ValueError(f"no eigenvalues in the window [{energy}, {energy + delta}]")
    Vw = spec.eigenvectors[:, inside]
    return (Vw @ Vw.conj().T) / count


def effective_dimension(psi0, spec: SpectralDecomposition) -> float:
    """1 / sum_k p_k^2 with p_k = |<E_k|psi0>|^2."""
    p = np.abs(_spectral_coefficients(psi0, spec)) ** 2
    return float(1.0 / np.sum(p**2))


def partial_trace(state, sites: Sequence[int], num_sites: int | None = None) -> np.ndarray:
    """Reduced density matrix on ``sites``; bit j of its index is site ``sites[j]``."""
    state = np.asarray(state, dtype=np.complex128)
    L = num_sites if num_sites is not None else num_sites_of(state.shape[0])
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites) or any(not 0 <= s < L for s in sites):
        raise ValueError(f"invalid subsystem {sites} for {L} sites")
    keep = [L - 1 - s for s in reversed(sites)]
    rest = [a for a in range(L) if a not in keep]
    n = len(sites)
    if state.ndim == 1:
        M = np.transpose(state.reshape((2,) * L), keep + rest).reshape(1 << n, -1)
        return M @ M.conj().T
    T = state.reshape((2,) * (2 * L))
    T = np.transpose(T, keep + rest + [L + a for a in keep] + [L + a for a in rest])
    T = T.reshape(1 << n, 1 << (L - n), 1 << n, 1 << (L - n))
    return np.einsum("arbr->ab", T)


def ground_state(params: TfimParams, broken: str | None = None,
                 spec: SpectralDecomposition | None = None) -> np.ndarray:
    """Lowest eigenvector of H.

    With ``broken="up"`` or ``"down"`` and h_x < 1, the state is instead
    the combination of the two lowest levels with the largest (smallest)
    Z-magnetization, mimicking a symmetry-broken ferromagnet.
    """
    spec = spec or diagonalize(params)
    if broken is None or params.h_x >= 1.0:
        return spec.eigenvectors[:, 0].astype(np.complex128)
    if broken not in ("up", "down"):
        raise ValueError(f"broken must be None, 'up' or 'down', got {broken!r}")
    L = params.num_sites
    G = spec.eigenvectors[:, :2].astype(np.complex128)
    Mz = apply_pauli_sum("Z", G, L) / L
    w, U = np.linalg.eigh(G.conj().T @ Mz)
    pick = U[:, -1] if broken == "up" else U[:, 0]
    return _fix_phase(G @ pick)
