"""Diffusion maps over a kernel matrix, plus classical MDS for projections."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .kernel import KernelMatrix

SIGN_CONVENTION = "maxabs-positive-v1"
MAX_RETAINED = 8
ROW_SUM_TOL = 1e-10
DEGENERACY_TOL = 1e-10
ZERO_EIGENVALUE = 1e-12


@dataclass(eq=False)
class TransitionMatrix:
    """Row-stochastic matrix; ``log_degree`` is set when built from a kernel."""

    entries: np.ndarray
    log_degree: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.entries, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValueError("transition matrix must be square and nonempty")
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=ROW_SUM_TOL):
            raise ValueError("transition matrix must be nonnegative with unit row sums")
        self.entries = P

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def power(self, t: int) -> np.ndarray:
        if t < 1:
            raise ValueError("diffusion time must be >= 1")
        return np.linalg.matrix_power(self.entries, t)


@dataclass(eq=False)
class DiffusionEmbedding:
    eigenvalues: np.ndarray
    right_eigenvectors: np.ndarray  # column k is psi_k, unit Euclidean norm
    t: int
    retained: int
    degenerate: bool
    labels: np.ndarray | None = None
    method: str = "symmetric"

    @property
    def coordinates(self) -> np.ndarray:
        """lambda_k^t psi_k(i) for the retained nontrivial axes k = 1..retained."""
        return diffusion_coordinates(self)


def transition_matrix(K: KernelMatrix) -> TransitionMatrix:
    """Row-normalize a kernel matrix in the log domain."""
    logK = K.log_entries
    log_deg = logsumexp(logK, axis=1)
    P = np.exp(logK - log_deg[:, None])
    P /= P.sum(axis=1, keepdims=True)
    return TransitionMatrix(P, log_deg, K.labels.copy())


def _stationary(P: np.ndarray) -> np.ndarray | None:
    w, V = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(V[:, k])
    pi = pi / pi.sum()
    if (pi <= 0).any():
        return None
    return pi


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _choose_retained(lam: np.ndarray) -> int:
    top = min(MAX_RETAINED, lam.size - 2)
    if top < 1:
        return max(1, lam.size - 1)
    # eigenvalues at rounding level count as zero so their ratios carry no signal
    mags = np.maximum(np.abs(lam), ZERO_EIGENVALUE)
    ratios = [mags[k] / mags[k + 1] for k in range(1, top + 1)]
    return 1 + int(np.argmax(ratios))


def _symmetric_route(P: TransitionMatrix):
    """Half-weights w with W P W^{-1} symmetric, or None when P is not reversible."""
    M = P.entries
    if P.log_degree is not None:
        # kernel-derived: P = D^{-1} K, so D^{1/2} P D^{-1/2} = D^{-1/2} K D^{-1/2}
        half = 0.5 * (P.log_degree - P.log_degree.max())
        A = np.exp(half)[:, None] * M * np.exp(-half)[None, :]
        if np.allclose(A, A.T, rtol=1e-8, atol=1e-12):
            return half
    pi = _stationary(M)
    if pi is not None:
        half = 0.5 * np.log(pi)
        A = np.exp(half)[:, None] * M * np.exp(-half)[None, :]
        if np.allclose(A, A.T, rtol=1e-8, atol=1e-12):
            return half
    return None


def embed(P: TransitionMatrix, t: int = 1, retained: int | None = None) -> DiffusionEmbedding:
    """Eigen-decomposition of P with descending eigenvalues and fixed signs."""
    if t < 1:
        raise ValueError("diffusion time must be >= 1")
    M = P.entries
    half = _symmetric_route(P)
    if half is not None:
        A = np.exp(half)[:, None] * M * np.exp(-half)[None, :]
        A = 0.5 * (A + A.T)
        w, phi = np.linalg.eigh(A)
        order = np.argsort(-w, kind="stable")
        lam = w[order]
        psi = np.exp(-half)[:, None] * phi[:, order]
        method = "symmetric"
    else:
        w, V = np.linalg.eig(M)
        order = np.lexsort((-np.abs(w.imag), -w.real))
        lam = w.real[order]
        psi = np.real(V[:, order])
        method = "general"
    psi = psi / np.linalg.norm(psi, axis=0, keepdims=True)
    psi = _fix_signs(psi)
    if retained is None:
        retained = _choose_retained(lam)
    if not 1 <= retained <= max(1, lam.size - 1):
        raise ValueError(f"cannot retain {retained} axes from a {lam.size}-point embedding")
    window = lam[: min(lam.size, retained + 2)]
    degenerate = bool(np.any(np.abs(np.diff(window)) < DEGENERACY_TOL))
    if lam.size == 1:
        degenerate = True
    return DiffusionEmbedding(lam, psi, t, retained, degenerate, P.labels, method)


def diffusion_coordinates(emb: DiffusionEmbedding, shift=None, scale=None) -> np.ndarray:
    """dc_k(i) = scale_k * (psi_k(i) + shift_k) for k = 1..retained (default scale lambda_k^t)."""
    k = emb.retained
    psi = emb.right_eigenvectors[:, 1:k + 1]
    if psi.shape[1] < k:
        raise ValueError("embedding retains more axes than it has")
    shift = np.zeros(k) if shift is None else np.broadcast_to(np.asarray(shift, float), (k,))
    scale = emb.eigenvalues[1:k + 1] ** emb.t if scale is None else \
        np.broadcast_to(np.asarray(scale, float), (k,))
    return scale * (psi + shift)


def diffusion_distance(P: TransitionMatrix, t: int, i: int, j: int, form: str = "rows") -> float:
    """Distance between points i and j after t steps of the walk.

    ``form="rows"`` compares rows of P^t, sum_m (P^t_im - P^t_jm)^2.
    ``form="row-column"`` compares row i with column j, sum_m (P^t_im - P^t_mj)^2;
    the two agree when P is symmetric.
    """
    n = P.size
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"indices ({i}, {j}) out of range for {n} points")
    Pt = P.power(t)
    if form == "rows":
        d = Pt[i] - Pt[j]
    elif form == "row-column":
        d = Pt[i] - Pt[:, j]
    else:
        raise ValueError(f"unknown distance form {form!r}")
    return float(np.sqrt(np.dot(d, d)))


def diffusion_distance_matrix(P: TransitionMatrix, t: int) -> np.ndarray:
    Pt = P.power(t)
    sq = np.sum(Pt * Pt, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * Pt @ Pt.T
    np.fill_diagonal(D2, 0.0)
    return np.sqrt(np.clip(D2, 0.0, None))


def euclidean_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(eq=False)
class MdsResult:
    coordinates: np.ndarray
    eigenvalues: np.ndarray
    truncated: bool


def classical_mds(D, dims: int) -> MdsResult:
    """Torgerson scaling: eigenpairs of -J D^2 J / 2 with nonnegative eigenvalues."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n) or not np.allclose(D, D.T, atol=1e-12) or np.any(np.abs(np.diag(D)) > 1e-12):
        raise ValueError("distance matrix must be square, symmetric and zero on the diagonal")
    if dims < 1:
        raise ValueError("dims must be >= 1")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    tol = 1e-10 * max(1.0, abs(w[0]))
    positive = int(np.sum(w > tol))
    use = min(dims, positive)
    truncated = use < dims
    if truncated:
        warnings.warn(f"only {positive} positive eigenvalues; MDS truncated to {use} dimensions",
                      RuntimeWarning, stacklevel=2)
    coords = np.zeros((n, dims))
    if use:
        coords[:, :use] = _fix_signs(V[:, :use]) * np.sqrt(w[:use])
    return MdsResult(coords, w, truncated)


def dumps_embedding(emb: DiffusionEmbedding, labels=None, shift=None, scale=None) -> str:
    labels = emb.labels if labels is None else np.asarray(labels)
    if labels is None:
        labels = np.full(emb.right_eigenvectors.shape[0], np.nan)
    k = emb.retained
    dc = diffusion_coordinates(emb, shift, scale)
    buf = io.StringIO()
    buf.write(f"# t={emb.t} M_kept={k} sign_convention={SIGN_CONVENTION} "
              f"method={emb.method} degenerate={str(emb.degenerate).lower()}\n")
    buf.write("# eigenvalues=" + ",".join(repr(float(x)) for x in emb.eigenvalues) + "\n")
    cols = ["index", "h_x"] + [f"lambda_{j}" for j in range(1, k + 1)] + \
        [f"dc{j}" for j in range(1, k + 1)]
    buf.write(",".join(cols) + "\n")
    lam = emb.eigenvalues[1:k + 1]
    for i in range(dc.shape[0]):
        vals = [str(i), repr(float(labels[i]))] + [repr(float(x)) for x in lam] + \
            [repr(float(x)) for x in dc[i]]
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def write_embedding_csv(emb: DiffusionEmbedding, path, labels=None, shift=None, scale=None) -> Path:
    path = Path(path)
    path.write_text(dumps_embedding(emb, labels, shift, scale), encoding="utf-8")
    return path


def read_embedding_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """(metadata, h_x labels, dc table) from an embedding file."""
    meta: dict = {}
    rows = []
    header = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, value = item.partition("=")
                meta[key] = value
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(x) for x in line.split(",")])
    table = np.array(rows)
    k = int(meta["M_kept"])
    return meta, table[:, 1], table[:, 2 + k:]
