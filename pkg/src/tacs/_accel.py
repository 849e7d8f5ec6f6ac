"""Hot inner loops, each with a numba kernel and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``TACS_DISABLE_NUMBA=1``
(or numba's own ``NUMBA_DISABLE_JIT=1``) to force the numpy path; it is
also used when numba cannot be imported.  Both paths compute the same
quantities; they may differ in the last bits where summation order
differs, so byte-level reproducibility holds per backend.

Snapshot sites are encoded as ``code = 2 * basis + bit`` with
``basis`` 0, 1, 2 for X, Y, Z and ``bit`` 0 for outcome +1, 1 for -1.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = numba is not None and not (
    _flag("TACS_DISABLE_NUMBA") or _flag("NUMBA_DISABLE_JIT")
)
BACKEND = "numba" if USE_NUMBA else "numpy"

SQRT_HALF = np.sqrt(0.5)
# Rotations taking the +1/-1 eigenstates of X and Y to |0>/|1>.
ROT_X = SQRT_HALF * np.array([[1, 1], [1, -1]], dtype=np.complex128)
ROT_Y = SQRT_HALF * np.array([[1, -1j], [1, 1j]], dtype=np.complex128)


def _overlap_table() -> np.ndarray:
    ov = np.full((6, 6), 0.5)
    for b in range(3):
        ov[2 * b, 2 * b] = ov[2 * b + 1, 2 * b + 1] = 1.0
        ov[2 * b, 2 * b + 1] = ov[2 * b + 1, 2 * b] = 0.0
    return ov


OVERLAP = _overlap_table()
# Tr[(3|s><s| - I)(3|s'><s'| - I)] = 9 |<s|s'>|^2 - 4, one of {-4, 1/2, 5}.
TRACE_TABLE = 9.0 * OVERLAP - 4.0


def _njit(fn):
    if not USE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# Pauli-string expectation values
# --------------------------------------------------------------------------

def _parity_signs(dim: int, zy_mask: int) -> np.ndarray:
    k = np.arange(dim, dtype=np.uint64)
    odd = np.bitwise_count(k & np.uint64(zy_mask)) & 1
    return 1.0 - 2.0 * odd


def pauli_expval_numpy(psi, flip_mask, zy_mask):
    """sum_k conj(psi[k ^ flip]) * (-1)^popcount(k & zy) * psi[k], without the i^nY factor."""
    k = np.arange(psi.shape[0])
    return np.sum(np.conj(psi[k ^ flip_mask]) * _parity_signs(psi.shape[0], zy_mask) * psi)


def pauli_trace_numpy(rho, flip_mask, zy_mask):
    k = np.arange(rho.shape[0])
    return np.sum(_parity_signs(rho.shape[0], zy_mask) * rho[k, k ^ flip_mask])


def _pauli_expval_loop(psi, flip_mask, zy_mask):
    acc = 0j
    for k in range(psi.shape[0]):
        x = k & zy_mask
        p = 0
        while x:
            x &= x - 1
            p ^= 1
        term = np.conj(psi[k ^ flip_mask]) * psi[k]
        acc += -term if p else term
    return acc


def _pauli_trace_loop(rho, flip_mask, zy_mask):
    acc = 0j
    for k in range(rho.shape[0]):
        x = k & zy_mask
        p = 0
        while x:
            x &= x - 1
            p ^= 1
        term = rho[k, k ^ flip_mask]
        acc += -term if p else term
    return acc


pauli_expval_numba = _njit(_pauli_expval_loop)
pauli_trace_numba = _njit(_pauli_trace_loop)


# --------------------------------------------------------------------------
# Born sampling in rotated product bases
# --------------------------------------------------------------------------

def sample_indices_numpy(states, bases, u):
    """Rotate each row of ``states`` into its product basis and draw one index per row.

    ``states`` is (B, 2^L) complex, ``bases`` (B, L) in {0, 1, 2}, ``u`` (B,)
    uniforms.  The index is the first k whose cumulative probability
    exceeds ``u`` times the total.
    """
    B, dim = states.shape
    L = bases.shape[1]
    out = np.array(states, dtype=np.complex128, copy=True)
    for site in range(L):
        view = out.reshape(B, dim >> (site + 1), 2, 1 << site)
        for basis, rot in ((0, ROT_X), (1, ROT_Y)):
            rows = np.flatnonzero(bases[:, site] == basis)
            if rows.size:
                view[rows] = np.einsum("ab,mhbl->mhal", rot, view[rows])
    cum = np.cumsum(out.real**2 + out.imag**2, axis=1)
    target = u * cum[:, -1]
    idx = np.sum(cum <= target[:, None], axis=1)
    return np.minimum(idx, dim - 1).astype(np.int64)


def _sample_indices_loop(states, bases, u):
    B, dim = states.shape
    L = bases.shape[1]
    r = np.sqrt(0.5)
    out = np.empty(B, dtype=np.int64)
    work = np.empty(dim, dtype=np.complex128)
    for s in range(B):
        for k in range(dim):
            work[k] = states[s, k]
        for site in range(L):
            basis = bases[s, site]
            if basis == 2:
                continue
            stride = 1 << site
            for k in range(dim):
                if k & stride:
                    continue
                a = work[k]
                b = work[k | stride]
                if basis == 0:
                    work[k] = r * (a + b)
                    work[k | stride] = r * (a - b)
                else:
                    work[k] = r * (a - 1j * b)
                    work[k | stride] = r * (a + 1j * b)
        total = 0.0
        for k in range(dim):
            total += work[k].real ** 2 + work[k].imag ** 2
        target = u[s] * total
        acc = 0.0
        pick = dim - 1
        for k in range(dim):
            acc += work[k].real ** 2 + work[k].imag ** 2
            if acc > target:
                pick = k
                break
        out[s] = pick
    return out


sample_indices_numba = _njit(_sample_indices_loop)


# --------------------------------------------------------------------------
# Site-trace sums between snapshot sets (shadow kernel)
# --------------------------------------------------------------------------

def _one_hot(codes):
    n, L = codes.shape
    out = np.zeros((n, L, 6))
    out[np.arange(n)[:, None], np.arange(L)[None, :], codes] = 1.0
    return out


def site_trace_sums_numpy(codes_a, codes_b):
    """(N, N') table of sum_l Tr[sigma_l^(n) sigma~_l^(n')]; exact in float64."""
    a = _one_hot(codes_a) @ TRACE_TABLE
    b = _one_hot(codes_b)
    return a.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T


def _site_trace_sums_loop(codes_a, codes_b, table):
    n, L = codes_a.shape
    m = codes_b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(L):
                acc += table[codes_a[i, l], codes_b[j, l]]
            out[i, j] = acc
    return out


_site_trace_sums_jit = _njit(_site_trace_sums_loop)


def site_trace_sums_numba(codes_a, codes_b):
    return _site_trace_sums_jit(codes_a, codes_b, TRACE_TABLE)


_CHUNK = 1 << 22


def _class_sum(hist, L, scale):
    """Weight a (-4 count, 5 count) pair histogram; bins are summed in fixed order.

    Pairs of shots enter only through integer counts, so the result does not
    depend on the order of the datasets or of the shots.
    """
    a, c = np.divmod(np.arange((L + 1) ** 2), L + 1)
    values = -4.0 * a + 0.5 * (L - a - c) + 5.0 * c
    keep = hist > 0
    return float(np.dot(hist[keep].astype(np.float64), np.exp(scale * values[keep])))


def pair_class_hist_numpy(codes_a, codes_b):
    """Histogram over shot pairs of (sites with trace -4) * (L+1) + (sites with trace 5)."""
    L = codes_a.shape[1]
    hb_same = _one_hot(codes_b).reshape(codes_b.shape[0], -1)
    hb_flip = _one_hot(codes_b ^ 1).reshape(codes_b.shape[0], -1)
    rows = max(1, _CHUNK // max(1, codes_b.shape[0]))
    hist = np.zeros((L + 1) ** 2, dtype=np.int64)
    for start in range(0, codes_a.shape[0], rows):
        ha = _one_hot(codes_a[start:start + rows]).reshape(-1, hb_same.shape[1])
        same = np.rint(ha @ hb_same.T).astype(np.int64)
        flip = np.rint(ha @ hb_flip.T).astype(np.int64)
        hist += np.bincount((flip * (L + 1) + same).ravel(), minlength=(L + 1) ** 2)
    return hist


def _pair_class_hist_loop(codes_a, codes_b):
    n, L = codes_a.shape
    m = codes_b.shape[0]
    hist = np.zeros((L + 1) ** 2, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            same = 0
            flip = 0
            for l in range(L):
                x = codes_a[i, l] ^ codes_b[j, l]
                if x == 0:
                    same += 1
                elif x == 1:
                    flip += 1
            hist[flip * (L + 1) + same] += 1
    return hist


_pair_class_hist_jit = _njit(_pair_class_hist_loop)


def pair_class_hist_numba(codes_a, codes_b):
    return _pair_class_hist_jit(codes_a, codes_b)


def exp_pair_sum_numpy(codes_a, codes_b, scale):
    """sum_{n,n'} exp(scale * S[n, n']) with S the site-trace sum table."""
    return _class_sum(pair_class_hist_numpy(codes_a, codes_b), codes_a.shape[1], scale)


def exp_pair_sum_numba(codes_a, codes_b, scale):
    return _class_sum(_pair_class_hist_jit(codes_a, codes_b), codes_a.shape[1], float(scale))


# --------------------------------------------------------------------------
# Purity cross-term sum
# --------------------------------------------------------------------------

def _flat_codes(codes):
    weights = 6 ** np.arange(codes.shape[1], dtype=np.int64)
    return codes.astype(np.int64) @ weights


def purity_pair_sum_numpy(codes):
    """sum_{n != n'} prod_l Tr[sigma_l^(n) sigma_l^(n')] via a 6^n histogram.

    Shots with identical local records contribute identically, so the
    double sum is h^T (T x ... x T) h - N * 5^n with h the histogram.
    """
    N, n = codes.shape
    hist = np.bincount(_flat_codes(codes), minlength=6**n).astype(np.float64)
    w = hist.reshape((6,) * n) if n else hist.reshape(())
    for axis in range(n):
        w = np.moveaxis(np.tensordot(TRACE_TABLE, w, axes=([1], [axis])), 0, axis)
    return float(np.sum(hist.reshape(w.shape) * w) - N * 5.0**n)


def _purity_pair_sum_loop(flat, n, table):
    size = 6**n
    hist = np.zeros(size)
    for k in range(flat.shape[0]):
        hist[flat[k]] += 1.0
    w = hist.copy()
    tmp = np.empty(size)
    post = 1
    for axis in range(n):
        pre = size // (post * 6)
        for p in range(pre):
            for a in range(6):
                for q in range(post):
                    acc = 0.0
                    for b in range(6):
                        acc += table[a, b] * w[(p * 6 + b) * post + q]
                    tmp[(p * 6 + a) * post + q] = acc
        w, tmp = tmp, w
        post *= 6
    total = 0.0
    for k in range(size):
        total += hist[k] * w[k]
    return total - flat.shape[0] * 5.0**n


_purity_pair_sum_jit = _njit(_purity_pair_sum_loop)


def purity_pair_sum_numba(codes):
    return float(_purity_pair_sum_jit(_flat_codes(codes), codes.shape[1], TRACE_TABLE))


# --------------------------------------------------------------------------
# Random-walk Metropolis over log-parameters of the purity model
# --------------------------------------------------------------------------

def _log_likelihood_scalar(x, n, inv_N, y, text_form):
    a = np.exp(x[0])
    b = np.exp(x[1])
    c = np.exp(x[2])
    d = np.exp(x[3])
    e = np.exp(x[4])
    f = np.exp(x[5])
    total = 0.0
    for k in range(n.shape[0]):
        mu = a * np.exp(-b * n[k]) + c * np.exp(d * n[k]) * inv_N[k]
        if text_form:
            var = (e * np.exp(f * n[k])) ** 2
        else:
            var = e * np.exp(f * n[k]) * inv_N[k] * inv_N[k]
        if not var > 0.0:
            return -np.inf
        r = y[k] - mu
        total += -0.5 * np.log(2.0 * np.pi * var) - 0.5 * r * r / var
    return total


_log_likelihood_jit = _njit(_log_likelihood_scalar)


def _metropolis_loop(x0, n, inv_N, y, lo, hi, steps, log_u, text_form, loglik):
    S, dim = steps.shape
    chain = np.empty((S, dim))
    logp = np.empty(S)
    x = x0.copy()
    cur = loglik(x, n, inv_N, y, text_form)
    accepted = 0
    for s in range(S):
        trial = x + steps[s]
        inside = True
        for j in range(dim):
            if trial[j] < lo[j] or trial[j] > hi[j]:
                inside = False
        if inside:
            new = loglik(trial, n, inv_N, y, text_form)
            if log_u[s] < new - cur:
                x = trial
                cur = new
                accepted += 1
        chain[s] = x
        logp[s] = cur
    return chain, logp, accepted


if USE_NUMBA:
    _metropolis_jit = numba.njit(cache=True, nogil=True)(_metropolis_loop)

    def metropolis_numba(x0, n, inv_N, y, lo, hi, steps, log_u, text_form):
        return _metropolis_jit(x0, n, inv_N, y, lo, hi, steps, log_u, text_form,
                               _log_likelihood_jit)
else:
    metropolis_numba = None


def _log_likelihood_vec(x, n, inv_N, y, text_form):
    a, b, c, d, e, f = np.exp(x)
    mu = a * np.exp(-b * n) + c * np.exp(d * n) * inv_N
    var = (e * np.exp(f * n)) ** 2 if text_form else e * np.exp(f * n) * inv_N**2
    if not np.all(var > 0.0):
        return -np.inf
    return float(np.sum(-0.5 * np.log(2.0 * np.pi * var) - 0.5 * (y - mu) ** 2 / var))


def metropolis_numpy(x0, n, inv_N, y, lo, hi, steps, log_u, text_form):
    return _metropolis_loop(x0, n, inv_N, y, lo, hi, steps, log_u, text_form,
                            _log_likelihood_vec)


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "pauli_expval": (pauli_expval_numpy, pauli_expval_numba),
    "pauli_trace": (pauli_trace_numpy, pauli_trace_numba),
    "sample_indices": (sample_indices_numpy, sample_indices_numba),
    "site_trace_sums": (site_trace_sums_numpy, site_trace_sums_numba),
    "pair_class_hist": (pair_class_hist_numpy, pair_class_hist_numba),
    "exp_pair_sum": (exp_pair_sum_numpy, exp_pair_sum_numba),
    "purity_pair_sum": (purity_pair_sum_numpy, purity_pair_sum_numba),
    "metropolis": (metropolis_numpy, metropolis_numba),
}


def implementation(name: str, backend: str | None = None):
    """Return the kernel ``name`` for ``backend`` ("numba" or "numpy"; default: active)."""
    backend = backend or BACKEND
    numpy_fn, numba_fn = IMPLEMENTATIONS[name]
    if backend == "numpy":
        return numpy_fn
    if backend == "numba":
        if not USE_NUMBA:
            raise RuntimeError("numba backend is disabled in this process")
        return numba_fn
    raise ValueError(f"unknown backend {backend!r}")


pauli_expval = implementation("pauli_expval")
pauli_trace = implementation("pauli_trace")
sample_indices = implementation("sample_indices")
site_trace_sums = implementation("site_trace_sums")
exp_pair_sum = implementation("exp_pair_sum")
purity_pair_sum = implementation("purity_pair_sum")
metropolis = implementation("metropolis")
