"""Randomized Pauli measurements, classical shadows and time-averaged shadows.

A shot measures every site in a uniformly random Pauli basis.  The
snapshot estimator of a site is ``3|s><s| - I`` for the post-measurement
single-qubit state ``|s>``; averages of tensor products of these
estimators give unbiased estimates of reduced density matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import _accel, rng
from .errors import ResourceGuardError
from .spinsim import SpectralDecomposition, check_state, evolve_many, guard_sites, num_sites_of

BASES = "XYZ"
SOURCES = ("ground", "dynamics")
MAX_RDM_SITES = 6
MAX_CHANNEL_SITES = 6
FORMAT_TAG = "#tacs-v1"
# Each shot stream uses draws 0..L-1 for bases, L for the outcome, L+1 for the time.
_BATCH_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class Snapshot:
    bases: str
    outcomes: tuple[int, ...]
    time: float | None
    h_x: float

    def __post_init__(self):
        if len(self.bases) != len(self.outcomes):
            raise ValueError("bases and outcomes must have the same length")


@dataclass(eq=False)
class ShadowDataset:
    """Shots stored column-wise.

    ``bases`` holds 0/1/2 for X/Y/Z and ``bits`` holds 0 for outcome +1 and
    1 for outcome -1, both as (N, L) uint8 arrays.  ``times`` is NaN for
    static (ground) sources.
    """

    bases: np.ndarray
    bits: np.ndarray
    times: np.ndarray
    h_x: float
    source: str = "ground"
    time_window: tuple[float, float] | None = None
    master_seed: int = 0
    shot_indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.bases = np.ascontiguousarray(self.bases, dtype=np.uint8)
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.bases.ndim != 2 or self.bases.shape != self.bits.shape:
            raise ValueError("bases and bits must be (N, L) arrays of equal shape")
        if self.times.shape != (self.bases.shape[0],):
            raise ValueError("times must have one entry per shot")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.bases.size and (self.bases.max() > 2 or self.bits.max() > 1):
            raise ValueError("bases must be in {0,1,2} and bits in {0,1}")
        if self.shot_indices is None:
            self.shot_indices = np.arange(self.bases.shape[0], dtype=np.int64)
        if self.source == "dynamics":
            if self.time_window is None:
                raise ValueError("dynamics datasets need a time window")
            t0, t1 = self.time_window
            if self.times.size and not (np.all(self.times >= t0) and np.all(self.times <= t1)):
                raise ValueError("sample times fall outside the time window")

    @property
    def num_shots(self) -> int:
        return self.bases.shape[0]

    @property
    def num_sites(self) -> int:
        return self.bases.shape[1]

    @property
    def codes(self) -> np.ndarray:
        """Per-site single-qubit state codes 2*basis + bit, in 0..5."""
        return (2 * self.bases + self.bits).astype(np.uint8)

    def __len__(self) -> int:
        return self.num_shots

    def __getitem__(self, i: int) -> Snapshot:
        t = self.times[i]
        return Snapshot(
            bases="".join(BASES[b] for b in self.bases[i]),
            outcomes=tuple(1 - 2 * int(x) for x in self.bits[i]),
            time=None if math.isnan(t) else float(t),
            h_x=self.h_x,
        )

    def __iter__(self) -> Iterator[Snapshot]:
        return (self[i] for i in range(self.num_shots))

    def head(self, n: int) -> "ShadowDataset":
        """The first ``n`` shots as a dataset with the same metadata."""
        return self.slice(0, n)

    def slice(self, start: int, stop: int) -> "ShadowDataset":
        return ShadowDataset(self.bases[start:stop], self.bits[start:stop], self.times[start:stop],
                             self.h_x, self.source, self.time_window, self.master_seed,
                             self.shot_indices[start:stop])

    def same_as(self, other: "ShadowDataset") -> bool:
        return (
            self.h_x == other.h_x
            and self.source == other.source
            and self.time_window == other.time_window
            and self.master_seed == other.master_seed
            and np.array_equal(self.bases, other.bases)
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.times, other.times, equal_nan=True)
            and np.array_equal(self.shot_indices, other.shot_indices)
        )


def _basis_codes(bases) -> np.ndarray:
    if isinstance(bases, str):
        bases = bases.upper()
        bad = set(bases) - set(BASES)
        if bad:
            raise ValueError(f"unknown measurement bases {sorted(bad)}")
        return np.array([BASES.index(b) for b in bases], dtype=np.uint8)
    arr = np.asarray(bases)
    if arr.dtype.kind in "US":
        return _basis_codes("".join(arr.astype(str)))
    return arr.astype(np.uint8)


def _bits_of(indices: np.ndarray, num_sites: int) -> np.ndarray:
    return ((indices[:, None] >> np.arange(num_sites)) & 1).astype(np.uint8)


def born_sample(psi, bases, rng_stream) -> tuple[int, ...]:
    """One product-basis measurement of ``psi``; outcomes as +1/-1 per site.

    ``rng_stream`` is a ``numpy.random.Generator`` (one uniform is drawn) or
    a float in [0, 1) used directly as the uniform.
    """
    psi = check_state(psi)
    L = num_sites_of(psi.shape[0])
    codes = _basis_codes(bases)
    if codes.shape != (L,):
        raise ValueError(f"need {L} bases, got {codes.shape[0]}")
    u = rng_stream.random() if isinstance(rng_stream, np.random.Generator) else float(rng_stream)
    idx = _accel.sample_indices(psi[None, :], codes[None, :], np.array([u]))
    return tuple(1 - 2 * int(b) for b in _bits_of(idx, L)[0])


def _shot_draws(master_seed: int, start: int, stop: int, num_sites: int, extra: int = 2):
    seeds = rng.child_seeds(master_seed, np.arange(start, stop))
    return rng.uniforms(seeds, num_sites + extra)


def _batch_size(dim: int) -> int:
    return max(1, _BATCH_AMPLITUDES // dim)


def sample_cs(psi, num_shots: int, master_seed: int, h_x: float,
              protocol: str = "pauli") -> ShadowDataset:
    """Classical-shadow dataset of a fixed state.

    ``protocol="pauli"`` draws each site's basis uniformly from X, Y, Z;
    ``protocol="z"`` measures every site in Z (computational-basis data).
    """
    psi = check_state(psi)
    L = guard_sites(num_sites_of(psi.shape[0]))
    if num_shots < 1:
        raise ValueError("need at least one shot")
    if protocol not in ("pauli", "z"):
        raise ValueError(f"unknown protocol {protocol!r}")
    seed = rng.check_seed(master_seed)
    bases = np.empty((num_shots, L), dtype=np.uint8)
    bits = np.empty((num_shots, L), dtype=np.uint8)
    step = _batch_size(psi.shape[0])
    for start in range(0, num_shots, step):
        stop = min(num_shots, start + step)
        u = _shot_draws(seed, start, stop, L)
        b = np.floor(3.0 * u[:, :L]).astype(np.uint8) if protocol == "pauli" else \
            np.full((stop - start, L), 2, dtype=np.uint8)
        states = np.broadcast_to(psi, (stop - start, psi.shape[0]))
        idx = _accel.sample_indices(np.ascontiguousarray(states), b, u[:, L])
        bases[start:stop] = b
        bits[start:stop] = _bits_of(idx, L)
    return ShadowDataset(bases, bits, np.full(num_shots, np.nan), float(h_x),
                         "ground", None, seed)


def sample_tacs(psi0, spec: SpectralDecomposition, window: Sequence[float], num_shots: int,
                master_seed: int, h_x: float) -> ShadowDataset:
    """Time-averaged classical shadows: each shot at its own uniform time in ``window``."""
    psi0 = check_state(psi0)
    L = guard_sites(spec.num_sites)
    t0, t1 = (float(x) for x in window)
    if not (t1 > t0 >= 0):
        raise ValueError(f"invalid time window [{t0}, {t1}]; need t1 > t0 >= 0")
    if num_shots < 1:
        raise ValueError("need at least one shot")
    seed = rng.check_seed(master_seed)
    bases = np.empty((num_shots, L), dtype=np.uint8)
    bits = np.empty((num_shots, L), dtype=np.uint8)
    times = np.empty(num_shots)
    step = _batch_size(spec.dim)
    for start in range(0, num_shots, step):
        stop = min(num_shots, start + step)
        u = _shot_draws(seed, start, stop, L)
        t = t0 + (t1 - t0) * u[:, L + 1]
        b = np.floor(3.0 * u[:, :L]).astype(np.uint8)
        states = evolve_many(psi0, spec, t)
        idx = _accel.sample_indices(states, b, u[:, L])
        bases[start:stop] = b
        bits[start:stop] = _bits_of(idx, L)
        times[start:stop] = t
    return ShadowDataset(bases, bits, times, float(h_x), "dynamics", (t0, t1), seed)


def maximally_mixed_cs(num_sites: int, num_shots: int, master_seed: int) -> ShadowDataset:
    """Shadow data of I/2^L: every basis and every outcome is uniform."""
    L = guard_sites(num_sites)
    seed = rng.check_seed(master_seed)
    u = _shot_draws(seed, 0, num_shots, L, extra=L)
    bases = np.floor(3.0 * u[:, :L]).astype(np.uint8)
    bits = (u[:, L:2 * L] >= 0.5).astype(np.uint8)
    return ShadowDataset(bases, bits, np.full(num_shots, np.nan), float("nan"),
                         "ground", None, seed)


# --------------------------------------------------------------------------
# Estimators
# --------------------------------------------------------------------------

def _projectors() -> np.ndarray:
    """(6, 2, 2) projectors |s><s| indexed by code 2*basis + bit."""
    kets = np.array([
        [1, 1], [1, -1],          # X: |+>, |->
        [1, 1j], [1, -1j],        # Y: |+i>, |-i>
        [np.sqrt(2), 0], [0, np.sqrt(2)],  # Z: |0>, |1>
    ], dtype=np.complex128) / np.sqrt(2)
    return np.einsum("ca,cb->cab", kets, kets.conj())


PROJECTORS = _projectors()
ESTIMATORS = 3.0 * PROJECTORS - np.eye(2)


def snapshot_estimator(snapshot: Snapshot, site: int) -> np.ndarray:
    """3|s><s| - I for one site of a snapshot."""
    if not 0 <= site < len(snapshot.bases):
        raise IndexError(f"site {site} out of range for {len(snapshot.bases)} sites")
    code = 2 * BASES.index(snapshot.bases[site]) + (snapshot.outcomes[site] == -1)
    return ESTIMATORS[code].copy()


def _check_sites(ds: ShadowDataset, sites: Sequence[int], limit: int) -> list[int]:
    sites = [int(s) for s in sites]
    if not sites:
        raise ValueError("subsystem must contain at least one site")
    if len(set(sites)) != len(sites) or any(not 0 <= s < ds.num_sites for s in sites):
        raise ValueError(f"invalid subsystem {sites} for {ds.num_sites} sites")
    if len(sites) > limit:
        raise ResourceGuardError(f"subsystem of {len(sites)} sites exceeds the limit of {limit}")
    return sites


def _histogram(codes: np.ndarray) -> np.ndarray:
    """Counts of local records as a (6,)*n tensor, axes ordered sites[n-1] .. sites[0]."""
    n = codes.shape[1]
    flat = codes.astype(np.int64) @ (6 ** np.arange(n, dtype=np.int64))
    return np.bincount(flat, minlength=6**n).astype(np.float64).reshape((6,) * n)


def reconstruct_rdm(ds: ShadowDataset, sites: Sequence[int]) -> np.ndarray:
    """(1/N) sum_n kron of site estimators; bit j of the index is ``sites[j]``.

    Hermitian with unit trace by construction; not necessarily positive.
    """
    sites = _check_sites(ds, sites, MAX_RDM_SITES)
    if ds.num_shots == 0:
        raise ValueError("empty dataset")
    n = len(sites)
    w = _histogram(ds.codes[:, sites]) / ds.num_shots
    E = ESTIMATORS.reshape(6, 4)
    for axis in range(n):
        w = np.tensordot(w, E, axes=([0], [0]))  # consumes the leading code axis
    w = w.reshape((2, 2) * n)
    # axes are (r_{n-1}, c_{n-1}, ..., r_0, c_0); gather rows then columns.
    w = np.transpose(w, list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    return w.reshape(1 << n, 1 << n)


def _channel_guard(rho: np.ndarray, num_sites: int | None) -> int:
    L = num_sites if num_sites is not None else num_sites_of(rho.shape[0])
    if L > MAX_CHANNEL_SITES:
        raise ResourceGuardError(
            f"shadow channel on {L} sites exceeds the limit of {MAX_CHANNEL_SITES}"
        )
    return L


def _trace_out_pad(rho: np.ndarray, subset: tuple[int, ...], L: int) -> np.ndarray:
    """Tr_subset(rho) with identities restored on the traced sites."""
    if not subset:
        return rho
    # tensor axis a (row) and L + a (column) belong to site L - 1 - a
    traced = {L - 1 - s for s in subset}
    rows = [chr(ord("a") + a) for a in range(L)]
    cols = [chr(ord("A") + a) for a in range(L)]
    src = "".join(rows) + "".join(rows[a] if a in traced else cols[a] for a in range(L))
    red_idx = "".join(rows[a] for a in range(L) if a not in traced) + \
        "".join(cols[a] for a in range(L) if a not in traced)
    red = np.einsum(f"{src}->{red_idx}", rho.reshape((2,) * (2 * L)))
    eyes = [np.eye(2)] * len(traced)
    spec = ",".join([red_idx] + [rows[a] + cols[a] for a in sorted(traced)])
    out = np.einsum(f"{spec}->{''.join(rows) + ''.join(cols)}", red, *eyes)
    return out.reshape(rho.shape)


def _subsets(L: int):
    for k in range(L + 1):
        for subset in itertools.combinations(range(L), k):
            yield subset


def shadow_channel(rho, num_sites: int | None = None) -> np.ndarray:
    """S[rho] = 3^-L sum over site subsets T of Tr_T(rho) (x) I_T."""
    rho = np.asarray(rho)
    L = _channel_guard(rho, num_sites)
    out = np.zeros(rho.shape, dtype=np.result_type(rho, np.float64))
    for subset in _subsets(L):
        out += _trace_out_pad(rho, subset, L)
    return out / 3.0**L


def shadow_channel_inverse(S, num_sites: int | None = None) -> np.ndarray:
    """rho = sum over T of 3^(L-|T|) (-1)^|T| Tr_T(S) (x) I_T."""
    S = np.asarray(S)
    L = _channel_guard(S, num_sites)
    out = np.zeros(S.shape, dtype=np.result_type(S, np.float64))
    for subset in _subsets(L):
        k = len(subset)
        out += (3.0 ** (L - k)) * (-1) ** k * _trace_out_pad(S, subset, L)
    return out


def estimate_purity(ds: ShadowDataset, sites: Sequence[int],
                    normalization: str = "unbiased") -> float:
    """Cross-shot purity estimate of the reduced state on ``sites``.

    Sums prod_l Tr[sigma_l^(n) sigma_l^(n')] over ordered pairs n != n' and
    divides by N(N-1) ("unbiased") or N^2 ("biased").
    """
    sites = [int(s) for s in sites]
    if not sites or len(set(sites)) != len(sites) or any(not 0 <= s < ds.num_sites for s in sites):
        raise ValueError(f"invalid subsystem {sites} for {ds.num_sites} sites")
    N = ds.num_shots
    if N < 2:
        raise ValueError("purity estimation needs at least two shots")
    cross = _accel.purity_pair_sum(np.ascontiguousarray(ds.codes[:, sites]))
    if normalization == "unbiased":
        return cross / (N * (N - 1.0))
    if normalization == "biased":
        return cross / (N * float(N))
    raise ValueError(f"normalization must be 'unbiased' or 'biased', got {normalization!r}")


def clamp_purity(gamma: float, num_sites: int) -> tuple[float, bool]:
    """Replace a non-positive purity estimate by 2^(-2n); report whether it was clamped."""
    if gamma > 0:
        return float(gamma), False
    return 2.0 ** (-2 * num_sites), True


def renyi2(gamma: float) -> float:
    """Second Renyi entropy in bits, -log2(gamma)."""
    if not gamma > 0:
        raise ValueError(f"purity must be positive, got {gamma}; clamp it first")
    return -math.log2(gamma)


def shots_required(n: int, gamma: float, eps: float, delta: float) -> int:
    """Shot count N >= 4^(n+1) gamma / (eps^2 delta) for additive error eps w.p. 1 - delta."""
    if n < 0 or not gamma > 0 or not eps > 0 or not 0 < delta <= 1:
        raise ValueError("need n >= 0, gamma > 0, eps > 0 and 0 < delta <= 1")
    return math.ceil(4.0 ** (n + 1) * gamma / (eps * eps * delta))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def dumps_dataset(ds: ShadowDataset) -> str:
    if ds.time_window is None:
        t0 = t1 = "-"
    else:
        t0, t1 = (_fmt_float(x) for x in ds.time_window)
    header = (f"{FORMAT_TAG} L={ds.num_sites} source={ds.source} h_x={_fmt_float(ds.h_x)} "
              f"T0={t0} T1={t1} seed={ds.master_seed} N={ds.num_shots}")
    letters = np.frombuffer(BASES.encode(), dtype=np.uint8)[ds.bases]
    digits = (ds.bits + ord("0")).astype(np.uint8)
    lines = [header]
    for i in range(ds.num_shots):
        t = "-" if math.isnan(ds.times[i]) else format(ds.times[i], ".17g")
        lines.append(f"{ds.shot_indices[i]},{t},{letters[i].tobytes().decode()},"
                     f"{digits[i].tobytes().decode()}")
    return "\n".join(lines) + "\n"


def write_dataset(ds: ShadowDataset, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(ds))
    return path


def _parse_header(line: str) -> dict[str, str]:
    parts = line.split()
    if not parts or parts[0] != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} dataset header: {line[:40]!r}")
    fields = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed header field {item!r}")
        fields[key] = value
    missing = {"L", "source", "h_x", "T0", "T1", "seed", "N"} - fields.keys()
    if missing:
        raise ValueError(f"dataset header is missing {sorted(missing)}")
    return fields


def loads_dataset(text: str) -> ShadowDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError("empty dataset file")
    head = _parse_header(lines[0])
    L, N = int(head["L"]), int(head["N"])
    rows = lines[1:]
    if len(rows) != N:
        raise ValueError(f"header announces {N} shots but {len(rows)} rows follow")
    window = None if head["T0"] == "-" else (float(head["T0"]), float(head["T1"]))
    index = np.empty(N, dtype=np.int64)
    times = np.empty(N)
    bases = np.empty((N, L), dtype=np.uint8)
    bits = np.empty((N, L), dtype=np.uint8)
    lookup = np.full(256, 255, dtype=np.uint8)
    lookup[[ord(c) for c in BASES]] = [0, 1, 2]
    for i, row in enumerate(rows):
        fields = row.split(",")
        if len(fields) != 4 or len(fields[2]) != L or len(fields[3]) != L:
            raise ValueError(f"malformed dataset row {i + 2}: {row!r}")
        index[i] = int(fields[0])
        times[i] = math.nan if fields[1] == "-" else float(fields[1])
        bases[i] = lookup[np.frombuffer(fields[2].encode(), dtype=np.uint8)]
        bits[i] = np.frombuffer(fields[3].encode(), dtype=np.uint8) - ord("0")
    if (bases == 255).any() or (bits > 1).any():
        raise ValueError("dataset rows contain invalid bases or outcome bits")
    return ShadowDataset(bases, bits, times, float(head["h_x"]), head["source"], window,
                         int(head["seed"]), index)


def read_dataset(path) -> ShadowDataset:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())
