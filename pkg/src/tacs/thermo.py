"""Observables and diagnostics: susceptibilities, magnetization, time traces,
and the kernel-diagonal criticality probe."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernel import KernelMatrix
from .shadows import ShadowDataset
from .spinsim import (SpectralDecomposition, TfimParams, apply_pauli_sum, diagonalize,
                      evolve_many, num_sites_of, parse_pauli)

AXES = "XYZ"
DEFAULT_OBSERVABLES = ("Z", "X", "ZZ", "energy")


def _axis(a: str) -> str:
    a = str(a).upper()
    if a not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {a!r}")
    return a


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


def _shadow_axis_values(ds: ShadowDataset, axis: str) -> np.ndarray:
    """Per-shot, per-site unbiased single-site estimates 3 s 1{basis = axis}."""
    hit = ds.bases == AXES.index(axis)
    return np.where(hit, 3.0 * (1.0 - 2.0 * ds.bits), 0.0)


def susceptibility(obj, a: str, b: str, num_sites: int | None = None):
    """chi_ab = (1/L^2) sum_{i,j} <sigma^a_i sigma^b_j>, including i = j.

    ``obj`` is a state vector, a density matrix or a ShadowDataset.  Shadow
    input is limited to a = b and returns an :class:`Estimate`.
    """
    a, b = _axis(a), _axis(b)
    if isinstance(obj, ShadowDataset):
        if a != b:
            raise ValueError("shadow susceptibilities are only available for a = b")
        if obj.num_shots < 2:
            raise ValueError("need at least two shots")
        L = obj.num_sites
        v = _shadow_axis_values(obj, a)
        per_shot = (L + v.sum(axis=1) ** 2 - (v * v).sum(axis=1)) / L**2
        return Estimate(float(per_shot.mean()), float(per_shot.std(ddof=1) / np.sqrt(obj.num_shots)))
    arr = np.asarray(obj, dtype=np.complex128)
    L = num_sites if num_sites is not None else num_sites_of(arr.shape[0])
    if arr.ndim == 1:
        left = apply_pauli_sum(a, arr, L)
        right = apply_pauli_sum(b, arr, L)
        return float(np.vdot(left, right).real) / L**2
    prod = apply_pauli_sum(a, apply_pauli_sum(b, arr, L), L)
    return float(np.trace(prod).real) / L**2


def magnetization_z(obj, num_sites: int | None = None):
    """(1/L) sum_i <Z_i>; an :class:`Estimate` for shadow input."""
    if isinstance(obj, ShadowDataset):
        per_shot = _shadow_axis_values(obj, "Z").mean(axis=1)
        err = per_shot.std(ddof=1) / np.sqrt(obj.num_shots) if obj.num_shots > 1 else np.nan
        return Estimate(float(per_shot.mean()), float(err))
    arr = np.asarray(obj, dtype=np.complex128)
    L = num_sites if num_sites is not None else num_sites_of(arr.shape[0])
    k = np.arange(arr.shape[0])
    z = L - 2.0 * np.bitwise_count(k.astype(np.uint64)).astype(np.float64)
    p = np.abs(arr) ** 2 if arr.ndim == 1 else np.diag(arr).real
    return float(np.dot(p, z)) / L


@dataclass(eq=False)
class SusceptibilityTable:
    h_x: np.ndarray
    chi: dict[str, np.ndarray]
    source: str = "exact"
    stderr: dict[str, np.ndarray] = field(default_factory=dict)


def write_chi_csv(table: SusceptibilityTable, path) -> Path:
    cols = ["h_x"] + [f"chi_{a}{a}" for a in "xyz"]
    if table.stderr:
        cols += [f"err_{a}{a}" for a in "xyz"]
    buf = io.StringIO()
    buf.write(f"# source={table.source}\n" + ",".join(cols) + "\n")
    for i, h in enumerate(table.h_x):
        vals = [h] + [table.chi[a][i] for a in "xyz"]
        if table.stderr:
            vals += [table.stderr[a][i] for a in "xyz"]
        buf.write(",".join(repr(float(v)) for v in vals) + "\n")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# Time traces
# --------------------------------------------------------------------------

@dataclass(eq=False)
class EquilibrationTrace:
    times: np.ndarray
    values: dict[str, np.ndarray]
    initial_state: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trace times must be strictly increasing")
        for k, v in self.values.items():
            if len(v) != self.times.size:
                raise ValueError(f"observable {k!r} has the wrong length")

    @property
    def labels(self) -> list[str]:
        return list(self.values)


def _pauli_expvals(states: np.ndarray, op: str, L: int) -> np.ndarray:
    """<psi|P|psi> for each row of ``states``."""
    flip, zy, ny = parse_pauli(op, L)
    k = np.arange(states.shape[1])
    sign = 1.0 - 2.0 * (np.bitwise_count((k & zy).astype(np.uint64)) & 1)
    vals = np.einsum("tk,tk->t", states[:, k ^ flip].conj(), states * sign)
    return (1j**ny * vals).real


def _site_average(states, L, template: str, sites: Sequence[Sequence[int]]) -> np.ndarray:
    total = np.zeros(states.shape[0])
    for group in sites:
        total += _pauli_expvals(states, {s: template for s in group}, L)
    return total / len(sites)


def equilibration_trace(psi0, params: TfimParams, spec: SpectralDecomposition | None = None,
                        observables: Sequence[str] = DEFAULT_OBSERVABLES, times=None,
                        initial_state: str = "") -> EquilibrationTrace:
    """Exact expectation traces along exp(-iHt)|psi0>.

    ``Z`` and ``X`` are site averages, ``ZZ`` is the bond average and
    ``energy`` is <H>.  The default grid is 256 points over [0, 25].
    """
    spec = spec or diagonalize(params)
    L = params.num_sites
    times = np.linspace(0.0, 25.0, 256) if times is None else np.asarray(times, dtype=np.float64)
    states = evolve_many(psi0, spec, times)
    bonds = params.bonds
    values: dict[str, np.ndarray] = {}
    for name in observables:
        if name in ("Z", "X", "Y"):
            values[name] = _site_average(states, L, name, [[i] for i in range(L)])
        elif name == "ZZ":
            if not bonds:
                raise ValueError("ZZ needs at least one bond")
            values[name] = _site_average(states, L, "Z", bonds)
        elif name == "energy":
            zz = sum(_pauli_expvals(states, {i: "Z", j: "Z"}, L) for i, j in bonds) if bonds else 0.0
            x = sum(_pauli_expvals(states, {i: "X"}, L) for i in range(L))
            values[name] = -zz + params.h_x * x
        else:
            raise ValueError(f"unknown observable {name!r}")
    return EquilibrationTrace(times, values, initial_state)


def write_trace_csv(trace: EquilibrationTrace, path) -> Path:
    buf = io.StringIO()
    if trace.initial_state:
        buf.write(f"# initial_state={trace.initial_state}\n")
    buf.write(",".join(["time"] + trace.labels) + "\n")
    for i, t in enumerate(trace.times):
        buf.write(",".join(repr(float(v)) for v in [t] + [trace.values[k][i] for k in trace.labels]) + "\n")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# Kernel diagonal
# --------------------------------------------------------------------------

@dataclass(eq=False)
class KernelDiagnostics:
    h_x: np.ndarray
    log_diagonal: np.ndarray
    rows: dict[str, np.ndarray]
    argmax_h_x: float | None
    half_max_region: tuple[float, float] | None


def kernel_criticality_diagnostics(K: KernelMatrix, flat_tol: float = 1e-12) -> KernelDiagnostics:
    """Log-diagonal against h_x, three representative rows and the diagonal peak.

    The peak region is where the log-diagonal exceeds the midpoint between
    its minimum and maximum.
    """
    order = np.argsort(K.labels, kind="stable")
    h = K.labels[order]
    logK = K.log_entries[np.ix_(order, order)]
    diag = np.diag(logK).copy()
    lo, hi = diag.min(), diag.max()
    if hi - lo <= flat_tol * max(1.0, abs(hi)):
        peak = None
        region = None
        peak_idx = len(h) // 2
    else:
        peak_idx = int(np.argmax(diag))
        peak = float(h[peak_idx])
        above = diag >= lo + 0.5 * (hi - lo)
        a = b = peak_idx
        while a > 0 and above[a - 1]:
            a -= 1
        while b < len(h) - 1 and above[b + 1]:
            b += 1
        region = (float(h[a]), float(h[b]))
    rows = {"lowest": logK[0].copy(), "peak": logK[peak_idx].copy(), "highest": logK[-1].copy()}
    return KernelDiagnostics(h, diag, rows, peak, region)


def write_kernel_diag_csv(diag: KernelDiagnostics, path) -> Path:
    buf = io.StringIO()
    peak = "none" if diag.argmax_h_x is None else repr(diag.argmax_h_x)
    region = "none" if diag.half_max_region is None else \
        f"{diag.half_max_region[0]!r}:{diag.half_max_region[1]!r}"
    buf.write(f"# argmax_h_x={peak} half_max_region={region}\n")
    buf.write("h_x,log_diagonal,row_lowest,row_peak,row_highest\n")
    for i, h in enumerate(diag.h_x):
        vals = [h, diag.log_diagonal[i], diag.rows["lowest"][i], diag.rows["peak"][i],
                diag.rows["highest"][i]]
        buf.write(",".join(repr(float(v)) for v in vals) + "\n")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path
