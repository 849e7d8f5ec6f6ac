"""Shadow kernel between datasets and the Gram matrix built from it.

    log k(S, S') = tau / (N N') * sum_{n, n'} exp(gamma / L * sum_l Tr[sigma_l^(n) sigma'_l^(n')])

Kernel values are double exponentials and overflow quickly, so they are
kept as natural logs throughout.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .shadows import ShadowDataset


@dataclass(frozen=True)
class KernelParams:
    tau: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.gamma > 0):
            raise ValueError(f"kernel parameters must be positive, got tau={self.tau}, gamma={self.gamma}")


@dataclass(eq=False)
class KernelMatrix:
    log_entries: np.ndarray
    labels: np.ndarray
    params: KernelParams

    def __post_init__(self):
        self.log_entries = np.asarray(self.log_entries, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        M = self.log_entries.shape[0]
        if self.log_entries.shape != (M, M) or self.labels.shape != (M,):
            raise ValueError("kernel matrix must be square with one label per row")

    @property
    def size(self) -> int:
        return self.log_entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        """Linear-scale values; entries beyond double range become inf."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_entries)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.log_entries).copy()


def _check_pair(ds: ShadowDataset, ds2: ShadowDataset):
    if ds.num_sites != ds2.num_sites:
        raise ValueError(f"site count mismatch: {ds.num_sites} vs {ds2.num_sites}")
    if ds.num_shots == 0 or ds2.num_shots == 0:
        raise ValueError("kernel of an empty dataset is undefined")


def site_trace_table(ds: ShadowDataset, ds2: ShadowDataset) -> np.ndarray:
    """(N, N') table of site-averaged traces (1/L) sum_l Tr[sigma_l sigma'_l]."""
    _check_pair(ds, ds2)
    return _accel.site_trace_sums(ds.codes, ds2.codes) / ds.num_sites


def log_shadow_kernel(ds: ShadowDataset, ds2: ShadowDataset,
                      params: KernelParams = KernelParams()) -> float:
    _check_pair(ds, ds2)
    total = _accel.exp_pair_sum(ds.codes, ds2.codes, params.gamma / ds.num_sites)
    return params.tau * total / (ds.num_shots * float(ds2.num_shots))


def shadow_kernel(ds: ShadowDataset, ds2: ShadowDataset,
                  params: KernelParams = KernelParams()) -> float:
    """Linear-scale kernel value; may be inf where the log is finite."""
    log_k = log_shadow_kernel(ds, ds2, params)
    return math.exp(log_k) if log_k < 709.0 else math.inf


def build_kernel_matrix(datasets: Sequence[ShadowDataset], params: KernelParams = KernelParams(),
                        threads: int = 1) -> KernelMatrix:
    """Gram matrix over ``datasets``, labelled by their h_x values.

    Each upper-triangle entry is computed independently, so the result does
    not depend on ``threads``.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    L = datasets[0].num_sites
    if any(ds.num_sites != L for ds in datasets):
        raise ValueError("all datasets must share the same number of sites")
    M = len(datasets)
    codes = [ds.codes for ds in datasets]
    scale = params.gamma / L
    pairs = [(i, j) for i in range(M) for j in range(i, M)]

    def entry(pair):
        i, j = pair
        total = _accel.exp_pair_sum(codes[i], codes[j], scale)
        return params.tau * total / (len(codes[i]) * float(len(codes[j])))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(entry, pairs))
    else:
        values = [entry(p) for p in pairs]
    out = np.empty((M, M))
    for (i, j), v in zip(pairs, values):
        out[i, j] = out[j, i] = v
    return KernelMatrix(out, np.array([ds.h_x for ds in datasets]), params)


def write_kernel_csv(K: KernelMatrix, path) -> Path:
    """Log-kernel values; the header row and first column carry the h_x labels."""
    path = Path(path)
    buf = io.StringIO()
    buf.write("h_x," + ",".join(repr(float(h)) for h in K.labels) + "\n")
    for h, row in zip(K.labels, K.log_entries):
        buf.write(repr(float(h)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_kernel_csv(path, params: KernelParams = KernelParams()) -> KernelMatrix:
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    labels = np.array([float(x) for x in lines[0].split(",")[1:]])
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    if len(rows) != labels.size:
        raise ValueError("kernel file has a row count different from its label count")
    table = np.array(rows)
    if not np.array_equal(table[:, 0], labels):
        raise ValueError("kernel row labels do not match the header")
    return KernelMatrix(table[:, 1:], labels, params)
