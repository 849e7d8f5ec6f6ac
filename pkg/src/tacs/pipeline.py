"""Run configuration, experiment stages and the artifact manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__, _accel, diffmap, inference, kernel, rng, shadows, spinsim, thermo
from .errors import ConfigError, ResourceGuardError

EXPERIMENTS = ("ground-cs", "ground-z", "tacs-diffmap", "entropy-bayes", "exponent-fit")
MANIFEST = "manifest.json"
CONFIG_FILE = "config.txt"
DATASET_DIR = "datasets"


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    count: int
    spacing: str = "log"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.lo, self.hi, self.count)
        return np.linspace(self.lo, self.hi, self.count)

    def __str__(self) -> str:
        return f"{self.lo!r}:{self.hi!r}:{self.count}:{self.spacing}"


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    L: int = 10
    h_grid: Grid = Grid(0.1, 10.0, 40, "log")
    shots: int = 500
    window: tuple[float, float] = (5.0, 25.0)
    tau: float = 1.0
    gamma: float = 1.0
    diffusion_t: int = 1
    retained: int = 0
    seed: int = 0
    initial_state: str = "ghz"
    extra_h: tuple[float, ...] = ()
    max_block: int = 5
    shot_subsets: tuple[int, ...] = (100, 1000, 10000)
    normalization: str = "unbiased"
    sigma_form: str = "caption"
    mcmc_steps: int = 20000
    c_samples: int = 2000
    fit_entropy_n: int = 2
    threads: int = 1
    out: str = "runs/out"

    @property
    def h_values(self) -> np.ndarray:
        return np.concatenate([self.h_grid.values(), np.asarray(self.extra_h, dtype=np.float64)])

    def canonical(self) -> str:
        """Serialization of everything that determines the artifacts."""
        lines = []
        for f in fields(self):
            if f.name in ("out", "threads"):
                continue
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# Defaults that differ per experiment; applied before file values and flags.
PRESETS: dict[str, dict[str, object]] = {
    "ground-cs": {"L": 8, "h_grid": Grid(0.1, 100.0, 40, "log"), "shots": 200},
    "ground-z": {"L": 8, "h_grid": Grid(0.1, 100.0, 40, "log"), "shots": 200},
    "tacs-diffmap": {"L": 10, "h_grid": Grid(0.1, 10.0, 40, "log"), "shots": 500},
    "exponent-fit": {"L": 10, "h_grid": Grid(0.1, 10.0, 40, "log"), "shots": 500},
    "entropy-bayes": {"L": 10, "h_grid": Grid(0.1, 3.3, 35, "log"), "shots": 10000,
                      "extra_h": (1.0,)},
}


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_grid(text: str) -> Grid:
    parts = [p.strip() for p in text.replace(",", ":").split(":")]
    if len(parts) not in (3, 4):
        raise ValueError("grid must be min:max:count[:log|linear]")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    spacing = parts[3] if len(parts) == 4 else "log"
    if spacing not in ("log", "linear"):
        raise ValueError(f"grid spacing must be log or linear, got {spacing!r}")
    if count < 2:
        raise ValueError("grid count must be >= 2")
    if not hi > lo or (spacing == "log" and lo <= 0):
        raise ValueError("grid needs max > min (and min > 0 for log spacing)")
    return Grid(lo, hi, count, spacing)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _window(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("window must be T0,T1")
    return vals[0], vals[1]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


PARSERS: dict[str, Callable[[str], object]] = {
    "experiment": _choice(*EXPERIMENTS),
    "L": int, "h_grid": _parse_grid, "shots": int, "window": _window,
    "tau": float, "gamma": float, "diffusion_t": int, "retained": int,
    "seed": lambda s: rng.check_seed(int(s, 0)),
    "initial_state": _choice("ghz", "ferro"),
    "extra_h": _floats, "max_block": int, "shot_subsets": _ints,
    "normalization": _choice("unbiased", "biased"),
    "sigma_form": _choice("caption", "text"),
    "mcmc_steps": int, "c_samples": int, "fit_entropy_n": int,
    "threads": int, "out": str,
}


def _parse_lines(text: str, source: str) -> dict[str, tuple[str, str]]:
    """key -> (raw value, location) from ``key = value`` lines."""
    found: dict[str, tuple[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source} line {lineno}"
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if key not in PARSERS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in found:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        found[key] = (value, where)
    return found


def parse_config(text: str = "", overrides: Sequence[str] | dict[str, str] = (),
                 source: str = "config") -> RunConfig:
    """Build a RunConfig from ``key = value`` text, then apply overrides.

    ``overrides`` holds ``key=value`` strings (or a mapping) that replace
    file values.  Unknown keys and unparsable values are errors.
    """
    found = _parse_lines(text, source)
    items = overrides.items() if isinstance(overrides, dict) else \
        [_split_override(o) for o in overrides]
    for key, value in items:
        if key not in PARSERS:
            raise ConfigError(f"override: unknown key {key!r}")
        found[key] = (str(value).strip(), f"override {key}")
    if "experiment" not in found or not found["experiment"][0]:
        raise ConfigError("missing required field 'experiment' "
                          f"(one of {', '.join(EXPERIMENTS)})")
    values: dict[str, object] = {}
    for key, (raw, where) in found.items():
        try:
            values[key] = PARSERS[key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    preset = dict(PRESETS[values["experiment"]])
    preset.update(values)
    cfg = RunConfig(**preset)
    validate(cfg)
    return cfg


def _split_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} must look like key=value")
    return key.strip(), value


def validate(cfg: RunConfig) -> None:
    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    need(cfg.L >= 1, "L must be >= 1")
    if cfg.L > spinsim.MAX_SITES:
        raise ResourceGuardError(f"L={cfg.L} exceeds the {spinsim.MAX_SITES}-site simulator limit")
    if cfg.max_block > shadows.MAX_RDM_SITES:
        raise ResourceGuardError(f"max_block={cfg.max_block} exceeds the "
                                 f"{shadows.MAX_RDM_SITES}-site reduced-state limit")
    need(cfg.shots >= 2, "shots must be >= 2")
    need(cfg.window[1] > cfg.window[0] >= 0, "window must satisfy T1 > T0 >= 0")
    need(cfg.tau > 0 and cfg.gamma > 0, "tau and gamma must be positive")
    need(cfg.diffusion_t >= 1, "diffusion_t must be >= 1")
    need(cfg.retained >= 0, "retained must be >= 0 (0 picks it from the spectral gap)")
    if "entropy" in PIPELINES[cfg.experiment]:
        need(1 <= cfg.max_block <= min(cfg.L, shadows.MAX_RDM_SITES),
             f"max_block must be in 1..{min(cfg.L, shadows.MAX_RDM_SITES)}")
        need(bool(cfg.shot_subsets) and all(2 <= n <= cfg.shots for n in cfg.shot_subsets),
             "shot_subsets must be nonempty and lie in 2..shots")
    need(cfg.mcmc_steps >= 10, "mcmc_steps must be >= 10")
    need(cfg.threads >= 1, "threads must be >= 1")
    if "fit" in PIPELINES[cfg.experiment]:
        need(1 <= cfg.fit_entropy_n <= min(cfg.L, shadows.MAX_RDM_SITES), "fit_entropy_n out of range")
    need(all(h >= 0 for h in cfg.h_values), "h_x values must be nonnegative")


# --------------------------------------------------------------------------
# File helpers
# --------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def dataset_paths(out: Path) -> list[Path]:
    paths = sorted((out / DATASET_DIR).glob("*.txt"))
    if not paths:
        raise ConfigError(f"no datasets found under {out / DATASET_DIR}")
    return paths


def load_datasets(out: Path) -> list[shadows.ShadowDataset]:
    return [shadows.read_dataset(p) for p in dataset_paths(out)]


# --------------------------------------------------------------------------
# Stages; each returns the paths it wrote
# --------------------------------------------------------------------------

def broken_sign(index: int) -> str:
    """Alternate the symmetry-broken branch along the grid so both ordered clusters appear."""
    return "up" if index % 2 == 0 else "down"


def stage_ground(cfg: RunConfig, out: Path) -> list[Path]:
    protocol = "z" if cfg.experiment == "ground-z" else "pauli"
    (out / DATASET_DIR).mkdir(parents=True, exist_ok=True)
    hs = cfg.h_values

    def job(i):
        params = spinsim.TfimParams(cfg.L, float(hs[i]))
        spec = spinsim.diagonalize(params)
        sign = broken_sign(i)
        psi = spinsim.ground_state(params, broken=sign, spec=spec)
        ds = shadows.sample_cs(psi, cfg.shots, rng.derive_seed(cfg.seed, "shots", i), hs[i], protocol)
        path = shadows.write_dataset(ds, out / DATASET_DIR / f"{i:03d}.txt")
        chi = [thermo.susceptibility(psi, a, a, cfg.L) for a in "xyz"]
        return path, (i, hs[i], sign if hs[i] < 1 else "none", thermo.magnetization_z(psi, cfg.L), *chi)

    results = _map(job, range(len(hs)), cfg.threads)
    rows = [r for _, r in results]
    points = _write_rows(out / "points.csv",
                         ["index", "h_x", "broken", "m_z", "chi_xx", "chi_yy", "chi_zz"], rows)
    return [p for p, _ in results] + [points]


def stage_tacs(cfg: RunConfig, out: Path) -> list[Path]:
    (out / DATASET_DIR).mkdir(parents=True, exist_ok=True)
    hs = cfg.h_values
    psi0 = spinsim.ghz_state(cfg.L) if cfg.initial_state == "ghz" else spinsim.ferro_state(cfg.L)

    def job(i):
        spec = spinsim.diagonalize(spinsim.TfimParams(cfg.L, float(hs[i])))
        ds = shadows.sample_tacs(psi0, spec, cfg.window, cfg.shots,
                                 rng.derive_seed(cfg.seed, "shots", i), hs[i])
        return shadows.write_dataset(ds, out / DATASET_DIR / f"{i:03d}.txt")

    return _map(job, range(len(hs)), cfg.threads)


def stage_kernel(cfg: RunConfig, out: Path) -> list[Path]:
    datasets = load_datasets(out)
    K = kernel.build_kernel_matrix(datasets, kernel.KernelParams(cfg.tau, cfg.gamma), cfg.threads)
    return [kernel.write_kernel_csv(K, out / "kernel.csv")]


def stage_diffmap(cfg: RunConfig, out: Path) -> list[Path]:
    K = kernel.read_kernel_csv(out / "kernel.csv", kernel.KernelParams(cfg.tau, cfg.gamma))
    P = diffmap.transition_matrix(K)
    emb = diffmap.embed(P, cfg.diffusion_t, cfg.retained or None)
    written = [diffmap.write_embedding_csv(emb, out / "embedding.csv")]
    if emb.retained > 2:
        D = diffmap.euclidean_distances(emb.coordinates)
        mds = diffmap.classical_mds(D, 2)
        rows = [(i, K.labels[i], *mds.coordinates[i]) for i in range(K.size)]
        written.append(_write_rows(out / "mds.csv", ["index", "h_x", "x1", "x2"], rows))
    return written


def stage_observables(cfg: RunConfig, out: Path) -> list[Path]:
    written = []
    if (out / "kernel.csv").exists():
        K = kernel.read_kernel_csv(out / "kernel.csv")
        diag = thermo.kernel_criticality_diagnostics(K)
        written.append(thermo.write_kernel_diag_csv(diag, out / "kernel_diag.csv"))
    if cfg.experiment in ("ground-cs", "ground-z"):
        rows = _read_rows(out / "points.csv")
        table = thermo.SusceptibilityTable(
            np.array([float(r["h_x"]) for r in rows]),
            {a: np.array([float(r[f"chi_{a}{a}"]) for r in rows]) for a in "xyz"}, "exact")
    else:
        datasets = load_datasets(out)
        est = [[thermo.susceptibility(ds, a, a) for a in "xyz"] for ds in datasets]
        table = thermo.SusceptibilityTable(
            np.array([ds.h_x for ds in datasets]),
            {a: np.array([e[k].value for e in est]) for k, a in enumerate("xyz")}, "shadows",
            {a: np.array([e[k].stderr for e in est]) for k, a in enumerate("xyz")})
        params = spinsim.TfimParams(cfg.L, 1.0)
        psi0 = spinsim.ghz_state(cfg.L) if cfg.initial_state == "ghz" else spinsim.ferro_state(cfg.L)
        trace = thermo.equilibration_trace(psi0, params, initial_state=f"{cfg.initial_state} h_x=1.0")
        written.append(thermo.write_trace_csv(trace, out / "trace.csv"))
    written.append(thermo.write_chi_csv(table, out / "chi.csv"))
    return written


def block_sites(L: int, n: int) -> list[int]:
    start = (L - n) // 2
    return list(range(start, start + n))


def purity_rows(ds: shadows.ShadowDataset, max_block: int, subsets, normalization: str):
    """(n, N, block, purity, clamped, S2/n) for every disjoint N-shot block of ``ds``."""
    rows = []
    for n in range(1, max_block + 1):
        sites = block_sites(ds.num_sites, n)
        for N in subsets:
            for b in range(ds.num_shots // N):
                g = shadows.estimate_purity(ds.slice(b * N, (b + 1) * N), sites, normalization)
                gc, clamped = shadows.clamp_purity(g, n)
                rows.append((n, N, b, g, int(clamped), shadows.renyi2(gc) / n))
    return rows


def stage_entropy(cfg: RunConfig, out: Path) -> list[Path]:
    paths = dataset_paths(out)

    def job(path):
        ds = shadows.read_dataset(path)
        return [(int(path.stem), ds.h_x) + r
                for r in purity_rows(ds, cfg.max_block, cfg.shot_subsets, cfg.normalization)]

    rows = [r for chunk in _map(job, paths, cfg.threads) for r in chunk]
    return [_write_rows(out / "purity.csv",
                        ["index", "h_x", "n", "N", "block", "purity", "clamped", "s2_per_n"], rows)]


def stage_bayes(cfg: RunConfig, out: Path) -> list[Path]:
    rows = _read_rows(out / "purity.csv")
    groups: dict[int, list[dict[str, str]]] = {}
    for r in rows:
        groups.setdefault(int(r["index"]), []).append(r)
    (out / "chains").mkdir(exist_ok=True)
    text_form = cfg.sigma_form == "text"
    n_max = cfg.max_block
    N_max = max(cfg.shot_subsets)

    def job(idx):
        g = groups[idx]
        data = inference.PurityData([float(r["n"]) for r in g], [float(r["N"]) for r in g],
                                    [float(r["purity"]) for r in g])
        samples = inference.metropolis(data, steps=cfg.mcmc_steps,
                                       master_seed=rng.derive_seed(cfg.seed, "mcmc", idx),
                                       text_form=text_form)
        chain = inference.write_chain_csv(samples, out / "chains" / f"chain_{idx:03d}.csv")
        points = [(n, math.inf) for n in range(1, n_max + 1)] + [(math.inf, math.inf), (n_max, N_max)]
        summary = out / "chains" / f"summary_{idx:03d}.txt"
        summary.write_text(inference.dumps_summary(samples, points, text_form), encoding="utf-8")
        s = inference.entropy_density(samples)
        lo, hi = inference.central_interval(s)
        direct = next(float(r["s2_per_n"]) for r in g
                      if int(r["n"]) == n_max and int(r["N"]) == N_max and r["block"] == "0")
        row = (idx, float(g[0]["h_x"]), float(s.mean()), lo, hi, direct,
               samples.acceptance_rate, samples.warning or "")
        return [chain, summary], row

    results = _map(job, sorted(groups), cfg.threads)
    table = _write_rows(out / "entropy.csv",
                        ["index", "h_x", "s_inf_mean", "s_inf_lo", "s_inf_hi",
                         f"s{n_max}_direct", "acceptance", "warning"],
                        [row for _, row in results])
    return [p for paths, _ in results for p in paths] + [table]


def positivity_shift(*coords: np.ndarray, margin: float = 0.01) -> float:
    """Shift C such that every coordinate minus C is positive.

    C sits below the smallest value by ``margin`` times the range of the
    pooled values.
    """
    pooled = np.concatenate([np.asarray(c, float).ravel() for c in coords])
    return float(pooled.min() - margin * (pooled.max() - pooled.min()))


def stage_fit(cfg: RunConfig, out: Path) -> list[Path]:
    meta, h, dc = diffmap.read_embedding_csv(out / "embedding.csv")
    if dc.shape[1] < 2:
        # the gap picked a single axis; the fit still needs dc2
        K = kernel.read_kernel_csv(out / "kernel.csv", kernel.KernelParams(cfg.tau, cfg.gamma))
        if K.size < 3:
            raise ConfigError("power-law fit needs at least three h_x points")
        emb = diffmap.embed(diffmap.transition_matrix(K), cfg.diffusion_t, 2)
        h, dc = K.labels, emb.coordinates
    dc1, dc2 = dc[:, 0], dc[:, 1]
    C = positivity_shift(dc1, dc2)
    fits = [inference.fit_power_law(h, dc2, C, side) for side in ("below", "above")]
    # entropy anchor for the spread of C: direct S2/n estimates on a centered block
    datasets = load_datasets(out)
    n = cfg.fit_entropy_n
    s2 = []
    for ds in datasets:
        g, _ = shadows.clamp_purity(shadows.estimate_purity(ds, block_sites(ds.num_sites, n),
                                                            cfg.normalization), n)
        s2.append(shadows.renyi2(g) / n)
    sgn = 1.0 if np.corrcoef(dc1, s2)[0, 1] >= 0 else -1.0
    ent = inference.fit_entropy_dc1(sgn * dc1, s2)
    spread = inference.propagate_C_uncertainty(C, ent.epsilon, h, dc2, cfg.c_samples,
                                               rng.derive_seed(cfg.seed, "cshift"))
    fit_rows = [(f.side, f.exponent, f.amplitude, f.shift, f.residual, f.used,
                 " ".join(map(str, f.dropped))) for f in fits]
    written = [_write_rows(out / "fits.csv",
                           ["side", "p", "a", "C", "residual", "used", "dropped"], fit_rows)]
    rows = [(k, spread.C[k], spread.p["below"][k], spread.p["above"][k]) for k in range(len(spread.C))]
    written.append(_write_rows(out / "c_spread.csv", ["sample", "C", "p_below", "p_above"], rows))
    summary = [("C_positivity", C), ("entropy_alpha", sgn * ent.alpha), ("entropy_C_opt", sgn * ent.C),
               ("entropy_epsilon", ent.epsilon), ("dc1_sign", sgn)]
    for side in ("below", "above"):
        for q, v in spread.quantiles[side].items():
            summary.append((f"p_{side}_q{q}", v))
    written.append(_write_rows(out / "fit_summary.csv", ["key", "value"], summary))
    return written


STAGES: dict[str, Callable[[RunConfig, Path], list[Path]]] = {
    "ground": stage_ground,
    "tacs": stage_tacs,
    "kernel": stage_kernel,
    "diffmap": stage_diffmap,
    "observables": stage_observables,
    "entropy": stage_entropy,
    "bayes": stage_bayes,
    "fit": stage_fit,
}

PIPELINES: dict[str, tuple[str, ...]] = {
    "ground-cs": ("ground", "kernel", "diffmap", "observables"),
    "ground-z": ("ground", "kernel", "diffmap", "observables"),
    "tacs-diffmap": ("tacs", "kernel", "diffmap", "observables"),
    "entropy-bayes": ("tacs", "entropy", "bayes"),
    "exponent-fit": ("tacs", "kernel", "diffmap", "observables", "fit"),
}


# --------------------------------------------------------------------------
# Manifest and orchestration
# --------------------------------------------------------------------------

def build_manifest(cfg: RunConfig, out: Path) -> dict:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != MANIFEST:
            files[path.relative_to(out).as_posix()] = sha256_file(path)
    shots = cfg.shots * len(cfg.h_values)
    return {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "backend": _accel.BACKEND,
        "total_shots": shots,
        "files": files,
    }


def write_manifest(cfg: RunConfig, out: Path) -> Path:
    path = out / MANIFEST
    path.write_text(json.dumps(build_manifest(cfg, out), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def manifest_matches(cfg: RunConfig, out: Path) -> bool:
    """True when ``out`` holds a complete, unmodified run of ``cfg``."""
    path = out / MANIFEST
    if not path.is_file():
        return False
    try:
        old = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if old.get("config_hash") != cfg.config_hash() or old.get("version") != __version__ \
            or old.get("backend") != _accel.BACKEND:
        return False
    return old == build_manifest(cfg, out)


def _safe_to_replace(out: Path) -> bool:
    return not out.exists() or (out.is_dir() and (not any(out.iterdir()) or (out / MANIFEST).exists()))


def run(cfg: RunConfig, out: Path | str | None = None) -> tuple[Path, bool]:
    """Execute the full pipeline of ``cfg.experiment`` into ``out``.

    Returns (directory, ran).  ``ran`` is False when an identical complete
    run already exists there.  The run is assembled in a scratch directory
    and moved into place only on success.
    """
    out = Path(out or cfg.out)
    if manifest_matches(cfg, out):
        return out, False
    if not _safe_to_replace(out):
        raise ConfigError(f"refusing to overwrite {out}: it is not empty and holds no manifest")
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
    try:
        (scratch / CONFIG_FILE).write_text(cfg.canonical(), encoding="utf-8")
        for stage in PIPELINES[cfg.experiment]:
            STAGES[stage](cfg, scratch)
        write_manifest(cfg, scratch)
        if out.exists():
            shutil.rmtree(out)
        os.replace(scratch, out)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return out, True


def run_stage(cfg: RunConfig, stage: str, out: Path | str | None = None) -> list[Path]:
    """Run one stage in place, removing its outputs again if it fails."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    before = {p for p in out.rglob("*")}
    try:
        (out / CONFIG_FILE).write_text(cfg.canonical(), encoding="utf-8")
        written = STAGES[stage](cfg, out)
        write_manifest(cfg, out)
    except BaseException:
        for p in sorted(set(out.rglob("*")) - before, reverse=True):
            if p.is_file():
                p.unlink()
            elif p.is_dir() and not any(p.iterdir()):
                p.rmdir()
        raise
    return written


def load_run_config(out: Path) -> RunConfig:
    path = out / CONFIG_FILE
    if not path.is_file():
        raise ConfigError(f"{path} not found; pass --config")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    cfg = replace(cfg, **{k: v for k, v in kw.items() if v is not None})
    validate(cfg)
    return cfg
