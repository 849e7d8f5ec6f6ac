"""Bayesian purity extrapolation and power-law fits of diffusion coordinates.

Purity model for an n-site block estimated from N shots::

    mean  mu(n, N)      = a exp(-b n) + c exp(d n) / N
    var   sigma^2(n, N) = e exp(f n) / N^2          (default)
    std   sigma(n, N)   = e exp(f n)                (text_form=True)

All six parameters are positive; sampling runs on their logs under a
uniform box prior.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from . import _accel
from .errors import NumericalError

PARAM_NAMES = ("a", "b", "c", "d", "e", "f")
LOG_BOUND = 10.0
BURN_IN_FRACTION = 0.2
ACCEPTANCE_WINDOW = (0.05, 0.8)
DIVERGENCE_GUARD = 0.05


@dataclass(frozen=True)
class PurityModelParams:
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        if not all(v > 0 for v in self.as_array()):
            raise ValueError(f"purity model parameters must be positive: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f], dtype=np.float64)

    @classmethod
    def from_log(cls, x) -> "PurityModelParams":
        return cls(*np.exp(np.asarray(x, dtype=np.float64)))


def _second_term(c, d, n, N):
    if math.isinf(N):
        return 0.0
    return c * math.exp(d * n) / N


def purity_mean(params: PurityModelParams, n: float, N: float = math.inf) -> float:
    """a e^{-bn} + c e^{dn} / N; both limits n, N = inf are allowed."""
    first = 0.0 if math.isinf(n) else params.a * math.exp(-params.b * n)
    if math.isinf(n) and not math.isinf(N):
        return math.inf
    return first + _second_term(params.c, params.d, n, N)


def purity_std(params: PurityModelParams, n: float, N: float = math.inf,
               text_form: bool = False) -> float:
    if text_form:
        return math.inf if math.isinf(n) else params.e * math.exp(params.f * n)
    if math.isinf(N):
        return 0.0
    if math.isinf(n):
        return math.inf
    return math.sqrt(params.e * math.exp(params.f * n)) / N


@dataclass(eq=False)
class PurityData:
    """Observed purities ``y`` of n-site blocks from N shots."""

    n: np.ndarray
    N: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.float64).reshape(-1)
        self.N = np.asarray(self.N, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not (self.n.shape == self.N.shape == self.y.shape):
            raise ValueError("n, N and y must have equal lengths")
        if (self.N <= 0).any():
            raise ValueError("shot counts must be positive")

    def __len__(self) -> int:
        return self.y.size

    @classmethod
    def empty(cls) -> "PurityData":
        return cls([], [], [])


@dataclass(frozen=True)
class PriorBox:
    """Uniform prior on log-parameters: each log p lies in [lo, hi]."""

    lo: float = -LOG_BOUND
    hi: float = LOG_BOUND

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("prior box needs hi > lo")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.full(6, self.lo), np.full(6, self.hi)

    @property
    def log_density(self) -> float:
        return -6.0 * math.log(self.hi - self.lo)


def _log_likelihood(x: np.ndarray, data: PurityData, text_form: bool) -> float:
    if len(data) == 0:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        return _accel._log_likelihood_vec(x, data.n, 1.0 / data.N, data.y, text_form)


def log_posterior(params: PurityModelParams | np.ndarray, data: PurityData,
                  prior: PriorBox = PriorBox(), text_form: bool = False) -> float:
    """Gaussian log-likelihood plus the log of the box prior (up to the evidence).

    ``params`` may also be an array of log-parameters.
    """
    x = np.log(params.as_array()) if isinstance(params, PurityModelParams) else \
        np.asarray(params, dtype=np.float64)
    if np.any(x < prior.lo) or np.any(x > prior.hi):
        return -math.inf
    return _log_likelihood(x, data, text_form) + prior.log_density


@dataclass(eq=False)
class PosteriorSamples:
    chain: np.ndarray  # (S, 6) parameters after burn-in, linear scale
    log_post: np.ndarray
    acceptance_rate: float
    master_seed: int
    step_scale: float
    burn_in: int
    warning: str | None = None

    def __len__(self) -> int:
        return self.chain.shape[0]

    def params(self, i: int) -> PurityModelParams:
        return PurityModelParams(*self.chain[i])

    def column(self, name: str) -> np.ndarray:
        return self.chain[:, PARAM_NAMES.index(name)]


def map_estimate(data: PurityData, prior: PriorBox = PriorBox(), text_form: bool = False,
                 x0=None) -> np.ndarray:
    """Log-parameters maximizing the posterior inside the prior box."""
    lo, hi = prior.bounds()
    if len(data) == 0:
        return 0.5 * (lo + hi)
    if x0 is None:
        x0 = _initial_guess(data, lo, hi)

    def neg(x):
        v = _log_likelihood(x, data, text_form)
        return 1e300 if not np.isfinite(v) else -v

    x0 = np.clip(np.asarray(x0, float), lo, hi)
    bounds = list(zip(lo, hi))
    # local optimizers can stall or end on a worse iterate, so keep the best point seen
    candidates = [x0]
    with np.errstate(over="ignore", invalid="ignore"):
        for method in ("L-BFGS-B", "Powell"):
            candidates.append(np.clip(optimize.minimize(neg, x0, method=method, bounds=bounds).x, lo, hi))
        for _ in range(2):
            res = optimize.minimize(neg, min(candidates, key=neg), method="Nelder-Mead", bounds=bounds,
                                    options={"maxiter": 20000, "maxfev": 20000, "xatol": 1e-8,
                                             "fatol": 1e-10})
            candidates.append(np.clip(res.x, lo, hi))
    return min(candidates, key=neg)


def _initial_guess(data: PurityData, lo, hi) -> np.ndarray:
    """Rough starting point: log-linear fit of purity against n, small c, residual noise.

    The fit uses per-n means weighted by N^2, the inverse noise variance, so
    that noisy small-N blocks (which can be negative) do not steer it.
    """
    ns = np.unique(data.n)
    w = data.N**2
    means = np.array([np.sum(w[data.n == k] * data.y[data.n == k]) / np.sum(w[data.n == k]) for k in ns])
    ok = means > 0
    if ok.sum() > 1:
        slope, intercept = np.polyfit(ns[ok], np.log(means[ok]), 1)
    elif ok.sum() == 1:
        slope, intercept = -0.5, math.log(means[ok][0]) + 0.5 * ns[ok][0]
    else:
        slope, intercept = -0.5, 0.0
    b = max(-slope, 1e-3)
    a = math.exp(intercept)
    resid = data.y - a * np.exp(-b * data.n)
    scale = np.sqrt(np.mean((resid * data.N) ** 2)) + 1e-12
    x = np.log([a, b, 1e-3, 0.5, scale**2, 0.5])
    return np.clip(x, lo, hi)


def metropolis(data: PurityData, prior: PriorBox = PriorBox(), steps: int = 20000,
               step_scale: float | None = None, master_seed: int = 0,
               text_form: bool = False, x0=None) -> PosteriorSamples:
    """Random-walk Metropolis on log-parameters with isotropic Gaussian proposals.

    The chain starts at the posterior mode.  With ``step_scale=None`` the
    proposal width is tuned during burn-in toward an acceptance near 0.25
    and then held fixed.  The first 20% of ``steps`` are discarded.
    """
    if steps < 10:
        raise ValueError("need at least 10 steps")
    lo, hi = prior.bounds()
    rng = np.random.default_rng(master_seed)
    x = map_estimate(data, prior, text_form, x0) if x0 is None else np.asarray(x0, float)
    if not np.isfinite(_log_likelihood(x, data, text_form)):
        raise NumericalError("chain start has zero likelihood; no usable starting point")
    burn = int(BURN_IN_FRACTION * steps)
    run = _accel.metropolis
    n, inv_N, y = data.n, 1.0 / data.N, data.y

    scale = step_scale if step_scale is not None else 0.1
    if step_scale is None and burn > 0:
        block = max(50, burn // 20)
        done = 0
        while done < burn:
            size = min(block, burn - done)
            chain, _, acc = run(x, n, inv_N, y, lo, hi, scale * rng.standard_normal((size, 6)),
                                np.log(rng.random(size)), text_form)
            x = chain[-1].copy()
            rate = acc / size
            # a block with no moves at all means the scale is off by orders of magnitude
            scale *= 0.1 if acc == 0 else math.exp(np.clip(rate - 0.25, -0.2, 0.2) * 4.0)
            done += size
    elif burn > 0:
        chain, _, _ = run(x, n, inv_N, y, lo, hi, scale * rng.standard_normal((burn, 6)),
                          np.log(rng.random(burn)), text_form)
        x = chain[-1].copy()

    keep = steps - burn
    chain, loglik, acc = run(x, n, inv_N, y, lo, hi, scale * rng.standard_normal((keep, 6)),
                             np.log(rng.random(keep)), text_form)
    rate = acc / keep
    warning = None
    if not ACCEPTANCE_WINDOW[0] <= rate <= ACCEPTANCE_WINDOW[1]:
        warning = f"acceptance rate {rate:.3f} outside {ACCEPTANCE_WINDOW}"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return PosteriorSamples(np.exp(chain), loglik + prior.log_density, rate,
                            int(master_seed), float(scale), burn, warning)


def posterior_predictive(samples: PosteriorSamples, n: float, N: float,
                         text_form: bool = False) -> tuple[float, float]:
    """Mean and std of the predictive mixture over the chain (total-variance law)."""
    a, b, c, d, e, f = samples.chain.T
    with np.errstate(over="ignore", invalid="ignore"):
        if math.isinf(n):
            mu = np.zeros_like(a) if math.isinf(N) else np.full_like(a, math.inf)
        else:
            mu = a * np.exp(-b * n) + (0.0 if math.isinf(N) else c * np.exp(d * n) / N)
        if text_form:
            var = np.full_like(a, math.inf) if math.isinf(n) else (e * np.exp(f * n)) ** 2
        elif math.isinf(N):
            var = np.zeros_like(a)
        else:
            var = np.full_like(a, math.inf) if math.isinf(n) else e * np.exp(f * n) / N**2
    mean = float(mu.mean())
    total = float(var.mean() + mu.var())
    return mean, math.sqrt(total)


def entropy_density(samples: PosteriorSamples) -> np.ndarray:
    """Per-sample large-n limit of S2/n in bits, -log2(mu)/n -> b / ln 2."""
    return samples.column("b") / math.log(2.0)


def write_chain_csv(samples: PosteriorSamples, path) -> Path:
    buf = io.StringIO()
    buf.write("step,a,b,c,d,e,f,log_post\n")
    for i, (row, lp) in enumerate(zip(samples.chain, samples.log_post)):
        buf.write(f"{samples.burn_in + i}," + ",".join(repr(float(v)) for v in row) + f",{float(lp)!r}\n")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def dumps_summary(samples: PosteriorSamples, points: Sequence[tuple[float, float]],
                  text_form: bool = False) -> str:
    """Key-value summary with predictive mean/std at each (n, N) in ``points``."""
    s = entropy_density(samples)
    lines = [
        f"acceptance_rate = {samples.acceptance_rate!r}",
        f"master_seed = {samples.master_seed}",
        f"step_scale = {samples.step_scale!r}",
        f"burn_in = {samples.burn_in}",
        f"kept = {len(samples)}",
        f"warning = {samples.warning or 'none'}",
        f"entropy_density_mean = {float(s.mean())!r}",
        f"entropy_density_std = {float(s.std())!r}",
    ]
    for name in PARAM_NAMES:
        col = samples.column(name)
        lines.append(f"{name}_median = {float(np.median(col))!r}")
    for n, N in points:
        mean, std = posterior_predictive(samples, n, N, text_form)
        lines.append(f"predictive[n={n},N={N}] = {mean!r} +- {std!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Diffusion-coordinate fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyFit:
    alpha: float
    C: float
    epsilon: float


def fit_entropy_dc1(dc1, s2_per_site) -> EntropyFit:
    """Least squares for S2/n = alpha (dc1 - C); epsilon is the RMS residual."""
    x = np.asarray(dc1, dtype=np.float64)
    y = np.asarray(s2_per_site, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two matching (dc1, S2/n) pairs")
    A = np.column_stack([x, np.ones_like(x)])
    (alpha, beta), *_ = np.linalg.lstsq(A, y, rcond=None)
    if not abs(alpha) > 1e-12 * max(1.0, abs(beta)):
        raise ValueError("S2/n does not depend on dc1; C is undefined")
    resid = y - A @ np.array([alpha, beta])
    return EntropyFit(float(alpha), float(-beta / alpha), float(np.sqrt(np.mean(resid**2))))


@dataclass(frozen=True)
class PowerLawFit:
    amplitude: float
    exponent: float
    shift: float
    side: str
    residual: float
    used: int
    dropped: tuple[int, ...] = field(default=())


def _side_mask(h: np.ndarray, side: str, guard: float) -> np.ndarray:
    if side == "below":
        return h < 1.0 - guard
    if side == "above":
        return h > 1.0 + guard
    raise ValueError(f"side must be 'below' or 'above', got {side!r}")


def fit_power_law(h_x, dc2, C: float, side: str, guard: float = DIVERGENCE_GUARD) -> PowerLawFit:
    """Fit dc2 = a |h_x - 1|^(-p) + C on one side of h_x = 1 by log-log regression.

    Points with dc2 - C <= 0 are dropped and listed in ``dropped``.
    """
    h = np.asarray(h_x, dtype=np.float64)
    y = np.asarray(dc2, dtype=np.float64)
    if h.shape != y.shape:
        raise ValueError("h_x and dc2 must have equal lengths")
    idx = np.flatnonzero(_side_mask(h, side, guard))
    bad = tuple(int(i) for i in idx if not y[i] - C > 0)
    good = np.array([i for i in idx if y[i] - C > 0], dtype=np.int64)
    if good.size < 2:
        raise ValueError(f"fewer than two usable points on the {side} side")
    lx = np.log(np.abs(h[good] - 1.0))
    ly = np.log(y[good] - C)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return PowerLawFit(float(math.exp(intercept)), float(-slope), float(C), side,
                       float(np.sum(resid**2)), int(good.size), bad)


@dataclass(eq=False)
class ExponentDistribution:
    C: np.ndarray
    p: dict[str, np.ndarray]
    quantiles: dict[str, dict[float, float]]


def propagate_C_uncertainty(C_opt: float, epsilon: float, h_x, dc2, n_samples: int = 2000,
                            seed: int = 0, sides: Sequence[str] = ("below", "above"),
                            sd: float | None = None,
                            qs: Sequence[float] = (0.025, 0.16, 0.5, 0.84, 0.975)) -> ExponentDistribution:
    """Sample C ~ Normal(C_opt, sd) and refit p on each side for every draw.

    ``sd`` defaults to epsilon**2.  Draws for which a side cannot be fitted
    give NaN for that side.
    """
    sd = epsilon**2 if sd is None else sd
    rng = np.random.default_rng(seed)
    Cs = C_opt + sd * rng.standard_normal(n_samples) if sd > 0 else np.full(n_samples, float(C_opt))
    out: dict[str, np.ndarray] = {}
    quant: dict[str, dict[float, float]] = {}
    for side in sides:
        p = np.empty(n_samples)
        for k, C in enumerate(Cs):
            try:
                p[k] = fit_power_law(h_x, dc2, C, side).exponent
            except ValueError:
                p[k] = np.nan
        out[side] = p
        finite = p[np.isfinite(p)]
        quant[side] = {q: float(np.quantile(finite, q)) if finite.size else math.nan for q in qs}
    return ExponentDistribution(Cs, out, quant)


def central_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Central interval of an empirical sample."""
    v = np.asarray(values, dtype=np.float64)
    tail = 0.5 * (1.0 - level)
    return float(np.quantile(v, tail)), float(np.quantile(v, 1.0 - tail))


def pearson(x, y) -> float:
    return float(stats.pearsonr(np.asarray(x, float), np.asarray(y, float))[0])
