"""
Monte Carlo simulation of the refracted process U started at b.

Two schemes:

* exact-bv: for bounded variation drivers U is piecewise linear between
  jumps (slope c0 below b, c0 - delta above), so barrier crossings and the
  time spent below b are computed in closed form per segment.
* euler: Euler-Maruyama with the Brownian part; compound Poisson jumps are
  inserted at their exact epochs by shortening the step that contains them.
  Without an upper barrier and without jumps, a path reaching b + RETURN_LEVEL
  either never comes back (probability 1 - p) or returns to b after an
  inverse Gaussian time, p being the ruin probability of Y from that level.

Paths are simulated in blocks of REFRACT_MC_BLOCK; block k draws from
Philox keyed by (seed, k), so a run is reproducible whatever the number of
worker threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from refract.config import get_settings
from refract.errors import DomainError
from refract.levy_model import RefractedModel
from refract.occupation import TOTAL, OccupationQuery, censor_level, ruin_probability_y

logger = logging.getLogger(__name__)

EXACT = "exact-bv"
EULER = "euler"
SCHEMES = (EXACT, EULER)

HIT_HI, HIT_LO, HORIZON = "hit_hi", "hit_lo", "horizon"
_EXIT_NAMES = np.array(["", HIT_HI, HIT_LO, HORIZON])
_HI, _LO, _HORIZON = 1, 2, 3

T_MAX = 1e4
DEFAULT_STEP = 1e-3
CENSOR_EPS = 1e-4
RETURN_LEVEL = 0.5


@dataclass(frozen=True)
class PathOutcome:
    occupation_below_b: float
    exit: str
    exit_time: float
    final_value: float


class MCEstimate(BaseModel):
    """Sample mean of exp(-theta * occupation) with its standard error."""

    model_config = ConfigDict(frozen=True)

    mean: float
    stderr: float
    n: int
    seed: int
    scheme: str
    h: Optional[float] = None
    bias_bound: float = 0.0
    n_horizon: int = 0


@dataclass
class _Block:
    """Per-path accumulators of one block."""

    occupation: np.ndarray
    exit_code: np.ndarray
    exit_time: np.ndarray
    final_value: np.ndarray

    @classmethod
    def start(cls, n: int, start: float) -> "_Block":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int8), np.zeros(n), np.full(n, start))


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


# Exact scheme


def _bv_block(
    rng: np.random.Generator,
    n: int,
    start: float,
    b: float,
    lo: float,
    hi: float,
    slope_below: float,
    slope_above: float,
    rmodel: RefractedModel,
    t_max: float = T_MAX,
) -> _Block:
    """
    Piecewise-linear paths until they leave (lo, hi) or pass t_max.

    Below b the path moves at slope_below, at or above b at slope_above; a
    downward jump ends each segment. Passage above hi happens by creeping.
    """
    jumps = rmodel.x_model.jumps
    out = _Block.start(n, start)
    idx = np.arange(n)
    u = out.final_value.copy()
    t = np.zeros(n)
    occ = np.zeros(n)

    while idx.size:
        m = idx.size
        tau = rng.exponential(1.0 / jumps.rate, m) if jumps else np.full(m, np.inf)
        remaining = t_max - t
        capped = tau >= remaining
        tau = np.where(capped, remaining, tau)

        below = u < b
        to_b = np.where(below, (b - u) / slope_below, 0.0)
        first = np.minimum(tau, to_b)
        reached = below & (tau >= to_b)
        occ = occ + first
        u = np.where(reached, b, np.where(below, u + slope_below * first, u))

        rest = tau - first
        above = u >= b
        with np.errstate(invalid="ignore"):
            to_hi = np.where(above, (hi - u) / slope_above, np.inf)
        up = np.where(above, np.minimum(rest, to_hi), 0.0)
        hit_hi = above & (rest >= to_hi)
        u = np.where(hit_hi, hi, u + slope_above * up)
        t = t + first + up

        horizon = ~hit_hi & capped
        jumping = ~hit_hi & ~horizon
        if jumps:
            n_jump = int(jumping.sum())
            if n_jump:
                u[jumping] -= jumps.magnitude.sample(rng, n_jump)
        hit_lo = jumping & (u < lo)

        done = hit_hi | hit_lo | horizon
        if np.any(done):
            code = np.where(hit_hi, _HI, np.where(hit_lo, _LO, _HORIZON))
            where = idx[done]
            out.occupation[where] = occ[done]
            out.exit_code[where] = code[done]
            out.exit_time[where] = t[done]
            out.final_value[where] = u[done]
            keep = ~done
            idx, u, t, occ = idx[keep], u[keep], t[keep], occ[keep]
    return out


def _check_exact(rmodel: RefractedModel) -> None:
    if not rmodel.x_model.is_bv:
        raise DomainError("the exact scheme needs a bounded variation driver (sigma2 = 0)")


def _exact_block(rng, n, rmodel, lo, hi, t_max=T_MAX) -> _Block:
    c0 = rmodel.x_model.c0
    return _bv_block(rng, n, rmodel.b, rmodel.b, lo, hi, c0, c0 - rmodel.delta, rmodel, t_max)


def simulate_exact_bv(
    rmodel: RefractedModel,
    lo: float,
    hi: float,
    rng: np.random.Generator,
    t_max: float = T_MAX,
) -> PathOutcome:
    """One exact path from b until it leaves (lo, hi)."""
    _check_exact(rmodel)
    return _outcome(_exact_block(rng, 1, rmodel, lo, hi, t_max), 0)


# Euler scheme


def _euler_block(
    rng: np.random.Generator,
    n: int,
    rmodel: RefractedModel,
    lo: float,
    hi: float,
    h: float,
    t_max: float = T_MAX,
    return_prob: Optional[float] = None,
) -> _Block:
    """
    Euler paths until a step ends outside (lo, hi) or t_max passes.

    With return_prob set, hi is b + RETURN_LEVEL and paths reaching it are
    sent back to b with that probability instead of exiting.
    """
    x_model = rmodel.x_model
    jumps = x_model.jumps
    b, delta = rmodel.b, rmodel.delta
    drift, sigma = x_model.drift, math.sqrt(x_model.sigma2)

    out = _Block.start(n, b)
    idx = np.arange(n)
    u = np.full(n, b)
    t = np.zeros(n)
    occ = np.zeros(n)
    next_jump = rng.exponential(1.0 / jumps.rate, n) if jumps else np.full(n, np.inf)

    while idx.size:
        m = idx.size
        remaining = np.maximum(t_max - t, 0.0)
        capped = remaining <= np.minimum(h, next_jump)
        step = np.where(capped, remaining, np.minimum(h, next_jump))
        occ = occ + step * (u < b)
        slope = drift - delta * (u > b)
        u = u + slope * step + sigma * np.sqrt(step) * rng.standard_normal(m)
        t = t + step
        next_jump = next_jump - step

        if jumps:
            jumping = next_jump <= 0.0
            n_jump = int(jumping.sum())
            if n_jump:
                u[jumping] -= jumps.magnitude.sample(rng, n_jump)
                next_jump[jumping] = rng.exponential(1.0 / jumps.rate, n_jump)

        hit_hi = u >= hi
        if return_prob is not None and np.any(hit_hi):
            up = np.flatnonzero(hit_hi)
            back = up[rng.random(up.size) < return_prob]
            if back.size:
                u[back] = b
                t[back] += _return_times(rng, back.size, rmodel, hi - b)
                hit_hi[back] = False
        hit_lo = u < lo
        horizon = ~hit_hi & ~hit_lo & capped
        done = hit_hi | hit_lo | horizon
        if np.any(done):
            code = np.where(hit_hi, _HI, np.where(hit_lo, _LO, _HORIZON))
            where = idx[done]
            out.occupation[where] = occ[done]
            out.exit_code[where] = code[done]
            out.exit_time[where] = t[done]
            out.final_value[where] = u[done]
            keep = ~done
            idx, u, t, occ, next_jump = idx[keep], u[keep], t[keep], occ[keep], next_jump[keep]
    return out


def _return_times(rng: np.random.Generator, n: int, rmodel: RefractedModel, level: float) -> np.ndarray:
    """First passage times of Y = X - delta t from `level` down to 0, given that it happens (no jumps)."""
    mu, sigma2 = rmodel.drift_gap, rmodel.x_model.sigma2
    if mu == 0.0:
        return level**2 / (sigma2 * rng.standard_normal(n) ** 2)
    return rng.wald(level / abs(mu), level**2 / sigma2, n)


def simulate_euler(
    rmodel: RefractedModel,
    lo: float,
    hi: float,
    h: float,
    rng: np.random.Generator,
    t_max: float = T_MAX,
) -> PathOutcome:
    """One Euler path from b until a step ends outside (lo, hi)."""
    if not h > 0.0:
        raise DomainError(f"Euler step must be positive, got h={h}")
    return _outcome(_euler_block(rng, 1, rmodel, lo, hi, h, t_max), 0)


def _outcome(block: _Block, i: int) -> PathOutcome:
    return PathOutcome(
        occupation_below_b=float(block.occupation[i]),
        exit=str(_EXIT_NAMES[block.exit_code[i]]),
        exit_time=float(block.exit_time[i]),
        final_value=float(block.final_value[i]),
    )


# Estimators


def _stopping_window(
    rmodel: RefractedModel,
    query: OccupationQuery,
    scheme: str = EXACT,
) -> Tuple[float, float, float, Optional[float]]:
    """
    (lo, hi, bias bound, return probability) for `query`.

    Without an upper barrier, jump-free Euler paths stop at b + RETURN_LEVEL
    and return to b with the ruin probability of Y from there; otherwise an
    infinite hi is replaced by a censoring level when U drifts up.
    """
    query.check(rmodel)
    lo, hi, bias = query.lo, query.hi, 0.0
    if query.kind == TOTAL and rmodel.drift_gap <= 0.0:
        raise DomainError("total occupation needs psi'(0+) > delta")
    if math.isinf(hi) and scheme == EULER and not rmodel.x_model.jumps and rmodel.x_model.sigma2 > 0.0:
        return_prob = ruin_probability_y(rmodel, RETURN_LEVEL)
        logger.info("Returning paths from U = b + %g with probability %.6g", RETURN_LEVEL, return_prob)
        return lo, rmodel.b + RETURN_LEVEL, 0.0, return_prob
    if math.isinf(hi) and rmodel.drift_gap > 0.0:
        hi = rmodel.b + censor_level(rmodel, CENSOR_EPS)
        bias = CENSOR_EPS
        logger.info("Censoring paths at U = %.6g (return probability <= %g)", hi, CENSOR_EPS)
    return lo, hi, bias, None


def simulate_paths(
    rmodel: RefractedModel,
    query: OccupationQuery,
    n: int,
    scheme: str = EXACT,
    seed: int = 0,
    h: float = DEFAULT_STEP,
    t_max: float = T_MAX,
) -> Tuple[pd.DataFrame, float]:
    """
    Simulate n paths for `query` and return one row per path plus the censoring bias bound.

    Columns: occupation, exit, exit_time, final_value. Rows are in path
    order, independent of the worker count.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if n < 1:
        raise DomainError(f"need at least one path, got n={n}")
    if scheme == EXACT:
        _check_exact(rmodel)
    elif not h > 0.0:
        raise DomainError(f"Euler step must be positive, got h={h}")
    lo, hi, bias, return_prob = _stopping_window(rmodel, query, scheme)

    settings = get_settings()
    sizes = [min(settings.mc_block, n - start) for start in range(0, n, settings.mc_block)]

    def run(block: int) -> _Block:
        rng = block_rng(seed, block)
        if scheme == EXACT:
            return _exact_block(rng, sizes[block], rmodel, lo, hi, t_max)
        return _euler_block(rng, sizes[block], rmodel, lo, hi, h, t_max, return_prob)

    workers = max(1, min(settings.threads, len(sizes)))
    logger.info("Simulating %d paths (%s) in %d blocks on %d threads", n, scheme, len(sizes), workers)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        blocks = list(executor.map(run, range(len(sizes))))

    frame = pd.DataFrame({
        "occupation": np.concatenate([blk.occupation for blk in blocks]),
        "exit": _EXIT_NAMES[np.concatenate([blk.exit_code for blk in blocks])],
        "exit_time": np.concatenate([blk.exit_time for blk in blocks]),
        "final_value": np.concatenate([blk.final_value for blk in blocks]),
    })
    return frame, bias


def estimate_from_paths(
    paths: pd.DataFrame,
    theta: float,
    seed: int,
    scheme: str,
    h: Optional[float] = None,
    bias_bound: float = 0.0,
) -> MCEstimate:
    n = len(paths)
    values = np.exp(-theta * paths["occupation"].to_numpy())
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    n_horizon = int((paths["exit"] == HORIZON).sum())
    if n_horizon:
        logger.warning("%d of %d paths reached the time horizon", n_horizon, n)
    return MCEstimate(
        mean=float(values.mean()),
        stderr=stderr,
        n=n,
        seed=seed,
        scheme=scheme,
        h=h if scheme == EULER else None,
        bias_bound=bias_bound,
        n_horizon=n_horizon,
    )


def mc_laplace(
    rmodel: RefractedModel,
    query: OccupationQuery,
    n: int,
    scheme: str = EXACT,
    seed: int = 0,
    h: float = DEFAULT_STEP,
    t_max: float = T_MAX,
) -> MCEstimate:
    """Monte Carlo estimate of E_b[exp(-theta * occupation below b up to the exit)]."""
    if query.theta == 0.0:
        query.check(rmodel)
        return MCEstimate(mean=1.0, stderr=0.0, n=n, seed=seed, scheme=scheme, h=h if scheme == EULER else None)
    paths, bias = simulate_paths(rmodel, query, n, scheme, seed, h, t_max)
    estimate = estimate_from_paths(paths, query.theta, seed, scheme, h, bias)
    logger.info("MC estimate %.6f +- %.6f (n=%d, seed=%d)", estimate.mean, estimate.stderr, n, seed)
    return estimate


def sample_first_passage_below(
    rmodel: RefractedModel,
    cap: float,
    n: int,
    seed: int = 0,
    t_max: float = T_MAX,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run Y = X - delta t from 0 until it goes below 0 or reaches cap.

    Returns (undershoot, ruined): the position of Y just after passing below
    0 for ruined paths (NaN otherwise) and the ruin indicator.
    """
    _check_exact(rmodel)
    if not cap > 0.0:
        raise DomainError(f"cap must be positive, got {cap}")
    slope = rmodel.x_model.c0 - rmodel.delta
    block = _bv_block(block_rng(seed, 0), n, 0.0, -math.inf, 0.0, cap, slope, slope, rmodel, t_max)
    ruined = block.exit_code == _LO
    return np.where(ruined, block.final_value, np.nan), ruined
