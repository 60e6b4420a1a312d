"""Continuous-time path sampling and exact integration of additive functionals."""

import bisect
import logging
from dataclasses import dataclass

import numpy as np

from fcltlab import config
from fcltlab.chain_model import GeneratorModel, Observable
from fcltlab.errors import HorizonExceeded, ScheduleNotSmallO
from fcltlab.spectral import resolvent_apply

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """One path: states[k] is held on [jump_times[k-1], jump_times[k]), with jump_times[-1] := 0."""

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def boundaries(self) -> np.ndarray:
        """Holding-interval endpoints 0 = b_0 < b_1 < ... < b_K = horizon."""
        return np.concatenate([[0.0], self.jump_times, [self.horizon]])

    @property
    def holding_times(self) -> np.ndarray:
        return np.diff(self.boundaries)


@dataclass(frozen=True, eq=False)
class ScaledPaths:
    """I_n, Lambda_n, A_n on t_grid for one replicate."""

    n: int
    lambda_used: float
    t_grid: np.ndarray
    I_vals: np.ndarray
    Lambda_vals: np.ndarray
    A_vals: np.ndarray
    sup_abs_Lambda: float

    @property
    def identity_residual(self) -> float:
        return float(np.abs(self.I_vals - self.Lambda_vals - self.A_vals).max())


def make_rng(seed: int, stream_id: int, *extra: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, stream_id, *extra)."""
    seq = np.random.SeedSequence(seed, spawn_key=(stream_id, *extra))
    return np.random.Generator(np.random.Philox(seq))


def default_t_grid(t_max: float = 1.0, points: int | None = None) -> np.ndarray:
    return np.linspace(0.0, t_max, config.T_GRID_POINTS if points is None else points)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_path(model: GeneratorModel, horizon: float, rng_seed: int, stream_id: int = 0,
                initial_state: int | None = None, rng: np.random.Generator | None = None
                ) -> TrajectorySample:
    """Jump-chain construction: Exp(-Q_ii) holding times, jumps with prob Q_ij / -Q_ii.

    The initial state is drawn from pi unless `initial_state` is given.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    rng = rng or make_rng(rng_seed, stream_id)
    rates = model.exit_rates
    jump = model.Q / rates[:, None]
    np.fill_diagonal(jump, 0.0)
    cum = np.cumsum(jump, axis=1)
    cum[:, -1] = 1.0
    cum_rows = [row.tolist() for row in cum]

    state = int(rng.choice(model.m, p=model.pi)) if initial_state is None else int(initial_state)
    chunk = int(horizon * float(model.pi @ rates) * 1.1) + 32

    visited: list[np.ndarray] = []
    times: list[np.ndarray] = []
    clock = 0.0
    while True:
        u = rng.random(chunk).tolist()
        block = [state]
        s = state
        for k in range(chunk - 1):
            s = bisect.bisect_right(cum_rows[s], u[k])
            block.append(s)
        block_states = np.array(block, dtype=np.intp)
        ends = clock + np.cumsum(rng.standard_exponential(chunk) / rates[block_states])
        k_stop = int(np.searchsorted(ends, horizon, side="left"))
        if k_stop < chunk:
            visited.append(block_states[:k_stop + 1])
            times.append(ends[:k_stop])
            break
        visited.append(block_states)
        times.append(ends)
        clock = float(ends[-1])
        state = bisect.bisect_right(cum_rows[block[-1]], u[-1])

    jump_times = np.concatenate(times)
    states = np.concatenate(visited)
    logger.debug("Sampled path: %d jumps over horizon %g", jump_times.size, horizon)
    return TrajectorySample(jump_times=jump_times, states=states, horizon=float(horizon))


# ---------------------------------------------------------------------------
# Exact integration
# ---------------------------------------------------------------------------

def _cumulative(path: TrajectorySample, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(boundaries, integral of values(X) up to each boundary)."""
    b = path.boundaries
    cum = np.concatenate([[0.0], np.cumsum(values[path.states] * np.diff(b))])
    return b, cum


def _integrate_at(path: TrajectorySample, values: np.ndarray, times) -> np.ndarray:
    """int_0^t values(X(s)) ds for every t in `times`; exact for the piecewise-constant path."""
    times = np.asarray(times, dtype=float)
    if times.size and times.max() > path.horizon * (1 + config.TOL_EXACT):
        raise HorizonExceeded(f"t = {times.max():g} beyond horizon {path.horizon:g}")
    b, cum = _cumulative(path, values)
    idx = np.clip(np.searchsorted(b, times, side="right") - 1, 0, path.states.size - 1)
    return cum[idx] + values[path.states[idx]] * (times - b[idx])


def state_at(path: TrajectorySample, t: float) -> int:
    if t > path.horizon:
        raise HorizonExceeded(f"t = {t:g} beyond horizon {path.horizon:g}")
    return int(path.states[np.searchsorted(path.jump_times, t, side="right")])


def occupation_fractions(path: TrajectorySample, m: int) -> np.ndarray:
    return np.bincount(path.states, weights=path.holding_times, minlength=m) / path.horizon


def additive_functional(path: TrajectorySample, f, t: float) -> float:
    """int_0^t f(X(s)) ds."""
    values = np.asarray(f.values if isinstance(f, Observable) else f, dtype=float)
    return float(_integrate_at(path, values, [t])[0])


def sup_abs_integral(path: TrajectorySample, values: np.ndarray, n: int, t_max: float) -> float:
    """sup over t in [0, t_max] of |n^{-1/2} int_0^{nt} values(X)|.

    The integral is piecewise linear, so the sup sits at a jump time or an endpoint.
    """
    window = n * t_max
    if window > path.horizon * (1 + config.TOL_EXACT):
        raise HorizonExceeded(f"n*T = {window:g} beyond horizon {path.horizon:g}")
    b, cum = _cumulative(path, values)
    inside = np.abs(cum[b < window]).max(initial=0.0)
    end = abs(float(_integrate_at(path, values, [window])[0]))
    return max(inside, end) / np.sqrt(n)


def resolvent_split(model: GeneratorModel, f, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f, lambda R f, (-Q) R f); the last two sum to f."""
    values = np.asarray(f.values if isinstance(f, Observable) else f, dtype=float)
    x = resolvent_apply(model, lam, values)
    return values, lam * x, -model.Q @ x


def scaled_decomposition(path: TrajectorySample, model: GeneratorModel, f, n: int, lam: float,
                         t_grid, split=None) -> ScaledPaths:
    """I_n = Lambda_n + A_n on t_grid, each n^{-1/2} int_0^{nt} of its integrand."""
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    t_grid = np.asarray(t_grid, dtype=float)
    times = n * t_grid
    if times.max() > path.horizon * (1 + config.TOL_EXACT):
        raise HorizonExceeded(f"n*max(t) = {times.max():g} beyond horizon {path.horizon:g}")
    f_vals, damped, drift = split if split is not None else resolvent_split(model, f, lam)
    root_n = np.sqrt(n)
    return ScaledPaths(
        n=n,
        lambda_used=float(lam),
        t_grid=t_grid,
        I_vals=_integrate_at(path, f_vals, times) / root_n,
        Lambda_vals=_integrate_at(path, damped, times) / root_n,
        A_vals=_integrate_at(path, drift, times) / root_n,
        sup_abs_Lambda=sup_abs_integral(path, damped, n, float(t_grid.max())),
    )


def lambda_schedule(n: int, exponent: float | None = None, c: float | None = None) -> float:
    """lambda_n = c * n^{-exponent}; exponent must exceed 1 for lambda_n = o(1/n)."""
    exponent = config.SCHEDULE_EXPONENT if exponent is None else exponent
    c = config.SCHEDULE_C if c is None else c
    if exponent <= 1:
        raise ScheduleNotSmallO(f"exponent {exponent:g} <= 1: c*n^-{exponent:g} is not o(1/n)")
    if c <= 0:
        raise ValueError(f"schedule constant must be > 0, got {c}")
    return c * float(n) ** (-exponent)


# ---------------------------------------------------------------------------
# Dynkin martingale
# ---------------------------------------------------------------------------

@dataclass
class DynkinReport:
    t_grid: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray

    @property
    def within_band(self) -> bool:
        """Replicate mean within 3 standard errors of 0 at every t."""
        return bool(np.all(np.abs(self.mean) <= 3 * self.stderr + config.TOL_SOLVE))


def dynkin_martingale(path: TrajectorySample, model: GeneratorModel, g, t_grid) -> np.ndarray:
    """M(t) = g(X_t) - g(X_0) - int_0^t Qg(X_s) ds on t_grid."""
    g = np.asarray(g, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    drift = _integrate_at(path, model.Q @ g, t_grid)
    idx = np.searchsorted(path.jump_times, t_grid, side="right")
    return g[path.states[idx]] - g[path.states[0]] - drift


def dynkin_martingale_check(paths, model: GeneratorModel, g, t_grid) -> DynkinReport:
    """Replicate mean/variance of the Dynkin martingale over independent paths."""
    samples = np.array([dynkin_martingale(p, model, g, t_grid) for p in paths])
    r = samples.shape[0]
    variance = samples.var(axis=0, ddof=1) if r > 1 else np.zeros(samples.shape[1])
    return DynkinReport(
        t_grid=np.asarray(t_grid, dtype=float),
        mean=samples.mean(axis=0),
        variance=variance,
        stderr=np.sqrt(variance / r),
    )
