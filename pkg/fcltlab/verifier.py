"""Replicate sweeps and quantitative FCLT verdicts."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
import scipy.stats as sps

from fcltlab import config
from fcltlab.chain_model import GeneratorModel, Observable
from fcltlab.errors import ConfigError, DegenerateObservable, ScheduleNotSmallO
from fcltlab.simulator import (
    ScaledPaths,
    default_t_grid,
    lambda_schedule,
    make_rng,
    resolvent_split,
    sample_path,
    scaled_decomposition,
    sup_abs_integral,
)
from fcltlab.spectral import (
    SpectralData,
    centered_values,
    decompose,
    fractional_power_apply,
    pi_norm,
    sigma2_fractional_formula,
    sigma2_lambda,
    sigma2_range_formula,
    spectral_gap,
    default_lambda_grid,
)

logger = logging.getLogger(__name__)

_SUP_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class FcltExperiment:
    model: GeneratorModel
    f: Observable
    n_list: tuple[int, ...]
    replicates: int
    seed: int
    schedule: tuple[float, float] = (config.SCHEDULE_EXPONENT, config.SCHEDULE_C)
    t_grid: np.ndarray = field(default_factory=default_t_grid)
    initial_state: int | None = None
    fixed_lambda: float | None = None  # negative control only: bypasses the schedule

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.replicates < config.MIN_REPLICATES:
            raise ConfigError(f"need at least {config.MIN_REPLICATES} replicates, got {self.replicates}")
        if not self.n_list or any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigError(f"n_list must be nonempty and increasing, got {self.n_list}")
        if self.fixed_lambda is None:
            lambda_schedule(self.n_list[0], *self.schedule)  # validates exponent
        elif self.fixed_lambda <= 0:
            raise ConfigError("fixed_lambda must be > 0")

    @property
    def horizon_t(self) -> float:
        return float(self.t_grid.max())

    def lambda_for(self, n: int) -> float:
        if self.fixed_lambda is not None:
            return self.fixed_lambda
        return lambda_schedule(n, *self.schedule)


@dataclass
class NStats:
    """Replicate aggregate for one scaling n."""

    n: int
    lambda_n: float
    t_grid: np.ndarray
    I_samples: np.ndarray  # (replicates, len(t_grid))
    sup_Lambda: np.ndarray  # (replicates,)
    identity_residual: float  # max |I - Lambda - A| / (1 + max|I|)
    dumped: list[ScaledPaths] = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return self.I_samples.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.I_samples.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        return self.I_samples.var(axis=0, ddof=1)

    @property
    def sup_quantiles(self) -> dict[str, float]:
        return {f"q{int(q * 100):02d}": float(np.quantile(self.sup_Lambda, q)) for q in _SUP_QUANTILES}

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lambda_n": self.lambda_n,
            "t_grid": self.t_grid.tolist(),
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "sup_Lambda_quantiles": self.sup_quantiles,
            "sup_Lambda_mean_sq": float(np.mean(self.sup_Lambda ** 2)),
            "identity_residual": self.identity_residual,
        }


@dataclass
class ReplicateStats:
    seed: int
    replicates: int
    schedule: tuple[float, float]
    fixed_lambda: float | None
    per_n: list[NStats]

    def for_n(self, n: int) -> NStats:
        for ns in self.per_n:
            if ns.n == n:
                return ns
        raise KeyError(n)

    @property
    def identity_residual(self) -> float:
        return max(ns.identity_residual for ns in self.per_n)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "replicates": self.replicates,
            "schedule": {"exponent": self.schedule[0], "c": self.schedule[1]},
            "fixed_lambda": self.fixed_lambda,
            "per_n": [ns.to_dict() for ns in self.per_n],
        }


# ---------------------------------------------------------------------------
# Replicate sweep
# ---------------------------------------------------------------------------

def _replicate(context, r: int) -> ScaledPaths:
    model, split, n, lam, t_grid, seed, initial_state = context
    horizon = n * float(t_grid.max())
    path = sample_path(model, horizon, seed, r, initial_state=initial_state, rng=make_rng(seed, r, n))
    return scaled_decomposition(path, model, split[0], n, lam, t_grid, split=split)


def _fold(n: int, lam: float, t_grid: np.ndarray, outcomes: list[ScaledPaths], keep: int) -> NStats:
    I_samples = np.array([o.I_vals for o in outcomes])
    residual = max(o.identity_residual / (1.0 + float(np.abs(o.I_vals).max())) for o in outcomes)
    return NStats(
        n=n,
        lambda_n=lam,
        t_grid=t_grid,
        I_samples=I_samples,
        sup_Lambda=np.array([o.sup_abs_Lambda for o in outcomes]),
        identity_residual=residual,
        dumped=outcomes[:keep],
    )


def run_experiment(experiment: FcltExperiment, workers: int | None = None, keep: int = 0) -> ReplicateStats:
    """One independent path of horizon n*T per replicate, for every n; results in replicate order."""
    workers = config.WORKERS if workers is None else workers
    per_n = []
    for n in experiment.n_list:
        lam = experiment.lambda_for(n)
        split = resolvent_split(experiment.model, experiment.f, lam)
        context = (experiment.model, split, n, lam, experiment.t_grid, experiment.seed,
                   experiment.initial_state)
        worker = partial(_replicate, context)
        replicates = range(experiment.replicates)
        if workers == 1:
            outcomes = [worker(r) for r in replicates]
        else:
            chunksize = max(1, experiment.replicates // (4 * workers))
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(worker, replicates, chunksize=chunksize))
        per_n.append(_fold(n, lam, experiment.t_grid, outcomes, keep))
        logger.info("n=%d: %d replicates, lambda_n=%.3g", n, experiment.replicates, lam)
    return ReplicateStats(
        seed=experiment.seed,
        replicates=experiment.replicates,
        schedule=tuple(experiment.schedule),
        fixed_lambda=experiment.fixed_lambda,
        per_n=per_n,
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def finite_t_variance_oracle(spec: SpectralData, f, t: float) -> float:
    """Var int_0^t f(X) ds under stationarity: 2 sum_k c_k^2 (s_k t - 1 + e^{-s_k t}) / s_k^2."""
    v = centered_values(f, spec.model_ref)
    c2 = spec.coefficients(v)[1:] ** 2
    s = spec.gaps
    st = s * t
    return float(2.0 * np.sum(c2 * (st + np.expm1(-st)) / s ** 2))


def scaled_variance(spec: SpectralData, f, n: int, t: float) -> float:
    """Exact Var[I_n(f, t)]."""
    return finite_t_variance_oracle(spec, f, n * t) / n


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

@dataclass
class VarianceVerdict:
    n: int
    t: float
    empirical: float
    se: float
    asymptotic: float  # sigma^2 t
    asymptotic_pass: bool
    oracle: float | None
    oracle_pass: bool | None

    @property
    def passed(self) -> bool:
        return self.oracle_pass if self.oracle_pass is not None else self.asymptotic_pass


def _grid_index(t_grid: np.ndarray, t: float) -> int:
    return int(np.abs(t_grid - t).argmin())


def variance_scaling_test(stats: ReplicateStats, sigma2: float, spec: SpectralData | None = None,
                          f=None, t_points=None) -> list[VarianceVerdict]:
    """Empirical Var[I_n(f,t)] against sigma^2 t and, given spec and f, the exact finite-n value.

    The band is 3 SE with SE = sqrt(2/(R-1)) * empirical variance.
    """
    if stats.replicates < config.MIN_REPLICATES:
        raise ConfigError(f"need at least {config.MIN_REPLICATES} replicates")
    verdicts = []
    for ns in stats.per_n:
        points = t_points if t_points is not None else (float(ns.t_grid.max()),)
        for t in points:
            j = _grid_index(ns.t_grid, t)
            t_used = float(ns.t_grid[j])
            empirical = float(ns.variance[j])
            se = math.sqrt(2.0 / (ns.replicates - 1)) * empirical
            target = sigma2 * t_used
            oracle = oracle_pass = None
            if spec is not None and f is not None:
                oracle = scaled_variance(spec, f, ns.n, t_used)
                oracle_pass = abs(empirical - oracle) <= 3 * se
            verdicts.append(VarianceVerdict(
                n=ns.n, t=t_used, empirical=empirical, se=se, asymptotic=target,
                asymptotic_pass=abs(empirical - target) <= 3 * se,
                oracle=oracle, oracle_pass=oracle_pass,
            ))
    return verdicts


@dataclass
class MeanVerdict:
    n: int
    t: float
    mean: float
    se: float  # sample std / sqrt(R)

    @property
    def passed(self) -> bool:
        return abs(self.mean) <= 3 * self.se


def stationarity_test(stats: ReplicateStats, t: float | None = None) -> list[MeanVerdict]:
    """Replicate mean of I_n(f,t) against 0, which holds for centered f under pi."""
    verdicts = []
    for ns in stats.per_n:
        j = _grid_index(ns.t_grid, float(ns.t_grid.max()) if t is None else t)
        samples = ns.I_samples[:, j]
        verdicts.append(MeanVerdict(
            n=ns.n,
            t=float(ns.t_grid[j]),
            mean=float(samples.mean()),
            se=float(samples.std(ddof=1) / math.sqrt(samples.size)),
        ))
    return verdicts


@dataclass
class KsResult:
    n: int
    t: float
    statistic: float
    pvalue: float
    valid: bool  # enough replicates for the asymptotic p-value


def ks_normal(samples, variance: float) -> tuple[float, float]:
    """Two-sided KS against Normal(0, variance), asymptotic Kolmogorov p-value."""
    result = sps.kstest(np.asarray(samples, dtype=float), "norm",
                        args=(0.0, math.sqrt(variance)), method="asymp")
    return float(result.statistic), float(result.pvalue)


def normality_test(stats: ReplicateStats, sigma2: float, t: float) -> list[KsResult]:
    """KS of {I_n(f,t)} against Normal(0, sigma^2 t) for each n."""
    if sigma2 <= 0:
        raise DegenerateObservable("sigma^2 = 0: the limit law is a point mass")
    results = []
    for ns in stats.per_n:
        j = _grid_index(ns.t_grid, t)
        t_used = float(ns.t_grid[j])
        if t_used <= 0:
            raise ValueError("normality test needs t > 0")
        statistic, pvalue = ks_normal(ns.I_samples[:, j], sigma2 * t_used)
        results.append(KsResult(n=ns.n, t=t_used, statistic=statistic, pvalue=pvalue,
                                valid=ns.replicates >= config.MIN_REPLICATES_KS))
    return results


@dataclass
class CalibrationReport:
    trials: int
    alpha: float
    rejection_rate: float
    band: float  # binomial 3-sigma half width

    @property
    def passed(self) -> bool:
        return abs(self.rejection_rate - self.alpha) <= self.band


def ks_calibration(trials: int, sample_size: int, alpha: float = 0.05, seed: int = 0,
                   variance: float = 1.0) -> CalibrationReport:
    """Rejection rate of ks_normal on true normal samples."""
    rejections = 0
    for trial in range(trials):
        rng = make_rng(seed, trial)
        samples = rng.normal(0.0, math.sqrt(variance), size=sample_size)
        _, pvalue = ks_normal(samples, variance)
        rejections += pvalue < alpha
    band = 3.0 * math.sqrt(alpha * (1 - alpha) / trials)
    return CalibrationReport(trials=trials, alpha=alpha, rejection_rate=rejections / trials, band=band)


@dataclass
class CollapseRow:
    n: int
    lambda_n: float
    median_sup: float
    mean_sup2: float
    se_sup2: float
    bound: float | None  # 1/4 n T^2 lambda_n ||(-Q)^{-1/2} f||^2

    @property
    def within_envelope(self) -> bool | None:
        if self.bound is None:
            return None
        return self.mean_sup2 <= self.bound + 3 * self.se_sup2


@dataclass
class LambdaCollapseReport:
    rows: list[CollapseRow]

    @property
    def decreasing(self) -> bool:
        medians = [r.median_sup for r in self.rows]
        return all(b < a or b == 0.0 for a, b in zip(medians, medians[1:]))

    @property
    def envelope_ok(self) -> bool:
        return all(r.within_envelope is not False for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "decreasing": self.decreasing,
            "envelope_ok": self.envelope_ok,
            "rows": [vars(r) | {"within_envelope": r.within_envelope} for r in self.rows],
        }


def lambda_collapse_test(stats: ReplicateStats, spec: SpectralData | None = None, f=None,
                         allow_unscheduled: bool = False) -> LambdaCollapseReport:
    """Median sup|Lambda_n| across n, and mean sup^2 against the second-moment envelope."""
    if stats.fixed_lambda is not None and not allow_unscheduled:
        raise ScheduleNotSmallO("fixed lambda is not a schedule with lambda_n = o(1/n)")
    if stats.fixed_lambda is None and stats.schedule[0] <= 1:
        raise ScheduleNotSmallO(f"schedule exponent {stats.schedule[0]:g} <= 1")
    norm2 = None
    if spec is not None and f is not None:
        norm2 = pi_norm(fractional_power_apply(spec, -0.5, f), spec.model_ref) ** 2
    rows = []
    for ns in stats.per_n:
        sup2 = ns.sup_Lambda ** 2
        T = float(ns.t_grid.max())
        rows.append(CollapseRow(
            n=ns.n,
            lambda_n=ns.lambda_n,
            median_sup=float(np.median(ns.sup_Lambda)),
            mean_sup2=float(sup2.mean()),
            se_sup2=float(sup2.std(ddof=1) / math.sqrt(sup2.size)),
            bound=None if norm2 is None else 0.25 * ns.n * T ** 2 * ns.lambda_n * norm2,
        ))
    return LambdaCollapseReport(rows=rows)


# ---------------------------------------------------------------------------
# sigma^2_lambda convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    sigma2: float
    s_min: float
    rows: list[tuple[float, float, float]]  # (lambda, sigma2_lambda, gap), lambda decreasing

    @property
    def gaps_ok(self) -> bool:
        """Gaps nonnegative and nonincreasing as lambda decreases."""
        tol = config.TOL_IDENTITY * max(1.0, self.sigma2)
        gaps = [g for _, _, g in self.rows]
        return all(g >= -tol for g in gaps) and all(b <= a + tol for a, b in zip(gaps, gaps[1:]))

    def to_dict(self) -> dict:
        return {"sigma2": self.sigma2, "s_min": self.s_min,
                "rows": [list(r) for r in self.rows], "gaps_ok": self.gaps_ok}


def sigma2_convergence_report(model: GeneratorModel, f, lambda_grid=None,
                              spec: SpectralData | None = None) -> ConvergenceReport:
    """Table of (lambda, sigma^2_lambda, sigma^2 - sigma^2_lambda)."""
    v = centered_values(f, model)
    if model.reversible:
        spec = spec or decompose(model)
        sigma2 = sigma2_fractional_formula(spec, v, lambda_grid=[]).sigma2
    else:
        sigma2 = sigma2_range_formula(model, v, lambda_grid=[]).sigma2
    s_min = spectral_gap(model, spec)
    grid = default_lambda_grid(s_min) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    rows = []
    for lam in sorted(grid, reverse=True):
        s2l = sigma2_lambda(model, v, float(lam))
        rows.append((float(lam), s2l, sigma2 - s2l))
    return ConvergenceReport(sigma2=sigma2, s_min=s_min, rows=rows)


def gap_loglog_slope(report: ConvergenceReport, max_lambda: float | None = None) -> float:
    """Slope of log gap against log lambda over the small-lambda tail."""
    cutoff = 1e-2 * report.s_min if max_lambda is None else max_lambda
    tail = [(lam, gap) for lam, _, gap in report.rows if lam <= cutoff and gap > 0]
    if len(tail) < 2:
        raise ValueError("not enough positive gaps below the cutoff to fit a slope")
    lam, gap = np.array(tail).T
    return float(np.polyfit(np.log(lam), np.log(gap), 1)[0])


# ---------------------------------------------------------------------------
# Diagonal-argument trace
# ---------------------------------------------------------------------------

@dataclass
class TraceRow:
    n: int
    lambda_n: float
    median_sup_Lambda: float  # (a)
    cauchy_bound: float  # (b) sqrt(n) sqrt(max(lambda_n, lambda_l)) ||(-Q)^{-1/2} f|| T / 2
    cauchy_empirical: float  # mean sup_t |A_n(lambda_n, t) - A_n(lambda_l, t)|
    ks_statistic: float  # (d) KS of A_n(lambda_l, T) vs Normal(0, sigma^2_l T)
    ks_pvalue: float


@dataclass
class DiagonalTrace:
    epsilon: float
    sigma2: float
    ell: int  # (c) l_eps
    lambda_ell: float
    sigma2_ell: float
    rows: list[TraceRow]
    N1: int | None
    N2: int | None
    N3: int | None

    def to_dict(self) -> dict:
        d = {k: v for k, v in vars(self).items() if k != "rows"}
        d["rows"] = [vars(r) for r in self.rows]
        return d


def _first(rows: list[TraceRow], ok) -> int | None:
    return next((r.n for r in rows if ok(r)), None)


def diagonal_argument_trace(model: GeneratorModel, f, epsilon: float, n_list=(10, 100, 1000),
                            replicates: int = 200, seed: int = config.SEED,
                            schedule: tuple[float, float] | None = None, t_max: float = 1.0,
                            ell_candidates=None) -> DiagonalTrace:
    """Instantiate the epsilon bookkeeping of the lambda_n / lambda_l argument with KS proxies.

    l_eps is the smallest candidate l >= max(n_list) with sigma^2 - sigma^2_{lambda_l} <= epsilon;
    N1, N2, N3 are the first n meeting (a), (b) and (d) respectively.
    """
    spec = decompose(model)
    v = centered_values(f, model)
    exponent, c = schedule or (config.SCHEDULE_EXPONENT, config.SCHEDULE_C)
    norm_half = pi_norm(fractional_power_apply(spec, -0.5, v), model)
    sigma2 = sigma2_fractional_formula(spec, v, lambda_grid=[]).sigma2

    candidates = ell_candidates or [10 ** k for k in range(13)]
    n_max = max(n_list)
    ell = next((l for l in candidates
                if l >= n_max and sigma2 - sigma2_lambda(model, v, lambda_schedule(l, exponent, c)) <= epsilon),
               candidates[-1])
    lam_ell = lambda_schedule(ell, exponent, c)
    sigma2_ell = sigma2_lambda(model, v, lam_ell)
    split_ell = resolvent_split(model, v, lam_ell)
    t_grid = default_t_grid(t_max)

    rows = []
    for n in n_list:
        lam_n = lambda_schedule(n, exponent, c)
        split_n = resolvent_split(model, v, lam_n)
        cauchy_integrand = split_n[2] - split_ell[2]
        sups, cauchy, a_ell = [], [], []
        for r in range(replicates):
            path = sample_path(model, n * t_max, seed, r, rng=make_rng(seed, r, n, 1))
            scaled = scaled_decomposition(path, model, v, n, lam_n, t_grid, split=split_n)
            sups.append(scaled.sup_abs_Lambda)
            cauchy.append(sup_abs_integral(path, cauchy_integrand, n, t_max))
            a_ell.append(scaled_decomposition(path, model, v, n, lam_ell, [t_max], split=split_ell).A_vals[-1])
        statistic, pvalue = ks_normal(a_ell, sigma2_ell * t_max) if sigma2_ell > 0 else (0.0, 1.0)
        rows.append(TraceRow(
            n=n,
            lambda_n=lam_n,
            median_sup_Lambda=float(np.median(sups)),
            cauchy_bound=math.sqrt(n) * math.sqrt(max(lam_n, lam_ell)) * norm_half * t_max / 2,
            cauchy_empirical=float(np.mean(cauchy)),
            ks_statistic=statistic,
            ks_pvalue=pvalue,
        ))
        logger.debug("trace n=%d: median sup %.3g, KS %.3g", n, rows[-1].median_sup_Lambda, statistic)

    return DiagonalTrace(
        epsilon=epsilon,
        sigma2=sigma2,
        ell=ell,
        lambda_ell=lam_ell,
        sigma2_ell=sigma2_ell,
        rows=rows,
        N1=_first(rows, lambda r: r.median_sup_Lambda <= epsilon),
        N2=_first(rows, lambda r: r.cauchy_bound <= epsilon),
        N3=_first(rows, lambda r: r.ks_statistic <= epsilon),
    )
