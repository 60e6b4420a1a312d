"""The exact, simulate and verify commands: model loading, checks and report assembly."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fcltlab import config
from fcltlab.chain_model import (
    GeneratorModel,
    Observable,
    build_birth_death,
    build_cycle,
    build_random_reversible,
    build_two_state,
    center,
    load_model_file,
    named_observable,
)
from fcltlab.config import RunConfig
from fcltlab.errors import ConfigError
from fcltlab.simulator import default_t_grid, make_rng
from fcltlab.spectral import (
    abel_norm_curve,
    decompose,
    default_lambda_grid,
    energy_identity_residual,
    fractional_power_apply,
    frep_residual,
    laplace_resolvent,
    operator_norm_bounds,
    pi_norm,
    resolvent_apply,
    resolvent_identity_residual,
    sigma2_fractional_formula,
    sigma2_lambda,
    sigma2_range_formula,
    spectral_gap,
    sqrt_lambda_bound_check,
    tv_convergence_curve,
    yosida_potential_residual,
)
from fcltlab.verifier import (
    FcltExperiment,
    diagonal_argument_trace,
    lambda_collapse_test,
    normality_test,
    run_experiment,
    stationarity_test,
    variance_scaling_test,
)

logger = logging.getLogger(__name__)

KS_ALPHA = 0.01
GAP_LAMBDA = 1e-8  # sigma^2_lambda gap is checked at lambda = GAP_LAMBDA * s_min


@dataclass
class Outcome:
    report: dict
    header: list[str]
    rows: list[list]
    failures: list[tuple[str, float, float]] = field(default_factory=list)
    verdict: str = "pass"
    per_n: list = field(default_factory=list)  # NStats, for replicate dumps


class Checks:
    """Worst value seen per named contract, against its tolerance."""

    def __init__(self):
        self._worst: dict[str, tuple[float, float]] = {}

    def le(self, invariant: str, value: float, limit: float | None = None) -> bool:
        """Record `value <= limit`; limit defaults to the contract tolerance."""
        limit = config.tolerance(invariant) if limit is None else limit
        value = float(value)
        current = self._worst.get(invariant)
        if current is None or value > current[0] or np.isnan(value):
            self._worst[invariant] = (value, limit)
        return value <= limit

    def require(self, invariant: str, ok: bool):
        self.le(invariant, 0.0 if ok else 1.0, 0.0)

    @property
    def failures(self) -> list[tuple[str, float, float]]:
        return [(name, v, lim) for name, (v, lim) in self._worst.items() if not v <= lim]

    def to_dict(self) -> dict:
        return {name: {"max": v, "limit": lim, "passed": bool(v <= lim)}
                for name, (v, lim) in self._worst.items()}

    def rows(self) -> list[list]:
        return [[name, repr(v), repr(lim), v <= lim] for name, (v, lim) in self._worst.items()]


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def build_model(source: str | None) -> tuple[GeneratorModel, np.ndarray | None]:
    """Builtin name or model file; returns the model and any f stored in the file."""
    source = source or "two-state"
    if not config.is_builtin_model(source):
        return load_model_file(source)
    name, args = config.parse_model_spec(source)
    if name == "two-state":
        return build_two_state(), None
    if name == "birth-death":
        ones = np.ones(args[0] - 1)
        return build_birth_death(ones, ones), None
    if name == "random-reversible":
        return build_random_reversible(args[0], seed=args[1] if len(args) > 1 else 0), None
    return build_cycle(args[0]), None


def _read_observable_file(path: Path) -> np.ndarray:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Observable file {path} is not valid JSON: {e}")
    if isinstance(data, dict):
        data = data.get("f")
    if not isinstance(data, list):
        raise ConfigError(f"Observable file {path} needs a list or an \"f\" entry")
    return np.asarray(data, dtype=float)


def resolve_observable(spec: str | None, model: GeneratorModel, f_file: np.ndarray | None) -> Observable:
    """--f value (or the model file's f, or parity) centered under pi."""
    if spec is None:
        raw = f_file if f_file is not None else named_observable("parity", model)
    else:
        kind, value = config.parse_observable_spec(spec)
        if kind == "name":
            raw = named_observable(value, model)
        elif kind == "values":
            raw = np.asarray(value, dtype=float)
        else:
            raw = _read_observable_file(value)
    return center(raw, model)


def _sigma2(model: GeneratorModel, f, spec) -> float:
    if spec is not None:
        return sigma2_fractional_formula(spec, f, lambda_grid=[]).sigma2
    return sigma2_range_formula(model, f, lambda_grid=[]).sigma2


# ---------------------------------------------------------------------------
# exact
# ---------------------------------------------------------------------------

def cmd_exact(cfg: RunConfig) -> Outcome:
    """Both sigma^2 formulas, the sigma^2_lambda curve and the operator contracts."""
    model, f_file = build_model(cfg.model)
    f = resolve_observable(cfg.f, model, f_file)
    v = f.values
    spec = decompose(model) if model.reversible else None
    s_min = spectral_gap(model, spec)
    grid = default_lambda_grid(s_min)
    f_norm = pi_norm(v, model)
    checks = Checks()

    variance = sigma2_range_formula(model, f, lambda_grid=grid)
    sigma2 = variance.sigma2
    fractional = None
    if spec is not None:
        fractional = sigma2_fractional_formula(spec, f, lambda_grid=grid)
        checks.le("cross_formula", abs(sigma2 - fractional.sigma2) / max(1.0, sigma2))
    checks.require("sigma2_lambda_monotone", variance.monotone)
    sigma2_small = sigma2_lambda(model, f, GAP_LAMBDA * s_min)
    checks.le("sigma2_lambda_gap", (sigma2 - sigma2_small) / sigma2 if sigma2 > 0 else abs(sigma2_small))

    bounds = []
    for lam, mu in zip(grid, np.roll(grid, -1)):
        damped, drift = operator_norm_bounds(model, lam, spec)
        bounds.append({"lambda": lam, "lambda_R": damped, "Q_R": drift})
        checks.le("operator_norm", damped - 1.0)
        if model.reversible:
            checks.le("operator_norm", drift - 1.0)
        checks.le("frep", frep_residual(model, lam, v) / max(1.0, f_norm))
        r_norm = pi_norm(resolvent_apply(model, lam, v), model)
        checks.le("resolvent_identity",
                  resolvent_identity_residual(model, lam, mu, v) / max(1.0, r_norm))
        if spec is not None:
            lhs, rhs = sqrt_lambda_bound_check(spec, f, lam)
            bounds[-1]["sqrt_lambda"] = [lhs, rhs]
            checks.le("sqrt_lambda_bound", lhs - rhs)
            checks.le("energy_identity", energy_identity_residual(spec, f, lam) / max(1.0, f_norm ** 2))

    if spec is not None:
        half = fractional_power_apply(spec, 0.5, v)
        generator_f = -model.Q @ v
        checks.le("power_calculus", pi_norm(fractional_power_apply(spec, 0.5, half) - generator_f, model)
                  / max(1.0, pi_norm(generator_f, model)))
        checks.le("power_calculus", pi_norm(fractional_power_apply(spec, -0.5, half) - v, model)
                  / max(1.0, f_norm))

    yosida_lambdas = s_min * 10.0 ** -np.arange(config.YOSIDA_DECADES + 1)
    yosida = yosida_potential_residual(model, f, yosida_lambdas)
    checks.require("yosida_monotone", yosida.monotone)
    checks.le("yosida", yosida.residuals[-1] / max(yosida.potential_norm, config.TOL_EXACT))
    abel_constant = abel_norm_curve(model, np.ones(model.m), yosida_lambdas)
    checks.le("abel_constant", max(abs(a - 1.0) for a in abel_constant))

    exact_resolvent = resolvent_apply(model, s_min, v)
    laplace = laplace_resolvent(model, s_min, v, horizon=config.LAPLACE_HORIZON / s_min, spec=spec)
    checks.le("laplace", pi_norm(laplace - exact_resolvent, model)
              / max(1.0, pi_norm(exact_resolvent, model)))

    t_grid = default_t_grid(cfg.t_max, cfg.t_points)
    tv = tv_convergence_curve(model, t_grid)
    checks.le("tv", float(np.diff(tv, axis=1).max(initial=0.0)))

    report = {
        "command": "exact",
        "model": cfg.model or "two-state",
        "m": model.m,
        "reversible": model.reversible,
        "pi": model.pi,
        "f": v,
        "s_min": s_min,
        "sigma2": sigma2,
        "range_formula": variance.to_dict(),
        "fractional_formula": fractional.to_dict() if fractional else None,
        "operator_bounds": bounds,
        "yosida": {
            "lambdas": yosida.lambdas,
            "residuals": yosida.residuals,
            "damped_norms": yosida.damped_norms,
            "potential_norm": yosida.potential_norm,
            "abel_constant": abel_constant,
        },
        "tv": {"t": t_grid, "curve": tv},
        "checks": checks.to_dict(),
    }
    failures = checks.failures
    logger.info("exact: sigma2 = %.12g, %d failed checks", sigma2, len(failures))
    return Outcome(
        report=report,
        header=["invariant", "max", "limit", "passed"],
        rows=[["sigma2", repr(sigma2), "", True]] + checks.rows(),
        failures=failures,
        verdict="fail" if failures else "pass",
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> Outcome:
    """Replicate sweep over n_list and the statistical verdicts."""
    model, f_file = build_model(cfg.model)
    f = resolve_observable(cfg.f, model, f_file)
    spec = decompose(model) if model.reversible else None
    sigma2 = _sigma2(model, f, spec)
    experiment = FcltExperiment(
        model=model,
        f=f,
        n_list=cfg.n_list,
        replicates=cfg.replicates,
        seed=cfg.seed,
        schedule=(cfg.schedule_exponent, cfg.schedule_c),
        t_grid=default_t_grid(cfg.t_max, cfg.t_points),
    )
    stats = run_experiment(experiment, workers=cfg.workers, keep=cfg.dump_replicates)

    checks = Checks()
    checks.le("pathwise_identity", stats.identity_residual)
    stationarity = stationarity_test(stats, cfg.t_max)
    variance = variance_scaling_test(stats, sigma2, spec, f)
    normality = normality_test(stats, sigma2, cfg.t_max) if sigma2 > 0 else []
    collapse = lambda_collapse_test(stats, spec, f)
    statistical_ok = (all(mv.passed for mv in stationarity)
                      and all(vv.passed for vv in variance)
                      and all(k.pvalue > KS_ALPHA for k in normality)
                      and collapse.decreasing and collapse.envelope_ok)
    failures = checks.failures

    report = {
        "command": "simulate",
        "model": cfg.model or "two-state",
        "m": model.m,
        "reversible": model.reversible,
        "f": f.values,
        "sigma2": sigma2,
        "stats": stats.to_dict(),
        "stationarity": [vars(mv) | {"passed": mv.passed} for mv in stationarity],
        "variance": [vars(vv) | {"passed": vv.passed} for vv in variance],
        "normality": [vars(k) for k in normality],
        "collapse": collapse.to_dict(),
        "checks": checks.to_dict(),
        "verdict": "pass" if statistical_ok and not failures else "fail",
    }
    if cfg.trace_epsilon is not None:
        if spec is None:
            logger.warning("Skipping the diagonal trace: model is not reversible")
        else:
            trace = diagonal_argument_trace(
                model, f, cfg.trace_epsilon, n_list=cfg.n_list, replicates=cfg.replicates,
                seed=cfg.seed, schedule=(cfg.schedule_exponent, cfg.schedule_c), t_max=cfg.t_max)
            report["trace"] = trace.to_dict()

    rows = []
    by_n = {k.n: k for k in normality}
    for mv, vv, row in zip(stationarity, variance, collapse.rows):
        ks = by_n.get(vv.n)
        rows.append([
            vv.n, repr(row.lambda_n), repr(vv.t), repr(mv.mean), repr(mv.se), mv.passed,
            repr(vv.empirical), repr(vv.se),
            "" if vv.oracle is None else repr(vv.oracle), repr(vv.asymptotic), vv.passed,
            "" if ks is None else repr(ks.statistic), "" if ks is None else repr(ks.pvalue),
            repr(row.median_sup), repr(row.mean_sup2), "" if row.bound is None else repr(row.bound),
            repr(stats.for_n(vv.n).identity_residual),
        ])
    logger.info("simulate: verdict %s", report["verdict"])
    return Outcome(
        report=report,
        header=["n", "lambda_n", "t", "mean", "mean_se", "mean_pass", "var_empirical", "var_se",
                "var_oracle", "sigma2_t", "var_pass",
                "ks_statistic", "ks_pvalue", "median_sup_Lambda", "mean_sup2", "envelope_bound",
                "identity_residual"],
        rows=rows,
        failures=failures,
        verdict=report["verdict"],
        per_n=stats.per_n,
    )


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def suite_models(cfg: RunConfig):
    """Yield (label, model) for the property suite.

    No model: random reversible chains with 2..suite_max_states states.
    random-reversible(m[, seed]): suite_models chains with m states.
    Anything else: that single model.
    """
    fixed_m = base = None
    if cfg.model is not None:
        name, args = (config.parse_model_spec(cfg.model) if config.is_builtin_model(cfg.model)
                      else (None, ()))
        if name != "random-reversible":
            yield cfg.model, build_model(cfg.model)[0]
            return
        fixed_m = args[0]
        base = args[1] if len(args) > 1 else None
    for k in range(cfg.suite_models):
        rng = make_rng(cfg.seed if base is None else base, k)
        m = fixed_m or int(rng.integers(2, cfg.suite_max_states + 1))
        seed = int(rng.integers(2 ** 31))
        yield f"random-reversible({m}, {seed})", build_random_reversible(m, seed=seed)


def _two_state_checks(checks: Checks, model: GeneratorModel, f: np.ndarray, grid):
    """sigma^2 = 2 ||f||^2 / (a + b) and sigma^2_lambda = 2 s ||f||^2 / (lambda + s)^2, s = a + b."""
    s = model.Q[0, 1] + model.Q[1, 0]
    norm2 = pi_norm(f, model) ** 2
    sigma2 = sigma2_range_formula(model, f, lambda_grid=[]).sigma2
    checks.le("two_state_closed_form", abs(sigma2 - 2 * norm2 / s) / max(1.0, sigma2))
    for lam in grid:
        closed = 2 * s * norm2 / (lam + s) ** 2
        checks.le("two_state_closed_form", abs(sigma2_lambda(model, f, lam) - closed) / max(1.0, closed))


def _suite_model_checks(checks: Checks, model: GeneratorModel, rng: np.random.Generator, draws: int):
    spec = decompose(model) if model.reversible else None
    s_min = spectral_gap(model, spec)
    for _ in range(draws):
        raw = rng.standard_normal(model.m)
        v = center(raw, model).values
        lam, mu = s_min * 10.0 ** rng.uniform(-3, 3, size=2)
        checks.le("frep", frep_residual(model, lam, raw) / max(1.0, pi_norm(raw, model)))
        r_norm = pi_norm(resolvent_apply(model, lam, raw), model)
        checks.le("resolvent_identity", resolvent_identity_residual(model, lam, mu, raw) / max(1.0, r_norm))
        damped, drift = operator_norm_bounds(model, lam, spec)
        checks.le("operator_norm", damped - 1.0)
        if spec is None:
            continue
        checks.le("operator_norm", drift - 1.0)
        lhs, rhs = sqrt_lambda_bound_check(spec, v, lam)
        checks.le("sqrt_lambda_bound", lhs - rhs)
        checks.le("energy_identity", energy_identity_residual(spec, v, lam) / max(1.0, pi_norm(v, model) ** 2))
        generator_v = -model.Q @ v
        half = fractional_power_apply(spec, 0.5, v)
        checks.le("power_calculus", pi_norm(fractional_power_apply(spec, 0.5, half) - generator_v, model)
                  / max(1.0, pi_norm(generator_v, model)))

    # one centered observable per model for the lambda -> 0 limits
    v = center(rng.standard_normal(model.m), model).values
    grid = default_lambda_grid(s_min)
    variance = sigma2_range_formula(model, v, lambda_grid=grid)
    checks.require("sigma2_lambda_monotone", variance.monotone)
    sigma2_small = sigma2_lambda(model, v, GAP_LAMBDA * s_min)
    checks.le("sigma2_lambda_gap", (variance.sigma2 - sigma2_small) / max(variance.sigma2, config.TOL_EXACT))
    if spec is not None:
        fractional = sigma2_fractional_formula(spec, v, lambda_grid=[])
        checks.le("cross_formula", abs(variance.sigma2 - fractional.sigma2) / max(1.0, variance.sigma2))
    yosida_lambdas = s_min * 10.0 ** -np.arange(config.YOSIDA_DECADES + 1)
    yosida = yosida_potential_residual(model, v, yosida_lambdas)
    checks.require("yosida_monotone", yosida.monotone)
    checks.le("yosida", yosida.residuals[-1] / max(yosida.potential_norm, config.TOL_EXACT))
    checks.le("abel_constant", max(abs(a - 1.0) for a in abel_norm_curve(model, np.ones(model.m), yosida_lambdas)))
    if model.m == 2:
        _two_state_checks(checks, model, v, grid)


def cmd_verify(cfg: RunConfig) -> Outcome:
    """Randomized operator property suite; max residual per inequality."""
    checks = Checks()
    labels = []
    for k, (label, model) in enumerate(suite_models(cfg)):
        _suite_model_checks(checks, model, make_rng(cfg.seed, k, 1), cfg.suite_draws)
        labels.append({"model": label, "m": model.m, "reversible": model.reversible})
        logger.debug("suite model %d: %s", k, label)
    failures = checks.failures
    logger.info("verify: %d models, %d failed invariants", len(labels), len(failures))
    return Outcome(
        report={
            "command": "verify",
            "models": labels,
            "draws": cfg.suite_draws,
            "checks": checks.to_dict(),
            "verdict": "fail" if failures else "pass",
        },
        header=["invariant", "max_residual", "limit", "passed"],
        rows=checks.rows(),
        failures=failures,
        verdict="fail" if failures else "pass",
    )


COMMANDS = {
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}
