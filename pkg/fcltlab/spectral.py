"""Operator calculus on 1-perp: resolvents, fractional powers, potentials, sigma^2."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy import stats
from scipy.integrate import quad_vec

from fcltlab import config
from fcltlab.chain_model import GeneratorModel, Observable
from fcltlab.errors import (
    ContractViolation,
    NotCentered,
    NotReversible,
    SingularSolve,
    SpectralFailure,
)

logger = logging.getLogger(__name__)

# pi-means at or below this times m * <|f|, 1>_pi are dot-product rounding
_ROUNDING = 8 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenpairs of a reversible generator, orthonormal in the pi-inner product.

    eigenvalues are sorted descending with eigenvalues[0] == 0 and
    eigenvectors[:, 0] the constant vector.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    model_ref: GeneratorModel

    @property
    def gaps(self) -> np.ndarray:
        """s_k = -mu_k for k >= 2."""
        return -self.eigenvalues[1:]

    @property
    def s_min(self) -> float:
        return float(self.gaps.min())

    def coefficients(self, f) -> np.ndarray:
        """<f, e_k>_pi for every mode (columnwise for a matrix argument)."""
        return self.eigenvectors.T @ _weight(self.model_ref.pi, np.asarray(f, dtype=float))


@dataclass
class VarianceReport:
    sigma2: float
    sigma2_lambda_curve: list[tuple[float, float]] = field(default_factory=list)
    formula_used: str = "range-inverse"

    @property
    def monotone(self) -> bool:
        """sigma^2_lambda nondecreasing as lambda decreases, never above sigma^2."""
        tol = config.TOL_IDENTITY * max(1.0, self.sigma2)
        values = [s for _, s in sorted(self.sigma2_lambda_curve, reverse=True)]
        rising = all(b >= a - tol for a, b in zip(values, values[1:]))
        return rising and all(v <= self.sigma2 + tol for v in values)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "curve": [[lam, s2l] for lam, s2l in self.sigma2_lambda_curve],
            "formula": self.formula_used,
        }


@dataclass
class YosidaReport:
    lambdas: list[float]
    residuals: list[float]
    damped_norms: list[float]  # ||lambda R_lambda g||_pi
    potential_norm: float  # ||(-Q)^{-1} g||_pi

    @property
    def monotone(self) -> bool:
        tol = config.TOL_SOLVE * max(1.0, self.potential_norm)
        r = self.residuals
        return all(b <= a + tol for a, b in zip(r, r[1:]))


def _weight(pi: np.ndarray, f: np.ndarray) -> np.ndarray:
    return pi[:, None] * f if f.ndim == 2 else pi * f


# ---------------------------------------------------------------------------
# Inner product
# ---------------------------------------------------------------------------

def pi_inner(f, g, model: GeneratorModel) -> float:
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    return float(np.sum(model.pi * f * g))


def pi_norm(f, model: GeneratorModel) -> float:
    return float(np.sqrt(max(pi_inner(f, f, model), 0.0)))


def _values(f) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, Observable) else f, dtype=float)


def centered_values(f, model: GeneratorModel) -> np.ndarray:
    """Vector of `f`, raising NotCentered if it has a constant component."""
    if isinstance(f, Observable) and not f.centered:
        raise NotCentered("observable is not centered under pi")
    v = _values(f)
    mean = abs(float(model.pi @ v))
    if mean > config.TOL_SOLVE * max(pi_norm(v, model), config.TOL_EXACT):
        raise NotCentered(f"<f, 1>_pi = {mean:.3e}; f is not in 1-perp")
    return v


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def decompose(model: GeneratorModel) -> SpectralData:
    """Symmetric eigendecomposition through S = D^{1/2} Q D^{-1/2}."""
    if not model.reversible:
        raise NotReversible("spectral decomposition needs a reversible model")
    d = np.sqrt(model.pi)
    S = d[:, None] * model.Q / d[None, :]
    S = 0.5 * (S + S.T)
    try:
        mu, V = la.eigh(S)
    except la.LinAlgError as e:
        raise SpectralFailure(f"eigensolver did not converge: {e}")

    order = np.argsort(mu)[::-1]
    mu, V = mu[order], V[:, order]
    E = V / d[:, None]
    # deterministic signs: e_1 positive, otherwise largest entry positive
    pivots = np.abs(E).argmax(axis=0)
    signs = np.sign(E[pivots, np.arange(E.shape[1])])
    signs[0] = np.sign(E[:, 0].sum())
    E = E * signs

    scale = max(1.0, float(np.abs(model.Q).max()))
    if abs(mu[0]) > config.TOL_SOLVE * scale:
        raise SpectralFailure(f"top eigenvalue {mu[0]:.3e} is not zero")
    mu[0] = 0.0
    if model.ergodic and model.m > 1 and mu[1] >= 0:
        raise SpectralFailure(f"second eigenvalue {mu[1]:.3e} is not negative")

    mu.setflags(write=False)
    E.setflags(write=False)
    logger.debug("Decomposed %d-state model, spectral gap %.4g", model.m,
                 -mu[1] if model.m > 1 else 0.0)
    return SpectralData(eigenvalues=mu, eigenvectors=E, model_ref=model)


def spectral_gap(model: GeneratorModel, spec: SpectralData | None = None) -> float:
    """Smallest nonzero decay rate s_min."""
    if model.reversible:
        return (spec or decompose(model)).s_min
    eig = la.eigvals(model.Q)
    eig = np.delete(eig, np.abs(eig).argmin())
    return float((-eig.real).min())


def default_lambda_grid(s_min: float, steps: int | None = None) -> np.ndarray:
    steps = config.LAMBDA_GRID_STEPS if steps is None else steps
    return s_min * 10.0 ** (-np.arange(steps + 1) / 2)


# ---------------------------------------------------------------------------
# Resolvents
# ---------------------------------------------------------------------------

def resolvent_apply(model: GeneratorModel, lam: float, f) -> np.ndarray:
    """R_lambda f = (lambda I - Q)^{-1} f by a dense direct solve.

    The constant mode c = <f, 1>_pi is split off and added back as c / lambda.
    A c at rounding level is taken as exactly 0, so small lambda never
    amplifies it. The 1-perp part is solved and re-projected onto 1-perp.
    Works column-wise on an (m, k) matrix.
    """
    if lam <= 0:
        raise ValueError(f"resolvent needs lambda > 0, got {lam}")
    v = _values(f)
    c = model.pi @ v
    noise = _ROUNDING * model.m * (model.pi @ np.abs(v))
    c = np.where(np.abs(c) <= noise, 0.0, c)
    shifted = lam * np.eye(model.m) - model.Q
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", la.LinAlgWarning)
            x = la.solve(shifted, v - c)
    except la.LinAlgError as e:
        raise SingularSolve(f"(lambda I - Q) singular at lambda={lam:g}: {e}")
    return x - model.pi @ x + c / lam


def frep_residual(model: GeneratorModel, lam: float, f) -> float:
    """||lambda R f + (-Q) R f - f||_pi."""
    f = _values(f)
    x = resolvent_apply(model, lam, f)
    return pi_norm(lam * x - model.Q @ x - f, model)


def resolvent_identity_residual(model: GeneratorModel, lam: float, mu: float, f) -> float:
    """||R_lam f - R_mu f - (mu - lam) R_lam R_mu f||_pi."""
    f = _values(f)
    r_lam = resolvent_apply(model, lam, f)
    r_mu = resolvent_apply(model, mu, f)
    return pi_norm(r_lam - r_mu - (mu - lam) * resolvent_apply(model, lam, r_mu), model)


def _pi_operator_norm(model: GeneratorModel, M: np.ndarray) -> float:
    """||M||_op in L^2(pi) by power iteration on K^T K, K = D^{1/2} M D^{-1/2}."""
    d = np.sqrt(model.pi)
    K = d[:, None] * M / d[None, :]
    B = K.T @ K
    x = np.random.default_rng(0).standard_normal(model.m)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(config.POWER_ITER_MAX):
        y = B @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(norm - estimate) <= config.POWER_ITER_TOL * norm:
            estimate = norm
            break
        estimate = norm
    else:
        logger.warning("Power iteration hit %d steps without converging", config.POWER_ITER_MAX)
    return float(np.sqrt(estimate))


def operator_norm_bounds(model: GeneratorModel, lam: float, spec: SpectralData | None = None,
                         method: str = "auto") -> tuple[float, float]:
    """(||lambda R_lambda||_op, ||Q R_lambda||_op) in the pi-weighted norm.

    method "spectral" needs a reversible model; "power" works for any model.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if method == "auto":
        method = "spectral" if model.reversible else "power"
    if method == "spectral":
        spec = spec or decompose(model)
        s = -spec.eigenvalues
        return float(np.max(lam / (lam + s))), float(np.max(s / (lam + s)))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    R = resolvent_apply(model, lam, np.eye(model.m))
    return _pi_operator_norm(model, lam * R), _pi_operator_norm(model, model.Q @ R)


# ---------------------------------------------------------------------------
# Fractional powers and potentials
# ---------------------------------------------------------------------------

def fractional_power_apply(spec: SpectralData, alpha: float, f) -> np.ndarray:
    """(-Q)^alpha f on 1-perp, mode by mode; the constant mode is dropped."""
    model = spec.model_ref
    v = _values(f)
    c = spec.coefficients(v)
    if alpha < 0 and abs(c[0]) > config.TOL_SOLVE * max(pi_norm(v, model), config.TOL_EXACT):
        raise NotCentered(f"f has constant component {c[0]:.3e}; not in the domain of (-Q)^{alpha:g}")
    return spec.eigenvectors[:, 1:] @ (spec.gaps ** alpha * c[1:])


def potential_apply(model: GeneratorModel, g) -> np.ndarray:
    """(-Q)^{-1} g on 1-perp: solve {-Q x = g, <x, 1>_pi = 0} in least squares."""
    g = centered_values(g, model)
    A = np.vstack([-model.Q, model.pi[None, :]])
    b = np.concatenate([g, [0.0]])
    x, *_ = la.lstsq(A, b)
    return x


# ---------------------------------------------------------------------------
# Diffusion coefficients
# ---------------------------------------------------------------------------

def sigma2_lambda(model: GeneratorModel, f, lam: float) -> float:
    """2 <-Q R_lambda f, R_lambda f>_pi."""
    v = centered_values(f, model)
    x = resolvent_apply(model, lam, v)
    return 2.0 * pi_inner(-model.Q @ x, x, model)


def sigma2_range_formula(model: GeneratorModel, f, lambda_grid=None) -> VarianceReport:
    """sigma^2 = 2 <(-Q)^{-1} f, f>_pi; valid for non-reversible models too.

    Both forms of the range formula are evaluated and must agree.
    """
    v = centered_values(f, model)
    g = potential_apply(model, v)
    sigma2 = 2.0 * pi_inner(g, v, model)
    h = -g  # Q h = f
    alt = -2.0 * pi_inner(h, model.Q @ h, model)
    gap = abs(sigma2 - alt)
    if gap > config.TOL_IDENTITY * max(1.0, abs(sigma2)):
        raise ContractViolation("sigma2_range_forms", gap, config.TOL_IDENTITY)

    if lambda_grid is None:
        lambda_grid = default_lambda_grid(spectral_gap(model))
    curve = [(float(lam), sigma2_lambda(model, v, lam)) for lam in lambda_grid]
    return VarianceReport(sigma2=sigma2, sigma2_lambda_curve=curve, formula_used="range-inverse")


def sigma2_fractional_formula(spec: SpectralData, f, lambda_grid=None) -> VarianceReport:
    """sigma^2 = 2 ||(-Q)^{-1/2} f||_pi^2 = 2 sum_k <f, e_k>^2 / s_k."""
    v = centered_values(f, spec.model_ref)
    c2 = spec.coefficients(v)[1:] ** 2
    s = spec.gaps
    sigma2 = float(2.0 * np.sum(c2 / s))
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(spec.s_min)
    curve = [(float(lam), float(2.0 * np.sum(s * c2 / (lam + s) ** 2))) for lam in lambda_grid]
    return VarianceReport(sigma2=sigma2, sigma2_lambda_curve=curve, formula_used="fractional-power")


def sqrt_lambda_bound_check(spec: SpectralData, f, lam: float) -> tuple[float, float]:
    """(sqrt(lambda) ||R_lambda f||_pi, 1/2 ||(-Q)^{-1/2} f||_pi); lhs <= rhs."""
    model = spec.model_ref
    v = centered_values(f, model)
    lhs = np.sqrt(lam) * pi_norm(resolvent_apply(model, lam, v), model)
    rhs = 0.5 * pi_norm(fractional_power_apply(spec, -0.5, v), model)
    return float(lhs), float(rhs)


def energy_identity_residual(spec: SpectralData, f, lam: float) -> float:
    """|<f, R f> - lambda ||R f||^2 - ||(-Q)^{1/2} R f||^2|, the identity behind the sqrt-lambda bound."""
    model = spec.model_ref
    v = centered_values(f, model)
    x = resolvent_apply(model, lam, v)
    half = fractional_power_apply(spec, 0.5, x)
    return abs(pi_inner(v, x, model) - lam * pi_inner(x, x, model) - pi_inner(half, half, model))


def yosida_potential_residual(model: GeneratorModel, g, lambda_sequence) -> YosidaReport:
    """||R_lambda g - (-Q)^{-1} g||_pi along a decreasing lambda sequence."""
    v = centered_values(g, model)
    lambdas = [float(lam) for lam in lambda_sequence]
    if not lambdas or lambdas[-1] <= 0 or any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda_sequence must be positive and strictly decreasing")
    potential = potential_apply(model, v)
    residuals, damped = [], []
    for lam in lambdas:
        x = resolvent_apply(model, lam, v)
        residuals.append(pi_norm(x - potential, model))
        damped.append(pi_norm(lam * x, model))
    return YosidaReport(lambdas=lambdas, residuals=residuals, damped_norms=damped,
                        potential_norm=pi_norm(potential, model))


def abel_norm_curve(model: GeneratorModel, f, lambdas) -> list[float]:
    """||lambda R_lambda f||_pi; tends to |<f, 1>_pi| as lambda decreases."""
    v = _values(f)
    return [pi_norm(lam * resolvent_apply(model, lam, v), model) for lam in lambdas]


# ---------------------------------------------------------------------------
# Semigroup
# ---------------------------------------------------------------------------

def _uniformized(model: GeneratorModel, t: float, f: np.ndarray) -> np.ndarray:
    rate = float(model.exit_rates.max())
    if rate == 0.0:
        return f.copy()
    P = np.eye(model.m) + model.Q / rate
    mean = rate * t
    k_max = int(stats.poisson.isf(config.TOL_SEMIGROUP, mean)) + 1
    weights = stats.poisson.pmf(np.arange(k_max + 1), mean)
    term = f.copy()
    acc = weights[0] * term
    for w in weights[1:]:
        term = P @ term
        acc += w * term
    return acc


def semigroup_apply(model: GeneratorModel, t: float, f, method: str = "auto",
                    spec: SpectralData | None = None) -> np.ndarray:
    """e^{tQ} f by uniformization, or spectrally for reversible models.

    `f` may be a vector or a matrix of column vectors.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    f = _values(f)
    if t == 0:
        return f.copy()
    if method == "auto":
        method = "spectral" if model.reversible else "uniformization"
    if method == "uniformization":
        return _uniformized(model, t, f)
    if method != "spectral":
        raise ValueError(f"unknown method {method!r}")
    spec = spec or decompose(model)
    decay = np.exp(spec.eigenvalues * t)
    c = spec.coefficients(f)
    return spec.eigenvectors @ (decay[:, None] * c if c.ndim == 2 else decay * c)


def transition_matrix(model: GeneratorModel, t: float, method: str = "auto",
                      spec: SpectralData | None = None) -> np.ndarray:
    """p(t; x, y) as an m x m matrix."""
    return semigroup_apply(model, t, np.eye(model.m), method=method, spec=spec)


def tv_convergence_curve(model: GeneratorModel, t_grid, method: str = "auto") -> np.ndarray:
    """Total-variation distance of p(t; x, .) to pi, shape (m, len(t_grid))."""
    spec = decompose(model) if model.reversible and method != "uniformization" else None
    curve = np.empty((model.m, len(t_grid)))
    for j, t in enumerate(t_grid):
        p = transition_matrix(model, float(t), method=method, spec=spec)
        curve[:, j] = 0.5 * np.abs(p - model.pi[None, :]).sum(axis=1)
    order = np.argsort(t_grid)
    if np.any(np.diff(curve[:, order], axis=1) > config.TOL_SOLVE):
        logger.warning("TV curve is not nonincreasing in t")
    return curve


def laplace_resolvent(model: GeneratorModel, lam: float, f, horizon: float,
                      spec: SpectralData | None = None) -> np.ndarray:
    """int_0^T e^{-lambda s} e^{sQ} f ds plus the exact tail e^{-lambda T} R_lambda e^{TQ} f."""
    v = _values(f)
    if model.reversible and spec is None:
        spec = decompose(model)

    def integrand(s):
        return np.exp(-lam * s) * semigroup_apply(model, s, v, spec=spec)

    body, err = quad_vec(integrand, 0.0, horizon, epsabs=1e-12, epsrel=1e-10)
    logger.debug("Laplace integral on [0, %g]: estimated error %.2e", horizon, err)
    tail = np.exp(-lam * horizon) * resolvent_apply(model, lam, semigroup_apply(model, horizon, v, spec=spec))
    return body + tail
