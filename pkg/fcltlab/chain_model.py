"""Finite-state Markov generators, invariant laws and centered observables."""

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
from scipy.sparse.csgraph import connected_components

from fcltlab import config
from fcltlab.errors import (
    ConfigError,
    DegenerateObservable,
    NotAGenerator,
    NotErgodic,
    ZeroRate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GeneratorModel:
    """Rate matrix Q with its invariant law and two certificates.

    Q and pi are read-only arrays; the model is safe to share between workers.
    """

    states: tuple
    Q: np.ndarray
    pi: np.ndarray
    reversible: bool
    ergodic: bool

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def detailed_balance_residual(self) -> float:
        flux = self.pi[:, None] * self.Q
        return float(np.abs(flux - flux.T).max())

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.Q)


@dataclass(frozen=True, eq=False)
class Observable:
    """A function on the state space, stored as a vector."""

    values: np.ndarray
    centered: bool

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


# ---------------------------------------------------------------------------
# Validation and certificates
# ---------------------------------------------------------------------------

def _check_generator(Q: np.ndarray):
    """Raise NotAGenerator naming the first offending row."""
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise NotAGenerator(f"Q must be a square matrix, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise NotAGenerator("Q has non-finite entries")
    off = Q - np.diag(np.diag(Q))
    bad = np.argwhere(off < 0)
    if bad.size:
        i, j = bad[0]
        raise NotAGenerator(f"row {i}: negative rate Q[{i},{j}] = {Q[i, j]:g}")
    scale = np.maximum(1.0, np.abs(Q).max(axis=1))
    sums = np.abs(Q.sum(axis=1))
    bad_rows = np.flatnonzero(sums > config.TOL_EXACT * scale)
    if bad_rows.size:
        i = bad_rows[0]
        raise NotAGenerator(f"row {i}: rates sum to {Q[i].sum():.3e}, expected 0")


def is_strongly_connected(Q: np.ndarray) -> bool:
    """Graph certificate: directed graph of positive off-diagonal rates is one strong component."""
    adjacency = (Q - np.diag(np.diag(Q))) > 0
    n_components, _ = connected_components(adjacency, directed=True, connection="strong")
    return n_components == 1


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Invariant law as the normalized left null vector of Q.

    Raises NotErgodic when the null space is not one-dimensional or the
    null vector is not of one sign.
    """
    scale = max(1.0, float(np.abs(Q).max()))
    kernel = la.null_space(Q.T / scale, rcond=config.TOL_SOLVE)
    if kernel.shape[1] != 1:
        raise NotErgodic(f"null space of Q has dimension {kernel.shape[1]}, expected 1")
    v = kernel[:, 0]
    pi = v / v.sum()
    if np.any(pi <= 0):
        raise NotErgodic("left null vector of Q is not strictly positive")
    return pi


def _finalize(Q: np.ndarray, states=None, pi_hint: np.ndarray | None = None) -> GeneratorModel:
    """Validate Q, compute pi, set certificates. Both ergodicity certificates must hold."""
    Q = np.array(Q, dtype=float)
    if Q.ndim == 2 and Q.shape[0] < 2:
        raise ConfigError(f"a model needs at least 2 states, got {Q.shape[0]}")
    _check_generator(Q)
    m = Q.shape[0]
    if not is_strongly_connected(Q):
        raise NotErgodic("rate graph is not strongly connected")
    pi = stationary_distribution(Q)
    if pi_hint is not None:
        hint = np.asarray(pi_hint, dtype=float)
        hint = hint / hint.sum()
        gap = float(np.abs(hint - pi).max())
        if gap > config.TOL_SOLVE:
            raise NotAGenerator(
                f"constructed pi disagrees with null-space pi by {gap:.3e}")
        pi = hint

    residual = float(np.abs(pi @ Q).max())
    if residual > config.TOL_SOLVE * max(1.0, float(np.abs(Q).max())):
        raise NotErgodic(f"pi Q residual {residual:.3e} too large")

    flux = pi[:, None] * Q
    reversible = bool(np.abs(flux - flux.T).max() <= config.TOL_SOLVE)

    Q.setflags(write=False)
    pi.setflags(write=False)
    labels = tuple(states) if states is not None else tuple(range(m))
    if len(labels) != m:
        raise ConfigError(f"{len(labels)} state labels for a {m}-state generator")
    logger.debug("Built %d-state generator (reversible=%s)", m, reversible)
    return GeneratorModel(states=labels, Q=Q, pi=pi, reversible=reversible, ergodic=True)


def _with_diagonal(rates: np.ndarray) -> np.ndarray:
    Q = np.array(rates, dtype=float)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def build_from_rates(Q_raw, states=None) -> GeneratorModel:
    """Ingest a user rate matrix; reversible or not."""
    return _finalize(np.asarray(Q_raw, dtype=float), states)


def build_birth_death(birth_rates, death_rates) -> GeneratorModel:
    """Tridiagonal chain on m states with pi from the detailed-balance product."""
    birth = np.asarray(birth_rates, dtype=float)
    death = np.asarray(death_rates, dtype=float)
    if birth.shape != death.shape or birth.ndim != 1 or birth.size < 1:
        raise ConfigError("birth and death rates must be vectors of equal length m-1")
    if np.any(birth <= 0) or np.any(death <= 0):
        raise ZeroRate("birth-death rates must all be > 0")

    m = birth.size + 1
    rates = np.zeros((m, m))
    idx = np.arange(m - 1)
    rates[idx, idx + 1] = birth
    rates[idx + 1, idx] = death
    # pi_{i+1} = pi_i * b_i / d_{i+1}
    pi = np.concatenate([[1.0], np.cumprod(birth / death)])
    return _finalize(_with_diagonal(rates), pi_hint=pi / pi.sum())


def build_two_state(a: float = 1.0, b: float = 1.0) -> GeneratorModel:
    """Two-state chain, rate a for 0 -> 1 and b for 1 -> 0."""
    return build_birth_death([a], [b])


def build_cycle(m: int, rate: float = 1.0) -> GeneratorModel:
    """Unidirectional cycle i -> i+1 (mod m); non-reversible for m >= 3."""
    if m < 2:
        raise ConfigError(f"cycle needs m >= 2, got {m}")
    if rate <= 0:
        raise ZeroRate("cycle rate must be > 0")
    rates = np.zeros((m, m))
    rates[np.arange(m), (np.arange(m) + 1) % m] = rate
    return _finalize(_with_diagonal(rates))


def build_random_reversible(m: int, connectivity: float = 0.3, seed: int = 0) -> GeneratorModel:
    """Random chain satisfying detailed balance by construction.

    Symmetric conductances w_ij on a connected graph and a positive pi give
    Q_ij = w_ij / pi_i. Deterministic given seed.
    """
    if m < 2:
        raise ConfigError(f"random reversible model needs m >= 2, got {m}")
    if not 0 < connectivity <= 1:
        raise ConfigError(f"connectivity must lie in (0, 1], got {connectivity}")
    rng = np.random.default_rng(seed)

    upper = np.triu(rng.random((m, m)) < connectivity, k=1)
    edges = upper | upper.T
    n_components, _ = connected_components(edges, directed=False)
    if n_components > 1:
        # random spanning tree: attach each node to an earlier one in a permutation
        order = rng.permutation(m)
        for k in range(1, m):
            i, j = order[k], order[rng.integers(k)]
            edges[i, j] = edges[j, i] = True

    w = np.triu(rng.uniform(0.5, 2.0, size=(m, m)), k=1)
    w = (w + w.T) * edges
    pi = rng.uniform(0.5, 1.5, size=m)
    pi /= pi.sum()
    rates = w / pi[:, None]
    return _finalize(_with_diagonal(rates), pi_hint=pi)


def load_model_file(path) -> tuple[GeneratorModel, np.ndarray | None]:
    """Parse `{"states": [...], "Q": [[...]], "f": [...]}`; states and f optional."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read model file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Model file {path} is not valid JSON: {e}")
    if not isinstance(data, dict) or "Q" not in data:
        raise ConfigError(f"Model file {path} needs a \"Q\" entry")

    rows = data["Q"]
    if not isinstance(rows, list) or not rows:
        raise ConfigError("Q must be a non-empty list of rows")
    m = len(rows)
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != m:
            raise ConfigError(f"Q row {i}: expected {m} entries, got {row!r}")
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row):
            raise ConfigError(f"Q row {i}: entries must be numbers, got {row!r}")

    f_raw = None
    if data.get("f") is not None:
        f_raw = np.asarray(data["f"], dtype=float)
        if f_raw.shape != (m,):
            raise ConfigError(f"f has {f_raw.size} entries, expected {m}")
    model = build_from_rates(rows, states=data.get("states"))
    logger.info("Loaded %d-state model from %s", m, path)
    return model, f_raw


def named_observable(name: str, model: GeneratorModel) -> np.ndarray:
    """Raw (uncentered) builtin observables."""
    idx = np.arange(model.m, dtype=float)
    if name == "parity":
        return np.where(idx % 2 == 0, 1.0, -1.0)
    if name == "first-coordinate":
        return (idx == 0).astype(float)
    if name == "linear":
        return idx
    raise ConfigError(f"Unknown observable: {name!r}")


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

def center(f_raw, model: GeneratorModel) -> Observable:
    """Subtract the pi-mean. Idempotent: an already centered vector is returned as is.

    Warns DegenerateObservable when the result is the zero vector.
    """
    raw = np.asarray(f_raw.values if isinstance(f_raw, Observable) else f_raw, dtype=float)
    f = raw.copy()
    if f.shape != (model.m,):
        raise ConfigError(f"observable has shape {f.shape}, expected ({model.m},)")
    mean = float(model.pi @ f)
    if abs(mean) > config.TOL_EXACT:
        f = f - mean
    scale = max(1.0, float(np.abs(raw).max()))
    if np.all(np.abs(f) <= config.TOL_EXACT * scale):
        warnings.warn("centered observable is zero; sigma^2(f) = 0", DegenerateObservable, stacklevel=2)
        f = np.zeros(model.m)
    f.setflags(write=False)
    return Observable(values=f, centered=True)


def is_centered(f, model: GeneratorModel) -> bool:
    return abs(float(model.pi @ np.asarray(f, dtype=float))) <= config.TOL_EXACT
