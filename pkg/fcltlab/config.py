"""Configuration constants and run configuration for fcltlab."""

import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path

from fcltlab.errors import ConfigError

# --- Tolerances ---
TOL_EXACT = 1e-12  # exact identities: row sums, sum(pi), centering
TOL_SOLVE = 1e-10  # linear-solve residuals, pi Q, detailed balance
TOL_IDENTITY = 1e-9  # resolvent identity, spectral reconstruction, cross-formula
TOL_SEMIGROUP = 1e-12  # Poisson tail mass dropped by uniformization
TOL_LAPLACE = 1e-6  # Laplace-integral resolvent vs direct solve
LAPLACE_HORIZON = 30.0  # in units of 1 / s_min

# --- Power iteration (operator norms of non-reversible models) ---
POWER_ITER_MAX = 20000
POWER_ITER_TOL = 1e-13

# --- Lambda schedule, lambda_n = c * n**(-exponent) ---
SCHEDULE_EXPONENT = 1.5
SCHEDULE_C = 1.0

# --- Grids ---
T_GRID_POINTS = 101  # equally spaced on [0, 1]
LAMBDA_GRID_STEPS = 16  # lambda_j = s_min * 10**(-j/2), j = 0..16
YOSIDA_DECADES = 6  # lambda = s_min * 10**(-j), j = 0..6

# --- Experiments ---
MIN_REPLICATES = 100
MIN_REPLICATES_KS = 1000  # asymptotic KS p-values need this many samples
N_LIST = (100, 1000, 10000)
REPLICATES = 1000
SEED = 20240611
WORKERS = 1  # replicate worker processes; 1 runs in-process

# --- Property suite (verify) ---
SUITE_MODELS = 50
SUITE_DRAWS = 20
SUITE_MAX_STATES = 50

# --- UX ---
VERBOSE = False
HISTORY_ENABLED = True  # Log runs to ~/.local/share/fcltlab/history.log


def contract_tolerances() -> dict[str, float]:
    """Tolerances the command suites compare against, keyed by invariant."""
    return {
        "frep": TOL_SOLVE,
        "operator_norm": TOL_SOLVE,
        "resolvent_identity": TOL_IDENTITY,
        "sqrt_lambda_bound": TOL_EXACT,
        "energy_identity": TOL_IDENTITY,
        "cross_formula": TOL_IDENTITY,
        "power_calculus": TOL_IDENTITY,
        "sigma2_lambda_gap": 1e-6,
        "yosida": 1e-5,
        "tv": TOL_SOLVE,
        "pathwise_identity": TOL_SOLVE,
        "laplace": TOL_LAPLACE,
        "abel_constant": TOL_SOLVE,
        "two_state_closed_form": TOL_IDENTITY,
    }


_TOL_OVERRIDE: float | None = None


def override_tolerance(tol: float | None):
    """Replace every contract tolerance with `tol` (the --tol flag); None restores defaults.

    Construction tolerances (TOL_EXACT, TOL_SOLVE) stay untouched.
    """
    global _TOL_OVERRIDE
    _TOL_OVERRIDE = tol


def tolerance(name: str) -> float:
    """Contract tolerance for `name`, honouring a --tol override."""
    if _TOL_OVERRIDE is not None:
        return _TOL_OVERRIDE
    return contract_tolerances()[name]


# Builtin model specs: "two-state", "birth-death(m)", "random-reversible(m, seed)", "cycle(m)"
_MODEL_RE = re.compile(r"^\s*([a-z-]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")
_MODEL_ARITY = {
    "two-state": (0, 0),
    "birth-death": (1, 1),
    "random-reversible": (1, 2),
    "cycle": (1, 1),
}
OBSERVABLE_NAMES = ("parity", "first-coordinate", "linear")


def parse_model_spec(spec: str) -> tuple[str, tuple[int, ...]]:
    """Parse a builtin model name into (name, integer args).

    Examples:
        "two-state" → ("two-state", ())
        "random-reversible(30, 7)" → ("random-reversible", (30, 7))

    Raises ConfigError for unknown names or wrong argument counts.
    """
    match = _MODEL_RE.match(spec)
    if not match or match.group(1) not in _MODEL_ARITY:
        valid = ", ".join(_MODEL_ARITY)
        raise ConfigError(f"Unknown model: {spec!r}. Builtins: {valid}")
    name, raw = match.group(1), match.group(2)
    try:
        args = tuple(int(a) for a in raw.split(",")) if raw else ()
    except ValueError:
        raise ConfigError(f"Model arguments must be integers: {spec!r}")
    lo, hi = _MODEL_ARITY[name]
    if not lo <= len(args) <= hi:
        raise ConfigError(f"{name} takes {lo}..{hi} arguments, got {len(args)}")
    if args and args[0] < 2:
        raise ConfigError(f"{name} needs at least 2 states, got {args[0]}")
    return name, args


def is_builtin_model(spec: str) -> bool:
    match = _MODEL_RE.match(spec)
    return bool(match) and match.group(1) in _MODEL_ARITY


def parse_observable_spec(text: str) -> tuple[str, object]:
    """Classify an --f argument.

    Returns ("name", name), ("values", tuple of floats) for an inline
    comma list such as "1,0,-1", or ("file", Path).
    """
    text = text.strip()
    if text in OBSERVABLE_NAMES:
        return "name", text
    if "," in text:
        try:
            return "values", tuple(float(v) for v in text.split(","))
        except ValueError:
            raise ConfigError(f"Observable list must contain numbers: {text!r}")
    path = Path(text)
    if path.is_file():
        return "file", path
    raise ConfigError(
        f"Observable {text!r} is neither a name ({', '.join(OBSERVABLE_NAMES)}), a list nor a file")


def parse_n_list(text) -> tuple[int, ...]:
    """Parse "100,1000" (or a list) into an increasing tuple of ints."""
    items = text.split(",") if isinstance(text, str) else list(text)
    try:
        values = tuple(int(v) for v in items if str(v).strip())
    except ValueError:
        raise ConfigError(f"n list must contain integers: {text!r}")
    if not values:
        raise ConfigError("n list is empty")
    if any(v < 1 for v in values) or list(values) != sorted(set(values)):
        raise ConfigError(f"n list must be positive and strictly increasing: {values}")
    return values


@dataclass
class RunConfig:
    """Merged view of a JSON config file and CLI flags (flags win)."""

    model: str | None = None  # None: two-state, or the random suite family for verify
    f: str | None = None
    n_list: tuple[int, ...] = N_LIST
    replicates: int = REPLICATES
    seed: int = SEED
    schedule_exponent: float = SCHEDULE_EXPONENT
    schedule_c: float = SCHEDULE_C
    t_max: float = 1.0
    t_points: int = T_GRID_POINTS
    out: str = "fcltlab-out"
    tol: float | None = None
    workers: int = WORKERS
    suite_models: int = SUITE_MODELS
    suite_draws: int = SUITE_DRAWS
    suite_max_states: int = SUITE_MAX_STATES
    dump_replicates: int = 0
    trace_epsilon: float | None = None

    @classmethod
    def from_sources(cls, path: str | None, overrides: dict) -> "RunConfig":
        """Load flat keys from `path` (if given), then apply non-None overrides."""
        values: dict = {}
        if path:
            try:
                values = json.loads(Path(path).read_text())
            except OSError as e:
                raise ConfigError(f"Cannot read config {path}: {e}")
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config {path} is not valid JSON: {e}")
            if not isinstance(values, dict):
                raise ConfigError(f"Config {path} must be a JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        extra = {k: values.pop(k) for k in list(values) if k not in known}
        if extra:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(extra))}")
        cfg = cls(**values)
        cfg.n_list = parse_n_list(cfg.n_list)
        if isinstance(cfg.f, list):
            cfg.f = ",".join(str(v) for v in cfg.f)
        cfg.validate()
        return cfg

    def validate(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be positive, got {self.replicates}")
        if self.t_max <= 0 or self.t_points < 2:
            raise ConfigError("t grid needs t_max > 0 and at least 2 points")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.tol is not None and self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.trace_epsilon is not None and self.trace_epsilon <= 0:
            raise ConfigError(f"trace_epsilon must be positive, got {self.trace_epsilon}")
        if self.suite_models < 1 or self.suite_draws < 1 or self.suite_max_states < 2:
            raise ConfigError("suite needs >= 1 model, >= 1 draw and max states >= 2")
        if self.model and not is_builtin_model(self.model) and not Path(self.model).is_file():
            raise ConfigError(f"Model {self.model!r} is neither a builtin nor a file")
        if self.f:
            parse_observable_spec(self.f)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_list"] = list(self.n_list)
        return d
