"""Dependency health checks and the version block written to manifests."""

import platform
import sys
from importlib import metadata

_BOLD = "\033[1m"
_DIM = "\033[2m"
_RED = "\033[91m"
_GREEN = "\033[92m"
_RESET = "\033[0m"

_OK = f"  {_GREEN}✓{_RESET} "
_FAIL = f"  {_RED}✗{_RESET} "

# package -> minimum (major, minor)
REQUIRED = {
    "numpy": (1, 24),
    "scipy": (1, 10),
}


def _version_tuple(version: str) -> tuple[int, int]:
    parts = version.split(".")
    try:
        return int(parts[0]), int("".join(c for c in parts[1] if c.isdigit()) or 0)
    except (IndexError, ValueError):
        return 0, 0


def library_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in REQUIRED:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


def check_dependencies() -> bool:
    """Print one diagnostic line per required library.

    Returns True if every library is installed at its minimum version.
    """
    ok = True
    for name, minimum in REQUIRED.items():
        ok &= _check_library(name, minimum)
    print(file=sys.stderr)
    return ok


def _check_library(name: str, minimum: tuple[int, int]) -> bool:
    wanted = ".".join(map(str, minimum))
    try:
        version = metadata.version(name)
    except metadata.PackageNotFoundError:
        print(f"{_FAIL}{name} not installed {_DIM}— run: {_BOLD}pip install -e .{_RESET}",
              file=sys.stderr)
        return False
    if _version_tuple(version) < minimum:
        print(f"{_FAIL}{name} {version} is too old {_DIM}— need >= {wanted}{_RESET}",
              file=sys.stderr)
        return False
    print(f"{_OK}{name} {version}", file=sys.stderr)
    return True
