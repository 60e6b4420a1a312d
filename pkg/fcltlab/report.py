"""Result files and run history: report.json, report.txt, summary.csv, manifest.json, history.log."""

import csv
import hashlib
import json
import logging
import os
from datetime import datetime
from pathlib import Path

import numpy as np

from fcltlab import __version__, config
from fcltlab.doctor import library_versions

logger = logging.getLogger(__name__)

_HISTORY_DIR = Path(os.environ.get(
    "FCLTLAB_HISTORY_DIR",
    Path.home() / ".local" / "share" / "fcltlab",
))
_HISTORY_FILE = _HISTORY_DIR / "history.log"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def dumps(data) -> str:
    """Canonical JSON: sorted keys, fixed indent, so equal inputs give equal bytes."""
    return json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n"


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_report(out: Path, report: dict) -> Path:
    path = out / "report.json"
    path.write_text(dumps(report))
    logger.info("Wrote %s", path)
    return path


def write_summary(out: Path, header: list[str], rows: list[list]) -> Path:
    """Plot-ready CSV, one row per check or per n."""
    path = out / "summary.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_manifest(out: Path, command: str, cfg: dict) -> Path:
    """Everything needed to reproduce the run. The only file carrying a timestamp."""
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed"),
        "fcltlab": __version__,
        "versions": library_versions(),
        "created": datetime.now().isoformat(timespec="seconds"),
    }
    path = out / "manifest.json"
    path.write_text(dumps(manifest))
    return path


def write_text_report(out: Path, command: str, header: list[str], rows: list[list]) -> Path:
    """report.txt: the summary rows as aligned, left-justified columns."""
    cells = [list(header)] + [["" if c is None else str(c) for c in row] for row in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = [f"fcltlab {command}", ""]
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def write_replicate_dump(out: Path, per_n) -> Path | None:
    """One CSV per kept replicate, replicates/n<n>_r<r>.csv with columns t, I, Lambda, A."""
    if not any(ns.dumped for ns in per_n):
        return None
    folder = out / "replicates"
    folder.mkdir(parents=True, exist_ok=True)
    for ns in per_n:
        for r, paths in enumerate(ns.dumped):
            with open(folder / f"n{ns.n}_r{r}.csv", "w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(["t", "I", "Lambda", "A"])
                for t, i, lam, a in zip(paths.t_grid, paths.I_vals, paths.Lambda_vals, paths.A_vals):
                    writer.writerow([repr(float(t)), repr(float(i)), repr(float(lam)), repr(float(a))])
    logger.info("Dumped replicate paths to %s", folder)
    return folder


def log_run(command: str, cfg_hash: str, verdict: str, elapsed_ms: float = 0):
    """Append a run entry to the history log.

    Does nothing if config.HISTORY_ENABLED is False.
    """
    if not config.HISTORY_ENABLED:
        return

    try:
        _HISTORY_DIR.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        with open(_HISTORY_FILE, "a") as f:
            f.write(f"[{timestamp}] ({elapsed_ms:.0f}ms) {command} {cfg_hash[:12]} {verdict}\n")
    except Exception as e:
        logger.debug("Failed to write history: %s", e)


def show_history(n: int = 20):
    """Print the last N history entries to stdout."""
    if not _HISTORY_FILE.exists():
        print("No history yet.")
        return

    lines = _HISTORY_FILE.read_text().splitlines()
    for line in lines[-n:]:
        print(line)
