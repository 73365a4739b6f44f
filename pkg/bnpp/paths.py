from __future__ import annotations

import os
from pathlib import Path

APP = "bnpp"

# names of the files written under an output directory
GRAPH_FILE = "graph.json"
PDAG_FILE = "pdag.json"
TRACE_FILE = "trace.jsonl"
PRIOR_FILE = "prior.json"
PROVENANCE_FILE = "provenance.json"
REPORT_FILE = "report.csv"
RECORDS_FILE = "records.db"


def _env_path(key: str) -> Path | None:
    val = os.environ.get(key)
    return Path(val).expanduser() if val else None


def _xdg_home(kind: str, fallback: str) -> Path:
    return (_env_path(f"XDG_{kind}_HOME") or Path.home() / fallback) / APP


def config_path() -> Path:
    return _env_path("BNPP_CONFIG") or _xdg_home("CONFIG", ".config") / "config.toml"


def data_dir() -> Path:
    return _env_path("BNPP_DATA_DIR") or _xdg_home("DATA", ".local/share")


def db_path() -> Path:
    return _env_path("BNPP_DB") or data_dir() / RECORDS_FILE


def run_dir(out: Path) -> Path:
    """Create the output directory of one command run."""
    out = out.expanduser()
    out.mkdir(parents=True, exist_ok=True)
    return out
