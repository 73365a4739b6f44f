from __future__ import annotations

import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import InputFormatError
from .log import LEVELS


@dataclass(frozen=True)
class Settings:
    ess: float = 1.0
    samples: int = 100_000
    laplace: float = sys.float_info.epsilon
    tol: float = 1e-8
    max_sweeps: int = 10_000
    max_outer: int = 10_000
    swap_limit: int = 2000
    seed: int = 0
    reps: int = 1000
    workers: int = 1
    log_level: str = "WARNING"

    def __post_init__(self) -> None:
        if self.ess <= 0:
            raise ValueError("ess must be positive")
        if self.samples < 1 or self.reps < 1 or self.workers < 1:
            raise ValueError("samples, reps and workers must be at least 1")
        if self.laplace < 0 or self.tol <= 0:
            raise ValueError("laplace must be >= 0 and tol > 0")
        if self.log_level.upper() not in LEVELS:
            raise ValueError(f"log_level must be one of {', '.join(LEVELS)}")

    def override(self, **changes: Any) -> Settings:
        """Copy with every non-``None`` change applied (command-line flags)."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


DEFAULT_TOML = """\
# bnpp configuration
#
# - ess: BDeu equivalent sample size
# - samples: uniformly sampled DAGs used to estimate U
# - laplace: Laplace correction added to every valid configuration count
# - tol, max_sweeps: IPFP stopping rule
# - max_outer: iteration cap for repairing incoherent beliefs
# - swap_limit: equivalent DAGs visited per swap step
# - seed, reps, workers: experiment replications and parallelism
# - log_level: DEBUG, INFO, WARNING or ERROR

ess = 1.0
samples = 100000
laplace = 2.220446049250313e-16
tol = 1e-8
max_sweeps = 10000
max_outer = 10000
swap_limit = 2000
seed = 0
reps = 1000
workers = 1
log_level = "WARNING"
"""

_TYPES = {f.name: f.type for f in fields(Settings)}


def load(path: Path) -> Settings:
    if not path.exists():
        return Settings()
    raw = path.read_bytes()
    try:
        data: dict[str, Any] = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise InputFormatError(f"{path}: {exc}") from exc

    unknown = sorted(set(data) - set(_TYPES))
    if unknown:
        raise InputFormatError(f"{path}: unknown settings {unknown}")
    cast = {"float": float, "int": int, "str": str}
    try:
        return Settings(**{k: cast[_TYPES[k]](v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def dump(cfg: Settings) -> str:
    lines = ["# bnpp configuration"]
    for f in fields(Settings):
        value = getattr(cfg, f.name)
        lines.append(f'{f.name} = "{value}"' if isinstance(value, str) else f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"


def write(path: Path, cfg: Settings) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump(cfg), encoding="utf-8")


def write_default(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(DEFAULT_TOML, encoding="utf-8")
