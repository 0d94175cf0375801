"""Runtime configuration from environment variables (FE_ prefix)."""

from __future__ import annotations

import logging
import os

import psutil

from fundus.errors import ContractError


def _level_names_mapping() -> dict[str, int]:
    # logging.getLevelNamesMapping is Python >= 3.11; it returns a copy of _nameToLevel.
    getter = getattr(logging, "getLevelNamesMapping", None)
    return getter() if getter is not None else dict(logging._nameToLevel)


def _default_workers() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def _env_int(name: str, default: str) -> int:
    raw = os.environ.get(name, default)
    try:
        return int(raw)
    except ValueError:
        raise ContractError(f"{name} must be an integer, got {raw!r}") from None


class RunnerConfig:
    """Batch-runner defaults. Explicit CLI flags always win over these."""

    def __init__(self) -> None:
        self.workers: int = _env_int("FE_WORKERS", "0") or _default_workers()
        self.progress_every: int = _env_int("FE_PROGRESS_EVERY", "10")
        level_name = os.environ.get("FE_LOG_LEVEL", "INFO").upper()
        self.log_level: int = _level_names_mapping().get(level_name, logging.INFO)

        self.workers = max(1, self.workers)
        self.progress_every = max(1, self.progress_every)

    def to_dict(self) -> dict:
        return {
            "workers": self.workers,
            "progress_every": self.progress_every,
            "log_level": logging.getLevelName(self.log_level),
        }
