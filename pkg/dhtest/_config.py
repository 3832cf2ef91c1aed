import os
from typing import Optional

from pydantic import BaseModel, Field

from dhtest.exceptions import DomainError


class Settings(BaseModel):
    """
    Defaults read from the environment. Explicit arguments always win.
    """

    threads: int = Field(default=1)
    restarts: int = Field(default=64)
    typicality_mu: float = Field(default=0.05)
    epsilon: float = Field(default=0.05)
    log_level: str = Field(default="WARNING")


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{name} must be a positive integer, got {raw!r}")
    if value < 1:
        raise DomainError(f"{name} must be a positive integer, got {raw!r}")
    return value


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise DomainError(f"{name} must be a number in (0, 1], got {raw!r}")
    if not 0 < value <= 1:
        raise DomainError(f"{name} must be a number in (0, 1], got {raw!r}")
    return value


def get_settings() -> Settings:
    """
    Build Settings from DHTEST_* environment variables.
    """
    return Settings(
        threads=_env_int("DHTEST_THREADS", 1),
        restarts=_env_int("DHTEST_RESTARTS", 64),
        typicality_mu=_env_float("DHTEST_TYPICALITY_MU", 0.05),
        epsilon=_env_float("DHTEST_EPSILON", 0.05),
        log_level=os.environ.get("DHTEST_LOG_LEVEL", "WARNING").upper(),
    )


def resolve_threads(threads: Optional[int]) -> int:
    return threads if threads is not None else get_settings().threads


def resolve_restarts(restarts: Optional[int]) -> int:
    return restarts if restarts is not None else get_settings().restarts
