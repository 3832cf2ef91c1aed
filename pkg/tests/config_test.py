import sys

import pytest

sys.path.insert(0, "")
from dhtest import *
from dhtest._config import get_settings, resolve_restarts, resolve_threads


def test_defaults(monkeypatch):
    for name in ("DHTEST_THREADS", "DHTEST_RESTARTS", "DHTEST_TYPICALITY_MU", "DHTEST_EPSILON"):
        monkeypatch.delenv(name, raising=False)
    settings = get_settings()
    assert settings.threads == 1
    assert settings.restarts == 64
    assert settings.typicality_mu == 0.05
    assert settings.epsilon == 0.05


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("DHTEST_THREADS", "4")
    monkeypatch.setenv("DHTEST_RESTARTS", "8")
    monkeypatch.setenv("DHTEST_TYPICALITY_MU", "0.1")
    monkeypatch.setenv("DHTEST_LOG_LEVEL", "debug")
    assert resolve_threads(None) == 4
    assert resolve_restarts(None) == 8
    assert get_settings().typicality_mu == 0.1
    assert get_settings().log_level == "DEBUG"
    # explicit arguments win
    assert resolve_threads(2) == 2
    assert resolve_restarts(5) == 5


@pytest.mark.parametrize(
    "name,value",
    [
        ("DHTEST_THREADS", "0"),
        ("DHTEST_THREADS", "two"),
        ("DHTEST_RESTARTS", "-3"),
        ("DHTEST_TYPICALITY_MU", "0"),
        ("DHTEST_EPSILON", "1.5"),
    ],
)
def test_invalid_environment(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(DomainError):
        get_settings()


def test_sim_config_reads_defaults(monkeypatch):
    monkeypatch.setenv("DHTEST_TYPICALITY_MU", "0.2")
    monkeypatch.setenv("DHTEST_THREADS", "3")
    cfg = SimConfig(n=8, codebook_rate=1.0, bin_rate=0.5, trials=10, seed=0)
    assert cfg.mu == 0.2
    assert cfg.threads == 3
