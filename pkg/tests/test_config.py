import pytest

from pyegd import DEFAULT_SEED, SEED_ENV, ConfigError, resolve_seed


def test_explicit_seed_wins(monkeypatch):
    monkeypatch.setenv(SEED_ENV, '99')
    assert resolve_seed(5) == 5


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(SEED_ENV, '99')
    assert resolve_seed() == 99


@pytest.mark.parametrize('value', [None, '', '  '])
def test_default_seed(monkeypatch, value):
    if value is None:
        monkeypatch.delenv(SEED_ENV, raising=False)
    else:
        monkeypatch.setenv(SEED_ENV, value)
    assert resolve_seed() == DEFAULT_SEED


def test_bad_environment_seed(monkeypatch):
    monkeypatch.setenv(SEED_ENV, 'seven')
    with pytest.raises(ConfigError):
        resolve_seed()
