import pytest


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv('TEMPOPROJ_THREADS', '1')
