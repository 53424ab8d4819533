import pytest
import torch

from repo_evolve.errors import ConfigError
from repo_evolve.util.runtime import runtime


@pytest.fixture(autouse=True)
def restore_threads():
    before = torch.get_num_threads()
    yield
    torch.set_num_threads(before)
    type(runtime)._threads = None


def test_threads_cap_torch():
    runtime.set_threads(1)
    assert runtime.get_threads() == 1
    assert torch.get_num_threads() == 1


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("REPO_EVOLVE_THREADS", "2")
    runtime.set_threads(None)
    assert runtime.get_threads() == 2


def test_threads_must_be_positive():
    with pytest.raises(ConfigError):
        runtime.set_threads(0)
