import numpy as np
import pytest

from aesscore.model import EncoderConfig, Normalizer, init_params

ACCEPTANCE = []


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else ""))


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(num_layers=2, hidden_dim=8, num_heads=2, ffn_dim=16)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=3, normalizer=Normalizer([5.0, 4.0, 6.0, 5.5], [2.0, 1.5, 1.0, 2.5]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
