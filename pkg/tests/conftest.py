import os

os.environ.setdefault("SSLORA_DETERMINISTIC", "1")

import numpy as np
import pytest

from sslora.data import DomainDatasetSpec, generate
from sslora.linalg import deterministic_kernels
from sslora.model import NetworkSpec, pretrain_base

from oracles import ACCEPTANCE_RESULTS



@pytest.fixture(autouse=True, scope="session")
def _deterministic_blas():
    with deterministic_kernels(True):
        yield


@pytest.fixture(scope="session")
def small_task():
    """3 domains, 4 classes, 16-dim inputs: cheap enough for unit tests."""
    return generate(DomainDatasetSpec(num_domains=3, num_classes=4, input_dim=16,
                                      n_train=20, n_val=10, noise_std=1.0, seed=3))


@pytest.fixture(scope="session")
def small_spec():
    return NetworkSpec(input_dim=16, hidden_dim=16, num_blocks=1, num_classes=4,
                       num_domains=3, rank=4, threshold=0.95)


@pytest.fixture(scope="session")
def small_base(small_task, small_spec):
    x = np.concatenate([d.x for d in small_task.train])
    y = np.concatenate([d.labels for d in small_task.train])
    weights, _ = pretrain_base(small_spec, x, y, epochs=5, lr=1e-3, seed=0)
    return weights


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
