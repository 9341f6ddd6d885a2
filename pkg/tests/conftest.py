import numpy as np
import pytest

from sbnn.data import load_dataset
from sbnn.graph import build_model
from sbnn.selfbin import NuSchedule, TrainConfig, train

TOY_ARCH = "dense:31, bn, act, dense:31, bn, act, dense:2"


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` by central differences (mutates then restores x)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-3) -> float:
    """Max abs difference over the larger max-magnitude; ``floor`` keeps fully saturated gradients meaningful."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(floor, np.max(np.abs(a)), np.max(np.abs(b))))


def train_toy(seed: int = 7, mode: str = "Soft", epochs: int = 30, arch: str = TOY_ARCH):
    data = load_dataset(fmt="synthetic-blobs", seed=seed, n=1000)
    model = build_model(arch, data.input_shape, data.n_classes, mode, seed=seed)
    result = train(model, data, NuSchedule.for_training(epochs), TrainConfig(epochs=epochs, seed=seed))
    return model, data, result


@pytest.fixture(scope="session")
def toy_run():
    return train_toy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    """Record a pass/fail line for acceptance criterion ``n`` and fail the test if it did not hold."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
