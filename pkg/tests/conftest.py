"""pytest configuration and shared instance fixtures."""

from collections.abc import Callable
from pathlib import Path
from typing import Any

from loguru import logger
import numpy as np
import pytest

from app.models import Instance

# Configure test logging
test_log_path = Path(__file__).parent / "test_logs" / "test.log"
test_log_path.parent.mkdir(exist_ok=True)
logger.add(test_log_path, rotation="10 MB", retention="1 week")


def pytest_configure(config: pytest.Config) -> None:
    """Configure pytest with custom markers.

    Args:
        config (pytest.Config): The pytest configuration object.

    """
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line("markers", "integration: marks tests as integration tests")


def build_instance(**overrides: Any) -> Instance:
    """Two areas, two ENs, symmetric delays; keyword arguments replace fields."""
    data: dict[str, Any] = {
        "m": 2,
        "n": 2,
        "lambda": [10.0, 10.0],
        "c": [10.0, 10.0],
        "phi": [5.0, 5.0],
        "d": [[1.0, 2.0], [2.0, 1.0]],
        "a": [[1, 1], [1, 1]],
        "gamma": 0.1,
        "theta": 0.8,
        "beta": 1.0,
    }
    data.update(overrides)
    return Instance.model_validate(data)


def seeded_instance(seed: int, *, m: int | None = None, n: int | None = None) -> Instance:
    """Small random instance with generous capacity so every attack stays feasible."""
    rng = np.random.default_rng([seed, 99])
    m = m if m is not None else int(rng.integers(2, 7))
    n = n if n is not None else int(rng.integers(2, 9))
    demand = rng.uniform(5.0, 15.0, size=m)
    a = (rng.random((m, n)) < 0.6).astype(int)
    for i in range(m):
        if not a[i].any():
            a[i, rng.integers(n)] = 1
    theta = 1.0 if rng.random() < 0.5 else 0.9
    return Instance.model_validate(
        {
            "m": m,
            "n": n,
            "lambda": demand.round(3).tolist(),
            "c": rng.choice([4.0, 8.0, 16.0, 32.0], size=n).tolist(),
            "phi": rng.uniform(3.0, 6.0, size=m).round(3).tolist(),
            "d": rng.uniform(1.0, 10.0, size=(m, n)).round(3).tolist(),
            "a": a.tolist(),
            "gamma": float(rng.choice([0.1, 0.3, 0.5])),
            "theta": theta,
            "beta": float(rng.choice([0.3, 0.6, 1.0])),
            "meta": {"seed": seed},
        }
    )


@pytest.fixture
def t1() -> Instance:
    """Canonical two-area, two-EN instance.

    Returns:
        Instance: lambda=(10,10), C=(10,10), theta=0.8, beta=1.0.

    """
    return build_instance()


@pytest.fixture
def make_instance() -> Callable[..., Instance]:
    """Factory for variants of the canonical instance."""
    return build_instance


@pytest.fixture
def random_instance() -> Callable[..., Instance]:
    """Factory for seeded random small instances."""
    return seeded_instance


@pytest.fixture
def contended() -> Instance:
    """Areas 1 and 2 both rely on EN 1 alone and need 12 of its 10 units."""
    return build_instance(
        m=3,
        c=[10.0, 100.0],
        a=[[1, 0], [1, 0], [0, 1]],
        d=[[1.0, 2.0], [1.0, 2.0], [2.0, 1.0]],
        phi=[5.0, 5.0, 5.0],
        theta=0.4,
        **{"lambda": [10.0, 10.0, 10.0]},
    )
