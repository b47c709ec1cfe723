"""
Shared fixtures: small graphs, seeded generators and an isolated report store
"""
import numpy as np
import pytest

from graphkernel.config import get_settings
from graphkernel.database import close_db, init_db
from graphkernel.graph import Graph, graph_spectrum, validate_graph
from graphkernel.harness import generate_er_graph


def path_graph(n: int) -> Graph:
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return validate_graph(a)


def random_pd(rng: np.random.Generator, n: int, floor: float = 0.5) -> np.ndarray:
    x = rng.standard_normal((n, n))
    return x @ x.T / n + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path2():
    return path_graph(2)


@pytest.fixture
def small_graph():
    """Connected ER graph on 12 vertices"""
    return generate_er_graph(12, 0.5, seed=3)


@pytest.fixture
def small_decomp(small_graph):
    return graph_spectrum(small_graph)


@pytest.fixture(autouse=True)
def clear_settings_cache():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def report_db(tmp_path, monkeypatch):
    """Fresh sqlite report store for one test"""
    url = f"sqlite:///{tmp_path / 'reports.db'}"
    monkeypatch.delenv("DATABASE_URL", raising=False)
    monkeypatch.setenv("GRAPHKERNEL_DATABASE_URL", url)
    init_db(url)
    yield url
    close_db()
