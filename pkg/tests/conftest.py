from pathlib import Path

import numpy as np
import pytest

from igsd.graph_core import Graph, GraphDataset, parse_tu_dataset

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


def triangle(features=None):
    feats = np.eye(3) if features is None else features
    return Graph.from_edge_list(3, [(0, 1), (1, 2), (2, 0)], feats)


def path3(features=None):
    feats = np.eye(3) if features is None else features
    return Graph.from_edge_list(3, [(0, 1), (1, 2)], feats)


def random_graph(rng, n, p=0.4, feature_dim=4, label=None):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return Graph.from_edge_list(n, pairs, rng.normal(size=(n, feature_dim)), label)


def toy_dataset(rng, count=8, feature_dim=4, classes=2):
    graphs = [random_graph(rng, int(rng.integers(4, 9)), feature_dim=feature_dim,
                           label=i % classes) for i in range(count)]
    return GraphDataset(graphs, classes, feature_dim, "toy", featurization="attributes")


@pytest.fixture(scope="session")
def mutag():
    return parse_tu_dataset(DATA_DIR / "MUTAG", "MUTAG")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
