import io

import numpy as np
import pytest

from poincare_kg.hierarchy import KnowledgeGraph, balanced_tree, parse_edge_list
from poincare_kg.synthetic import random_dag


def graph_from(text: str) -> KnowledgeGraph:
    return parse_edge_list(io.StringIO(text))


@pytest.fixture
def chain():
    return graph_from("a\tb\nb\tc\n")


@pytest.fixture
def diamond():
    return graph_from("a\tb\na\tc\nb\td\nc\td\n")


@pytest.fixture
def star_plus_isolated():
    # a->b, a->c and an isolated d (not expressible as an edge list)
    return KnowledgeGraph.from_pairs(["a", "b", "c", "d"], [(0, 1), (0, 2)])


@pytest.fixture(scope="session")
def small_graphs():
    """Fixture set of graphs with <= 50 nodes used for oracle comparisons."""
    rng = np.random.default_rng(7)
    graphs = [balanced_tree(2, 3), balanced_tree(3, 2), balanced_tree(7, 1)]
    graphs += [random_dag(n, rng) for n in (5, 12, 25, 40, 50)]
    return graphs


@pytest.fixture(scope="session")
def tree364():
    return balanced_tree(3, 5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
