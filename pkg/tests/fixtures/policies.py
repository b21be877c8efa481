"""Random access trees over a small attribute universe."""
import itertools

import numpy as np
import pytest

from tangleac.core.policy import Attribute, AttributeSet, Gate, Leaf

UNIVERSE = [Attribute('A{}'.format(i), 'x') for i in range(6)]


def random_policy(rng: np.random.Generator, depth: int, universe=UNIVERSE):
    """Access tree of at most ``depth`` gate levels with thresholds between 1 and the number of children."""
    if depth == 0 or rng.random() < 0.3:
        return Leaf(universe[int(rng.integers(len(universe)))])
    n = int(rng.integers(2, 4))
    children = tuple(random_policy(rng, depth - 1, universe) for _ in range(n))
    return Gate(int(rng.integers(1, n + 1)), children)


def all_subsets(universe=UNIVERSE):
    return [AttributeSet(c) for r in range(len(universe) + 1) for c in itertools.combinations(universe, r)]


@pytest.fixture()
def universe():
    return UNIVERSE


@pytest.fixture()
def subsets():
    """All 64 subsets of the six-attribute universe."""
    return all_subsets()


@pytest.fixture()
def policy_factory():
    return random_policy
