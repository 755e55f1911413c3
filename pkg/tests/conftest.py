import numpy as np
import pytest

from superregime.simulate import build_example_law


@pytest.fixture
def example1():
    return build_example_law(1)


@pytest.fixture
def example2():
    return build_example_law(2)


@pytest.fixture
def example3():
    return build_example_law(3, c=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
