import numpy as np
import pytest

from wittenlab.field import DomainSpec, GridSpec, parse_field
from wittenlab import topology as topo


class Pipeline:
    """Topology pipeline bundle reused across tests."""

    def __init__(self, source, lower, upper, shape, dimension=1):
        self.field = parse_field(source, dimension)
        self.domain = DomainSpec(lower=lower, upper=upper)
        self.grid = GridSpec(shape=shape)
        self.crits = topo.find_critical_points(self.field, self.domain, self.grid)
        self.merge = topo.build_merge_structure(self.field, self.domain, self.grid)
        self.ssps = topo.separating_saddles(self.merge, self.crits, self.field, self.domain, self.grid)
        self.minima = [c for c in self.crits if not c.on_boundary and c.index == 0]
        self.labeling = topo.build_jmap(
            self.merge, self.ssps, self.minima,
            field=self.field, domain=self.domain, grid=self.grid,
        )
        self.hypotheses = topo.check_hypotheses(self.labeling, self.ssps, self.field)


@pytest.fixture(scope="session")
def double_well():
    return Pipeline("(x1^2-1)^2", (-1.7,), (1.7,), (513,))


@pytest.fixture(scope="session")
def double_well_fine():
    return Pipeline("(x1^2-1)^2", (-1.7,), (1.7,), (4097,))


@pytest.fixture(scope="session")
def half_well():
    return Pipeline("(x1^2-1)^2", (-1.7,), (0.0,), (513,))


@pytest.fixture(scope="session")
def single_well():
    return Pipeline("x1^2", (-1.0,), (1.0,), (257,))


@pytest.fixture(scope="session")
def triple_well():
    # three minima at -1, 0, 1 sharing the saddle level 4/27 at +-1/sqrt(3)
    return Pipeline("x1^2*(x1^2-1)^2", (-1.55,), (1.55,), (1025,))


@pytest.fixture(scope="session")
def tilted_three_minima():
    # asymmetric degree-6 polynomial with distinct saddle levels
    return Pipeline("((x1+1)*(x1-1)*(x1-2.5))^2/20 + x1/10", (-1.6,), (3.1,), (2049,))


@pytest.fixture(scope="session")
def half_domain_2d():
    return Pipeline("(x1^2-1)^2 + x2^2", (-1.7, -1.0), (0.0, 1.0), (129, 65), dimension=2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260811)
