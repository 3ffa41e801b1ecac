import numpy as np
import pytest

from sdgdarcy.geometry import DomainSpec, Fracture, build_initial_mesh


def make_fracture(points, kappa_n=100.0, kappa_t=100.0, thickness=0.01):
    return Fracture(
        points=np.asarray(points, dtype=float),
        kappa_n=kappa_n,
        kappa_t=kappa_t,
        thickness=thickness,
    )


@pytest.fixture
def two_square_fractured():
    """(0,2)x(0,1) split by the fracture {1}x(0,1), one square per side."""
    dom = DomainSpec(
        rectangles=[(0.0, 0.0, 2.0, 1.0)],
        fractures=[make_fracture([[1.0, 0.0], [1.0, 1.0]])],
    )
    return build_initial_mesh(dom, 1.0)


@pytest.fixture
def two_square_plain():
    dom = DomainSpec(rectangles=[(0.0, 0.0, 2.0, 1.0)])
    return build_initial_mesh(dom, 1.0)
