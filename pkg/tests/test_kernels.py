import math

import numpy as np
import pytest

from otlab.errors import OTLabError
from otlab.kernels import Kernel, get_profile


def test_profile_lookup_and_aliases():
    assert get_profile("uniform-ball").name == "uniform-ball"
    assert get_profile("Uniform Ball").name == "uniform-ball"
    assert get_profile("gaussian").name == "heat"
    assert Kernel("ball", 0.1).profile == "uniform-ball"


def test_unknown_profile():
    with pytest.raises(OTLabError) as exc:
        Kernel("box", 0.1)
    assert exc.value.code == "unknown-profile"


def test_nonpositive_scale():
    with pytest.raises(OTLabError) as exc:
        Kernel("tent", 0.0)
    assert exc.value.code == "parameter-out-of-range"


def test_uniform_stencil_1d():
    cube = Kernel("uniform-ball", 0.1).stencil(0.01, 1)
    assert cube.shape == (21,)
    assert np.allclose(cube, 1.0 / 21.0)


@pytest.mark.parametrize("profile", ["uniform-ball", "tent", "heat"])
def test_stencil_normalized_and_symmetric(profile):
    cube = Kernel(profile, 0.05).stencil(0.02, 2)
    assert cube.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(cube, cube[::-1, :])
    assert np.allclose(cube, cube.T)


def test_heat_stencil_variance():
    k = Kernel("heat", 0.01)
    h = 0.01
    cube = k.stencil(h, 1)
    m = cube.shape[0] // 2
    x = np.arange(-m, m + 1) * h
    assert k.heat_time == pytest.approx(0.1)
    assert float(cube @ x**2) == pytest.approx(2 * k.heat_time, abs=1e-6)
    assert m == k.radius_cells(h)
    assert k.support_radius == pytest.approx(8 * math.sqrt(2 * k.heat_time))


def test_under_resolved():
    with pytest.raises(OTLabError) as exc:
        Kernel("uniform-ball", 0.005).stencil(0.01, 1)
    assert exc.value.code == "kernel-under-resolved"


def test_tent_nodes_drop_zero_weights():
    offsets, weights = Kernel("tent", 0.05).nodes(0.01, 1)
    # radius 2 eps lands on offsets +-10, where the tent vanishes
    assert offsets.shape == (19, 1)
    assert offsets.min() == -9 and offsets.max() == 9
    assert weights.sum() == pytest.approx(1.0)
    assert (weights > 0).all()


def test_stencil_is_read_only_copy():
    k = Kernel("uniform-ball", 0.1)
    cube = k.stencil(0.05, 2)
    cube[...] = 0.0
    assert k.stencil(0.05, 2).sum() == pytest.approx(1.0)
