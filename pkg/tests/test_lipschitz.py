import numpy as np
import pytest

from otlab.config import make_rng
from otlab.errors import OTLabError
from otlab.lipschitz import (
    ConeFunction,
    MinFunction,
    RampFunction,
    cone_family,
    lipschitz_audit,
    require_lipschitz,
)
from otlab.measures import GridSpec


def test_cone_values_and_gradients():
    cone = ConeFunction(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.0, 0.25]))
    pts = np.array([[0.0, 0.5], [1.0, 0.0], [2.0, 0.0]])
    assert np.allclose(cone.values(pts), [0.5, 0.25, 1.25])
    grads = cone.gradients(pts)
    assert np.allclose(grads[0], [0.0, 1.0])
    # on an apex the gradient is set to zero
    assert np.allclose(grads[1], [0.0, 0.0])
    assert np.allclose(grads[2], [1.0, 0.0])
    assert cone.unit_gradient


def test_cone_validation():
    with pytest.raises(OTLabError):
        ConeFunction(np.zeros((2, 1)), np.zeros(3))
    with pytest.raises(OTLabError):
        ConeFunction(np.zeros((1, 1)), np.zeros(1), sign=2.0)


def test_ramp_is_monotone_and_bounded_slope():
    ramp = RampFunction(np.array([1.0]), np.array([0.2, 0.5]), np.array([0.3, 0.1]))
    t = np.linspace(-1.0, 2.0, 301)
    v = ramp.values(t)
    assert (np.diff(v) >= -1e-15).all()
    slopes = ramp.gradients(t)[:, 0]
    assert slopes.min() >= 0.0 and slopes.max() <= 1.0
    assert not ramp.unit_gradient
    assert RampFunction.linear([0.0, 1.0]).unit_gradient
    with pytest.raises(OTLabError):
        RampFunction(np.array([1.0]), np.array([0.0]), np.array([0.0]))


def test_min_function_follows_active_part():
    low = RampFunction.linear([1.0])
    cone = ConeFunction(np.array([[0.0]]), np.array([0.5]))
    f = MinFunction((low, cone))
    pts = np.array([[0.0], [2.0]])
    assert np.allclose(f.values(pts), [0.0, 2.0])
    assert np.allclose(f.gradients(pts)[:, 0], [1.0, 1.0])
    assert f.unit_gradient
    with pytest.raises(OTLabError):
        MinFunction(())


def test_audit_and_require():
    spec = GridSpec.covering([0.0, 0.0], [1.0, 1.0], 0.05)
    cones = cone_family([0.0, 0.0], [1.0, 1.0], make_rng(5), 4)
    assert len(cones) == 4
    for cone in cones:
        assert lipschitz_audit(cone, spec) <= 1.0 + 1e-12
        require_lipschitz(cone, spec)
    steep = RampFunction.linear([2.0, 0.0])
    assert lipschitz_audit(steep, spec) == pytest.approx(2.0)
    with pytest.raises(OTLabError) as exc:
        require_lipschitz(steep, spec)
    assert exc.value.code == "not-1-lipschitz"
