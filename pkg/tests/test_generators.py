import numpy as np
import pytest

from otlab.config import make_rng
from otlab.errors import OTLabError
from otlab.generators import (
    GENERATORS,
    ParamReader,
    annulus,
    get_generator,
    interval,
    star,
    two_squares,
)
from otlab.measures import DiscreteMeasure, GridMeasure


def _weight_at(m: GridMeasure, point) -> float:
    idx = m.spec.index_of([point])[0]
    return float(m.weights[tuple(idx)])


@pytest.mark.parametrize(
    "point, inside",
    [
        ((0.5, 0.5), True),
        ((0.5, 0.9), True),
        ((0.9, 0.5), True),
        ((0.7, 0.7), False),
        ((0.9, 0.9), False),
    ],
)
def test_star_membership(point, inside):
    m = star(0.01)
    assert m.total_mass == pytest.approx(1.0)
    assert (_weight_at(m, point) > 0) is inside


def test_annulus():
    m = annulus(0.5, 1.0, 0.01)
    assert m.total_mass == pytest.approx(1.0)
    assert _weight_at(m, (0.0, 0.0)) == 0.0
    assert _weight_at(m, (0.75, 0.0)) > 0
    area = m.support_mask().sum() * m.spec.cell_volume
    assert area == pytest.approx(np.pi * 0.75, rel=0.02)
    with pytest.raises(OTLabError) as exc:
        annulus(1.0, 0.5, 0.01)
    assert exc.value.code == "parameter-out-of-range"
    with pytest.raises(OTLabError) as exc:
        annulus(0.0, 0.001, 0.01)
    assert exc.value.code == "empty-support"


def test_interval_snaps_to_grid():
    m = interval(0.003, 1.0, 0.01)
    assert m.spec.origin == (0.0,)
    assert m.spec.extents == (100,)


def test_two_squares_share_a_grid():
    left, right = two_squares(0.5, 0.25, 0.025)
    assert left.spec.aligned_with(right.spec)
    assert right.mean()[0] - left.mean()[0] == pytest.approx(0.75)


def test_random_generator_is_seeded():
    gen = get_generator("random")
    params = ParamReader({"dims": "8,8", "sparsity": "0.5"})
    a, b = gen(params, make_rng(3)), gen(params, make_rng(3))
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, gen(params, make_rng(4)).weights)
    assert a.spec.extents == (8, 8)
    assert a.total_mass == pytest.approx(1.0)


def test_generator_names():
    assert get_generator("near_translate") is GENERATORS["near-translate"]
    assert get_generator(" Star ") is GENERATORS["star"]
    with pytest.raises(OTLabError) as exc:
        get_generator("blob")
    assert exc.value.code == "unknown-generator"


def test_param_reader():
    p = ParamReader({"h": "0.5", "n": "3", "lo": "0, 1", "bad": "abc"})
    assert p.number("h", 1.0) == 0.5
    assert p.number("missing", 2.0) == 2.0
    assert p.integer("n", 1) == 3
    assert p.numbers("lo", ()) == (0.0, 1.0)
    with pytest.raises(OTLabError) as exc:
        p.number("bad", 1.0)
    assert exc.value.code == "bad-config"


def test_atoms_generator():
    gen = get_generator("atoms")
    m = gen(ParamReader({"n": "2", "points": "0,0,1,1", "weights": "1,3"}), make_rng(0))
    assert isinstance(m, DiscreteMeasure)
    assert np.allclose(m.points, [[0.0, 0.0], [1.0, 1.0]])
    assert np.allclose(m.weights, [0.25, 0.75])
    with pytest.raises(OTLabError) as exc:
        gen(ParamReader({"n": "2", "points": "0,0,1"}), make_rng(0))
    assert exc.value.code == "bad-config"


def test_square_generator_sides():
    gen = get_generator("square")
    right = gen(ParamReader({"which": "right"}), make_rng(0))
    assert right.mean()[0] == pytest.approx(1.0)
    with pytest.raises(OTLabError):
        gen(ParamReader({"which": "middle"}), make_rng(0))


def test_gaussian_generator():
    m = get_generator("gaussian")(ParamReader({"s": "0.5", "h": "0.01"}), make_rng(0))
    assert m.total_mass == pytest.approx(1.0)
    assert m.mean()[0] == pytest.approx(0.0, abs=1e-9)


def test_near_translate_generator():
    m = get_generator("near-translate")(ParamReader({"h": "0.05", "s": "0.2"}), make_rng(1))
    assert m.total_mass == pytest.approx(1.0)
    assert m.n == 2
