import numpy as np
import pytest

from otlab.config import Settings
from otlab.errors import OTLabError
from otlab.generators import interval, uniform_box
from otlab.kernels import Kernel
from otlab.measures import (
    DiscreteMeasure,
    GridMeasure,
    GridSpec,
    cdf_difference_oracle,
    convolve,
    distance_to_boundary,
    erosion_integral,
    load_measure,
    monotone_gap,
    monotone_gaps,
    project,
    stochastic_dominance_1d,
    translate,
    translate_with_residual,
)


def test_grid_spec_geometry():
    spec = GridSpec.covering([0.0, -1.0], [1.0, 1.0], 0.25)
    assert spec.extents == (4, 8)
    assert spec.size == 32
    assert spec.cell_volume == pytest.approx(0.0625)
    centers = spec.cell_centers()
    assert centers.shape == (32, 2)
    assert np.allclose(centers[0], [0.125, -0.875])
    assert np.allclose(centers[1], [0.125, -0.625])
    big = spec.enlarged(2)
    assert big.extents == (8, 12)
    assert list(spec.cell_offset(big)) == [2, 2]


def test_grid_spec_alignment_and_union():
    a = GridSpec(1, (0.0,), 0.1, (10,))
    b = GridSpec(1, (2.0,), 0.1, (10,))
    c = GridSpec(1, (0.05,), 0.1, (10,))
    assert a.aligned_with(b)
    assert not a.aligned_with(c)
    u = a.union(b)
    assert u.origin == (0.0,)
    assert u.extents == (30,)
    with pytest.raises(OTLabError) as exc:
        a.union(c)
    assert exc.value.code == "grid-mismatch"


def test_grid_header_parses_back():
    spec = GridSpec(2, (0.5, -0.25), 0.05, (3, 7))
    assert GridSpec.parse_header(spec.header()) == spec
    with pytest.raises(OTLabError):
        GridSpec.parse_header("grid n=2 h=0.1")


def test_grid_budget():
    with pytest.raises(OTLabError) as exc:
        GridSpec(2, (0.0, 0.0), 1e-4, (10_000, 10_000))
    assert exc.value.code == "grid-budget"
    # a caller budget above the default lifts the cap and is inherited
    big = GridSpec(1, (0.0,), 1.0, (2**22 + 1,), budget=2**23)
    assert big.enlarged(1).size == 2**22 + 3
    small = uniform_box([0.0], [1.0], 0.1, budget=12)
    assert small.spec.cell_budget == 12
    with pytest.raises(OTLabError) as exc:
        small.spec.enlarged(2)
    assert exc.value.code == "grid-budget"
    assert translate(small, [0.3]).spec.budget == 12


def test_grid_measure_validation():
    spec = GridSpec(1, (0.0,), 1.0, (3,))
    with pytest.raises(OTLabError) as exc:
        GridMeasure(spec, np.array([1.0, -0.5, 0.5]))
    assert exc.value.code == "parameter-out-of-range"
    with pytest.raises(OTLabError) as exc:
        GridMeasure(spec, np.zeros(3))
    assert exc.value.code == "zero-mass"
    with pytest.raises(OTLabError) as exc:
        GridMeasure(spec, np.ones(3), probability=True)
    assert exc.value.code == "mass-mismatch"
    m = GridMeasure(spec, np.array([0.0, 2.0, 2.0]))
    assert m.normalized().total_mass == pytest.approx(1.0)
    assert m.to_discrete().points[:, 0].tolist() == [1.5, 2.5]


def test_discrete_measure_validation():
    with pytest.raises(OTLabError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([1.0, 0.0]))
    with pytest.raises(OTLabError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([1.0]))
    d = DiscreteMeasure.dirac([0.5, 0.5])
    assert d.n == 2
    assert d.total_mass == 1.0


def test_convolve_keeps_mass_and_compact_support(unit_interval):
    k = Kernel("uniform-ball", 0.1)
    out = convolve(unit_interval, k)
    assert out.spec.extents == (120,)
    assert out.total_mass == pytest.approx(1.0, abs=1e-12)
    assert out.mean()[0] == pytest.approx(0.5, abs=1e-12)
    # the dilation [-0.1, 1.1] fills the enlarged grid exactly
    assert (out.weights > 0).all()


def test_convolve_keeps_gaps_between_pieces():
    spec = GridSpec(1, (0.0,), 0.01, (100,))
    w = np.zeros(100)
    w[:20] = 1.0
    w[80:] = 1.0
    out = convolve(GridMeasure(spec, w), Kernel("uniform-ball", 0.05))
    centers = out.spec.cell_centers()[:, 0]
    assert (out.weights[(centers > 0.26) & (centers < 0.74)] == 0).all()


def test_convolve_budget(unit_interval):
    with pytest.raises(OTLabError) as exc:
        convolve(unit_interval, Kernel("uniform-ball", 0.1), Settings(grid_budget=100))
    assert exc.value.code == "grid-budget"


def test_convolution_commutes_with_translation(square):
    k = Kernel("tent", 0.1)
    a = convolve(translate(square, [0.1, 0.05]), k)
    b = translate(convolve(square, k), [0.1, 0.05])
    assert a.spec.aligned_with(b.spec)
    assert a.spec.extents == b.spec.extents
    assert np.allclose(a.weights, b.weights, atol=1e-14)


def test_translate():
    d = translate(DiscreteMeasure.dirac([0.0]), [1.0])
    assert d.to_discrete().points[0, 0] == 1.0
    m = interval(0.0, 1.0, 0.1)
    shifted = translate(m, [0.3])
    assert shifted.mean()[0] == pytest.approx(m.mean()[0] + 0.3, abs=1e-12)
    assert translate(m, [0.0]).weights.tobytes() == m.weights.tobytes()
    snapped, residual = translate_with_residual(m, [0.33])
    assert snapped.mean()[0] == pytest.approx(m.mean()[0] + 0.3, abs=1e-12)
    assert residual == pytest.approx([0.03], abs=1e-12)
    assert translate_with_residual(d, [0.5])[1].tolist() == [0.0]
    with pytest.raises(OTLabError) as exc:
        translate(m, [0.1, 0.1])
    assert exc.value.code == "grid-mismatch"


def test_project_perp_merges_atoms(square):
    line = project(square, [1.0, 0.0])
    assert line.n == 1
    assert line.points.shape == (10, 1)
    assert np.allclose(line.weights, 0.1)
    scalar = project(square, [0.0, 1.0], mode="scalar")
    assert np.allclose(np.sort(line.points[:, 0]), np.sort(scalar.points[:, 0]))


def test_project_rejects_bad_direction(square):
    with pytest.raises(OTLabError) as exc:
        project(square, [1.0, 1.0])
    assert exc.value.code == "bad-direction"


def test_distance_to_boundary_1d():
    d = distance_to_boundary(np.ones(10, dtype=bool), 1.0)
    assert d.tolist() == [0.5, 1.5, 2.5, 3.5, 4.5, 4.5, 3.5, 2.5, 1.5, 0.5]


def test_erosion_integral():
    mask = np.ones(100, dtype=bool)
    assert erosion_integral(mask, 0.01, 0.0) == pytest.approx(1.0)
    # on [0, 1] the integral of d^-1/2 is 2 * 2 sqrt(1/2)
    fine = np.ones(10_000, dtype=bool)
    assert erosion_integral(fine, 1e-4, 0.5) == pytest.approx(2 * np.sqrt(2), rel=1e-9)
    # boundary cells are integrated exactly, so coarse grids agree too
    assert erosion_integral(np.ones(10, dtype=bool), 0.1, 0.5) == pytest.approx(2 * np.sqrt(2), rel=1e-9)
    with pytest.raises(OTLabError) as exc:
        erosion_integral(mask, 0.01, 1.0)
    assert exc.value.code == "alpha-out-of-range"
    with pytest.raises(OTLabError) as exc:
        erosion_integral(np.zeros(4, dtype=bool), 0.01, 0.5)
    assert exc.value.code == "empty-support"


def test_stochastic_dominance():
    left, right = DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0])
    assert stochastic_dominance_1d(left, right) == (True, 0.0)
    ok, violation = stochastic_dominance_1d(right, left)
    assert not ok
    assert violation == pytest.approx(1.0)
    with pytest.raises(OTLabError):
        stochastic_dominance_1d(left, DiscreteMeasure(np.array([[1.0]]), np.array([2.0])))


def test_cdf_oracle_of_two_diracs():
    spec = GridSpec(1, (0.0,), 0.25, (4,))
    cells = cdf_difference_oracle(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]), spec)
    assert np.allclose(cells, 0.25)


def test_monotone_gap_for_shift_along_e(unit_interval):
    mu = translate(unit_interval, [0.5])
    gaps = monotone_gaps(unit_interval, mu, [1.0], 6, seed=3)
    assert gaps[0] == pytest.approx(-0.5)
    assert monotone_gap(unit_interval, mu, [1.0], 6, seed=3) <= 1e-12


def test_measure_file_formats(tmp_path, square):
    square.save(tmp_path / "square.grid", provenance="box")
    back = load_measure(tmp_path / "square.grid")
    assert isinstance(back, GridMeasure)
    assert back.spec == square.spec
    assert np.array_equal(back.weights, square.weights)
    atoms = DiscreteMeasure(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([0.25, 0.75]))
    atoms.save(tmp_path / "atoms.txt")
    loaded = load_measure(tmp_path / "atoms.txt")
    assert isinstance(loaded, DiscreteMeasure)
    assert np.array_equal(loaded.points, atoms.points)


def test_grid_file_with_wrong_count(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_text("grid n=1 origin=0 h=0.5 dims=3\n1 2\n", encoding="utf-8")
    with pytest.raises(OTLabError) as exc:
        load_measure(path)
    assert exc.value.code == "bad-config"


def test_boxes_are_aligned():
    a = uniform_box([0.0, 0.0], [0.5, 0.5], 0.05)
    b = uniform_box([0.25, 0.1], [0.75, 0.6], 0.05)
    assert a.spec.aligned_with(b.spec)
