import math

import numpy as np
import pytest

from otlab.config import make_rng
from otlab.contraction import (
    analyze_contraction,
    delta_eps,
    dominance_diagnostics,
    lambda_delta_chain,
    marginal_stability,
    min_translation_cost,
    near_translate,
    near_translate_coherence,
    recover_direction,
    recover_translation,
    smooth_bump,
)
from otlab.errors import OTLabError
from otlab.generators import interval, random_grid, uniform_box
from otlab.kernels import Kernel
from otlab.measures import translate
from otlab.ot_core import CostConvention, DisplacementField


@pytest.mark.parametrize("p", [1.0, 2.0])
@pytest.mark.parametrize("profile", ["uniform-ball", "tent"])
def test_smoothing_never_increases_cost(p, profile):
    for trial in range(3):
        lam = random_grid((6, 6), 1 / 6, make_rng(1, trial), 0.3)
        mu = random_grid((6, 6), 1 / 6, make_rng(2, trial), 0.3)
        d = delta_eps(lam, mu, Kernel(profile, 0.2), CostConvention(p))
        assert d.delta >= -d.gap - 1e-12
        assert d.lam_eps.total_mass == pytest.approx(1.0)


def test_delta_needs_aligned_grids(square):
    other = uniform_box([0.0, 0.0], [0.5, 0.5], 0.04)
    with pytest.raises(OTLabError) as exc:
        delta_eps(square, other, Kernel("tent", 0.1), CostConvention())
    assert exc.value.code == "grid-mismatch"
    with pytest.raises(OTLabError):
        delta_eps(square, square.to_discrete(), Kernel("tent", 0.1), CostConvention())


def test_translate_is_rigid_for_p2(square):
    z0 = np.array([0.25, 0.1])
    mu = translate(square, z0)
    report = analyze_contraction(square, mu, Kernel("uniform-ball", 0.1), CostConvention(2.0))
    assert report.delta <= 1e-6
    assert report.residual <= 1e-8
    assert np.allclose(report.vector, -z0, atol=1e-9)
    row = report.csv_row()
    assert list(row) == ["p", "eps", "kernel", "wp", "wp_eps", "delta", "z0", "z1", "residual", "gap"]


def test_disjoint_intervals_p1():
    lam, mu = interval(0.0, 1.0, 1e-2), interval(2.0, 3.0, 1e-2)
    report = analyze_contraction(lam, mu, Kernel("uniform-ball", 0.4), CostConvention(1.0))
    assert report.delta <= 1e-6
    assert report.wp == pytest.approx(2.0)
    assert report.disjoint is True
    assert report.vector == pytest.approx((1.0,))
    assert report.residual == pytest.approx(0.0, abs=1e-12)
    assert "marginal" in report.csv_row()


def test_recover_translation_of_odd_field():
    pts = np.array([[-1.0], [1.0]])
    field = DisplacementField(pts, pts.copy(), np.zeros_like(pts), np.ones(2, dtype=bool), np.full(2, 0.5), 2.0)
    rec = recover_translation(field)
    assert rec.vector[0] == pytest.approx(0.0)
    assert rec.residual == pytest.approx(1.0)
    with pytest.raises(OTLabError):
        recover_direction(field)


def test_recover_direction_cancelling_flow():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    vectors = np.array([[1.0, 0.0], [-1.0, 0.0]])
    field = DisplacementField(pts, vectors, pts, np.ones(2, dtype=bool), np.full(2, 0.5), 1.0)
    with pytest.raises(OTLabError) as exc:
        recover_direction(field)
    assert exc.value.code == "degenerate-direction"
    with pytest.raises(OTLabError):
        recover_translation(field)


def test_recover_direction_unit_interval_shift():
    lam, mu = interval(0.0, 1.0, 0.02), interval(1.0, 2.0, 0.02)
    report = analyze_contraction(lam, mu, Kernel("tent", 0.05), CostConvention(1.0))
    assert report.vector == pytest.approx((1.0,))
    assert report.residual == pytest.approx(0.0, abs=1e-12)


def test_marginal_and_slices_of_shift(square):
    mu = translate(square, [0.25, 0.0])
    assert marginal_stability(square, mu, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    rows = dominance_diagnostics(square, mu, [1.0, 0.0])
    assert len(rows) == 10
    assert all(r.dominated for r in rows)
    back = dominance_diagnostics(mu, square, [1.0, 0.0])
    assert not any(r.dominated for r in back)


def test_min_translation_cost(square):
    mu = translate(square, [0.2, 0.1])
    assert min_translation_cost(square, mu, CostConvention(2.0)) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(OTLabError):
        min_translation_cost(square, mu, CostConvention(1.0))


def test_near_translate(square):
    omega, phase = smooth_bump(2, make_rng(0))
    same = near_translate(square, [0.1, 0.0], 0.0, omega, phase)
    assert np.allclose(same.weights, square.weights)
    bent = near_translate(square, [0.1, 0.0], 0.3, omega, phase)
    assert bent.total_mass == pytest.approx(1.0)
    assert not np.allclose(bent.weights, square.weights)
    with pytest.raises(OTLabError):
        near_translate(square, [0.1, 0.0], 1.0, omega, phase)


def test_coherence_rows(square):
    rows, rho = near_translate_coherence(square, [0.1, 0.0], Kernel("uniform-ball", 0.1), [0.2, 0.1, 0.05], seed=3)
    assert [r.s for r in rows] == [0.2, 0.1, 0.05]
    assert rows[0].w2min > rows[-1].w2min >= 0.0
    assert all(r.delta >= -1e-9 for r in rows)
    assert -1.0 <= rho <= 1.0 or math.isnan(rho)


def test_chain_nodes_reassemble_delta():
    lam = interval(0.0, 0.5, 0.05)
    mu = interval(0.2, 0.5, 0.05)
    report = lambda_delta_chain(lam, mu, Kernel("uniform-ball", 0.1), CostConvention(2.0), alpha=3.0, C=None)
    assert report.complete
    assert report.node_weights.sum() == pytest.approx(1.0)
    assert report.node_sum == pytest.approx(report.delta, abs=1e-8 + report.gap)
    assert report.lambda_value >= 0.0
    assert (report.node_distances >= 0).all()
    assert report.lambda_value == pytest.approx(float(report.node_weights @ report.node_distances), rel=1e-9)
    assert not report.violated


def test_identical_measures_p1_are_flagged():
    m = interval(0.0, 1.0, 0.1)
    report = analyze_contraction(m, m, Kernel("uniform-ball", 0.2), CostConvention(1.0))
    assert report.wp == pytest.approx(0.0)
    assert report.disjoint is False
    assert "supports-overlap" in report.flags
    assert "degenerate-direction" in report.flags
    assert report.vector is None
