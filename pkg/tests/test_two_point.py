import math

import numpy as np
import pytest

from otlab.config import Settings
from otlab.errors import OTLabError
from otlab.generators import interval, star, uniform_box
from otlab.kernels import Kernel
from otlab.measures import GridMeasure, GridSpec
from otlab.two_point import (
    GridField,
    build_grid_graph,
    lambda_eps,
    m0,
    nonlocal_poincare,
    overlap_ratio,
    tau,
    tau_anchors,
    tau_sweep,
    two_point_check,
)


def _covering_field(lam, k, value):
    spec = lam.spec.enlarged(k.radius_cells(lam.spec.h) + 1)
    return GridField(spec, np.full((spec.size, lam.n), value))


def test_grid_field_size_check(unit_interval):
    with pytest.raises(OTLabError) as exc:
        GridField(unit_interval.spec, np.zeros(5))
    assert exc.value.code == "grid-mismatch"


def test_lambda_of_constant_offset(unit_interval):
    k = Kernel("uniform-ball", 0.05)
    xi = np.zeros(unit_interval.spec.size)
    for p in (1.0, 2.0, 3.0):
        assert lambda_eps(xi, _covering_field(unit_interval, k, 1.0), k, unit_interval, p) == pytest.approx(1.0)
    assert lambda_eps(xi, _covering_field(unit_interval, k, 0.0), k, unit_interval, 2.0) == 0.0


def test_lambda_needs_cover(unit_interval):
    k = Kernel("uniform-ball", 0.05)
    f = GridField(unit_interval.spec, np.zeros(unit_interval.spec.size))
    with pytest.raises(OTLabError) as exc:
        lambda_eps(np.zeros(100), f, k, unit_interval, 2.0)
    assert exc.value.code == "grid-too-small"


def test_grid_graph_of_interval():
    lam = interval(0.0, 1.0, 1e-3)
    g = build_grid_graph(lam, 0.1)
    assert g.connected
    assert g.r_hat == pytest.approx(0.01)
    assert 99 <= g.size <= 102
    assert g.ball_mass.max() <= 0.2 + 1e-9
    assert m0(g, lam) >= 1.0
    with pytest.raises(OTLabError):
        build_grid_graph(lam, 0.1, eta=0.5)
    with pytest.raises(OTLabError):
        build_grid_graph(lam, 1e-3)


def test_tau_rejects_disconnected_support():
    spec = GridSpec(1, (0.0,), 0.01, (100,))
    w = np.zeros(100)
    w[:20] = 1.0
    w[60:80] = 1.0
    lam = GridMeasure(spec, w / w.sum())
    g = build_grid_graph(lam, 0.1, anchor=[0.005])
    assert not g.connected
    with pytest.raises(OTLabError) as exc:
        tau(g, 2.0)
    assert exc.value.code == "graph-disconnected"


def test_tau_chains_start_at_their_source():
    lam = interval(0.0, 1.0, 2e-3)
    g = build_grid_graph(lam, 0.1)
    result, chains = tau(g, 2.0)
    assert result.exact
    assert result.value > 0
    assert 0 <= result.node < g.size
    assert result.kappa_geo == pytest.approx(1.0, abs=0.2)
    path = chains.chain(0, g.size - 1)
    assert path[0] == chains.sources[0]
    assert path[-1] == g.size - 1
    assert len(path) == chains.depths[0, g.size - 1] + 1


def test_tau_scaling_in_radius():
    lam = interval(0.0, 1.0, 2e-3)
    rows, slope = tau_sweep(lam, (0.1, 0.05), 2.0)
    assert len(rows) == 4
    assert {r.anchor_id for r in rows} == {0, 1}
    assert -2.7 <= slope <= -1.3


def test_tau_sampling_above_exact_limit():
    lam = interval(0.0, 1.0, 1e-3)
    rows = tau_anchors(lam, 0.05, 2.0, settings=Settings(tau_exact_nodes=50, tau_sample_sources=16))
    assert all(r.pairs_used == 16 * r.nodes for r in rows)
    assert all(r.stderr >= 0 for r in rows)


def test_overlap_ratio(unit_interval):
    assert overlap_ratio(unit_interval, [0.5], [0.5], 0.1) == pytest.approx(1.0)
    assert overlap_ratio(unit_interval, [0.5], [0.6], 0.1) == pytest.approx(2.0, rel=0.1)
    assert math.isinf(overlap_ratio(unit_interval, [0.2], [0.8], 0.1))


def test_two_point_constant_field_has_zero_lhs(unit_interval):
    k = Kernel("uniform-ball", 0.05)
    xi = np.full(unit_interval.spec.size, 0.3)
    report = two_point_check(unit_interval, xi, _covering_field(unit_interval, k, 0.3), k, 0.2, 2.0)
    assert report.lhs == pytest.approx(0.0, abs=1e-20)
    assert report.lambda_eps == pytest.approx(0.0, abs=1e-20)
    assert report.ratio == 0.0


def test_two_point_linear_field(unit_interval):
    k = Kernel("uniform-ball", 0.05)
    spec = unit_interval.spec.enlarged(k.radius_cells(unit_interval.spec.h) + 1)
    f = GridField.from_function(spec, lambda x: x[:, :1])
    xi = unit_interval.spec.cell_centers()[:, 0]
    report = two_point_check(unit_interval, xi, f, k, 0.2, 2.0)
    assert report.lhs == pytest.approx(1.0 / 12.0, rel=1e-3)
    assert report.lambda_eps > 0
    assert report.bound > 0
    assert math.isfinite(report.ratio)


def test_nonlocal_poincare():
    mask = np.ones(100, dtype=bool)
    k = Kernel("uniform-ball", 0.05)
    flat = nonlocal_poincare(np.full(100, 2.0), mask, 0.01, k, 2.0)
    assert flat.lhs == 0.0 and flat.rhs == 0.0 and flat.ratio == 0.0
    x = (np.arange(100) + 0.5) * 0.01
    linear = nonlocal_poincare(x, mask, 0.01, k, 2.0)
    assert linear.lhs == pytest.approx(1.0 / 12.0, rel=1e-3)
    assert linear.rhs > 0
    with pytest.raises(OTLabError):
        nonlocal_poincare(x[:50], mask, 0.01, k, 2.0)


def test_lambda_of_identity_fields_is_second_kernel_moment():
    eps, h = 0.05, 2.5e-4
    lam = interval(0.0, 1.0, h)
    k = Kernel("uniform-ball", eps)
    spec = lam.spec.enlarged(k.radius_cells(h) + 1)
    f = GridField.from_function(spec, lambda x: x[:, :1])
    xi = lam.spec.cell_centers()[:, 0]
    assert lambda_eps(xi, f, k, lam, 2.0) == pytest.approx(eps**2 / 3.0, rel=0.01)


def test_overlap_ratio_matches_lens_area():
    lam = uniform_box([0.3, 0.3], [0.7, 0.7], 1e-3)
    r, d = 0.1, 0.01
    lens = 2 * r**2 * math.acos(d / (2 * r)) - 0.5 * d * math.sqrt(4 * r**2 - d**2)
    ratio = overlap_ratio(lam, [0.5, 0.5], [0.5 + d, 0.5], r)
    assert ratio == pytest.approx(math.pi * r**2 / lens, rel=0.02)
    assert ratio == pytest.approx(1.0685, rel=0.02)


def test_m0_ignores_total_mass():
    lam = uniform_box([0.0, 0.0], [0.5, 0.5], 0.01)
    heavy = GridMeasure(lam.spec, 3.0 * lam.weights)
    g = build_grid_graph(lam, 0.1)
    assert m0(build_grid_graph(heavy, 0.1), heavy) == pytest.approx(m0(g, lam), rel=1e-12)


def test_tau_on_nested_uniform_densities():
    lam = interval(0.0, 1.0, 2e-3)
    heavy = GridMeasure(lam.spec, 2.0 * lam.weights)
    light, dense = tau_anchors(lam, 0.1, 2.0), tau_anchors(heavy, 0.1, 2.0)
    for a, b in zip(light, dense):
        # ball masses double and the reciprocal chain sums halve
        assert b.tau == pytest.approx(2.0 * a.tau, rel=1e-9)
        assert b.tau >= a.tau
        assert b.m0 == pytest.approx(a.m0, rel=1e-12)


@pytest.mark.parametrize("eta", [0.05, 0.1, 0.2])
def test_tau_invariants_across_eta(eta):
    lam = interval(0.0, 1.0, 2e-3)
    rows, slope = tau_sweep(lam, (0.1, 0.05), 2.0, eta=eta)
    assert -2.7 <= slope <= -1.3
    assert all(math.isfinite(r.m0) and r.kappa_geo <= 3.0 for r in rows)
    for r in (0.1, 0.05):
        pair = [row.tau for row in rows if row.r == r]
        assert max(pair) <= 4.0 * min(pair)


def test_tau_scaled_stays_bounded_on_star():
    radii = (0.1, 0.05, 0.025)
    rows, _ = tau_sweep(star(1 / 200), radii, 2.0, eta=0.25)
    scaled = [max(row.tau for row in rows if row.r == r) * r**3 for r in radii]
    assert all(20.0 <= s <= 60.0 for s in scaled)
    assert max(scaled) <= 1.5 * min(scaled)
