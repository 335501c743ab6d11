import math

import numpy as np
import pytest

from otlab.errors import OTLabError
from otlab.gaussian import (
    IsotropicGaussian,
    caffarelli_bound,
    delta_eps_gaussian_closed_form,
    discretize_gaussian,
    gaussian_experiment,
    gaussian_window,
    heat_step,
    heat_variance_fit,
    log_concavity_step,
    prefactor_ratio,
    quantile_map_lipschitz,
    smoothed_map_bound,
    truncation_mass,
    twopoint_gaussian_sweep,
    w2_gaussians,
)
from otlab.kernels import Kernel
from otlab.measures import convolve


def test_closed_form_value():
    d = delta_eps_gaussian_closed_form(2.0, 0.04)
    assert d.delta == pytest.approx(0.163869, abs=1e-5)
    assert d.delta == pytest.approx(d.f * (1.0 - 2.0) ** 2)
    assert delta_eps_gaussian_closed_form(2.0, 0.04, n=3).delta == pytest.approx(3 * d.delta)
    assert delta_eps_gaussian_closed_form(1.0, 0.04).delta == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(OTLabError):
        delta_eps_gaussian_closed_form(0.0, 0.04)


@pytest.mark.parametrize("kappa", [0.5, 2.0, 3.0])
def test_prefactor_limit(kappa):
    assert prefactor_ratio(kappa, 1e-10) == pytest.approx(2.0 / kappa, rel=1e-3)


def test_gaussian_algebra():
    g = IsotropicGaussian(2, 1.0)
    assert g.mean == (0.0, 0.0)
    assert heat_step(g, 0.5).variance == pytest.approx(2.0)
    assert w2_gaussians(g, IsotropicGaussian(2, 2.0, (3.0, 4.0))) == pytest.approx(27.0)
    assert caffarelli_bound(4.0, 1.0) == pytest.approx(2.0)
    assert log_concavity_step(1.0, 0.5) == pytest.approx(2.0)
    assert smoothed_map_bound(1.0, 0.04) == pytest.approx(1.0)
    assert gaussian_window([[0.0]], IsotropicGaussian())[0] == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    with pytest.raises(OTLabError):
        IsotropicGaussian(1, 0.0)
    with pytest.raises(OTLabError) as exc:
        IsotropicGaussian(2, 1.0, (0.0,))
    assert exc.value.code == "grid-mismatch"
    with pytest.raises(OTLabError):
        heat_step(g, -1.0)


def test_truncation_window():
    assert truncation_mass(8.0) < 1e-6
    with pytest.raises(OTLabError) as exc:
        discretize_gaussian(IsotropicGaussian(), 0.01, R=4.0)
    assert exc.value.code == "domain-too-small"
    with pytest.raises(OTLabError):
        discretize_gaussian(IsotropicGaussian(2, 1.0), 0.01)


@pytest.mark.parametrize("s", [1.0, 0.5])
def test_discretized_variance(s):
    m = discretize_gaussian(IsotropicGaussian(1, s), 0.01)
    assert m.total_mass == pytest.approx(1.0)
    assert heat_variance_fit(m) == pytest.approx(s * s, abs=1e-4)


def test_heat_kernel_adds_variance():
    eps = 0.04
    m = convolve(discretize_gaussian(IsotropicGaussian(), 0.01), Kernel("heat", eps))
    assert heat_variance_fit(m) == pytest.approx(1.0 + 2.0 * math.sqrt(eps), abs=1e-3)


def test_pipeline_matches_closed_form():
    row = gaussian_experiment(2.0, 0.04, h=1e-2)
    assert row.delta_numeric == pytest.approx(row.delta_closed, rel=0.01)
    assert row.w2min == pytest.approx(1.0, rel=0.01)
    assert row.trunc_mass < 1e-6
    assert set(row.csv_row()) >= {"kappa", "eps", "delta_closed", "delta_numeric", "w2min"}
    with pytest.raises(OTLabError):
        gaussian_experiment(5.0, 0.04)


def test_quantile_map_of_dilation():
    a = discretize_gaussian(IsotropicGaussian(1, 1.0), 0.01)
    b = discretize_gaussian(IsotropicGaussian(1, 2.0), 0.01)
    assert quantile_map_lipschitz(a, b) == pytest.approx(2.0, abs=0.1)


def test_width_sweep_residual_shrinks():
    rows, rho = twopoint_gaussian_sweep((0.2, 0.1), 0.01, h=0.02)
    assert [r.s for r in rows] == [0.2, 0.1]
    assert rows[0].residual > rows[1].residual > 0
    assert all(r.lambda_eps >= 0 for r in rows)
    assert np.isnan(rho) or -1.0 <= rho <= 1.0
