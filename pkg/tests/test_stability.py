from dataclasses import replace

import numpy as np
import pytest

from otlab.errors import OTLabError
from otlab.generators import atoms, interval, uniform_box
from otlab.measures import DiscreteMeasure
from otlab.ot_core import CostConvention, KantorovichPotential, solve_discrete
from otlab.stability import (
    StabilityReport,
    atom_weight_family,
    fit_exponent,
    fold_potential,
    grad_l1_distance,
    kantorovich_gap,
    optimality_family,
    potential_stability_check,
    quadratic_convexity_check,
)


def test_fold_function_shape():
    phi = fold_potential(0.1)
    x = np.array([[0.0], [0.05], [0.1], [0.5]])
    assert np.allclose(phi.values(x), [0.0, -0.05, -0.1, 0.3])
    assert np.allclose(phi.gradients(np.array([[0.05], [0.5]]))[:, 0], [-1.0, 1.0])


def test_fold_closed_forms():
    rows, fit = optimality_family((0.05, 0.1, 0.2), cells_per_eps=50)
    for r in rows:
        assert r.lhs == pytest.approx(2 * r.eps, rel=0.02)
        assert r.rhs == pytest.approx(r.eps**2, rel=0.02)
        assert r.sigma_lhs == pytest.approx(r.sigma_rhs, rel=0.01)
        assert r.sigma_rhs == pytest.approx(2 * r.eps**2, rel=0.02)
    assert fit is not None
    assert 0.45 <= fit.slope <= 0.55


def test_single_fold_has_no_fit():
    rows, fit = optimality_family((0.1,), cells_per_eps=20)
    assert len(rows) == 1
    assert fit is None


def test_fit_exponent():
    rhs = np.logspace(-5, -2, 6)
    fit = fit_exponent(2.0 * np.sqrt(rhs), rhs)
    assert fit.slope == pytest.approx(0.5)
    assert fit.intercept == pytest.approx(np.log(2.0))
    assert fit.count == 6
    lo, hi = fit.band
    assert lo <= fit.slope <= hi
    with pytest.raises(OTLabError) as exc:
        fit_exponent([1.0, 2.0], [1e-9, 1e-8])
    assert exc.value.code == "family-degenerate"


def test_gap_of_the_potential_itself_is_zero():
    lam, mu = interval(0.0, 1.0, 0.01), interval(1.0, 2.0, 0.01)
    sol = solve_discrete(lam, mu, CostConvention(1.0))
    psi = KantorovichPotential.from_solution(sol, mu)
    assert kantorovich_gap(psi, psi, lam, mu) == pytest.approx(0.0, abs=1e-12)
    assert grad_l1_distance(psi, psi, lam) == 0.0


def test_cone_family_check():
    lam, mu = interval(0.0, 1.0, 0.02), interval(1.0, 2.0, 0.02)
    report = potential_stability_check(lam, mu, seed=5, trials=12, alpha=4.0)
    assert report.lhs.size == 12
    assert report.validation_lhs.size == 12
    assert report.audits == 24
    assert report.constant > 0
    assert report.min_rhs >= -1e-8
    assert report.safety == 1.0
    assert report.validation_ratio > 0
    with pytest.raises(OTLabError) as exc:
        potential_stability_check(lam, mu, seed=5, trials=4, alpha=3.0)
    assert exc.value.code == "alpha-out-of-range"


def test_validation_ratio_and_safety():
    calib = np.array([1.0])
    report = StabilityReport(calib, calib, 4.0, None, 2.0, np.array([1.0, 1.0]), np.array([1.0, 0.25]))
    assert report.safety == 1.0
    assert report.validation_ratio == pytest.approx(2.0)
    assert report.violations == 1
    assert replace(report, safety=3.0).violations == 0


def test_atom_weight_family():
    mu = atoms([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    family = atom_weight_family(mu, [0.5, 0.1])
    assert len(family) == 2
    assert all(abs(m.total_mass - 1.0) < 1e-12 for m in family)
    assert isinstance(family[0], DiscreteMeasure)
    assert family[0].weights[0] > family[0].weights[1]
    with pytest.raises(OTLabError):
        atom_weight_family(mu, [1.0])


@pytest.mark.parametrize("mode", ["A", "B"])
def test_quadratic_convexity(mode):
    lam = uniform_box([0.0, 0.0], [1.0, 1.0], 0.1)
    mu = atoms([[0.2, 0.2], [0.8, 0.3], [0.4, 0.8], [0.7, 0.7]])
    report = quadratic_convexity_check(lam, mu, atom_weight_family(mu, [0.4, 0.2, 0.1]), mode)
    assert report.mode == mode
    assert report.gaps.size == 3
    assert (report.gaps >= -1e-9).all()
    assert (report.distances >= 0).all()
    if mode == "B":
        assert report.map_lipschitz >= 0
    with pytest.raises(OTLabError):
        quadratic_convexity_check(lam, mu, [], "C")
