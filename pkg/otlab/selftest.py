"""Invariant suites run by ``otlab selftest``."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import DEFAULT_SETTINGS, make_rng
from .contraction import analyze_contraction, delta_eps
from .errors import OTLabError
from .gaussian import delta_eps_gaussian_closed_form, gaussian_experiment
from .generators import interval, random_grid, uniform_box
from .kernels import Kernel
from .measures import DiscreteMeasure, GridMeasure, cdf_difference_oracle, translate
from .ot_core import CostConvention, solve_discrete
from .stability import optimality_family
from .transport_density import common_grid, compute_sigma, renyi, renyi_bound
from .two_point import tau_sweep

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


Suite = Callable[[bool], list[Check]]


def contraction_suite(quick: bool) -> list[Check]:
    """delta_eps >= -(sum of duality gaps) on seeded random pairs."""
    trials = 8 if quick else 200
    worst, count = np.inf, 0
    for t in range(trials):
        rng = make_rng(2024, t)
        cells = int(rng.integers(5, 16 if quick else 41))
        lam = random_grid((cells, cells), 1.0 / cells, rng, 0.3)
        mu = random_grid((cells, cells), 1.0 / cells, rng, 0.3)
        p = 1.0 if t % 2 else 2.0
        k = Kernel("uniform-ball" if (t // 2) % 2 == 0 else "tent", float(rng.uniform(0.02, 0.2)))
        d = delta_eps(lam, mu, k, CostConvention(p), DEFAULT_SETTINGS)
        worst = min(worst, d.delta + d.gap)
        count += 1
    return [Check("contraction", bool(worst >= -1e-12), f"{count} pairs, min delta + gap = {worst:.3g}")]


def rigidity_suite(quick: bool) -> list[Check]:
    lam = uniform_box([0.0, 0.0], [0.5, 0.5], 0.05 if quick else 0.025)
    mu = translate(lam, [0.25, 0.1])
    assert isinstance(mu, GridMeasure)
    report = analyze_contraction(lam, mu, Kernel("uniform-ball", 0.1), CostConvention(2.0))
    checks = [
        Check("translate-delta", report.delta <= 1e-6, f"delta = {report.delta:.3g}"),
        Check("translate-residual", report.residual <= 1e-6, f"residual = {report.residual:.3g}"),
    ]
    a, b = interval(0.0, 1.0, 1e-2), interval(2.0, 3.0, 1e-2)
    d = delta_eps(a, b, Kernel("uniform-ball", 0.4), CostConvention(1.0))
    checks.append(Check("disjoint-intervals-p1", d.delta <= 1e-6, f"delta = {d.delta:.3g}"))
    return checks


def fold_suite(quick: bool) -> list[Check]:
    rows, fit = optimality_family((0.05, 0.1, 0.2), 50 if quick else 100)
    checks = []
    for r in rows:
        ok = abs(r.lhs - 2 * r.eps) <= 0.02 * 2 * r.eps and abs(r.rhs - r.eps**2) <= 0.02 * r.eps**2
        checks.append(Check(f"fold-eps-{r.eps:g}", ok, f"lhs {r.lhs:.6g}, rhs {r.rhs:.6g}"))
        ok = abs(r.sigma_lhs - r.sigma_rhs) <= 0.01 * r.sigma_rhs
        checks.append(Check(f"fold-sigma-eps-{r.eps:g}", ok, f"{r.sigma_lhs:.6g} vs {r.sigma_rhs:.6g}"))
    assert fit is not None
    checks.append(Check("fold-slope", 0.45 <= fit.slope <= 0.55, f"slope {fit.slope:.4f}"))
    return checks


def density_suite(quick: bool) -> list[Check]:
    """1D transport densities against the CDF oracle, and the Renyi bound on disjoint intervals."""
    h = 1e-2
    worst = 0.0
    for t in range(5 if quick else 20):
        rng = make_rng(7, t)
        a = DiscreteMeasure(rng.uniform(0, 1, (6, 1)), rng.uniform(0.5, 1.5, 6)).normalized()
        b = DiscreteMeasure(rng.uniform(0, 1, (5, 1)), rng.uniform(0.5, 1.5, 5)).normalized()
        sol = solve_discrete(a, b, CostConvention(1.0))
        sigma = compute_sigma(sol, a, b, common_grid(a, b, h))
        oracle = cdf_difference_oracle(a, b, sigma.spec)
        worst = max(worst, float(np.max(np.abs(sigma.weights.reshape(-1) - oracle))))
    checks = [Check("sigma-cdf-oracle", worst <= 2 * h, f"max cell error {worst:.3g}")]
    lam, mu = interval(0.0, 1.0, 1e-2), interval(2.0, 3.0, 1e-2)
    sigma = compute_sigma(solve_discrete(lam, mu, CostConvention(1.0)), lam, mu)
    div = renyi(lam, sigma, 1.25)
    bound = renyi_bound(lam.support_mask(), lam.spec.h, 1.25, 3.0, 1.0, 1.0)
    checks.append(Check("renyi-bound", div <= bound, f"D = {div:.4g}, bound {bound:.4g}"))
    return checks


def tau_suite(quick: bool) -> list[Check]:
    lam = interval(0.0, 1.0, 2e-3 if quick else 1e-3)
    radii = (0.1, 0.05) if quick else (0.1, 0.05, 0.025)
    _, slope = tau_sweep(lam, radii, 2.0)
    return [Check("tau-slope", -2.7 <= slope <= -1.3, f"slope {slope:.3f}")]


def gaussian_suite(quick: bool) -> list[Check]:
    checks = []
    cases = [(2.0, 0.04)] if quick else [(k, e) for k in (0.5, 2.0) for e in (0.01, 0.04)]
    for kappa, eps in cases:
        closed = delta_eps_gaussian_closed_form(kappa, eps)
        row = gaussian_experiment(kappa, eps)
        ok = abs(row.delta_numeric - closed.delta) <= 0.01 * closed.delta
        checks.append(Check(f"gaussian-{kappa:g}-{eps:g}", ok, f"{row.delta_numeric:.6g} vs {closed.delta:.6g}"))
    return checks


SUITES: dict[str, Suite] = {
    "contraction": contraction_suite,
    "rigidity": rigidity_suite,
    "fold": fold_suite,
    "density": density_suite,
    "tau": tau_suite,
    "gaussian": gaussian_suite,
}


def run_suites(names: list[str] | None = None, quick: bool = False) -> list[Check]:
    """Run the named suites (all by default); a suite that raises becomes a failed check."""
    checks: list[Check] = []
    for name in names or list(SUITES):
        if name not in SUITES:
            raise OTLabError("bad-config", f"Unknown suite: {name}. Available: {', '.join(SUITES)}")
        try:
            checks.extend(SUITES[name](quick))
        except OTLabError as exc:
            checks.append(Check(name, False, f"{exc.code}: {exc.detail}"))
        logger.info("suite %s done", name)
    return checks
