"""Stability of Kantorovich potentials: gaps, gradient distances and exponent fits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from .config import DEFAULT_SETTINGS, Settings, make_rng
from .errors import OTLabError
from .kernels import FloatArray
from .lipschitz import ConeFunction, LipschitzFunction, MinFunction, cone_family, require_lipschitz
from .measures import DiscreteMeasure, GridMeasure, GridSpec, Measure
from .ot_core import (
    CostConvention,
    KantorovichPotential,
    c_transform,
    extend_potential,
    kantorovich_value,
    solve_discrete,
)
from .transport_density import compute_sigma, stab_sigma_check

logger = logging.getLogger(__name__)

REGRESSION_WINDOW = (1e-6, 1e-1)
SAFETY_FACTOR = 1.0


def _integral(f: LipschitzFunction, m: Measure) -> float:
    d = m.to_discrete()
    return float(d.weights @ f.values(d.points))


def kantorovich_gap(psi: KantorovichPotential, phi: LipschitzFunction, lam: Measure, mu: Measure) -> float:
    """int (psi - phi) d(mu - lam), cross-checked against W_1 - int phi d(mu - lam)."""
    phi_part = _integral(phi, mu) - _integral(phi, lam)
    psi_part = _integral(psi, mu) - _integral(psi, lam)
    direct = psi_part - phi_part
    via_cost = psi.cost - phi_part
    if abs(direct - via_cost) > 1e-8 * (1.0 + abs(psi.cost)):
        raise OTLabError(
            "inconsistent-dual",
            f"int psi d(mu - lam) = {psi_part!r} but W_1 = {psi.cost!r}",
        )
    return direct


def grad_l1_distance(psi: LipschitzFunction, phi: LipschitzFunction, lam: Measure) -> float:
    """||grad psi - grad phi||_{L^1(lam)} at the lambda atoms."""
    d = lam.to_discrete()
    diff = psi.gradients(d.points) - phi.gradients(d.points)
    return float(d.weights @ np.linalg.norm(diff, axis=1))


def fold_potential(eps: float) -> ConeFunction:
    """phi(x) = |x - eps| - eps: slope -1 on (0, eps), then slope +1."""
    return ConeFunction(np.array([[eps]]), np.array([-eps]))


@dataclass(frozen=True, slots=True)
class ExponentFit:
    slope: float
    intercept: float
    stderr: float
    count: int

    @property
    def band(self) -> tuple[float, float]:
        return self.slope - 1.96 * self.stderr, self.slope + 1.96 * self.stderr


def fit_exponent(
    lhs: ArrayLike, rhs: ArrayLike, window: tuple[float, float] = REGRESSION_WINDOW
) -> ExponentFit:
    """Slope of log LHS against log RHS over pairs with RHS inside ``window``."""
    lv = np.asarray(lhs, dtype=np.float64)
    rv = np.asarray(rhs, dtype=np.float64)
    keep = (rv >= window[0]) & (rv <= window[1]) & (lv > 0)
    if keep.sum() < 2 or np.ptp(np.log(rv[keep])) == 0.0:
        raise OTLabError("family-degenerate", f"{int(keep.sum())} pairs with RHS in [{window[0]:g}, {window[1]:g}]")
    result = stats.linregress(np.log(rv[keep]), np.log(lv[keep]))
    stderr = float(result.stderr) if keep.sum() > 2 else 0.0
    return ExponentFit(float(result.slope), float(result.intercept), stderr, int(keep.sum()))


def unit_interval(lo: float, hi: float, h: float) -> GridMeasure:
    """Uniform probability on [lo, hi] with cells of width h."""
    spec = GridSpec.covering([lo], [hi], h)
    return GridMeasure(spec, np.full(spec.extents, 1.0 / spec.size), probability=True)


@dataclass(frozen=True, slots=True)
class FoldRow:
    eps: float
    lhs: float
    rhs: float
    sigma_lhs: float
    sigma_rhs: float


def optimality_family(
    eps_values: Sequence[float], cells_per_eps: int = 100
) -> tuple[list[FoldRow], ExponentFit | None]:
    """Reproduce the eps-fold closed forms on unif(0,1) -> unif(1,2).

    Expected per row: lhs = 2 eps, rhs = eps^2 and on sigma 2 eps^2 for both
    sides; the fitted slope of lhs against rhs is 1/2 (None for a single eps).
    """
    rows = []
    for eps in eps_values:
        h = eps / cells_per_eps
        lam = unit_interval(0.0, 1.0, h)
        mu = unit_interval(1.0, 2.0, h)
        sol = solve_discrete(lam, mu, CostConvention(1.0))
        psi = KantorovichPotential.from_solution(sol, mu)
        phi = fold_potential(eps)
        sigma = compute_sigma(sol, lam, mu)
        check = stab_sigma_check(psi, phi, sigma, lam, mu)
        rows.append(FoldRow(eps, grad_l1_distance(psi, phi, lam), kantorovich_gap(psi, phi, lam, mu), check.lhs, check.rhs))
        logger.info("fold eps=%g: lhs %.6g rhs %.6g", eps, rows[-1].lhs, rows[-1].rhs)
    if len(rows) < 2:
        return rows, None
    return rows, fit_exponent([r.lhs for r in rows], [r.rhs for r in rows])


def random_cone_family(
    psi: KantorovichPotential,
    lam: Measure,
    rng: np.random.Generator,
    count: int,
    depth: tuple[float, float] = (1e-3, 0.3),
) -> list[LipschitzFunction]:
    """psi itself, cone cuts min(psi, psi(p) - s + |x - p|) and a few pure cone minima.

    Apexes p are drawn from supp lam and depths s log-uniformly from ``depth``.
    """
    d = lam.to_discrete()
    family: list[LipschitzFunction] = [psi]
    pure = max(1, count // 5) if count > 2 else 0
    cuts = max(0, count - 1 - pure)
    for _ in range(cuts):
        apex = d.points[rng.integers(d.points.shape[0])][None, :]
        s = math.exp(rng.uniform(math.log(depth[0]), math.log(depth[1])))
        base = float(psi.values(apex)[0])
        family.append(MinFunction((psi, ConeFunction(apex, np.array([base - s])))))
    lo, hi = d.points.min(axis=0), d.points.max(axis=0)
    family.extend(cone_family(lo, hi, rng, pure))
    return family[:count] if count > 0 else []


@dataclass(frozen=True, slots=True)
class StabilityReport:
    """LHS/RHS samples of the p = 1 stability inequality with their fit."""

    lhs: FloatArray
    rhs: FloatArray
    alpha: float
    fit: ExponentFit | None
    constant: float
    validation_lhs: FloatArray = field(default_factory=lambda: np.empty(0))
    validation_rhs: FloatArray = field(default_factory=lambda: np.empty(0))
    safety: float = SAFETY_FACTOR
    audits: int = 0

    @property
    def violations(self) -> int:
        """Validation members with LHS^alpha > safety * C * RHS."""
        allowed = self.safety * self.constant * self.validation_rhs + 1e-12
        return int(np.sum(self.validation_lhs**self.alpha > allowed))

    @property
    def validation_ratio(self) -> float:
        """Largest LHS^alpha / (C RHS) on the validation family; above 1 the fresh family beats C."""
        usable = self.validation_rhs > REGRESSION_WINDOW[0]
        if not usable.any() or self.constant <= 0:
            return 0.0
        return float(np.max(self.validation_lhs[usable] ** self.alpha / (self.constant * self.validation_rhs[usable])))

    @property
    def min_rhs(self) -> float:
        return float(np.min(np.concatenate([self.rhs, self.validation_rhs])))


def _samples(
    psi: KantorovichPotential, family: Sequence[LipschitzFunction], lam: Measure, mu: Measure, spec: GridSpec | None
) -> tuple[FloatArray, FloatArray, int]:
    lhs, rhs, audits = [], [], 0
    for phi in family:
        if spec is not None:
            require_lipschitz(phi, spec)
            audits += 1
        lhs.append(grad_l1_distance(psi, phi, lam))
        rhs.append(kantorovich_gap(psi, phi, lam, mu))
    return np.asarray(lhs), np.asarray(rhs), audits


def potential_stability_check(
    lam: Measure,
    mu: Measure,
    seed: int,
    trials: int,
    alpha: float,
    safety: float = SAFETY_FACTOR,
    settings: Settings = DEFAULT_SETTINGS,
) -> StabilityReport:
    """Calibrate C in LHS^alpha <= C RHS on one cone family, validate on another.

    The two families come from disjoint random streams of ``seed``.
    """
    if not alpha > 3:
        raise OTLabError("alpha-out-of-range", f"stability exponent must exceed 3, got {alpha}")
    sol = solve_discrete(lam, mu, CostConvention(1.0), settings)
    psi = KantorovichPotential.from_solution(sol, mu)
    spec = lam.spec if isinstance(lam, GridMeasure) else None
    lhs, rhs, a1 = _samples(psi, random_cone_family(psi, lam, make_rng(seed, 0), trials), lam, mu, spec)
    vlhs, vrhs, a2 = _samples(psi, random_cone_family(psi, lam, make_rng(seed, 1), trials), lam, mu, spec)
    if np.any(np.concatenate([rhs, vrhs]) < -1e-8):
        logger.warning("negative Kantorovich gap %.3g", float(np.min(np.concatenate([rhs, vrhs]))))
    usable = rhs > REGRESSION_WINDOW[0]
    if not usable.any():
        raise OTLabError("family-degenerate", "every calibration gap is below 1e-6")
    constant = float(np.max(lhs[usable] ** alpha / rhs[usable]))
    try:
        fit: ExponentFit | None = fit_exponent(np.concatenate([lhs, vlhs]), np.concatenate([rhs, vrhs]))
    except OTLabError:
        fit = None
    report = StabilityReport(lhs, rhs, alpha, fit, constant, vlhs, vrhs, safety, a1 + a2)
    logger.info("stability: C = %.6g, %d validation violations", constant, report.violations)
    return report


def atom_weight_family(mu: Measure, amplitudes: Sequence[float]) -> list[Measure]:
    """Reweight the atoms of ``mu`` by (1 + t s_j) with alternating signs s_j."""
    d = mu.to_discrete()
    signs = np.where(np.arange(d.weights.size) % 2 == 0, 1.0, -1.0)
    family: list[Measure] = []
    for t in amplitudes:
        w = d.weights * (1.0 + t * signs)
        if np.any(w <= 0):
            raise OTLabError("parameter-out-of-range", f"amplitude {t} makes an atom weight nonpositive")
        family.append(DiscreteMeasure(d.points, w * (d.total_mass / w.sum())))
    return family


@dataclass(frozen=True, slots=True)
class QuadraticReport:
    mode: str
    gaps: FloatArray
    distances: FloatArray
    constant: float
    fit: ExponentFit | None
    map_lipschitz: float = math.nan

    @property
    def candidates(self) -> tuple[float, float]:
        """(2K, 1/(2K)) for the audited map constant K."""
        k = self.map_lipschitz
        return 2.0 * k, 1.0 / (2.0 * k) if k > 0 else math.inf


def _map_lipschitz(images: FloatArray, spec: GridSpec, support: FloatArray, stride: int) -> float:
    worst = 0.0
    grid = np.full((*spec.extents, images.shape[1]), np.nan)
    grid.reshape(-1, images.shape[1])[support] = images
    for axis in range(spec.n):
        if spec.extents[axis] <= stride:
            continue
        a = np.take(grid, np.arange(spec.extents[axis] - stride), axis=axis)
        b = np.take(grid, np.arange(stride, spec.extents[axis]), axis=axis)
        jump = np.linalg.norm(a - b, axis=-1)
        if np.any(np.isfinite(jump)):
            worst = max(worst, float(np.nanmax(jump)) / (stride * spec.h))
    return worst


def quadratic_convexity_check(
    lam: Measure,
    mu: Measure,
    competitors: Sequence[Measure],
    mode: str = "A",
    K: float | None = None,
    stride: int = 1,
    atom_spacing: float | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> QuadraticReport:
    """Strong convexity of F_{lam,mu} around its maximizer for p = 2.

    Each competitor potential phi solves (lam, mu_k) and is extended to the
    atoms of ``mu`` by the c-bar-transform. Mode A reports min gap / D^3,
    mode B audits the competitor maps x - grad phi^c and reports min gap / D.
    """
    if mode not in ("A", "B"):
        raise OTLabError("parameter-out-of-range", f"Unknown convexity mode: {mode}")
    conv = CostConvention(2.0)
    dl, dm = lam.to_discrete(), mu.to_discrete()
    base = solve_discrete(lam, mu, conv, settings)
    ct_psi = c_transform(base.psi, dm.points, dl.points, conv, preferred=base.preferred_targets(), settings=settings)
    t_psi = dm.points[ct_psi.argmin]
    gaps, dists, lips = [], [], []
    for comp in competitors:
        sol = solve_discrete(lam, comp, conv, settings)
        phi = extend_potential(sol.psi_c, dl.points, dm.points, conv, settings)
        gap = base.cost - kantorovich_value(phi, lam, mu, conv, settings)
        if gap < -1e-9:
            logger.warning("negative Kantorovich gap %.3g", gap)
        ct_phi = c_transform(phi, dm.points, dl.points, conv, settings=settings)
        t_phi = dm.points[ct_phi.argmin]
        gaps.append(gap)
        dists.append(float(dl.weights @ np.sum((t_psi - t_phi) ** 2, axis=1)))
        if mode == "B":
            if not isinstance(lam, GridMeasure):
                raise OTLabError("parameter-out-of-range", "the map audit needs lambda on a grid")
            lips.append(_map_lipschitz(t_phi, lam.spec, lam.support_indices(), stride))
    gv, dv = np.asarray(gaps), np.asarray(dists)
    moved = dv > 0
    power = 3.0 if mode == "A" else 1.0
    constant = float(np.min(gv[moved] / dv[moved] ** power)) if moved.any() else math.nan
    try:
        fit: ExponentFit | None = fit_exponent(gv, dv, window=(1e-12, math.inf))
    except OTLabError:
        fit = None
    measured = max(lips) if lips else math.nan
    if mode == "B" and isinstance(lam, GridMeasure):
        spacing = atom_spacing if atom_spacing is not None else lam.spec.h
        limit = (K if K is not None else measured) + spacing / (stride * lam.spec.h)
        if measured > limit:
            raise OTLabError("competitor-not-lipschitz", f"map quotient {measured:.6g} exceeds {limit:.6g}")
    return QuadraticReport(mode, gv, dv, constant, fit, measured)
