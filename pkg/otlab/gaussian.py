"""Closed forms for isotropic Gaussians under the heat flow, and their numerical checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import special, stats

from .config import DEFAULT_SETTINGS, Settings
from .contraction import delta_eps, min_translation_cost, recover_translation
from .errors import OTLabError
from .kernels import FloatArray, Kernel
from .measures import GridMeasure, GridSpec, Measure
from .ot_core import CostConvention, displacement_field, monotone_coupling_1d
from .two_point import GridField, lambda_eps

logger = logging.getLogger(__name__)

KAPPA_RANGE = (0.25, 4.0)
TRUNCATION_LIMIT = 1e-6


@dataclass(frozen=True, slots=True)
class IsotropicGaussian:
    """N(mean, s^2 I_n)."""

    n: int = 1
    s: float = 1.0
    mean: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.s > 0:
            raise OTLabError("parameter-out-of-range", f"standard deviation must be positive, got {self.s}")
        mean = tuple(float(m) for m in self.mean) or (0.0,) * self.n
        if len(mean) != self.n:
            raise OTLabError("grid-mismatch", f"mean has {len(mean)} entries for dimension {self.n}")
        object.__setattr__(self, "mean", mean)

    @property
    def variance(self) -> float:
        return self.s * self.s


def w2_gaussians(a: IsotropicGaussian, b: IsotropicGaussian) -> float:
    """Standard-convention W_2^2 = |m_a - m_b|^2 + n (s_a - s_b)^2."""
    if a.n != b.n:
        raise OTLabError("grid-mismatch", f"dimensions {a.n} and {b.n} differ")
    shift = np.subtract(a.mean, b.mean)
    return float(shift @ shift) + a.n * (a.s - b.s) ** 2


def heat_step(g: IsotropicGaussian, t: float) -> IsotropicGaussian:
    """p_t * g: the variance grows by 2t."""
    if t < 0:
        raise OTLabError("parameter-out-of-range", f"heat time must be >= 0, got {t}")
    return IsotropicGaussian(g.n, math.sqrt(g.variance + 2.0 * t), g.mean)


def heat_time(eps: float) -> float:
    """t_eps = sqrt(eps) for the heat kernel rho_eps."""
    return math.sqrt(eps)


@dataclass(frozen=True, slots=True)
class GaussianDelta:
    delta: float
    f: float


def delta_eps_gaussian_closed_form(kappa: float, eps: float, n: int = 1) -> GaussianDelta:
    """delta_eps for lam = N(0, I), mu = N(0, kappa^2 I) and the factor f with delta = f n (1 - kappa)^2."""
    if kappa <= 0 or eps < 0:
        raise OTLabError("parameter-out-of-range", f"need kappa > 0 and eps >= 0, got {kappa}, {eps}")
    t = heat_time(eps)
    sigma_e = math.sqrt(1.0 + 2.0 * t)
    kappa_e = math.sqrt(kappa * kappa + 2.0 * t)
    delta = n * ((1.0 - kappa) ** 2 - (sigma_e - kappa_e) ** 2)
    f = 1.0 - (1.0 + kappa) ** 2 / (sigma_e + kappa_e) ** 2
    other = f * n * (1.0 - kappa) ** 2
    if abs(delta - other) > 1e-12 * max(1.0, abs(delta)):
        raise OTLabError("inconsistent-dual", f"closed forms disagree: {delta!r} vs {other!r}")
    return GaussianDelta(delta, f)


def caffarelli_bound(kappa: float, sigma: float) -> float:
    """sqrt(kappa / Sigma): Lipschitz bound of the Brenier map onto a kappa^-1-log-concave target."""
    if kappa <= 0 or sigma <= 0:
        raise OTLabError("parameter-out-of-range", "Caffarelli parameters must be positive")
    return math.sqrt(kappa / sigma)


def log_concavity_step(kappa: float, t: float) -> float:
    """p_t * mu is (kappa + 2t)^-1-log-concave when mu is kappa^-1-log-concave."""
    if kappa < 0 or t < 0:
        raise OTLabError("parameter-out-of-range", "log-concavity parameters must be >= 0")
    return kappa + 2.0 * t


def smoothed_map_bound(kappa: float, eps: float) -> float:
    """Lipschitz bound of the smoothed map, sqrt((kappa + 2t) / Sigma_eps) in variances."""
    t = heat_time(eps)
    return caffarelli_bound(log_concavity_step(kappa, t), 1.0 + 2.0 * t)


def prefactor_ratio(kappa: float, eps: float, n: int = 1) -> float:
    """delta_eps / (t_eps W_2^2), which stays bounded as eps -> 0."""
    return delta_eps_gaussian_closed_form(kappa, eps, n).f / heat_time(eps)


def truncation_mass(R: float) -> float:
    """Mass of a 1D standard Gaussian beyond R standard deviations."""
    return float(special.erfc(R / math.sqrt(2.0)))


def discretize_gaussian(g: IsotropicGaussian, h: float, R: float = 8.0, budget: int = 0) -> GridMeasure:
    """Exact cell masses of a 1D Gaussian on the h-aligned window mean +- R s, renormalized."""
    if g.n != 1:
        raise OTLabError("parameter-out-of-range", "the numerical pipeline is one-dimensional")
    trunc = truncation_mass(R)
    if trunc > TRUNCATION_LIMIT:
        raise OTLabError("domain-too-small", f"truncation mass {trunc:.3g} exceeds {TRUNCATION_LIMIT:g}")
    m = g.mean[0]
    lo = math.floor((m - R * g.s) / h) * h
    hi = math.ceil((m + R * g.s) / h) * h
    spec = GridSpec.covering([lo], [hi], h, budget)
    edges = lo + np.arange(spec.extents[0] + 1) * h
    z = (edges - m) / g.s
    # upper tail from the survival side so cancellation near 1 does not zero it
    lower = np.diff(special.ndtr(z))
    upper = -np.diff(special.ndtr(-z))
    mass = np.clip(np.where(z[:-1] + z[1:] < 0, lower, upper), 0.0, None)
    return GridMeasure(spec, mass / mass.sum(), probability=True)


def heat_variance_fit(m: GridMeasure) -> float:
    """Variance of a 1D grid measure with Sheppard's h^2/12 correction."""
    x = m.spec.cell_centers()[:, 0]
    w = m.weights.reshape(-1) / m.total_mass
    mean = float(w @ x)
    return float(w @ (x - mean) ** 2) - m.spec.h**2 / 12.0


def quantile_map_lipschitz(a: Measure, b: Measure, stride: int = 10, bulk: float = 1e-6) -> float:
    """Largest difference quotient of the barycentric 1D quantile map.

    Quotients are taken between source atoms ``stride`` apart whose CDF lies
    in [bulk, 1 - bulk].
    """
    da, db = a.to_discrete(), b.to_discrete()
    i, j, mass = monotone_coupling_1d(da, db)
    images = np.bincount(i, weights=mass * db.points[j, 0], minlength=da.weights.size) / da.weights
    order = np.argsort(da.points[:, 0], kind="stable")
    x, tx = da.points[order, 0], images[order]
    cdf = np.cumsum(da.weights[order]) / da.total_mass
    keep = (cdf >= bulk) & (cdf <= 1.0 - bulk)
    x, tx = x[keep], tx[keep]
    if x.size <= stride:
        return 0.0
    return float(np.max(np.abs(tx[stride:] - tx[:-stride]) / (x[stride:] - x[:-stride])))


@dataclass(frozen=True, slots=True)
class GaussianRow:
    kappa: float
    eps: float
    delta_closed: float
    delta_numeric: float
    w2min: float
    ratio_beta01: float
    ratio_beta025: float
    trunc_mass: float
    gap: float = 0.0

    def csv_row(self) -> dict[str, float]:
        return {
            "kappa": self.kappa, "eps": self.eps, "delta_closed": self.delta_closed,
            "delta_numeric": self.delta_numeric, "w2min": self.w2min,
            "ratio_beta01": self.ratio_beta01, "ratio_beta025": self.ratio_beta025,
            "trunc_mass": self.trunc_mass,
        }


def _stability_ratio(w2min: float, delta: float, eps: float, beta: float) -> float:
    bound = eps**-2 * max(delta, 0.0) ** (1.0 - beta)
    if bound > 0:
        return w2min / bound
    return 0.0 if w2min <= 1e-12 else math.inf


def gaussian_experiment(
    kappa: float,
    eps: float,
    R: float = 8.0,
    h: float = 5e-3,
    shift: float = 0.0,
    settings: Settings = DEFAULT_SETTINGS,
) -> GaussianRow:
    """N(0, 1) against N(shift, kappa^2) through the full 1D pipeline with the heat kernel."""
    if not KAPPA_RANGE[0] <= kappa <= KAPPA_RANGE[1]:
        raise OTLabError("parameter-out-of-range", f"kappa must lie in [1/4, 4], got {kappa}")
    lam = discretize_gaussian(IsotropicGaussian(1, 1.0), h, R, settings.grid_budget)
    mu = discretize_gaussian(IsotropicGaussian(1, kappa, (shift,)), h, R, settings.grid_budget)
    conv = CostConvention(2.0, "standard")
    d = delta_eps(lam, mu, Kernel("heat", eps), conv, settings)
    w2min = min_translation_cost(lam, mu, conv, settings)
    closed = delta_eps_gaussian_closed_form(kappa, eps).delta
    row = GaussianRow(
        kappa, eps, closed, d.delta, w2min,
        _stability_ratio(w2min, d.delta, eps, 0.1), _stability_ratio(w2min, d.delta, eps, 0.25),
        truncation_mass(R), d.gap,
    )
    logger.info("gaussian kappa=%g eps=%g: delta %.6g (closed %.6g)", kappa, eps, d.delta, closed)
    return row


def gaussian_sweep(
    kappas: Sequence[float], eps_values: Sequence[float], R: float = 8.0, h: float = 5e-3,
    settings: Settings = DEFAULT_SETTINGS,
) -> list[GaussianRow]:
    return [gaussian_experiment(k, e, R, h, settings=settings) for k in kappas for e in eps_values]


@dataclass(frozen=True, slots=True)
class WidthRow:
    s: float
    residual: float
    lambda_eps: float
    delta: float


def twopoint_gaussian_sweep(
    widths: Sequence[float], eps: float, R: float = 8.0, h: float = 1e-2, settings: Settings = DEFAULT_SETTINGS
) -> tuple[list[WidthRow], float]:
    """Residual and Lambda_eps for mu = N(0, (1 + s)^2) as s -> 0, with their Spearman correlation."""
    lam = discretize_gaussian(IsotropicGaussian(1, 1.0), h, R, settings.grid_budget)
    k = Kernel("heat", eps)
    conv = CostConvention(2.0, "standard")
    rows = []
    for s in widths:
        mu = discretize_gaussian(IsotropicGaussian(1, 1.0 + s), h, R, settings.grid_budget)
        d = delta_eps(lam, mu, k, conv, settings)
        xi = displacement_field(d.solution, lam, mu, settings)
        xi_eps = displacement_field(d.solution_eps, d.lam_eps, d.mu_eps, settings, on_grid=True)
        value = lambda_eps(xi.vectors, GridField(d.lam_eps.spec, xi_eps.vectors), k, lam, 2.0)
        rows.append(WidthRow(float(s), recover_translation(xi).residual, value, d.delta))
    if len(rows) < 2:
        return rows, math.nan
    rho = stats.spearmanr([r.residual for r in rows], [r.lambda_eps for r in rows])[0]
    return rows, float(rho)


def gaussian_window(points: ArrayLike, g: IsotropicGaussian) -> FloatArray:
    """Gaussian density of ``g`` at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = (pts - np.asarray(g.mean)) / g.s
    return np.exp(-0.5 * np.sum(z * z, axis=1)) / (math.sqrt(2.0 * math.pi) * g.s) ** g.n
