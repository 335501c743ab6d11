"""The deficit delta_eps and the rigidity data it controls."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, cast

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from .config import DEFAULT_SETTINGS, Settings, make_rng
from .errors import OTLabError
from .kernels import FloatArray, IntArray, Kernel
from .measures import (
    DiscreteMeasure,
    GridMeasure,
    GridSpec,
    Measure,
    convolve,
    project,
    stochastic_dominance_1d,
    translate,
)
from .ot_core import (
    CostConvention,
    DisplacementField,
    TransportSolution,
    displacement_field,
    solve_discrete,
    wp_1d,
)
from .two_point import GridField, lambda_eps

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class DeltaResult:
    """W_p^p before and after smoothing, with the solutions that produced them."""

    wp: float
    wp_eps: float
    gap: float
    solution: TransportSolution
    solution_eps: TransportSolution
    lam_eps: GridMeasure
    mu_eps: GridMeasure

    @property
    def delta(self) -> float:
        return self.wp - self.wp_eps


def _grid_pair(lam: Measure, mu: Measure) -> tuple[GridMeasure, GridMeasure]:
    if not (isinstance(lam, GridMeasure) and isinstance(mu, GridMeasure)):
        raise OTLabError("parameter-out-of-range", "delta_eps needs grid measures")
    if not lam.spec.aligned_with(mu.spec):
        raise OTLabError("grid-mismatch", "lambda and mu grids are not aligned")
    return lam, mu


def delta_eps(
    lam: GridMeasure, mu: GridMeasure, k: Kernel, conv: CostConvention, settings: Settings = DEFAULT_SETTINGS
) -> DeltaResult:
    """delta_eps = W_p^p(lam, mu) - W_p^p(lam_eps, mu_eps) with its error bar.

    Both problems go through the same solver and settings; the error bar is
    the sum of the two duality gaps.
    """
    lam, mu = _grid_pair(lam, mu)
    sol = solve_discrete(lam, mu, conv, settings)
    lam_eps, mu_eps = convolve(lam, k, settings), convolve(mu, k, settings)
    sol_eps = solve_discrete(lam_eps, mu_eps, conv, settings)
    gap = abs(sol.gap) + abs(sol_eps.gap)
    result = DeltaResult(sol.cost, sol_eps.cost, gap, sol, sol_eps, lam_eps, mu_eps)
    if result.delta < -gap - 1e-8 * (1.0 + sol.cost):
        logger.warning("negative deficit %.3g beyond the error bar %.3g", result.delta, gap)
    logger.debug("delta %s: %.12g - %.12g = %.6g", k.descriptor, sol.cost, sol_eps.cost, result.delta)
    return result


@dataclass(frozen=True, slots=True)
class Recovery:
    vector: FloatArray
    residual: float


def recover_translation(field: DisplacementField) -> Recovery:
    """z = lam-mean of xi and int |xi - z|^p dlam, for p > 1."""
    if field.p <= 1:
        raise OTLabError("parameter-out-of-range", "translation recovery needs p > 1")
    w = field.weights
    z = (w @ field.vectors) / w.sum()
    residual = float(w @ np.linalg.norm(field.vectors - z, axis=1) ** field.p)
    return Recovery(z, residual)


def recover_direction(field: DisplacementField) -> Recovery:
    """e = z / |z| for z the mean of grad psi on moved mass; residual int |grad psi - e| dlam."""
    if field.p != 1:
        raise OTLabError("parameter-out-of-range", "direction recovery needs p = 1")
    grads = field.potential_gradient()[field.defined]
    w = field.weights[field.defined]
    if w.sum() <= 0:
        raise OTLabError("degenerate-direction", "no mass is moved")
    z = (w @ grads) / w.sum()
    norm = float(np.linalg.norm(z))
    if norm < 1e-9:
        raise OTLabError("degenerate-direction", f"mean transport direction has norm {norm:.3g}")
    e = z / norm
    return Recovery(e, float(w @ np.linalg.norm(grads - e, axis=1)))


def marginal_stability(lam: Measure, mu: Measure, e: ArrayLike, mode: str = "perp") -> float:
    """W_1 between the pushforwards of lam and mu along e-perp (or <x, e>)."""
    return wp_1d(project(lam, e, mode), project(mu, e, mode), CostConvention(1.0, "standard"))


@dataclass(frozen=True, slots=True)
class SliceDominance:
    coordinate: float
    lam_mass: float
    mu_mass: float
    dominated: bool
    violation: float


def dominance_diagnostics(lam: Measure, mu: Measure, e: ArrayLike) -> list[SliceDominance]:
    """Per line parallel to e (n = 2): masses of both slices and whether mu's dominates lam's."""
    dl, dm = lam.to_discrete(), mu.to_discrete()
    if dl.n != 2:
        raise OTLabError("parameter-out-of-range", "slice diagnostics need n = 2")
    ev = np.asarray(e, dtype=np.float64)
    perp = np.array([-ev[1], ev[0]])
    scale = max(float(np.ptp(np.concatenate([dl.points, dm.points]) @ perp)), 1.0)

    def slices(d: DiscreteMeasure) -> dict[float, tuple[list[float], list[float]]]:
        out: dict[float, tuple[list[float], list[float]]] = {}
        keys = np.round(d.points @ perp / (1e-9 * scale)) * 1e-9 * scale
        for key, t, w in zip(keys, d.points @ ev, d.weights):
            ts, ws = out.setdefault(float(key), ([], []))
            ts.append(float(t))
            ws.append(float(w))
        return out

    sl, sm = slices(dl), slices(dm)
    rows = []
    for key in sorted(set(sl) | set(sm)):
        lt, lw = sl.get(key, ([], []))
        mt, mw = sm.get(key, ([], []))
        lm, mm = float(sum(lw)), float(sum(mw))
        if lw and mw and abs(lm - mm) <= 1e-9 * max(lm, mm):
            ok, violation = stochastic_dominance_1d(
                DiscreteMeasure(np.array(lt)[:, None], np.array(lw)),
                DiscreteMeasure(np.array(mt)[:, None], np.array(mw) * (lm / mm)),
            )
        else:
            ok, violation = False, abs(lm - mm)
        rows.append(SliceDominance(key, lm, mm, ok, violation))
    return rows


def supports_disjoint(lam: Measure, mu: Measure) -> bool:
    """No atom location carries mass in both measures."""
    a = {tuple(np.round(p, 12)) for p in lam.to_discrete().points}
    return not any(tuple(np.round(p, 12)) in a for p in mu.to_discrete().points)


@dataclass(frozen=True, slots=True)
class ContractionReport:
    p: float
    kernel: str
    eps: float
    convention: str
    wp: float
    wp_eps: float
    delta: float
    gap: float
    vector: tuple[float, ...] | None
    residual: float
    marginal: float = math.nan
    disjoint: bool | None = None
    flags: tuple[str, ...] = ()

    def csv_row(self) -> dict[str, float | str]:
        """Columns p, eps, kernel, wp, wp_eps, delta, z_i or e_i, residual, gap."""
        row: dict[str, float | str] = {
            "p": self.p, "eps": self.eps, "kernel": self.kernel,
            "wp": self.wp, "wp_eps": self.wp_eps, "delta": self.delta,
        }
        prefix = "z" if self.p > 1 else "e"
        for i, v in enumerate(self.vector or ()):
            row[f"{prefix}{i}"] = v
        row["residual"] = self.residual
        if self.p == 1:
            row["marginal"] = self.marginal
        row["gap"] = self.gap
        return row


def analyze_contraction(
    lam: GridMeasure, mu: GridMeasure, k: Kernel, conv: CostConvention, settings: Settings = DEFAULT_SETTINGS
) -> ContractionReport:
    """delta_eps plus the rigidity data: z for p > 1, e and the marginal distance for p = 1."""
    d = delta_eps(lam, mu, k, conv, settings)
    xi_field = displacement_field(d.solution, lam, mu, settings)
    flags: list[str] = []
    marginal = math.nan
    disjoint = None
    vector: tuple[float, ...] | None = None
    residual = math.nan
    if conv.p > 1:
        rec = recover_translation(xi_field)
        vector, residual = tuple(float(v) for v in rec.vector), rec.residual
    else:
        disjoint = supports_disjoint(lam, mu)
        if not disjoint:
            flags.append("supports-overlap")
            logger.warning("p = 1 rigidity asked for overlapping supports")
        try:
            rec = recover_direction(xi_field)
            vector, residual = tuple(float(v) for v in rec.vector), rec.residual
            if lam.n == 2:
                marginal = marginal_stability(lam, mu, rec.vector)
            elif lam.n == 1:
                marginal = 0.0
        except OTLabError as exc:
            if exc.code != "degenerate-direction":
                raise
            flags.append("degenerate-direction")
    return ContractionReport(
        conv.p, k.descriptor, k.eps, conv.scale, d.wp, d.wp_eps, d.delta, d.gap,
        vector, residual, marginal, disjoint, tuple(flags),
    )


def min_translation_cost(lam: Measure, mu: Measure, conv: CostConvention, settings: Settings = DEFAULT_SETTINGS) -> float:
    """min_z W_2^2(lam, mu^z) = W_2^2 - |m_lam - m_mu|^2, in the convention's scaling."""
    if conv.p != 2:
        raise OTLabError("parameter-out-of-range", "the mean-matching formula is for p = 2")
    cost = solve_discrete(lam, mu, conv, settings).cost
    shift = lam.to_discrete().mean() - mu.to_discrete().mean()
    return max(cost - conv.factor * float(shift @ shift), 0.0)


def kernel_nodes(k: Kernel, h: float, n: int, cap: int) -> tuple[IntArray, FloatArray, bool]:
    """Quadrature nodes of the kernel, thinned to at most ``cap`` by weight."""
    offsets, weights = k.nodes(h, n)
    if offsets.shape[0] <= cap:
        return offsets, weights, True
    order = np.lexsort((np.arange(weights.size), -weights))[:cap]
    order.sort()
    return offsets[order], weights[order], False


@dataclass(frozen=True, slots=True)
class ChainReport:
    delta: float
    gap: float
    lambda_value: float
    alpha: float
    constant: float | None
    node_offsets: IntArray
    node_weights: FloatArray
    node_gaps: FloatArray
    node_distances: FloatArray
    complete: bool
    flags: tuple[str, ...] = field(default=())

    @property
    def ratio(self) -> float:
        lhs = max(self.delta, 0.0) ** (1.0 / self.alpha)
        if self.lambda_value > 0:
            return lhs / self.lambda_value
        return math.inf if lhs > 0 else 0.0

    @property
    def node_sum(self) -> float:
        """Kernel-weighted sum of the per-node gaps; equals delta when complete."""
        return float(self.node_weights @ self.node_gaps)

    @property
    def violated(self) -> bool:
        if self.constant is None:
            return False
        return self.ratio < self.constant ** (1.0 / self.alpha) * (1.0 - 1e-3)


def _lookup(values: FloatArray, support: IntArray, spec: GridSpec, points: FloatArray) -> FloatArray:
    full = np.full(spec.size, np.nan)
    full[support] = values
    idx = spec.index_of(points)
    if np.any(idx < 0) or np.any(idx >= np.asarray(spec.extents)):
        raise OTLabError("grid-too-small", "shifted atoms leave the smoothed grid")
    out = full[np.ravel_multi_index(tuple(idx.T), spec.extents)]
    if np.any(np.isnan(out)):
        raise OTLabError("grid-mismatch", "shifted atoms miss the smoothed support")
    return out


def lambda_delta_chain(
    lam: GridMeasure,
    mu: GridMeasure,
    k: Kernel,
    conv: CostConvention,
    alpha: float,
    C: float | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> ChainReport:
    """delta^{1/alpha} against Lambda_eps(xi, xi_eps), with per-node strong-convexity samples.

    For a kernel node z with weight K(z), the sample is
    G(z) = W_p^p(lam, mu) - F_{lam^z, mu^z}(psi_eps) and D(z) is the
    lam-integral of |xi - xi_eps(. + z)|^p, so that sum K G = delta and
    sum K D = Lambda_eps.
    """
    d = delta_eps(lam, mu, k, conv, settings)
    xi = displacement_field(d.solution, lam, mu, settings).vectors
    xi_eps = displacement_field(d.solution_eps, d.lam_eps, d.mu_eps, settings, on_grid=True)
    f = GridField(d.lam_eps.spec, xi_eps.vectors)
    value = lambda_eps(xi, f, k, lam, conv.p)
    offsets, weights, complete = kernel_nodes(k, lam.spec.h, lam.n, settings.node_cap)
    dl, dm = lam.to_discrete(), mu.to_discrete()
    lsup, msup = d.lam_eps.support_indices(), d.mu_eps.support_indices()
    lam_rows = lam.support_indices()
    gaps, dists = [], []
    for offset in offsets:
        z = offset * lam.spec.h
        psi_c = _lookup(d.solution_eps.psi_c, lsup, d.lam_eps.spec, dl.points + z)
        psi = _lookup(d.solution_eps.psi, msup, d.mu_eps.spec, dm.points + z)
        gaps.append(d.wp - float(dl.weights @ psi_c + dm.weights @ psi))
        cells = np.stack(np.unravel_index(lam_rows, lam.spec.extents), axis=1) + lam.spec.cell_offset(f.spec) + offset
        shifted = f.values[np.ravel_multi_index(tuple(cells.T), f.spec.extents)]
        dists.append(float(dl.weights @ np.linalg.norm(xi - shifted, axis=1) ** conv.p))
    report = ChainReport(
        d.delta, d.gap, value, alpha, C, offsets, weights, np.asarray(gaps), np.asarray(dists), complete,
    )
    if report.violated:
        logger.warning("chain ratio %.6g below C^(1/alpha)", report.ratio)
    return report


def smooth_bump(n: int, rng: np.random.Generator) -> tuple[FloatArray, float]:
    """Frequency and phase of a random cosine used to perturb weights."""
    return rng.normal(size=n) * 2.0 * math.pi, float(rng.uniform(0.0, 2.0 * math.pi))


def near_translate(lam: GridMeasure, z: ArrayLike, s: float, omega: FloatArray, phase: float) -> GridMeasure:
    """lam reweighted by 1 + s cos(<omega, x> + phase), renormalized, then shifted by z."""
    if not 0 <= s < 1:
        raise OTLabError("parameter-out-of-range", f"perturbation size must lie in [0, 1), got {s}")
    g = np.cos(lam.spec.cell_centers() @ omega + phase).reshape(lam.spec.extents)
    w = lam.weights * (1.0 + s * g)
    reweighted = GridMeasure(lam.spec, w * (lam.total_mass / w.sum()), probability=lam.probability)
    return cast(GridMeasure, translate(reweighted, z))


@dataclass(frozen=True, slots=True)
class CoherenceRow:
    s: float
    w2min: float
    delta: float
    predictor: float


def near_translate_coherence(
    lam: GridMeasure,
    z: ArrayLike,
    k: Kernel,
    amplitudes: Sequence[float],
    seed: int,
    settings: Settings = DEFAULT_SETTINGS,
) -> tuple[list[CoherenceRow], float]:
    """Spearman correlation of min_z W_2^2 against eps^-(n+1) delta^(1/3) over near-translates."""
    conv = CostConvention(2.0)
    omega, phase = smooth_bump(lam.n, make_rng(seed))
    rows = []
    for s in amplitudes:
        mu = near_translate(lam, z, s, omega, phase)
        d = delta_eps(lam, mu, k, conv, settings)
        predictor = k.eps ** (-(lam.n + 1)) * max(d.delta, 0.0) ** (1.0 / 3.0)
        rows.append(CoherenceRow(float(s), min_translation_cost(lam, mu, conv, settings), d.delta, predictor))
    if len(rows) < 2:
        return rows, math.nan
    rho = stats.spearmanr([r.w2min for r in rows], [r.predictor for r in rows])[0]
    return rows, float(rho)
