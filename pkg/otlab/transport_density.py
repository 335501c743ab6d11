"""Transport density of a W_1 plan, Renyi divergences and the sigma-weighted stability check."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import ndimage

from .errors import OTLabError
from .kernels import FloatArray, IntArray
from .lipschitz import LipschitzFunction
from .measures import BoolArray, GridMeasure, GridSpec, Measure, erosion_integral, save_grid
from .ot_core import TransportSolution

logger = logging.getLogger(__name__)

# A field on the plane: a Lipschitz function, a callable of points, or values on sigma's cells.
Field = Union[LipschitzFunction, Callable[[FloatArray], FloatArray], FloatArray]


@dataclass(frozen=True, slots=True, eq=False)
class TransportDensity:
    """sigma on a grid, with one record per (arc, crossed cell) deposit.

    Deposit ``k`` put ``masses[k]`` = arc mass times crossed length in cell
    ``cells[k]`` along the piece ``starts[k] -> ends[k]`` of direction
    ``directions[k]``.
    """

    spec: GridSpec
    weights: FloatArray
    cells: IntArray
    masses: FloatArray
    arc_mass: FloatArray
    starts: FloatArray
    ends: FloatArray
    directions: FloatArray
    provenance: str = ""

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def support_mask(self) -> BoolArray:
        return self.weights > 0

    def measure(self) -> GridMeasure:
        return GridMeasure(self.spec, self.weights)

    def save(self, path: str | Path) -> None:
        save_grid(self.measure(), path, provenance=self.provenance or "transport density")

    def gradient_energy(self, phi: Field) -> float:
        """int |grad psi - grad phi|^2 dsigma, with grad psi the ray direction.

        Unit-gradient functions are integrated exactly along each deposit from
        their end-point values; other fields use their gradient at the piece
        midpoint, and raw grid arrays use centered differences at the cell.
        """
        if self.cells.size == 0:
            return 0.0
        if getattr(phi, "unit_gradient", False):
            rise = _values(phi, self.ends, self.spec) - _values(phi, self.starts, self.spec)
            length = np.linalg.norm(self.ends - self.starts, axis=1)
            return float(np.sum(2.0 * self.arc_mass * (length - rise)))
        grads = _gradients(phi, 0.5 * (self.starts + self.ends), self.cells, self.spec)
        return float(np.sum(self.masses * np.sum((self.directions - grads) ** 2, axis=1)))


def _values(phi: Field, points: FloatArray, spec: GridSpec) -> FloatArray:
    if isinstance(phi, np.ndarray):
        return np.asarray(phi, dtype=np.float64).reshape(-1)[_flat_cells(points, spec)]
    if hasattr(phi, "values"):
        return np.asarray(phi.values(points), dtype=np.float64)
    return np.asarray(phi(points), dtype=np.float64)


def _gradients(phi: Field, points: FloatArray, cells: IntArray, spec: GridSpec) -> FloatArray:
    if hasattr(phi, "gradients"):
        return np.asarray(phi.gradients(points), dtype=np.float64)
    values = _values(phi, spec.cell_centers(), spec).reshape(spec.extents)
    parts = np.gradient(values, spec.h, edge_order=1) if spec.n > 1 else [np.gradient(values, spec.h, edge_order=1)]
    return np.stack([np.asarray(g).reshape(-1)[cells] for g in parts], axis=1)


def _flat_cells(points: FloatArray, spec: GridSpec) -> IntArray:
    idx = np.clip(spec.index_of(points), 0, np.asarray(spec.extents) - 1)
    return np.ravel_multi_index(tuple(idx.T), spec.extents).astype(np.int64)


def common_grid(lam: Measure, mu: Measure, h: float | None = None) -> GridSpec:
    """An aligned grid covering both supports."""
    if isinstance(lam, GridMeasure) and isinstance(mu, GridMeasure) and h is None:
        return lam.spec.union(mu.spec)
    if h is None:
        raise OTLabError("parameter-out-of-range", "a spacing is needed unless both measures are grids")
    pts = np.concatenate([lam.to_discrete().points, mu.to_discrete().points])
    lo = np.floor(pts.min(axis=0) / h) * h - h
    hi = np.ceil(pts.max(axis=0) / h) * h + h
    return GridSpec.covering(lo, hi, h)


def _segment_pieces(x: FloatArray, y: FloatArray, spec: GridSpec) -> tuple[IntArray, FloatArray, FloatArray]:
    """Cells crossed by the segment x -> y with the parameter interval inside each."""
    lo = np.asarray(spec.origin)
    d = y - x
    ts = [np.array([0.0, 1.0])]
    for axis in range(spec.n):
        if d[axis] == 0.0:
            continue
        a, b = sorted(((x[axis] - lo[axis]) / spec.h, (y[axis] - lo[axis]) / spec.h))
        lines = np.arange(math.ceil(a), math.floor(b) + 1, dtype=np.float64)
        ts.append((lo[axis] + lines * spec.h - x[axis]) / d[axis])
    t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
    t0, t1 = t[:-1], t[1:]
    keep = t1 - t0 > 1e-15
    t0, t1 = t0[keep], t1[keep]
    mid = x[None, :] + 0.5 * (t0 + t1)[:, None] * d[None, :]
    idx = spec.index_of(mid)
    if np.any(idx < 0) or np.any(idx >= np.asarray(spec.extents)):
        raise OTLabError("grid-too-small", f"segment {x.tolist()} -> {y.tolist()} leaves the grid")
    flat = np.ravel_multi_index(tuple(idx.T), spec.extents).astype(np.int64)
    return flat, t0, t1


def compute_sigma(
    solution: TransportSolution, lam: Measure, mu: Measure, grid: GridSpec | None = None
) -> TransportDensity:
    """Deposit m |x - y| along every arc, split by exact cell-crossing length.

    Arcs are processed in plan order, so the accumulation is deterministic.
    """
    if solution.convention.p != 1:
        raise OTLabError("parameter-out-of-range", "transport densities are built from p = 1 plans")
    xs, ys = lam.to_discrete().points, mu.to_discrete().points
    spec = grid or common_grid(lam, mu)
    cells, masses, arc_mass, starts, ends, dirs = [], [], [], [], [], []
    for i, j, m in zip(solution.source, solution.target, solution.mass):
        x, y = xs[i], ys[j]
        length = float(np.linalg.norm(y - x))
        if length == 0.0 or m <= 0.0:
            continue
        flat, t0, t1 = _segment_pieces(x, y, spec)
        cells.append(flat)
        masses.append(m * length * (t1 - t0))
        arc_mass.append(np.full(flat.size, m))
        starts.append(x[None, :] + t0[:, None] * (y - x)[None, :])
        ends.append(x[None, :] + t1[:, None] * (y - x)[None, :])
        dirs.append(np.repeat(((y - x) / length)[None, :], flat.size, axis=0))
    n = spec.n
    if cells:
        cell_arr = np.concatenate(cells)
        mass_arr = np.concatenate(masses)
        weights = np.bincount(cell_arr, weights=mass_arr, minlength=spec.size).reshape(spec.extents)
        record = (np.concatenate(arc_mass), np.concatenate(starts), np.concatenate(ends), np.concatenate(dirs))
    else:
        cell_arr = np.empty(0, dtype=np.int64)
        mass_arr = np.empty(0)
        weights = np.zeros(spec.extents)
        record = (np.empty(0), np.empty((0, n)), np.empty((0, n)), np.empty((0, n)))
    expected = float(np.sum(solution.mass * np.linalg.norm(xs[solution.source] - ys[solution.target], axis=1)))
    logger.debug("sigma: %d deposits, mass %.12g (plan %.12g)", cell_arr.size, float(weights.sum()), expected)
    provenance = f"transport density plan={solution.method} arcs={solution.mass.size} mode=exact-crossing"
    return TransportDensity(spec, weights, cell_arr, mass_arr, *record, provenance=provenance)


def _on_grid(lam: GridMeasure, spec: GridSpec) -> FloatArray:
    if lam.spec == spec:
        return np.asarray(lam.weights)
    return np.asarray(lam.embed(spec).weights)


def support_inclusion(lam: GridMeasure, sigma: TransportDensity) -> float:
    """lambda-mass outside the one-cell dilation of supp sigma."""
    weights = _on_grid(lam, sigma.spec)
    structure = np.ones((3,) * sigma.spec.n, dtype=bool)
    covered = ndimage.binary_dilation(sigma.weights > 0, structure=structure)
    violation = float(weights[~covered].sum())
    if violation > 0:
        logger.warning("lambda mass %.3g lies outside supp sigma", violation)
    return violation


def renyi(lam: GridMeasure, sigma: TransportDensity, alpha: float) -> float:
    """D_alpha(lam || sigma) from cell masses; +inf if lam charges a sigma-null cell."""
    if not alpha > 1:
        raise OTLabError("alpha-out-of-range", f"Renyi order must exceed 1, got {alpha}")
    weights = _on_grid(lam, sigma.spec)
    charged = weights > 0
    if np.any(sigma.weights[charged] <= 0):
        return math.inf
    lw = weights[charged]
    ratio = lw / sigma.weights[charged]
    beta = alpha - 1.0
    return float(math.log(np.sum(lw * ratio**beta)) / beta)


def renyi_constant(volume: float, erosion: float, n: int, alpha: float, R: float) -> float:
    """(1/beta) ln(c1 |X| + c2 I_{2 beta}(X)) with beta = alpha - 1."""
    if not 1.0 < alpha < 1.5:
        raise OTLabError("alpha-out-of-range", f"alpha must lie in (1, 3/2), got {alpha}")
    beta = alpha - 1.0
    c1 = (2.0 * beta / (1.0 - 2.0 * beta)) * n + 1.0
    c2 = (2.0 * R + 1.0) ** (2.0 * beta)
    return math.log(c1 * volume + c2 * erosion) / beta


def renyi_bound(mask: ArrayLike, h: float, alpha: float, R: float, m: float, M: float) -> float:
    """Upper bound on D_alpha(lam || sigma) for lam with density in [m, M] on X."""
    if not 1.0 < alpha < 1.5:
        raise OTLabError("alpha-out-of-range", f"alpha must lie in (1, 3/2), got {alpha}")
    x = np.asarray(mask, dtype=bool)
    beta = alpha - 1.0
    volume = float(x.sum()) * h**x.ndim
    constant = renyi_constant(volume, erosion_integral(x, h, 2.0 * beta), x.ndim, alpha, R)
    return constant + (alpha / beta) * math.log(M) - math.log(m)


@dataclass(frozen=True, slots=True)
class SigmaCheck:
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _pairing(f: Field, m: Measure, spec: GridSpec) -> float:
    d = m.to_discrete()
    return float(d.weights @ _values(f, d.points, spec))


def stab_sigma_check(
    psi: LipschitzFunction, phi: Field, sigma: TransportDensity, lam: Measure, mu: Measure
) -> SigmaCheck:
    """(int |grad psi - grad phi|^2 dsigma, 2 int (psi - phi) d(mu - lam)).

    ``phi`` must be 1-Lipschitz; Lipschitz objects are certified by
    construction and grid arrays are audited.
    """
    if isinstance(phi, np.ndarray):
        values = np.asarray(phi, dtype=np.float64).reshape(sigma.spec.extents)
        worst = max(
            (float(np.max(np.abs(np.diff(values, axis=a)))) / sigma.spec.h for a in range(sigma.spec.n)
             if sigma.spec.extents[a] > 1),
            default=0.0,
        )
        if worst > 1.0 + 10.0 * sigma.spec.h:
            raise OTLabError("not-1-lipschitz", f"difference quotient {worst:.6g} exceeds 1 + 10h")
    lhs = sigma.gradient_energy(phi)
    spec = sigma.spec
    rhs = 2.0 * (
        _pairing(psi, mu, spec) - _pairing(phi, mu, spec) - _pairing(psi, lam, spec) + _pairing(phi, lam, spec)
    )
    return SigmaCheck(lhs, rhs)


@dataclass(frozen=True, slots=True)
class HolderReport:
    l1_lambda: float
    lp_sigma: float
    holder_factor: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.l1_lambda / self.lp_sigma if self.lp_sigma > 0 else math.inf

    @property
    def holds(self) -> bool:
        return self.ratio <= self.holder_factor * (1.0 + 1e-9) and self.holder_factor <= self.bound * (1.0 + 1e-9)


def holder_transfer_check(
    f: Field, lam: GridMeasure, sigma: TransportDensity, p: float, m: float, M: float, R: float
) -> HolderReport:
    """Compare ||f||_{L^1(lam)} with ||f||_{L^p(sigma)}.

    The exact factor is exp(D_{p'}(lam || sigma) / p) and the assembled
    bound replaces the divergence with :func:`renyi_bound` at order p'.
    """
    if not p > 3:
        raise OTLabError("alpha-out-of-range", f"Hoelder transfer needs p > 3, got {p}")
    spec = sigma.spec
    centers = spec.cell_centers()
    fv = np.abs(_values(f, centers, spec))
    lw = _on_grid(lam, spec).reshape(-1)
    l1 = float(lw @ fv)
    lp = float(sigma.weights.reshape(-1) @ fv**p) ** (1.0 / p)
    q = p / (p - 1.0)
    factor = math.exp(renyi(lam, sigma, q) / p)
    bound = math.exp(renyi_bound(lw.reshape(spec.extents) > 0, spec.h, q, R, m, M) / p)
    return HolderReport(l1, lp, factor, bound)
