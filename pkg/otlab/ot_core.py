"""Exact optimal transport at desk scale: 1D quantile coupling, network simplex, duals."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import ot
from numpy.typing import ArrayLike
from scipy.spatial.distance import cdist

from .config import DEFAULT_SETTINGS, Settings
from .errors import OTLabError
from .kernels import FloatArray, IntArray
from .measures import MASS_TOL, BoolArray, GridMeasure, GridSpec, Measure, _format

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class CostConvention:
    """Ground cost |x - y|^p, divided by p under the ``scaled`` convention."""

    p: float = 2.0
    scale: str = "scaled"

    def __post_init__(self) -> None:
        if not self.p >= 1:
            raise OTLabError("parameter-out-of-range", f"p must be >= 1, got {self.p}")
        if self.scale not in ("scaled", "standard"):
            raise OTLabError("parameter-out-of-range", f"Unknown cost scale: {self.scale}")

    @property
    def factor(self) -> float:
        return 1.0 / self.p if self.scale == "scaled" else 1.0

    @property
    def conjugate(self) -> float:
        """p' with 1/p + 1/p' = 1 (infinite for p = 1)."""
        return math.inf if self.p == 1 else self.p / (self.p - 1.0)

    def of_distance(self, d: ArrayLike) -> FloatArray:
        dv = np.asarray(d, dtype=np.float64)
        return self.factor * (dv * dv if self.p == 2 else dv**self.p)

    def matrix(self, x: FloatArray, y: FloatArray) -> FloatArray:
        """Pairwise costs between the rows of ``x`` and ``y``."""
        if self.p == 2:
            return self.factor * cdist(x, y, metric="sqeuclidean")
        return self.of_distance(cdist(x, y, metric="euclidean"))

    def describe(self) -> str:
        return f"p={self.p:g},{self.scale}"


def _check_masses(a: float, b: float) -> None:
    if abs(a - b) > MASS_TOL:
        raise OTLabError("mass-mismatch", f"masses {a!r} and {b!r} differ")


def monotone_coupling_1d(a: Measure, b: Measure) -> tuple[IntArray, IntArray, FloatArray]:
    """Quantile (north-west corner) coupling of two 1D measures.

    Returns arcs ``(i, j, mass)`` indexing the atoms of ``a.to_discrete()`` and
    ``b.to_discrete()``, ordered along the quantile axis.
    """
    da, db = a.to_discrete(), b.to_discrete()
    if da.n != 1 or db.n != 1:
        raise OTLabError("parameter-out-of-range", "quantile coupling needs 1D measures")
    _check_masses(da.total_mass, db.total_mass)
    oa = np.argsort(da.points[:, 0], kind="stable")
    ob = np.argsort(db.points[:, 0], kind="stable")
    ca = np.cumsum(da.weights[oa])
    cb = np.cumsum(db.weights[ob]) * (ca[-1] / db.weights.sum())
    cb[-1] = ca[-1]
    q = np.union1d(ca, cb)
    lower = np.concatenate([[0.0], q[:-1]])
    mass = q - lower
    keep = mass > 1e-15 * ca[-1]
    mid = 0.5 * (q + lower)[keep]
    i = np.minimum(np.searchsorted(ca, mid, side="left"), ca.size - 1)
    j = np.minimum(np.searchsorted(cb, mid, side="left"), cb.size - 1)
    return oa[i].astype(np.int64), ob[j].astype(np.int64), mass[keep]


def wp_1d(a: Measure, b: Measure, conv: CostConvention) -> float:
    """W_p^p of two 1D measures from the quantile coupling."""
    i, j, mass = monotone_coupling_1d(a, b)
    xa, xb = a.to_discrete().points[:, 0], b.to_discrete().points[:, 0]
    return float(np.sum(mass * conv.of_distance(np.abs(xa[i] - xb[j]))))


@dataclass(frozen=True, slots=True, eq=False)
class TransportSolution:
    """Optimal plan as sparse arcs with repaired dual potentials.

    ``psi`` lives on the target (mu) atoms and ``psi_c`` on the source
    (lambda) atoms, both in ``to_discrete()`` order.
    """

    source: IntArray
    target: IntArray
    mass: FloatArray
    cost: float
    psi: FloatArray
    psi_c: FloatArray
    gap: float
    convention: CostConvention
    method: str = "network_simplex"

    @property
    def dual_value(self) -> float:
        return self.cost - self.gap

    def marginals(self) -> tuple[FloatArray, FloatArray]:
        src = np.bincount(self.source, weights=self.mass, minlength=self.psi_c.size)
        tgt = np.bincount(self.target, weights=self.mass, minlength=self.psi.size)
        return src, tgt

    def preferred_targets(self) -> IntArray:
        """Per source atom, the target receiving most of its mass (-1 if none)."""
        best = np.full(self.psi_c.size, -1, dtype=np.int64)
        order = np.lexsort((-self.mass, self.source))
        first = np.ones(order.size, dtype=bool)
        first[1:] = self.source[order][1:] != self.source[order][:-1]
        best[self.source[order][first]] = self.target[order][first]
        return best

    def save(self, path: str | Path) -> None:
        lines = [f"# conv p={_format(self.convention.p)} scale={self.convention.scale} method={self.method}", "PLAN"]
        lines.extend(f"{i} {j} {_format(m)}" for i, j, m in zip(self.source, self.target, self.mass))
        lines.append("PSI")
        lines.extend(_format(v) for v in self.psi)
        lines.append("PSIC")
        lines.extend(_format(v) for v in self.psi_c)
        lines += ["COST", _format(self.cost), "GAP", _format(self.gap)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TransportSolution:
        sections: dict[str, list[str]] = {}
        header: dict[str, str] = {}
        current = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                header.update(p.split("=", 1) for p in line[1:].split() if "=" in p)
            elif line in ("PLAN", "PSI", "PSIC", "COST", "GAP"):
                current = line
                sections[current] = []
            elif current is None:
                raise OTLabError("bad-config", f"{path}: data before the first section")
            else:
                sections[current].append(line)
        try:
            plan = np.array([row.split() for row in sections["PLAN"]], dtype=np.float64).reshape(-1, 3)
            conv = CostConvention(float(header.get("p", "2")), header.get("scale", "scaled"))
            return cls(
                source=plan[:, 0].astype(np.int64),
                target=plan[:, 1].astype(np.int64),
                mass=plan[:, 2],
                cost=float(sections["COST"][0]),
                psi=np.array(sections["PSI"], dtype=np.float64),
                psi_c=np.array(sections["PSIC"], dtype=np.float64),
                gap=float(sections["GAP"][0]),
                convention=conv,
                method=header.get("method", "network_simplex"),
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise OTLabError("bad-config", f"{path}: malformed transport solution") from exc


def _staircase_duals(
    src: IntArray, tgt: IntArray, x: FloatArray, y: FloatArray, conv: CostConvention
) -> tuple[FloatArray, FloatArray]:
    """Duals equal to the cost on the quantile staircase.

    Where both indices advance at once, the corner arc (new source, old
    target) is used instead; the staircase stays monotone, and monotone
    supports of a submodular cost have feasible complementary duals.
    """
    u = np.zeros(x.shape[0])
    v = np.zeros(y.shape[0])

    def c(i: int, j: int) -> float:
        return float(conv.of_distance(np.linalg.norm(x[i] - y[j])))

    i0, j0 = int(src[0]), int(tgt[0])
    v[j0] = c(i0, j0)
    for k in range(1, src.size):
        i, j = int(src[k]), int(tgt[k])
        pi, pj = int(src[k - 1]), int(tgt[k - 1])
        if i == pi:
            v[j] = c(i, j) - u[i]
        elif j == pj:
            u[i] = c(i, j) - v[j]
        else:
            u[i] = c(i, pj) - v[pj]
            v[j] = c(i, j) - u[i]
    return u, v


def _row_min(
    cost_rows: FloatArray, psi: FloatArray
) -> tuple[FloatArray, IntArray]:
    total = cost_rows - psi[None, :]
    return total.min(axis=1), total.argmin(axis=1).astype(np.int64)


def solve_discrete(
    lam: Measure,
    mu: Measure,
    conv: CostConvention,
    settings: Settings = DEFAULT_SETTINGS,
    method: str = "auto",
) -> TransportSolution:
    """Optimal plan, cost and c-concave duals for two measures of equal mass.

    ``method`` is ``"network_simplex"`` (POT's exact solver), ``"quantile"``
    (1D only) or ``"auto"``, which picks the quantile solver in 1D.
    """
    dl, dm = lam.to_discrete(), mu.to_discrete()
    if dl.n != dm.n:
        raise OTLabError("grid-mismatch", f"dimensions {dl.n} and {dm.n} differ")
    _check_masses(dl.total_mass, dm.total_mass)
    if method == "auto":
        method = "quantile" if dl.n == 1 else "network_simplex"
    start = time.perf_counter()
    x, y = dl.points, dm.points
    a = dl.weights
    b = dm.weights * (a.sum() / dm.weights.sum())
    if method == "quantile":
        src, tgt, mass = monotone_coupling_1d(dl, dm)
        cost = float(np.sum(mass * conv.of_distance(np.linalg.norm(x[src] - y[tgt], axis=1))))
        _, psi = _staircase_duals(src, tgt, x, y, conv)
    elif method == "network_simplex":
        pairs = x.shape[0] * y.shape[0]
        if pairs > settings.pair_budget:
            raise OTLabError("problem-too-large", f"{pairs} pairs exceed the budget {settings.pair_budget}")
        matrix = np.ascontiguousarray(conv.matrix(x, y))
        plan, log = ot.emd(a, b, matrix, numItermax=settings.max_iter, log=True)
        if log.get("warning") is not None:
            raise OTLabError("solver-failed", str(log["warning"]))
        src, tgt = np.nonzero(plan > 0)
        mass = plan[src, tgt]
        cost = float(np.sum(mass * matrix[src, tgt]))
        psi = np.asarray(log["v"], dtype=np.float64)
        src, tgt = src.astype(np.int64), tgt.astype(np.int64)
    else:
        raise OTLabError("parameter-out-of-range", f"Unknown solver method: {method}")
    psi_c = c_transform(psi, y, x, conv, settings=settings).values
    psi = c_transform(psi_c, x, y, conv, settings=settings).values
    psi_c = c_transform(psi, y, x, conv, settings=settings).values
    gap = cost - float(a @ psi_c + b @ psi)
    solution = TransportSolution(src, tgt, mass, cost, psi, psi_c, gap, conv, method)
    if abs(gap) > settings.gap_rel * (1.0 + abs(cost)):
        logger.warning("duality gap %.3g exceeds tolerance (cost %.6g, %s)", gap, cost, method)
    logger.debug(
        "solve %s %dx%d atoms: cost %.12g gap %.3g in %.3fs",
        method, x.shape[0], y.shape[0], cost, gap, time.perf_counter() - start,
    )
    return solution


@dataclass(frozen=True, slots=True, eq=False)
class CTransform:
    """psi^c at ``points`` with the minimizing atom index per point."""

    points: FloatArray
    values: FloatArray
    argmin: IntArray
    targets: FloatArray
    max_gradient: float
    gradient_bound: float

    @property
    def lipschitz_ok(self) -> bool:
        return self.max_gradient <= self.gradient_bound * (1.0 + 1e-9) + 1e-12


def c_transform(
    psi: ArrayLike,
    targets: ArrayLike,
    where: GridSpec | ArrayLike,
    conv: CostConvention,
    preferred: IntArray | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> CTransform:
    """psi^c(x) = min_j c(x, y_j) - psi_j at every point of ``where``.

    Ties go to ``preferred[i]`` when it attains the minimum within
    ``settings.tie_tol``, else to the lowest atom index.
    """
    psi_arr = np.asarray(psi, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(psi_arr)):
        raise OTLabError("parameter-out-of-range", "dual values must be finite")
    tgt = np.asarray(targets, dtype=np.float64)
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    pts = where.cell_centers() if isinstance(where, GridSpec) else np.asarray(where, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    values = np.empty(pts.shape[0])
    argmin = np.empty(pts.shape[0], dtype=np.int64)
    step = max(1, settings.chunk_entries // max(1, tgt.shape[0]))
    for start in range(0, pts.shape[0], step):
        rows = slice(start, start + step)
        block = conv.matrix(pts[rows], tgt)
        best, arg = _row_min(block, psi_arr)
        if preferred is not None:
            pref = np.asarray(preferred[rows])
            has = pref >= 0
            cand = np.where(has, pref, 0)
            alt = block[np.arange(block.shape[0]), cand] - psi_arr[cand]
            take = has & (alt <= best + settings.tie_tol * (1.0 + np.abs(best)))
            arg = np.where(take, cand, arg)
        values[rows] = best
        argmin[rows] = arg
    dist = np.linalg.norm(pts - tgt[argmin], axis=1)
    slope = conv.factor * conv.p
    grads = slope * dist ** (conv.p - 1.0)
    radius = float(max(np.abs(pts).max(initial=0.0), np.abs(tgt).max(initial=0.0))) * math.sqrt(pts.shape[1])
    bound = slope * (2.0 * radius) ** (conv.p - 1.0)
    return CTransform(pts, values, argmin, tgt, float(grads.max(initial=0.0)), bound)


def extend_potential(
    psi_c: ArrayLike, sources: ArrayLike, points: ArrayLike, conv: CostConvention,
    settings: Settings = DEFAULT_SETTINGS,
) -> FloatArray:
    """psi(y) = min_i c(x_i, y) - psi^c(x_i) at arbitrary points ``y``."""
    return c_transform(psi_c, sources, points, conv, settings=settings).values


@dataclass(frozen=True, slots=True, eq=False)
class DisplacementField:
    """xi(x) = Phi_p(grad psi^c(x)) = x - T(x) at lambda-support points.

    For p = 1, xi = grad psi^c is a unit vector, the transport direction is
    grad psi = -xi, and points sitting on their target atom are undefined.
    """

    points: FloatArray
    vectors: FloatArray
    images: FloatArray
    defined: BoolArray
    weights: FloatArray
    p: float
    sign_convention: str = "xi = x - T(x)"

    @property
    def undefined_mass(self) -> float:
        return float(self.weights[~self.defined].sum())

    def potential_gradient(self) -> FloatArray:
        """grad psi on defined points for p = 1 (the ray direction)."""
        return -self.vectors


def gradient_field(ct: CTransform, conv: CostConvention, weights: ArrayLike | None = None) -> DisplacementField:
    """Displacement field from the argmin branch of a c-transform.

    The gradient is taken in the 1/p normalization, where
    Phi_p(|z|^(p-2) z) = z, so xi = x - y* for p > 1 in either convention.
    """
    images = ct.targets[ct.argmin]
    diff = ct.points - images
    w = np.ones(ct.points.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if conv.p > 1:
        defined = np.ones(diff.shape[0], dtype=bool)
        vectors = diff
    else:
        norm = np.linalg.norm(diff, axis=1)
        defined = norm > 0
        vectors = np.divide(diff, norm[:, None], out=np.zeros_like(diff), where=defined[:, None])
    if not defined.all():
        logger.info("%d points sit on their target atom (mass %.3g)", int((~defined).sum()), float(w[~defined].sum()))
    return DisplacementField(ct.points, vectors, images, defined, w, conv.p)


def displacement_field(
    solution: TransportSolution,
    lam: Measure,
    mu: Measure,
    settings: Settings = DEFAULT_SETTINGS,
    on_grid: bool = False,
) -> DisplacementField:
    """xi on the lambda atoms, breaking ties toward the solver's own plan.

    With ``on_grid`` and a grid ``lam``, xi is evaluated at every cell center
    instead, with zero weight off the support.
    """
    dl, dm = lam.to_discrete(), mu.to_discrete()
    preferred = solution.preferred_targets()
    points, weights = dl.points, dl.weights
    if on_grid:
        if not isinstance(lam, GridMeasure):
            raise OTLabError("parameter-out-of-range", "on_grid needs lambda on a grid")
        support = lam.support_indices()
        full = np.full(lam.spec.size, -1, dtype=np.int64)
        full[support] = preferred
        preferred = full
        points = lam.spec.cell_centers()
        weights = np.asarray(lam.weights, dtype=np.float64).reshape(-1)
    ct = c_transform(solution.psi, dm.points, points, solution.convention, preferred=preferred, settings=settings)
    return gradient_field(ct, solution.convention, weights)


def kantorovich_value(
    psi: ArrayLike, lam: Measure, mu: Measure, conv: CostConvention, settings: Settings = DEFAULT_SETTINGS
) -> float:
    """F(psi) = int psi^c dlam + int psi dmu with a fresh c-transform."""
    dl, dm = lam.to_discrete(), mu.to_discrete()
    psi_arr = np.asarray(psi, dtype=np.float64)
    ct = c_transform(psi_arr, dm.points, dl.points, conv, settings=settings)
    return float(dl.weights @ ct.values + dm.weights @ psi_arr)


@dataclass(frozen=True, slots=True, eq=False)
class KantorovichPotential:
    """The W_1 potential psi(x) = max_j (psi_j - |x - y_j|) on all of R^n."""

    targets: FloatArray
    psi: FloatArray
    cost: float

    @classmethod
    def from_solution(cls, solution: TransportSolution, mu: Measure) -> KantorovichPotential:
        if solution.convention.p != 1:
            raise OTLabError("parameter-out-of-range", "Kantorovich potentials are built for p = 1")
        return cls(mu.to_discrete().points, solution.psi, solution.cost)

    @property
    def unit_gradient(self) -> bool:
        """A max of unit-slope cones: |grad| = 1 off the target atoms and the ridges between cones."""
        return True

    def _ct(self, points: ArrayLike) -> CTransform:
        pts = np.asarray(points, dtype=np.float64)
        return c_transform(self.psi, self.targets, pts, CostConvention(1.0, "standard"))

    def values(self, points: ArrayLike) -> FloatArray:
        return -self._ct(points).values

    def gradients(self, points: ArrayLike) -> FloatArray:
        ct = self._ct(points)
        diff = ct.targets[ct.argmin] - ct.points
        norm = np.linalg.norm(diff, axis=1, keepdims=True)
        return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
