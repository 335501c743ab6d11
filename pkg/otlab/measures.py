"""Grid and point-cloud measures: convolution, translation, projection, erosion."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage, signal

from .config import DEFAULT_SETTINGS, Settings, make_rng
from .errors import OTLabError
from .kernels import FloatArray, IntArray, Kernel
from .lipschitz import RampFunction

logger = logging.getLogger(__name__)

BoolArray = NDArray[np.bool_]

MASS_TOL = 1e-9


def _format(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Regular axis-aligned grid; cell ``i`` is centered at ``origin + (i + 1/2) h``."""

    n: int
    origin: tuple[float, ...]
    h: float
    extents: tuple[int, ...]
    budget: int = field(default=0, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        if self.n < 1 or len(self.origin) != self.n or len(self.extents) != self.n:
            raise OTLabError("grid-mismatch", f"dimension {self.n} does not match origin/extents")
        if not self.h > 0:
            raise OTLabError("parameter-out-of-range", f"grid spacing must be positive, got {self.h}")
        if min(self.extents) < 1:
            raise OTLabError("parameter-out-of-range", f"extents must be >= 1, got {self.extents}")
        if self.size > self.cell_budget:
            raise OTLabError("grid-budget", f"{self.size} cells exceed the budget {self.cell_budget}")

    @classmethod
    def covering(cls, lo: Sequence[float], hi: Sequence[float], h: float, budget: int = 0) -> GridSpec:
        """Grid of spacing ``h`` whose cells tile the box [lo, hi]; ``budget = 0`` means the default cap."""
        lo_arr = np.asarray(lo, dtype=np.float64)
        hi_arr = np.asarray(hi, dtype=np.float64)
        extents = np.maximum(np.rint((hi_arr - lo_arr) / h), 1).astype(int)
        return cls(len(lo_arr), tuple(lo_arr), h, tuple(extents), budget)

    @property
    def cell_budget(self) -> int:
        return self.budget or DEFAULT_SETTINGS.grid_budget

    @property
    def size(self) -> int:
        return int(math.prod(self.extents))

    @property
    def cell_volume(self) -> float:
        return float(self.h**self.n)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        lo = np.asarray(self.origin, dtype=np.float64)
        return lo, lo + np.asarray(self.extents, dtype=np.float64) * self.h

    def axis_centers(self, axis: int) -> FloatArray:
        return self.origin[axis] + (np.arange(self.extents[axis], dtype=np.float64) + 0.5) * self.h

    def cell_centers(self) -> FloatArray:
        """All cell centers in row-major order, shape (size, n)."""
        mesh = np.meshgrid(*(self.axis_centers(a) for a in range(self.n)), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def enlarged(self, cells: int, budget: int = 0) -> GridSpec:
        return GridSpec(
            self.n,
            tuple(o - cells * self.h for o in self.origin),
            self.h,
            tuple(e + 2 * cells for e in self.extents),
            budget or self.budget,
        )

    def cell_offset(self, other: GridSpec) -> IntArray:
        """Integer position of this grid's origin inside ``other``."""
        if not self.aligned_with(other):
            raise OTLabError("grid-mismatch", "grids are not aligned")
        delta = (np.asarray(self.origin) - np.asarray(other.origin)) / self.h
        return np.rint(delta).astype(np.int64)

    def aligned_with(self, other: GridSpec) -> bool:
        """Same spacing and origins an integer number of cells apart."""
        if self.n != other.n or abs(self.h - other.h) > 1e-12 * self.h:
            return False
        delta = (np.asarray(self.origin) - np.asarray(other.origin)) / self.h
        return bool(np.all(np.abs(delta - np.rint(delta)) < 1e-6))

    def union(self, other: GridSpec) -> GridSpec:
        """Smallest aligned grid covering both."""
        if not self.aligned_with(other):
            raise OTLabError("grid-mismatch", "cannot merge grids with different spacing or phase")
        lo_a, hi_a = self.bounds()
        lo_b, hi_b = other.bounds()
        budget = max(self.budget, other.budget)
        return GridSpec.covering(np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b), self.h, budget)

    def index_of(self, points: ArrayLike) -> IntArray:
        """Cell index per point (may fall outside the grid)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((pts - np.asarray(self.origin)) / self.h).astype(np.int64)

    def contains(self, points: ArrayLike, tol: float = 1e-9) -> BoolArray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo, hi = self.bounds()
        slack = tol * self.h
        return np.all((pts >= lo - slack) & (pts <= hi + slack), axis=1)

    def header(self) -> str:
        origin = ",".join(_format(o) for o in self.origin)
        dims = ",".join(str(e) for e in self.extents)
        return f"grid n={self.n} origin={origin} h={_format(self.h)} dims={dims}"

    @classmethod
    def parse_header(cls, line: str) -> GridSpec:
        """Parse ``grid n=<int> origin=<f,...> h=<float> dims=<int,...>``."""
        parts = line.split()
        if not parts or parts[0] != "grid":
            raise OTLabError("bad-config", f"Not a grid header: {line.strip()!r}")
        fields = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
        try:
            return cls(
                int(fields["n"]),
                tuple(float(v) for v in fields["origin"].split(",")),
                float(fields["h"]),
                tuple(int(v) for v in fields["dims"].split(",")),
            )
        except (KeyError, ValueError) as exc:
            raise OTLabError("bad-config", f"Malformed grid header: {line.strip()!r}") from exc


@dataclass(frozen=True, slots=True, eq=False)
class GridMeasure:
    """Nonnegative cell masses on a :class:`GridSpec`."""

    spec: GridSpec
    weights: FloatArray
    probability: bool = False

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64, copy=True).reshape(self.spec.extents)
        if not np.all(np.isfinite(w)):
            raise OTLabError("parameter-out-of-range", "grid weights must be finite")
        if np.any(w < 0):
            raise OTLabError("parameter-out-of-range", f"negative cell mass {float(w.min()):g}")
        total = float(w.sum())
        if total <= 0:
            raise OTLabError("zero-mass", "grid measure has zero total mass")
        if self.probability and abs(total - 1.0) > MASS_TOL:
            raise OTLabError("mass-mismatch", f"probability measure has mass {total!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def density(self) -> FloatArray:
        return self.weights / self.spec.cell_volume

    def support_mask(self) -> BoolArray:
        return self.weights > 0

    def normalized(self) -> GridMeasure:
        return GridMeasure(self.spec, self.weights / self.total_mass, probability=True)

    def mean(self) -> FloatArray:
        centers = self.spec.cell_centers()
        w = self.weights.reshape(-1)
        return (centers * w[:, None]).sum(axis=0) / w.sum()

    def to_discrete(self) -> DiscreteMeasure:
        """Support cells as atoms at their centers, row-major order."""
        flat = self.weights.reshape(-1)
        idx = np.flatnonzero(flat > 0)
        return DiscreteMeasure(self.spec.cell_centers()[idx], flat[idx], probability=self.probability)

    def support_indices(self) -> IntArray:
        return np.flatnonzero(self.weights.reshape(-1) > 0)

    def embed(self, spec: GridSpec) -> GridMeasure:
        """The same masses re-indexed onto an aligned grid that covers this one."""
        offset = self.spec.cell_offset(spec)
        end = offset + np.asarray(self.spec.extents)
        if np.any(offset < 0) or np.any(end > np.asarray(spec.extents)):
            raise OTLabError("grid-too-small", "target grid does not cover the measure")
        out = np.zeros(spec.extents)
        out[tuple(slice(int(a), int(b)) for a, b in zip(offset, end))] = self.weights
        return GridMeasure(spec, out, probability=self.probability)

    def save(self, path: str | Path, provenance: str | None = None) -> None:
        save_grid(self, path, provenance)


@dataclass(frozen=True, slots=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud."""

    points: FloatArray
    weights: FloatArray
    probability: bool = False

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise OTLabError("parameter-out-of-range", f"{pts.shape[0]} points but {w.shape[0]} weights")
        if w.size == 0:
            raise OTLabError("zero-mass", "discrete measure has no atoms")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(pts))):
            raise OTLabError("parameter-out-of-range", "atoms and weights must be finite")
        if np.any(w <= 0):
            raise OTLabError("parameter-out-of-range", "atom weights must be positive")
        if self.probability and abs(float(w.sum()) - 1.0) > MASS_TOL:
            raise OTLabError("mass-mismatch", f"probability measure has mass {float(w.sum())!r}")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, point: ArrayLike) -> DiscreteMeasure:
        return cls(np.atleast_2d(np.asarray(point, dtype=np.float64)), np.ones(1), probability=True)

    @property
    def n(self) -> int:
        return int(self.points.shape[1])

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points, self.weights / self.total_mass, probability=True)

    def mean(self) -> FloatArray:
        return (self.points * self.weights[:, None]).sum(axis=0) / self.weights.sum()

    def to_discrete(self) -> DiscreteMeasure:
        return self

    def save(self, path: str | Path, provenance: str | None = None) -> None:
        save_discrete(self, path, provenance)


Measure = Union[GridMeasure, DiscreteMeasure]


def as_discrete(m: Measure) -> DiscreteMeasure:
    return m.to_discrete()


def convolve(m: GridMeasure, k: Kernel, settings: Settings = DEFAULT_SETTINGS) -> GridMeasure:
    """rho_eps * m on a grid enlarged by the kernel radius.

    Cells outside the dilated support are exact zeros, so compact kernels keep
    compact supports.
    """
    h, n = m.spec.h, m.spec.n
    cube = k.stencil(h, n)
    radius = cube.shape[0] // 2
    cells = math.prod(e + 2 * radius for e in m.spec.extents)
    if cells > settings.grid_budget:
        raise OTLabError("grid-budget", f"convolved grid needs {cells} cells, budget {settings.grid_budget}")
    out_spec = m.spec.enlarged(radius, settings.grid_budget)
    out = signal.fftconvolve(m.weights, cube, mode="full")
    reach = signal.fftconvolve(m.support_mask().astype(np.float64), (cube > 0).astype(np.float64), mode="full")
    out[reach < 0.5] = 0.0
    np.clip(out, 0.0, None, out=out)
    out *= m.total_mass / out.sum()
    logger.debug("convolve %s: %s -> %s cells", k.descriptor, m.spec.extents, out_spec.extents)
    return GridMeasure(out_spec, out, probability=m.probability)


def grid_shift(h: float, z: ArrayLike) -> tuple[IntArray, FloatArray]:
    """Nearest whole-cell shift for ``z`` and the rounding residual."""
    zv = np.atleast_1d(np.asarray(z, dtype=np.float64))
    cells = np.rint(zv / h).astype(np.int64)
    return cells, zv - cells * h


def translate_with_residual(m: Measure, z: ArrayLike) -> tuple[Measure, FloatArray]:
    """The pushforward mu^z(A) = mu(A - z) and the part of ``z`` lost to grid snapping.

    Grid measures shift by whole cells, so the residual is ``z`` minus the
    applied shift; discrete measures shift exactly and report zeros.
    """
    zv = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if zv.shape[0] != m.n:
        raise OTLabError("grid-mismatch", f"shift has dimension {zv.shape[0]}, measure {m.n}")
    if isinstance(m, DiscreteMeasure):
        return DiscreteMeasure(m.points + zv, m.weights, probability=m.probability), np.zeros_like(zv)
    cells, residual = grid_shift(m.spec.h, zv)
    if np.any(residual != 0):
        logger.info("translation snapped to the grid, residual %s", residual)
    origin = tuple(o + int(c) * m.spec.h for o, c in zip(m.spec.origin, cells))
    spec = GridSpec(m.n, origin, m.spec.h, m.spec.extents, m.spec.budget)
    shifted = GridMeasure(spec, m.weights, probability=m.probability)
    return shifted, residual


def translate(m: Measure, z: ArrayLike) -> Measure:
    """The pushforward mu^z(A) = mu(A - z); grid measures shift by whole cells."""
    return translate_with_residual(m, z)[0]


def _unit(e: ArrayLike, n: int) -> FloatArray:
    ev = np.atleast_1d(np.asarray(e, dtype=np.float64))
    if ev.shape != (n,) or abs(float(np.linalg.norm(ev)) - 1.0) > 1e-12:
        raise OTLabError("bad-direction", f"expected a unit vector in R^{n}, got {ev.tolist()}")
    return ev


def project(m: Measure, e: ArrayLike, mode: str = "perp") -> DiscreteMeasure:
    """Pushforward to a line.

    ``mode="perp"`` (n = 2) is p_e#m written in the coordinate along
    e-perp = (-e2, e1); ``mode="scalar"`` is the pushforward by x -> <x, e>.
    Coincident images are merged.
    """
    d = m.to_discrete()
    ev = _unit(e, d.n)
    if mode == "perp":
        if d.n != 2:
            raise OTLabError("parameter-out-of-range", "perp projection needs n = 2; use mode='scalar'")
        axis = np.array([-ev[1], ev[0]])
    elif mode == "scalar":
        axis = ev
    else:
        raise OTLabError("parameter-out-of-range", f"Unknown projection mode: {mode}")
    coords = d.points @ axis
    unique, inverse = np.unique(coords, return_inverse=True)
    weights = np.bincount(inverse.reshape(-1), weights=d.weights, minlength=unique.size)
    return DiscreteMeasure(unique[:, None], weights, probability=d.probability)


def distance_to_boundary(mask: BoolArray, h: float) -> FloatArray:
    """d(x, boundary X) at the center of every cell of ``mask`` (zero outside)."""
    padded = np.pad(np.asarray(mask, dtype=bool), 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=h)
    inner = dist[tuple(slice(1, -1) for _ in range(padded.ndim))]
    out = np.where(mask, inner - 0.5 * h, 0.0)
    return np.asarray(out, dtype=np.float64)


def erosion_integral(mask: BoolArray, h: float, alpha: float) -> float:
    """I_alpha(X) = integral over X of d(x, boundary X)^-alpha.

    Each cell contributes the exact average of t^-alpha over
    [d - h/2, d + h/2], so the boundary layer is integrated without a clamp.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise OTLabError("empty-support", "erosion integral of an empty set")
    if not 0.0 <= alpha < 1.0:
        raise OTLabError("alpha-out-of-range", f"erosion exponent must lie in [0, 1), got {alpha}")
    d = np.maximum(distance_to_boundary(mask, h)[mask], 0.5 * h)
    lo, hi = d - 0.5 * h, d + 0.5 * h
    average = (hi ** (1.0 - alpha) - lo ** (1.0 - alpha)) / ((1.0 - alpha) * h)
    return float(np.sum(average) * h**mask.ndim)


def _line_atoms(m: Measure) -> tuple[FloatArray, FloatArray]:
    d = m.to_discrete()
    if d.n != 1:
        raise OTLabError("parameter-out-of-range", f"expected a 1D measure, got dimension {d.n}")
    order = np.argsort(d.points[:, 0], kind="stable")
    return d.points[order, 0], d.weights[order]


def stochastic_dominance_1d(a: Measure, b: Measure) -> tuple[bool, float]:
    """Whether ``b`` stochastically dominates ``a`` and the worst CDF excess."""
    xa, wa = _line_atoms(a)
    xb, wb = _line_atoms(b)
    if abs(wa.sum() - wb.sum()) > MASS_TOL:
        raise OTLabError("mass-mismatch", f"masses {wa.sum()!r} and {wb.sum()!r} differ")
    ts = np.union1d(xa, xb)
    cdf_a = np.concatenate([[0.0], np.cumsum(wa)])[np.searchsorted(xa, ts, side="right")]
    cdf_b = np.concatenate([[0.0], np.cumsum(wb)])[np.searchsorted(xb, ts, side="right")]
    violation = float(max(np.max(cdf_b - cdf_a), 0.0))
    return violation <= MASS_TOL, violation


def cdf_difference_oracle(a: Measure, b: Measure, spec: GridSpec) -> FloatArray:
    """Exact per-cell integral of |F_a - F_b| for two 1D measures."""
    xa, wa = _line_atoms(a)
    xb, wb = _line_atoms(b)
    if spec.n != 1:
        raise OTLabError("grid-mismatch", "CDF oracle needs a 1D grid")
    edges = spec.origin[0] + np.arange(spec.extents[0] + 1) * spec.h
    brk = np.union1d(np.union1d(xa, xb), edges)
    brk = brk[(brk >= edges[0]) & (brk <= edges[-1])]
    left, right = brk[:-1], brk[1:]
    fa = np.concatenate([[0.0], np.cumsum(wa)])[np.searchsorted(xa, left, side="right")]
    fb = np.concatenate([[0.0], np.cumsum(wb)])[np.searchsorted(xb, left, side="right")]
    cell = np.clip(np.floor((0.5 * (left + right) - edges[0]) / spec.h).astype(int), 0, spec.extents[0] - 1)
    return np.bincount(cell, weights=np.abs(fa - fb) * (right - left), minlength=spec.extents[0])


def monotone_family(
    lam: Measure, mu: Measure, e: ArrayLike, k: int, seed: int, terms: int = 4
) -> list[RampFunction]:
    """``<x, e>`` followed by ``k - 1`` random monotone ramps along ``e``."""
    if k < 1:
        raise OTLabError("parameter-out-of-range", f"family size must be >= 1, got {k}")
    ev = _unit(e, lam.n)
    coords = np.concatenate([lam.to_discrete().points @ ev, mu.to_discrete().points @ ev])
    lo, hi = float(coords.min()), float(coords.max())
    span = max(hi - lo, 1e-12)
    rng = make_rng(seed)
    family = [RampFunction.linear(ev)]
    for _ in range(k - 1):
        starts = rng.uniform(lo, hi, size=terms)
        widths = rng.uniform(0.05 * span, span, size=terms)
        family.append(RampFunction(ev, starts, widths))
    return family


def monotone_gaps(lam: Measure, mu: Measure, e: ArrayLike, k: int, seed: int) -> FloatArray:
    """int phi dlam - int phi dmu for every member of :func:`monotone_family`."""
    dl, dm = lam.to_discrete(), mu.to_discrete()
    gaps = [
        float(dl.weights @ phi.values(dl.points) - dm.weights @ phi.values(dm.points))
        for phi in monotone_family(lam, mu, e, k, seed)
    ]
    return np.asarray(gaps)


def monotone_gap(lam: Measure, mu: Measure, e: ArrayLike, k: int, seed: int) -> float:
    """Largest gap over the monotone test family; nonpositive when mu is to the e-side of lam."""
    return float(monotone_gaps(lam, mu, e, k, seed).max())


def save_grid(m: GridMeasure, path: str | Path, provenance: str | None = None) -> None:
    lines = []
    if provenance:
        lines.append("# " + provenance.replace("\n", " "))
    lines.append(m.spec.header())
    rows = m.weights.reshape(-1, m.spec.extents[-1])
    lines.extend(" ".join(_format(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_discrete(m: DiscreteMeasure, path: str | Path, provenance: str | None = None) -> None:
    lines = []
    if provenance:
        lines.append("# " + provenance.replace("\n", " "))
    for point, w in zip(m.points, m.weights):
        lines.append(" ".join(_format(v) for v in (*point, w)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _content_lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def load_grid_weights(path: str | Path) -> tuple[GridSpec, FloatArray]:
    """Header and raw weights, without the zero-mass check."""
    lines = _content_lines(path)
    if not lines:
        raise OTLabError("bad-config", f"empty measure file: {path}")
    spec = GridSpec.parse_header(lines[0])
    values = np.array(" ".join(lines[1:]).split(), dtype=np.float64)
    if values.size != spec.size:
        raise OTLabError("bad-config", f"{path}: expected {spec.size} weights, found {values.size}")
    return spec, values.reshape(spec.extents)


def load_grid(path: str | Path) -> GridMeasure:
    spec, weights = load_grid_weights(path)
    return GridMeasure(spec, weights)


def load_discrete(path: str | Path) -> DiscreteMeasure:
    rows = [ln.split() for ln in _content_lines(path)]
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise OTLabError("bad-config", f"{path}: malformed discrete measure")
    data = np.array(rows, dtype=np.float64)
    return DiscreteMeasure(data[:, :-1], data[:, -1])


def load_measure(path: str | Path) -> Measure:
    """Load either file format, sniffing the ``grid`` header."""
    lines = _content_lines(path)
    if lines and lines[0].startswith("grid"):
        return load_grid(path)
    return load_discrete(path)
