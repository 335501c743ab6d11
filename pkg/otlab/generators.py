"""Named measure sources for experiment configs.

Every generator builds an exact-mass measure on a grid aligned to multiples
of ``h``::

    from otlab.config import make_rng
    from otlab.generators import ParamReader, get_generator

    lam = get_generator("star")(ParamReader({"h": "0.01"}), make_rng(0))
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from matplotlib.path import Path as PolygonPath
from numpy.typing import ArrayLike

from .config import parse_floats
from .contraction import near_translate, smooth_bump
from .errors import OTLabError
from .gaussian import IsotropicGaussian, discretize_gaussian, truncation_mass
from .kernels import FloatArray
from .measures import BoolArray, DiscreteMeasure, GridMeasure, GridSpec, Measure

logger = logging.getLogger(__name__)

# four-pointed star: tips on the axes, reentrant corners on the diagonals
STAR_VERTICES = np.array(
    [(0.0, 2.2), (0.5, 0.5), (2.2, 0.0), (0.5, -0.5), (0.0, -2.2), (-0.5, -0.5), (-2.2, 0.0), (-0.5, 0.5)]
)


@dataclass(frozen=True, slots=True)
class ParamReader:
    """Typed access to the string parameters of a ``[lambda]``/``[mu]`` section."""

    values: Mapping[str, str] = field(default_factory=dict)
    budget: int = 0

    def number(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise OTLabError("bad-config", f"Invalid value for {key}: {raw!r}") from exc

    def integer(self, key: str, default: int) -> int:
        return int(self.number(key, float(default)))

    def numbers(self, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        raw = self.values.get(key)
        return default if raw is None else parse_floats(raw)


def _masked(spec: GridSpec, mask: BoolArray) -> GridMeasure:
    if not mask.any():
        raise OTLabError("empty-support", "generator produced an empty support at this resolution")
    w = mask.astype(np.float64).reshape(spec.extents)
    return GridMeasure(spec, w / w.sum(), probability=True)


def _snap(values: tuple[float, ...], h: float) -> tuple[float, ...]:
    return tuple(float(np.rint(v / h) * h) for v in values)


def uniform_box(lo: ArrayLike, hi: ArrayLike, h: float, budget: int = 0) -> GridMeasure:
    """Uniform probability on the box [lo, hi] (corners snapped to multiples of h)."""
    lo_s = _snap(tuple(np.atleast_1d(lo)), h)
    hi_s = _snap(tuple(np.atleast_1d(hi)), h)
    spec = GridSpec.covering(lo_s, hi_s, h, budget)
    return GridMeasure(spec, np.full(spec.extents, 1.0 / spec.size), probability=True)


def interval(a: float, b: float, h: float, budget: int = 0) -> GridMeasure:
    return uniform_box([a], [b], h, budget)


def annulus(
    r_in: float, r_out: float, h: float, center: tuple[float, float] = (0.0, 0.0), budget: int = 0
) -> GridMeasure:
    """Uniform on the cells whose centers satisfy r_in <= |x - center| <= r_out."""
    if not 0 <= r_in < r_out:
        raise OTLabError("parameter-out-of-range", f"need 0 <= r_in < r_out, got {r_in}, {r_out}")
    c = np.asarray(_snap(center, h))
    spec = GridSpec.covering(c - r_out, c + r_out, h, budget)
    d = np.linalg.norm(spec.cell_centers() - c, axis=1)
    return _masked(spec, (d >= r_in) & (d <= r_out))


def star_mask(h: float, budget: int = 0) -> tuple[GridSpec, BoolArray]:
    """The nonconvex four-pointed star scaled into the unit square."""
    spec = GridSpec.covering([0.0, 0.0], [1.0, 1.0], h, budget)
    polygon = PolygonPath((STAR_VERTICES + 2.2) / 4.4)
    return spec, polygon.contains_points(spec.cell_centers())


def star(h: float, budget: int = 0) -> GridMeasure:
    return _masked(*star_mask(h, budget))


def two_squares(side: float, gap: float, h: float, budget: int = 0) -> tuple[GridMeasure, GridMeasure]:
    """Unit-mass squares [0, side]^2 and its copy shifted by side + gap along x."""
    left = uniform_box([0.0, 0.0], [side, side], h, budget)
    right = uniform_box([side + gap, 0.0], [2 * side + gap, side], h, budget)
    return left, right


def random_grid(
    extents: tuple[int, ...], h: float, rng: np.random.Generator, sparsity: float = 0.0, budget: int = 0
) -> GridMeasure:
    """Exponential cell weights on [0, extents h], with a random fraction of cells emptied."""
    w = rng.exponential(size=extents)
    if sparsity > 0:
        w[rng.random(size=extents) < sparsity] = 0.0
        if not w.any():
            w.flat[0] = 1.0
    spec = GridSpec(len(extents), (0.0,) * len(extents), h, extents, budget)
    return GridMeasure(spec, w / w.sum(), probability=True)


def atoms(points: ArrayLike, weights: ArrayLike | None = None) -> DiscreteMeasure:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    return DiscreteMeasure(pts, w / w.sum(), probability=True)


def _points(raw: tuple[float, ...], n: int) -> FloatArray:
    if len(raw) % n:
        raise OTLabError("bad-config", f"{len(raw)} coordinates do not split into points of dimension {n}")
    return np.asarray(raw, dtype=np.float64).reshape(-1, n)


Generator = Callable[[ParamReader, np.random.Generator], Measure]


def _gen_box(p: ParamReader, rng: np.random.Generator) -> Measure:
    return uniform_box(p.numbers("lo", (0.0, 0.0)), p.numbers("hi", (1.0, 1.0)), p.number("h", 0.025), p.budget)


def _gen_interval(p: ParamReader, rng: np.random.Generator) -> Measure:
    return interval(p.number("a", 0.0), p.number("b", 1.0), p.number("h", 1e-3), p.budget)


def _gen_gaussian(p: ParamReader, rng: np.random.Generator) -> Measure:
    R = p.number("r", 8.0)
    g = IsotropicGaussian(1, p.number("s", 1.0), (p.number("mean", 0.0),))
    logger.info("gaussian generator: truncation mass %.3g", truncation_mass(R))
    return discretize_gaussian(g, p.number("h", 5e-3), R, p.budget)


def _gen_random(p: ParamReader, rng: np.random.Generator) -> Measure:
    dims = tuple(int(d) for d in p.numbers("dims", (20, 20)))
    return random_grid(dims, p.number("h", 1.0 / dims[0]), rng, p.number("sparsity", 0.0), p.budget)


def _gen_annulus(p: ParamReader, rng: np.random.Generator) -> Measure:
    c = p.numbers("center", (0.0, 0.0))
    return annulus(p.number("r_in", 0.5), p.number("r_out", 1.0), p.number("h", 1e-2), (c[0], c[1]), p.budget)


def _gen_star(p: ParamReader, rng: np.random.Generator) -> Measure:
    return star(p.number("h", 5e-3), p.budget)


def _gen_square(p: ParamReader, rng: np.random.Generator) -> Measure:
    """One of the two squares, chosen by ``which = left|right``."""
    left, right = two_squares(p.number("side", 0.5), p.number("gap", 0.25), p.number("h", 0.025), p.budget)
    which = p.values.get("which", "left").strip().lower()
    if which not in ("left", "right"):
        raise OTLabError("bad-config", f"which must be left or right, got {which}")
    return left if which == "left" else right


def _gen_near_translate(p: ParamReader, rng: np.random.Generator) -> Measure:
    h = p.number("h", 0.025)
    base = uniform_box([0.0, 0.0], [1.0, 1.0], h, p.budget)
    omega, phase = smooth_bump(base.n, rng)
    return near_translate(base, p.numbers("z", (0.25, 0.0)), p.number("s", 0.1), omega, phase)


def _gen_atoms(p: ParamReader, rng: np.random.Generator) -> Measure:
    n = p.integer("n", 1)
    pts = _points(p.numbers("points", (0.0,)), n)
    raw = p.values.get("weights")
    return atoms(pts, None if raw is None else parse_floats(raw))


GENERATORS: dict[str, Generator] = {
    "box": _gen_box,
    "interval": _gen_interval,
    "gaussian": _gen_gaussian,
    "random": _gen_random,
    "annulus": _gen_annulus,
    "star": _gen_star,
    "square": _gen_square,
    "near-translate": _gen_near_translate,
    "atoms": _gen_atoms,
}


def get_generator(name: str) -> Generator:
    """Look up a generator by name (``_`` and ``-`` are interchangeable)."""
    key = name.strip().lower().replace("_", "-")
    if key not in GENERATORS:
        raise OTLabError("unknown-generator", f"Unknown generator: {name}. Available: {', '.join(GENERATORS)}")
    return GENERATORS[key]
