"""The two-point functional, lattice graphs over supp lambda and the tau constant."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike
from scipy import stats
from scipy.spatial import cKDTree

from .config import DEFAULT_SETTINGS, Settings, make_rng
from .errors import OTLabError
from .kernels import FloatArray, IntArray, Kernel
from .measures import GridMeasure, GridSpec

logger = logging.getLogger(__name__)

DEFAULT_ETA = 0.1
LATTICE_TIE = 1e-9


@dataclass(frozen=True, slots=True, eq=False)
class GridField:
    """A vector field sampled at every cell center of ``spec``, row-major."""

    spec: GridSpec
    values: FloatArray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.spec.size:
            raise OTLabError("grid-mismatch", f"{vals.shape[0]} field values for {self.spec.size} cells")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, spec: GridSpec, func: Callable[[FloatArray], FloatArray]) -> GridField:
        return cls(spec, func(spec.cell_centers()))


def lambda_eps(xi: ArrayLike, f: GridField, k: Kernel, lam: GridMeasure, p: float) -> float:
    """Lambda_eps(xi, f) = sum_y lam(y) sum_o K(o) |xi(y) - f(y + o)|^p.

    ``xi`` holds one vector per support cell of ``lam`` (row-major order) and
    ``f`` must cover supp lam plus the kernel stencil on an aligned grid.
    """
    xv = np.asarray(xi, dtype=np.float64)
    if xv.ndim == 1:
        xv = xv[:, None]
    support = lam.support_indices()
    if xv.shape[0] != support.size:
        raise OTLabError("grid-mismatch", f"{xv.shape[0]} xi values for {support.size} support cells")
    offsets, weights = k.nodes(lam.spec.h, lam.n)
    base = np.stack(np.unravel_index(support, lam.spec.extents), axis=1) + lam.spec.cell_offset(f.spec)
    extents = np.asarray(f.spec.extents)
    lw = lam.weights.reshape(-1)[support]
    total = 0.0
    for offset, w in zip(offsets, weights):
        cells = base + offset
        if np.any(cells < 0) or np.any(cells >= extents):
            raise OTLabError("grid-too-small", "f does not cover supp lambda plus the kernel support")
        flat = np.ravel_multi_index(tuple(cells.T), f.spec.extents)
        diff = np.linalg.norm(xv - f.values[flat], axis=1)
        total += float(w * (lw @ diff**p))
    return total


@dataclass(frozen=True, slots=True, eq=False)
class GridGraph:
    """Lattice nodes r_hat Z^n + anchor that are nearest to some support point."""

    r: float
    eta: float
    anchor: FloatArray
    lattice: IntArray
    nodes: FloatArray
    ball_mass: FloatArray
    balls: tuple[IntArray, ...]
    graph: nx.Graph
    connected: bool

    @property
    def r_hat(self) -> float:
        return self.eta * self.r

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])


def build_grid_graph(lam: GridMeasure, r: float, eta: float = DEFAULT_ETA, anchor: ArrayLike | None = None) -> GridGraph:
    """Project supp lam onto the shifted lattice and weigh each node by lam(B_r)."""
    if not 0 < eta <= 0.25:
        raise OTLabError("parameter-out-of-range", f"eta must lie in (0, 1/4], got {eta}")
    if r < 2 * lam.spec.h * (1 - 1e-12):
        raise OTLabError("parameter-out-of-range", f"r = {r:g} is below two grid cells")
    d = lam.to_discrete()
    if d.points.shape[0] == 0:
        raise OTLabError("empty-support", "lambda has no support cells")
    r_hat = eta * r
    zbar = np.zeros(d.n) if anchor is None else np.atleast_1d(np.asarray(anchor, dtype=np.float64))
    # halves round up so cell centers on a half-lattice still give consecutive nodes
    lattice = np.unique(np.floor((d.points - zbar) / r_hat + 0.5 + LATTICE_TIE).astype(np.int64), axis=0)
    nodes = zbar + lattice * r_hat
    tree = cKDTree(d.points)
    balls = tuple(np.asarray(sorted(b), dtype=np.int64) for b in tree.query_ball_point(nodes, r + 1e-12 * r))
    mass = np.array([d.weights[b].sum() for b in balls])
    graph = nx.Graph()
    graph.add_nodes_from(range(nodes.shape[0]))
    index = {tuple(c): i for i, c in enumerate(lattice.tolist())}
    for i, c in enumerate(lattice.tolist()):
        for axis in range(d.n):
            nb = list(c)
            nb[axis] += 1
            j = index.get(tuple(nb))
            if j is not None:
                graph.add_edge(i, j)
    connected = nx.is_connected(graph)
    if not connected:
        logger.warning("lattice graph at r=%g has %d components", r, nx.number_connected_components(graph))
    return GridGraph(r, eta, zbar, lattice, nodes, mass, balls, graph, connected)


def m0(g: GridGraph, lam: GridMeasure) -> float:
    """max over adjacent nodes of max ball mass / overlap mass (1 with no edges)."""
    weights = lam.to_discrete().weights
    worst = 1.0
    for i, j in g.graph.edges():
        shared = np.intersect1d(g.balls[i], g.balls[j], assume_unique=True)
        overlap = float(weights[shared].sum())
        if overlap <= 0:
            return math.inf
        worst = max(worst, max(g.ball_mass[i], g.ball_mass[j]) / overlap)
    return worst


def overlap_ratio(lam: GridMeasure, x: ArrayLike, x2: ArrayLike, r: float) -> float:
    """max(lam(B_r(x)), lam(B_r(x2))) / lam(B_r(x) cap B_r(x2))."""
    d = lam.to_discrete()
    tree = cKDTree(d.points)
    a, b = (set(s) for s in tree.query_ball_point(np.vstack([np.atleast_1d(x), np.atleast_1d(x2)]), r))
    shared = float(d.weights[list(a & b)].sum()) if a & b else 0.0
    if shared <= 0:
        return math.inf
    return max(float(d.weights[list(a)].sum()), float(d.weights[list(b)].sum())) / shared


@dataclass(frozen=True, slots=True, eq=False)
class ChainTable:
    """BFS predecessor arrays, one row per source node."""

    sources: IntArray
    preds: IntArray
    depths: IntArray

    def chain(self, source_row: int, target: int) -> list[int]:
        """Node sequence from the row's source to ``target``."""
        path = [target]
        while path[-1] != self.sources[source_row]:
            nxt = int(self.preds[source_row, path[-1]])
            if nxt < 0:
                raise OTLabError("graph-disconnected", f"node {target} unreachable from {self.sources[source_row]}")
            path.append(nxt)
        return path[::-1]


def _bfs(graph: nx.Graph, source: int, size: int) -> tuple[list[int], IntArray, IntArray]:
    order = [source]
    pred = np.full(size, -1, dtype=np.int64)
    depth = np.zeros(size, dtype=np.int64)
    for u, v in nx.bfs_edges(graph, source):
        pred[v] = u
        depth[v] = depth[u] + 1
        order.append(v)
    return order, pred, depth


@dataclass(frozen=True, slots=True)
class TauResult:
    value: float
    stderr: float
    node: int
    nodes: int
    pairs_used: int
    kappa_geo: float
    exact: bool


def tau(
    g: GridGraph, p: float, settings: Settings = DEFAULT_SETTINGS, seed: int = 0
) -> tuple[TauResult, ChainTable]:
    """sup over nodes z of the chain-weighted pair sum through z.

    Exact up to ``settings.tau_exact_nodes`` nodes; above that a uniform
    sample of source nodes is scaled up and its standard error reported.
    """
    if not g.connected:
        raise OTLabError("graph-disconnected", f"lattice graph at r={g.r:g} is not connected")
    size = g.size
    if size == 1:
        empty = ChainTable(np.zeros(1, dtype=np.int64), np.full((1, 1), -1), np.zeros((1, 1), dtype=np.int64))
        return TauResult(0.0, 0.0, 0, 1, 0, 0.0, True), empty
    exact = size <= settings.tau_exact_nodes
    if exact:
        sources = np.arange(size, dtype=np.int64)
    else:
        rng = make_rng(seed, size)
        sources = np.sort(rng.choice(size, size=min(settings.tau_sample_sources, size), replace=False)).astype(np.int64)
    mass = g.ball_mass
    step = mass ** (-1.0 / (p - 1.0)) if p > 1 else 1.0 / mass
    contrib = np.zeros((sources.size, size))
    preds = np.empty((sources.size, size), dtype=np.int64)
    depths = np.empty((sources.size, size), dtype=np.int64)
    kappa = 0.0
    for row, x in enumerate(sources):
        order, pred, depth = _bfs(g.graph, int(x), size)
        preds[row], depths[row] = pred, depth
        path = np.empty(size)
        path[x] = step[x]
        for v in order[1:]:
            u = pred[v]
            path[v] = path[u] + step[v] if p > 1 else max(path[u], step[v])
        weight = mass[x] * mass * (path ** (p - 1.0) if p > 1 else path)
        sub = weight.copy()
        for v in reversed(order[1:]):
            sub[pred[v]] += sub[v]
        contrib[row] = sub
        far = depth > 0
        if far.any():
            dist = np.linalg.norm(g.nodes[far] - g.nodes[x], axis=1)
            kappa = max(kappa, float(np.max(g.r_hat * depth[far] / dist)))
    scale = size / sources.size
    totals = contrib.sum(axis=0) * scale
    node = int(np.argmax(totals))
    stderr = 0.0 if exact else float(size * contrib[:, node].std(ddof=1) / math.sqrt(sources.size))
    if not exact:
        logger.warning("tau at r=%g sampled from %d of %d sources (stderr %.3g)", g.r, sources.size, size, stderr)
    logger.debug("tau r=%g p=%g: %.6g at node %d, kappa_geo %.3f", g.r, p, totals[node], node, kappa)
    result = TauResult(float(totals[node]), stderr, node, size, int(sources.size * size), kappa, exact)
    return result, ChainTable(sources, preds, depths)


def default_anchors(n: int, r_hat: float) -> tuple[FloatArray, FloatArray]:
    return np.zeros(n), np.full(n, 0.5 * r_hat)


@dataclass(frozen=True, slots=True)
class TauRow:
    r: float
    tau: float
    m0: float
    nodes: int
    pairs_used: int
    kappa_geo: float
    anchor_id: int
    stderr: float


def tau_anchors(
    lam: GridMeasure, r: float, p: float, eta: float = DEFAULT_ETA, settings: Settings = DEFAULT_SETTINGS, seed: int = 0
) -> list[TauRow]:
    """tau and M0 at both default anchors; callers take the max over rows."""
    rows = []
    for anchor_id, anchor in enumerate(default_anchors(lam.n, eta * r)):
        g = build_grid_graph(lam, r, eta, anchor)
        result, _ = tau(g, p, settings, seed)
        rows.append(TauRow(
            r, result.value, m0(g, lam), g.size, result.pairs_used, result.kappa_geo, anchor_id, result.stderr
        ))
    return rows


def tau_sweep(
    lam: GridMeasure, radii: Sequence[float], p: float, eta: float = DEFAULT_ETA, settings: Settings = DEFAULT_SETTINGS
) -> tuple[list[TauRow], float]:
    """Rows for every radius and anchor, plus the slope of log max-tau against log r."""
    rows: list[TauRow] = []
    best = []
    for r in radii:
        pair = tau_anchors(lam, r, p, eta, settings)
        rows.extend(pair)
        best.append(max(row.tau for row in pair))
    slope = float(stats.linregress(np.log(radii), np.log(best)).slope) if len(radii) > 1 else math.nan
    return rows, slope


@dataclass(frozen=True, slots=True)
class TwoPointReport:
    lhs: float
    lambda_eps: float
    m0: float
    tau: float
    scale: float

    @property
    def bound(self) -> float:
        return self.m0 * self.scale * self.tau * self.lambda_eps

    @property
    def ratio(self) -> float:
        if self.bound > 0:
            return self.lhs / self.bound
        return 0.0 if self.lhs <= 1e-8 else math.inf


def two_point_check(
    lam: GridMeasure,
    xi: ArrayLike,
    f: GridField,
    k: Kernel,
    r: float,
    p: float,
    eta: float = DEFAULT_ETA,
    settings: Settings = DEFAULT_SETTINGS,
) -> TwoPointReport:
    """int |xi - z|^p dlam against M0 (eps/r)^n tau Lambda_eps(xi, f), z the lam-mean of xi."""
    xv = np.asarray(xi, dtype=np.float64)
    if xv.ndim == 1:
        xv = xv[:, None]
    lw = lam.weights.reshape(-1)[lam.support_indices()]
    z = (lw @ xv) / lw.sum()
    lhs = float(lw @ np.linalg.norm(xv - z, axis=1) ** p)
    lam_value = lambda_eps(xv, f, k, lam, p)
    rows = tau_anchors(lam, r, p, eta, settings)
    top = max(rows, key=lambda row: row.tau)
    scale = (k.length_scale / r) ** lam.n
    report = TwoPointReport(lhs, lam_value, top.m0, top.tau, scale)
    logger.info("two-point: lhs %.6g bound %.6g ratio %.3g", lhs, report.bound, report.ratio)
    return report


@dataclass(frozen=True, slots=True)
class PoincareReport:
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def nonlocal_poincare(f: ArrayLike, mask: ArrayLike, h: float, k: Kernel, p: float) -> PoincareReport:
    """(int_X |f - z|^p, int_X int_X K(x - y) |f(x) - f(y)|^p / |x - y|^p) by quadrature.

    ``f`` and ``mask`` share one grid of spacing ``h``; z is the mean of f on X.
    """
    x_mask = np.asarray(mask, dtype=bool)
    fv = np.asarray(f, dtype=np.float64)
    if fv.shape != x_mask.shape:
        raise OTLabError("grid-mismatch", f"field shape {fv.shape} differs from mask {x_mask.shape}")
    if not x_mask.any():
        raise OTLabError("empty-support", "Poincare domain is empty")
    n = x_mask.ndim
    vol = h**n
    z = float(fv[x_mask].mean())
    lhs = float(np.sum(np.abs(fv[x_mask] - z) ** p) * vol)
    offsets, weights = k.nodes(h, n)
    idx = np.argwhere(x_mask)
    rhs = 0.0
    for offset, w in zip(offsets, weights):
        if not offset.any():
            continue
        other = idx + offset
        inside = np.all((other >= 0) & (other < np.asarray(x_mask.shape)), axis=1)
        other_in = other[inside]
        keep = x_mask[tuple(other_in.T)]
        src = idx[inside][keep]
        dst = other_in[keep]
        if src.size == 0:
            continue
        jump = np.abs(fv[tuple(src.T)] - fv[tuple(dst.T)]) ** p
        rhs += float(w * jump.sum() * vol / (float(np.linalg.norm(offset)) * h) ** p)
    return PoincareReport(lhs, rhs)
