"""The experiments behind ``otlab run``.

Each experiment splits into independent sweep points, computes CSV rows for
every point and names the checks that failed. The runner owns threading and
output; nothing here writes files except through ``PointResult.writers``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .config import DEFAULT_SETTINGS, ExperimentConfig, MeasureSource, Settings, make_rng
from .contraction import analyze_contraction, delta_eps, near_translate_coherence
from .errors import OTLabError
from .gaussian import gaussian_experiment, twopoint_gaussian_sweep
from .generators import ParamReader, get_generator, random_grid, uniform_box
from .kernels import FloatArray, Kernel
from .measures import GridMeasure, Measure, cdf_difference_oracle, load_measure, translate_with_residual
from .ot_core import CostConvention, KantorovichPotential, solve_discrete
from .stability import (
    SAFETY_FACTOR,
    atom_weight_family,
    optimality_family,
    potential_stability_check,
    quadratic_convexity_check,
    random_cone_family,
)
from .transport_density import compute_sigma, renyi, renyi_bound, stab_sigma_check, support_inclusion
from .two_point import GridField, tau_anchors, two_point_check

logger = logging.getLogger(__name__)

Row = dict[str, Any]


@dataclass
class PointResult:
    rows: list[Row] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict)
    writers: dict[str, Callable[[Path], None]] = field(default_factory=dict)

    def merge(self, other: PointResult) -> None:
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)
        self.summary.update(other.summary)
        self.writers.update(other.writers)


@dataclass(frozen=True, slots=True)
class Experiment:
    """``sweep`` lists the independent points; ``finish`` sees every result in sweep order."""

    name: str
    sweep: Callable[[ExperimentConfig], Sequence[Any]]
    run: Callable[[ExperimentConfig, Any], PointResult]
    finish: Callable[[ExperimentConfig, list[PointResult]], PointResult] | None = None


def load_source(source: MeasureSource, seed: int, stream: int, settings: Settings = DEFAULT_SETTINGS) -> Measure:
    """A measure from a file or a named generator seeded on its own stream."""
    if source.path is not None:
        return load_measure(source.path)
    assert source.generator is not None
    return get_generator(source.generator)(ParamReader(source.params, settings.grid_budget), make_rng(seed, stream))


def _grid(m: Measure, role: str) -> GridMeasure:
    if not isinstance(m, GridMeasure):
        raise OTLabError("bad-config", f"{role} must be a grid measure for this experiment")
    return m


def _lam(cfg: ExperimentConfig, default: Callable[[], Measure]) -> Measure:
    return load_source(cfg.lam, cfg.seed, 0, cfg.settings) if cfg.lam is not None else default()


def _mu(cfg: ExperimentConfig, default: Callable[[], Measure]) -> Measure:
    return load_source(cfg.mu, cfg.seed, 1, cfg.settings) if cfg.mu is not None else default()


def _conv(cfg: ExperimentConfig) -> CostConvention:
    return CostConvention(cfg.p, cfg.convention)


def _single(cfg: ExperimentConfig) -> Sequence[Any]:
    return [None]


# contract


def _contract_sweep(cfg: ExperimentConfig) -> Sequence[Any]:
    if cfg.lam is not None and cfg.mu is not None:
        return [(None, eps) for eps in cfg.eps]
    return [(t, eps) for t in range(cfg.int_param("trials", 10)) for eps in cfg.eps]


def _contract_run(cfg: ExperimentConfig, point: tuple[int | None, float]) -> PointResult:
    trial, eps = point
    k, conv = Kernel(cfg.kernel, eps), _conv(cfg)
    out = PointResult()
    if trial is None:
        lam = _grid(_lam(cfg, lambda: uniform_box([0, 0], [0.5, 0.5], 0.025)), "lambda")
        mu = _grid(_mu(cfg, lambda: lam), "mu")
        report = analyze_contraction(lam, mu, k, conv, cfg.settings)
        out.rows.append(report.csv_row())
        delta, gap = report.delta, report.gap
    else:
        cells = cfg.int_param("cells", 20)
        dims = (cells,) * cfg.int_param("n", 2)
        sparsity = cfg.float_param("sparsity", 0.0)
        lam = random_grid(dims, 1.0 / cells, make_rng(cfg.seed, 2, trial), sparsity)
        mu = random_grid(dims, 1.0 / cells, make_rng(cfg.seed, 3, trial), sparsity)
        d = delta_eps(lam, mu, k, conv, cfg.settings)
        delta, gap = d.delta, d.gap
        out.rows.append({
            "trial": trial, "p": cfg.p, "eps": eps, "kernel": k.descriptor,
            "wp": d.wp, "wp_eps": d.wp_eps, "delta": delta, "gap": gap,
        })
    if delta < -gap - 1e-12:
        out.failures.append(f"contraction: delta {delta:.6g} < -gap {gap:.3g} (trial {trial}, eps {eps:g})")
    limit = cfg.float_param("max_delta", math.inf)
    if delta > limit:
        out.failures.append(f"rigidity: delta {delta:.6g} exceeds {limit:g} (eps {eps:g})")
    return out


# rigidity


def _rigidity_run(cfg: ExperimentConfig, eps: float) -> PointResult:
    lam = _grid(_lam(cfg, lambda: uniform_box([0, 0], [0.5, 0.5], 0.025)), "lambda")
    z = cfg.list_param("z", (0.25, 0.1))
    snapped: np.ndarray | None = None
    if cfg.mu is None:
        shifted, snapped = translate_with_residual(lam, z)
        mu = _grid(shifted, "mu")
    else:
        mu = _grid(load_source(cfg.mu, cfg.seed, 1, cfg.settings), "mu")
    report = analyze_contraction(lam, mu, Kernel(cfg.kernel, eps), _conv(cfg), cfg.settings)
    tol = cfg.float_param("tol", 1e-6)
    row = report.csv_row()
    if snapped is not None:
        row["shift_residual"] = float(np.linalg.norm(snapped))
    out = PointResult(rows=[row])
    if report.delta > tol:
        out.failures.append(f"rigidity-delta: {report.delta:.6g} > {tol:g} at eps {eps:g}")
    if cfg.p > 1 and not report.residual <= tol:
        out.failures.append(f"rigidity-residual: {report.residual:.6g} > {tol:g} at eps {eps:g}")
    return out


# stability


def _stability_run(cfg: ExperimentConfig, point: None) -> PointResult:
    family = cfg.params.get("family", "fold").strip().lower()
    if family == "fold":
        return _fold(cfg)
    if family == "cones":
        return _cones(cfg)
    if family == "quadratic":
        return _quadratic(cfg)
    raise OTLabError("bad-config", f"Unknown stability family: {family}. Available: fold, cones, quadratic")


def _close(value: float, target: float, rel: float) -> bool:
    return abs(value - target) <= rel * abs(target)


def _fold(cfg: ExperimentConfig) -> PointResult:
    rows, fit = optimality_family(cfg.eps, cfg.int_param("cells_per_eps", 100))
    out = PointResult()
    if fit is not None:
        out.summary.update(slope=fit.slope, slope_stderr=fit.stderr)
    rel = cfg.float_param("rel_tol", 0.02)
    for r in rows:
        out.rows.append({"eps": r.eps, "lhs": r.lhs, "rhs": r.rhs, "sigma_lhs": r.sigma_lhs, "sigma_rhs": r.sigma_rhs})
        if not (_close(r.lhs, 2 * r.eps, rel) and _close(r.rhs, r.eps**2, rel)):
            out.failures.append(f"fold-closed-form: eps {r.eps:g} gave lhs {r.lhs:.6g}, rhs {r.rhs:.6g}")
        if not _close(r.sigma_lhs, r.sigma_rhs, 0.01):
            out.failures.append(f"fold-sigma-equality: eps {r.eps:g} gave {r.sigma_lhs:.6g} vs {r.sigma_rhs:.6g}")
    lo, hi = cfg.list_param("slope_band", (0.45, 0.55))
    if fit is not None and not lo <= fit.slope <= hi:
        out.failures.append(f"fold-slope: {fit.slope:.4f} outside [{lo:g}, {hi:g}]")
    return out


def _cones(cfg: ExperimentConfig) -> PointResult:
    lam = _lam(cfg, lambda: uniform_box([0.0], [1.0], 1e-2))
    mu = _mu(cfg, lambda: uniform_box([1.0], [2.0], 1e-2))
    report = potential_stability_check(
        lam, mu, cfg.seed, cfg.int_param("trials", 50), cfg.float_param("alpha", 4.0),
        cfg.float_param("safety", SAFETY_FACTOR), cfg.settings,
    )
    out = PointResult(summary={
        "constant": report.constant, "violations": report.violations,
        "safety": report.safety, "validation_ratio": report.validation_ratio,
    })
    if report.fit is not None:
        out.summary["slope"] = report.fit.slope
    for phase, (lhs, rhs) in enumerate(((report.lhs, report.rhs), (report.validation_lhs, report.validation_rhs))):
        out.rows.extend({"phase": phase, "lhs": float(a), "rhs": float(b)} for a, b in zip(lhs, rhs))
    if report.violations:
        out.failures.append(f"stability-validation: {report.violations} members exceed safety * C * RHS")
    sol = solve_discrete(lam, mu, CostConvention(1.0), cfg.settings)
    psi = KantorovichPotential.from_solution(sol, mu)
    sigma = compute_sigma(sol, lam, mu)
    worst = math.inf
    for phi in random_cone_family(psi, lam, make_rng(cfg.seed, 2), cfg.int_param("trials", 50)):
        worst = min(worst, stab_sigma_check(psi, phi, sigma, lam, mu).slack)
    out.summary["sigma_min_slack"] = worst
    if worst < -1e-6:
        out.failures.append(f"sigma-stability: slack {worst:.3g} < -1e-6")
    return out


def _quadratic(cfg: ExperimentConfig) -> PointResult:
    lam = _lam(cfg, lambda: uniform_box([0.0, 0.0], [1.0, 1.0], 0.05))
    mu = _mu(cfg, lambda: get_generator("atoms")(
        ParamReader({"n": "2", "points": "0.2,0.2,0.8,0.3,0.4,0.8,0.7,0.7"}), make_rng(cfg.seed, 1)))
    competitors = atom_weight_family(mu, cfg.list_param("amplitudes", (0.4, 0.2, 0.1, 0.05, 0.02)))
    mode = cfg.params.get("mode", "A").strip().upper()
    report = quadratic_convexity_check(
        lam, mu, competitors, mode, stride=cfg.int_param("stride", 1), settings=cfg.settings,
    )
    out = PointResult(summary={"constant": report.constant})
    if report.fit is not None:
        out.summary["slope"] = report.fit.slope
    if mode == "B":
        out.summary["map_lipschitz"] = report.map_lipschitz
        out.summary["candidate_2k"], out.summary["candidate_inv_2k"] = report.candidates
    out.rows.extend({"gap": float(g), "distance": float(d)} for g, d in zip(report.gaps, report.distances))
    if np.any(report.gaps < -1e-9):
        out.failures.append("quadratic-gap: a competitor beat the maximizer")
    return out


# tau


def _tau_lam(cfg: ExperimentConfig) -> GridMeasure:
    return _grid(_lam(cfg, lambda: uniform_box([0.0], [1.0], 1e-3)), "lambda")


def _tau_run(cfg: ExperimentConfig, r: float) -> PointResult:
    lam = _tau_lam(cfg)
    rows = tau_anchors(lam, r, cfg.p, cfg.float_param("eta", 0.1), cfg.settings, cfg.seed)
    scale = r ** (lam.n + cfg.p - 1)
    return PointResult(rows=[
        {
            "r": row.r, "tau": row.tau, "m0": row.m0, "nodes": row.nodes, "pairs_used": row.pairs_used,
            "kappa_geo": row.kappa_geo, "anchor_id": row.anchor_id, "stderr": row.stderr,
            "tau_scaled": row.tau * scale,
        }
        for row in rows
    ])


def _tau_finish(cfg: ExperimentConfig, results: list[PointResult]) -> PointResult:
    best: dict[float, float] = {}
    scaled: dict[float, float] = {}
    for res in results:
        for row in res.rows:
            r, t = float(row["r"]), float(row["tau"])
            if t >= best.get(r, 0.0):
                best[r], scaled[r] = t, float(row["tau_scaled"])
    out = PointResult()
    if scaled:
        out.summary["tau_scaled_min"] = min(scaled.values())
        out.summary["tau_scaled_max"] = max(scaled.values())
    if "scaled_band" in cfg.params:
        lo, hi = cfg.list_param("scaled_band", (0.0, math.inf))
        for r in sorted(scaled):
            if not lo <= scaled[r] <= hi:
                out.failures.append(f"tau-scaled: {scaled[r]:.4g} at r={r:g} outside [{lo:g}, {hi:g}]")
    if len(best) < 2:
        return out
    radii = sorted(best)
    slope = float(stats.linregress(np.log(radii), np.log([best[r] for r in radii])).slope)
    out.summary["slope"] = slope
    if "slope_band" in cfg.params:
        lo, hi = cfg.list_param("slope_band", (-math.inf, math.inf))
        if not lo <= slope <= hi:
            out.failures.append(f"tau-slope: {slope:.4f} outside [{lo:g}, {hi:g}]")
    return out


# density


def _density_run(cfg: ExperimentConfig, point: None) -> PointResult:
    lam = _grid(_lam(cfg, lambda: uniform_box([0.0], [1.0], 1e-2)), "lambda")
    mu = _mu(cfg, lambda: uniform_box([2.0], [3.0], 1e-2))
    sol = solve_discrete(lam, mu, CostConvention(1.0), cfg.settings)
    sigma = compute_sigma(sol, lam, mu)
    row: Row = {"w1": sol.cost, "sigma_mass": sigma.total_mass, "gap": sol.gap,
                "inclusion": support_inclusion(lam, sigma)}
    out = PointResult(writers={"sigma.grid": sigma.save})
    if lam.n == 1:
        oracle = cdf_difference_oracle(lam, mu, sigma.spec)
        error = float(np.max(np.abs(sigma.weights.reshape(-1) - oracle)))
        row["oracle_error"] = error
        if error > 2 * sigma.spec.h:
            out.failures.append(f"density-oracle: cell error {error:.3g} > 2h")
    alpha = cfg.float_param("alpha", 1.25)
    div = renyi(lam, sigma, alpha)
    row["renyi"] = div
    if "r" in cfg.params:
        density = lam.density[lam.support_mask()]
        bound = renyi_bound(lam.support_mask(), lam.spec.h, alpha, cfg.float_param("r", 1.0),
                            float(density.min()), float(density.max()))
        row["renyi_bound"] = bound
        if not div <= bound:
            out.failures.append(f"renyi-bound: D = {div:.6g} exceeds {bound:.6g}")
    out.rows.append(row)
    return out


# gaussian


def _gaussian_sweep(cfg: ExperimentConfig) -> Sequence[Any]:
    if cfg.params.get("family", "closed").strip().lower() == "width":
        return [None]
    return [(kappa, eps) for kappa in cfg.list_param("kappa", (0.5, 2.0)) for eps in cfg.eps]


def _gaussian_run(cfg: ExperimentConfig, point: tuple[float, float] | None) -> PointResult:
    h, R = cfg.float_param("h", 5e-3), cfg.float_param("r", 8.0)
    if point is None:
        rows, rho = twopoint_gaussian_sweep(cfg.list_param("widths", (0.2, 0.1, 0.05, 0.025)), cfg.eps[0], R, h,
                                            cfg.settings)
        out = PointResult(rows=[
            {"s": r.s, "residual": r.residual, "lambda_eps": r.lambda_eps, "delta": r.delta} for r in rows
        ], summary={"spearman": rho})
        if not rho >= cfg.float_param("min_rho", 0.9):
            out.failures.append(f"gaussian-codecay: Spearman {rho:.3f}")
        return out
    kappa, eps = point
    row = gaussian_experiment(kappa, eps, R, h, cfg.float_param("shift", 0.0), cfg.settings)
    out = PointResult(rows=[row.csv_row()])
    rel = cfg.float_param("rel_tol", 0.01)
    if not _close(row.delta_numeric, row.delta_closed, rel):
        out.failures.append(
            f"gaussian-closed-form: kappa {kappa:g} eps {eps:g} numeric {row.delta_numeric:.6g} "
            f"vs {row.delta_closed:.6g}"
        )
    return out


def _gaussian_finish(cfg: ExperimentConfig, results: list[PointResult]) -> PointResult:
    """Observed eps-exponent of w2min / delta per kappa."""
    by_kappa: dict[float, list[tuple[float, float]]] = {}
    for res in results:
        for row in res.rows:
            if "kappa" in row and row["delta_numeric"] > 0 and row["w2min"] > 0:
                by_kappa.setdefault(row["kappa"], []).append((row["eps"], row["w2min"] / row["delta_numeric"]))
    out = PointResult()
    for kappa, pairs in sorted(by_kappa.items()):
        eps = np.array([e for e, _ in pairs])
        if np.ptp(eps) > 0:
            ratio = np.array([q for _, q in pairs])
            slope = stats.linregress(np.log(eps), np.log(ratio)).slope
            out.summary[f"prefactor_exponent_kappa_{kappa:g}"] = float(slope)
    return out


# twopoint


def _twopoint_sweep(cfg: ExperimentConfig) -> Sequence[Any]:
    if cfg.params.get("family", "smooth").strip().lower() == "coherence":
        return [None]
    return list(range(cfg.int_param("trials", 30)))


def _smooth_field(rng: np.random.Generator, n: int, amplitude: float) -> Callable[[FloatArray], FloatArray]:
    omega = rng.normal(size=(n, n)) * 2.0 * math.pi
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n)

    def field(x: FloatArray) -> FloatArray:
        return amplitude * np.cos(x @ omega + phase)

    return field


def _twopoint_run(cfg: ExperimentConfig, trial: int | None) -> PointResult:
    h = cfg.float_param("h", 0.02)
    lam = _grid(_lam(cfg, lambda: uniform_box([0.0, 0.0], [1.0, 1.0], h)), "lambda")
    eps = cfg.eps[0]
    k = Kernel(cfg.kernel, eps)
    if trial is None:
        rows, rho = near_translate_coherence(
            lam, cfg.list_param("z", (0.25, 0.0)), k,
            cfg.list_param("amplitudes", tuple(0.3 * 0.8**i for i in range(20))), cfg.seed, cfg.settings,
        )
        out = PointResult(rows=[
            {"s": r.s, "w2min": r.w2min, "delta": r.delta, "predictor": r.predictor} for r in rows
        ], summary={"spearman": rho})
        if not rho >= cfg.float_param("min_rho", 0.9):
            out.failures.append(f"coherence: Spearman {rho:.3f} < {cfg.float_param('min_rho', 0.9):g}")
        return out
    rng = make_rng(cfg.seed, 2, trial)
    amplitude = 0.0 if trial == 0 else cfg.float_param("amplitude", 0.1)
    func = _smooth_field(rng, lam.n, amplitude)
    xi = func(lam.spec.cell_centers()[lam.support_indices()])
    f = GridField.from_function(lam.spec.enlarged(k.radius_cells(lam.spec.h) + 1), func)
    report = two_point_check(lam, xi, f, k, cfg.float_param("r", 0.2), cfg.p, cfg.float_param("eta", 0.1), cfg.settings)
    out = PointResult(rows=[{
        "trial": trial, "lhs": report.lhs, "lambda_eps": report.lambda_eps, "m0": report.m0,
        "tau": report.tau, "bound": report.bound, "ratio": report.ratio,
    }])
    if report.lambda_eps == 0.0 and report.lhs > 1e-8:
        out.failures.append(f"two-point-constant: trial {trial} has Lambda_eps = 0 but lhs {report.lhs:.3g}")
    if report.ratio > cfg.float_param("max_ratio", 100.0):
        out.failures.append(f"two-point-ratio: trial {trial} ratio {report.ratio:.3g}")
    return out


EXPERIMENTS: dict[str, Experiment] = {
    "contract": Experiment("contract", _contract_sweep, _contract_run),
    "rigidity": Experiment("rigidity", lambda cfg: list(cfg.eps), _rigidity_run),
    "stability": Experiment("stability", _single, _stability_run),
    "tau": Experiment("tau", lambda cfg: list(cfg.list_param("radii", (0.1, 0.05, 0.025))), _tau_run, _tau_finish),
    "density": Experiment("density", _single, _density_run),
    "gaussian": Experiment("gaussian", _gaussian_sweep, _gaussian_run, _gaussian_finish),
    "twopoint": Experiment("twopoint", _twopoint_sweep, _twopoint_run),
}


def get_experiment(name: str) -> Experiment:
    if name not in EXPERIMENTS:
        raise OTLabError("unknown-experiment", f"Unknown experiment: {name}. Available: {', '.join(EXPERIMENTS)}")
    return EXPERIMENTS[name]
