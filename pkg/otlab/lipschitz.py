"""1-Lipschitz test functions built from cones and monotone ramps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import OTLabError

if TYPE_CHECKING:
    from .measures import GridSpec

FloatArray = NDArray[np.float64]

_CHUNK = 2_000_000


class LipschitzFunction(Protocol):
    """What the stability checks need from a test function."""

    @property
    def unit_gradient(self) -> bool:
        """True when |grad| = 1 almost everywhere."""
        ...

    def values(self, points: ArrayLike) -> FloatArray: ...

    def gradients(self, points: ArrayLike) -> FloatArray: ...


def _points(points: ArrayLike) -> FloatArray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


@dataclass(frozen=True, slots=True, eq=False)
class ConeFunction:
    """sign * min_k (a_k + |x - p_k|)."""

    apexes: FloatArray
    offsets: FloatArray
    sign: float = 1.0

    def __post_init__(self) -> None:
        apexes = _points(self.apexes)
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        if apexes.shape[0] != offsets.shape[0] or offsets.size == 0:
            raise OTLabError("parameter-out-of-range", "cone apexes and offsets must be nonempty and match")
        if self.sign not in (1.0, -1.0):
            raise OTLabError("parameter-out-of-range", f"cone sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "apexes", apexes)
        object.__setattr__(self, "offsets", offsets)

    @property
    def unit_gradient(self) -> bool:
        return True

    def _branch(self, pts: FloatArray) -> tuple[FloatArray, NDArray[np.int64]]:
        best = np.empty(pts.shape[0])
        arg = np.empty(pts.shape[0], dtype=np.int64)
        step = max(1, _CHUNK // max(1, self.offsets.size))
        for start in range(0, pts.shape[0], step):
            block = pts[start : start + step]
            dist = np.linalg.norm(block[:, None, :] - self.apexes[None, :, :], axis=2)
            total = dist + self.offsets[None, :]
            arg[start : start + step] = np.argmin(total, axis=1)
            best[start : start + step] = np.min(total, axis=1)
        return best, arg

    def values(self, points: ArrayLike) -> FloatArray:
        best, _ = self._branch(_points(points))
        return self.sign * best

    def gradients(self, points: ArrayLike) -> FloatArray:
        pts = _points(points)
        _, arg = self._branch(pts)
        diff = pts - self.apexes[arg]
        norm = np.linalg.norm(diff, axis=1, keepdims=True)
        unit = np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
        return self.sign * unit


@dataclass(frozen=True, slots=True, eq=False)
class RampFunction:
    """Mean over j of clamp(<x, e> - a_j, 0, b_j); with no terms, just <x, e>.

    Each clamp is 1-Lipschitz and nondecreasing along e, so the mean is too.
    """

    direction: FloatArray
    starts: FloatArray
    widths: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "starts", np.asarray(self.starts, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "widths", np.asarray(self.widths, dtype=np.float64).reshape(-1))
        if self.starts.shape != self.widths.shape or np.any(self.widths <= 0):
            raise OTLabError("parameter-out-of-range", "ramp widths must be positive and match the starts")

    @classmethod
    def linear(cls, direction: ArrayLike) -> RampFunction:
        return cls(np.asarray(direction, dtype=np.float64), np.empty(0), np.empty(0))

    @property
    def unit_gradient(self) -> bool:
        return self.starts.size == 0

    def values(self, points: ArrayLike) -> FloatArray:
        t = _points(points) @ self.direction
        if self.starts.size == 0:
            return t
        return np.clip(t[:, None] - self.starts[None, :], 0.0, self.widths[None, :]).mean(axis=1)

    def gradients(self, points: ArrayLike) -> FloatArray:
        t = _points(points) @ self.direction
        if self.starts.size == 0:
            slope = np.ones_like(t)
        else:
            u = t[:, None] - self.starts[None, :]
            slope = ((u > 0) & (u < self.widths[None, :])).mean(axis=1)
        return slope[:, None] * self.direction[None, :]


@dataclass(frozen=True, slots=True, eq=False)
class MinFunction:
    """Pointwise minimum of Lipschitz functions; the gradient follows the active part."""

    parts: tuple[LipschitzFunction, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise OTLabError("parameter-out-of-range", "minimum of an empty family")

    @property
    def unit_gradient(self) -> bool:
        return all(part.unit_gradient for part in self.parts)

    def values(self, points: ArrayLike) -> FloatArray:
        pts = _points(points)
        return np.min(np.stack([part.values(pts) for part in self.parts]), axis=0)

    def gradients(self, points: ArrayLike) -> FloatArray:
        pts = _points(points)
        vals = np.stack([part.values(pts) for part in self.parts])
        active = np.argmin(vals, axis=0)
        grads = np.stack([part.gradients(pts) for part in self.parts])
        return grads[active, np.arange(pts.shape[0])]


def lipschitz_audit(phi: LipschitzFunction, spec: GridSpec) -> float:
    """Largest axis-neighbor difference quotient of ``phi`` on the grid cells."""
    values = phi.values(spec.cell_centers()).reshape(spec.extents)
    worst = 0.0
    for axis in range(spec.n):
        if spec.extents[axis] > 1:
            worst = max(worst, float(np.max(np.abs(np.diff(values, axis=axis)))) / spec.h)
    return worst


def require_lipschitz(phi: LipschitzFunction, spec: GridSpec) -> float:
    """Audit ``phi`` and raise unless the quotient is at most 1 + 10h."""
    worst = lipschitz_audit(phi, spec)
    if worst > 1.0 + 10.0 * spec.h:
        raise OTLabError("not-1-lipschitz", f"difference quotient {worst:.6g} exceeds 1 + 10h")
    return worst


def cone_family(
    lo: Sequence[float], hi: Sequence[float], rng: np.random.Generator, count: int, cones: int = 3
) -> list[ConeFunction]:
    """Random minima of upward cones with apexes in the box [lo, hi]."""
    lo_arr = np.asarray(lo, dtype=np.float64)
    hi_arr = np.asarray(hi, dtype=np.float64)
    span = float(np.linalg.norm(hi_arr - lo_arr))
    family = []
    for _ in range(count):
        apexes = rng.uniform(lo_arr, hi_arr, size=(cones, lo_arr.size))
        offsets = rng.uniform(0.0, span, size=cones)
        family.append(ConeFunction(apexes, offsets, 1.0))
    return family
