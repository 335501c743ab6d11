"""Radial convolution kernels and their grid stencils."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import OTLabError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

ProfileFunc = Callable[[FloatArray], FloatArray]

HEAT_TRUNCATION_STDS = 8.0


def uniform_ball(u: FloatArray) -> FloatArray:
    """Indicator of the closed unit ball."""
    return (u <= 1.0 + 1e-12).astype(np.float64)


def tent(u: FloatArray) -> FloatArray:
    """Cone profile, 1/2 on the unit sphere and zero beyond radius 2."""
    return np.clip(1.0 - 0.5 * u, 0.0, None)


def heat(u: FloatArray) -> FloatArray:
    """exp(-|x|^2 / 4t) written in units of sqrt(t)."""
    return np.exp(-0.25 * u * u)


@dataclass(frozen=True, slots=True)
class Profile:
    """A radial kernel shape.

    ``support`` is measured in units of the profile's length scale; for the
    heat profile that scale is sqrt(t) with t = sqrt(eps).
    """

    name: str
    density: ProfileFunc
    support: float
    compact: bool

    def length_scale(self, eps: float) -> float:
        if self.compact:
            return eps
        return math.sqrt(math.sqrt(eps))


KERNEL_PROFILES: dict[str, Profile] = {
    "uniform_ball": Profile("uniform-ball", uniform_ball, 1.0, True),
    "tent": Profile("tent", tent, 2.0, True),
    "heat": Profile("heat", heat, HEAT_TRUNCATION_STDS * math.sqrt(2.0), False),
}

_ALIASES = {"uniform": "uniform_ball", "ball": "uniform_ball", "gaussian": "heat"}


def get_profile(name: str | Profile) -> Profile:
    """Get a kernel profile by name or return the profile itself."""
    if isinstance(name, Profile):
        return name
    normalized = name.strip().lower().replace("-", "_").replace(" ", "_")
    normalized = _ALIASES.get(normalized, normalized)
    if normalized not in KERNEL_PROFILES:
        raise OTLabError(
            "unknown-profile",
            f"Unknown kernel profile: {name}. Available: {', '.join(p.name for p in KERNEL_PROFILES.values())}",
        )
    return KERNEL_PROFILES[normalized]


@dataclass(frozen=True, slots=True)
class Kernel:
    """rho_eps for a named profile.

    Compact profiles use rho_eps(x) = eps^-n rho(x/eps). The heat profile is
    the heat kernel p_t at t = sqrt(eps), whose per-axis variance is 2t.
    """

    profile: str
    eps: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "profile", get_profile(self.profile).name)
        if not self.eps > 0:
            raise OTLabError("parameter-out-of-range", f"kernel scale must be positive, got {self.eps}")

    @property
    def shape(self) -> Profile:
        return get_profile(self.profile)

    @property
    def length_scale(self) -> float:
        return self.shape.length_scale(self.eps)

    @property
    def support_radius(self) -> float:
        return self.shape.support * self.length_scale

    @property
    def compact(self) -> bool:
        return self.shape.compact

    @property
    def heat_time(self) -> float:
        """t_eps = sqrt(eps), the heat-semigroup time of the heat profile."""
        return math.sqrt(self.eps)

    @property
    def descriptor(self) -> str:
        return f"{self.profile}:{self.eps:.17g}"

    def stencil(self, h: float, n: int) -> FloatArray:
        """Kernel sampled at cell-offset centers, renormalized to sum to 1.

        Returns a cube of side ``2m + 1`` centered on the zero offset.
        """
        if self.length_scale < h * (1.0 - 1e-12):
            raise OTLabError(
                "kernel-under-resolved",
                f"kernel scale {self.length_scale:g} is below the grid spacing {h:g}",
            )
        return _stencil(self.profile, self.eps, h, n).copy()

    def nodes(self, h: float, n: int) -> tuple[IntArray, FloatArray]:
        """Nonzero stencil entries as (integer offsets, weights)."""
        cube = self.stencil(h, n)
        m = cube.shape[0] // 2
        idx = np.argwhere(cube > 0.0)
        return (idx - m).astype(np.int64), cube[tuple(idx.T)]

    def radius_cells(self, h: float) -> int:
        return int(math.floor(self.support_radius / h + 1e-9))


@lru_cache(maxsize=64)
def _stencil(profile: str, eps: float, h: float, n: int) -> FloatArray:
    shape = get_profile(profile)
    scale = shape.length_scale(eps)
    m = int(math.floor(shape.support * scale / h + 1e-9))
    axis = np.arange(-m, m + 1, dtype=np.float64) * h
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    radius = np.sqrt(sum(c * c for c in mesh))
    values = shape.density(radius / scale)
    values[radius > shape.support * scale * (1.0 + 1e-12)] = 0.0
    total = float(values.sum())
    if total <= 0.0:
        raise OTLabError("kernel-under-resolved", f"{profile} kernel has no grid cells at h={h:g}")
    values = values / total
    values.setflags(write=False)
    return values
