"""Colors and piecewise-linear colormaps for heatmaps and plot series."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import OTLabError

NAMED_COLORS: dict[str, tuple[int, int, int]] = {
    "black": (0, 0, 0),
    "white": (255, 255, 255),
    "navy": (0, 0, 128),
    "teal": (0, 128, 128),
    "steelblue": (70, 130, 180),
    "crimson": (220, 20, 60),
    "darkorange": (255, 140, 0),
    "gold": (255, 215, 0),
    "ivory": (255, 255, 240),
    "purple": (128, 0, 128),
    "seagreen": (46, 139, 87),
    "gray": (128, 128, 128),
}

ColorLike = Union[str, tuple[int, int, int], "Color"]


@dataclass(frozen=True, slots=True)
class Color:
    """An RGB color, channels clamped to 0..255."""

    r: int
    g: int
    b: int

    def __post_init__(self) -> None:
        for name in ("r", "g", "b"):
            object.__setattr__(self, name, max(0, min(255, int(getattr(self, name)))))

    @classmethod
    def from_hex(cls, hex_str: str) -> Color:
        """#rgb or #rrggbb."""
        h = hex_str.lstrip("#")
        try:
            if len(h) == 3:
                return cls(int(h[0] * 2, 16), int(h[1] * 2, 16), int(h[2] * 2, 16))
            if len(h) == 6:
                return cls(int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16))
        except ValueError:
            pass
        raise OTLabError("bad-config", f"Invalid hex color format: {hex_str}")

    @classmethod
    def parse(cls, value: ColorLike) -> Color:
        if isinstance(value, Color):
            return value
        if isinstance(value, str):
            value = value.strip()
            if value.startswith("#"):
                return cls.from_hex(value)
            key = value.lower().replace(" ", "").replace("-", "").replace("_", "")
            if key not in NAMED_COLORS:
                raise OTLabError(
                    "bad-config", f"Unknown color name: {value}. Available: {', '.join(sorted(NAMED_COLORS))}"
                )
            return cls(*NAMED_COLORS[key])
        if len(value) == 3:
            return cls(*value)
        raise OTLabError("bad-config", f"Cannot parse color from: {value}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.r, self.g, self.b)

    def to_hex(self) -> str:
        return f"#{self.r:02x}{self.g:02x}{self.b:02x}"

    def lerp(self, other: Color, t: float) -> Color:
        """Linear interpolation to another color."""
        return Color(
            round(self.r + (other.r - self.r) * t),
            round(self.g + (other.g - self.g) * t),
            round(self.b + (other.b - self.b) * t),
        )


@dataclass(frozen=True, slots=True)
class Colormap:
    """Evenly spaced color stops, interpolated linearly."""

    stops: tuple[Color, ...]

    def __post_init__(self) -> None:
        if len(self.stops) < 2:
            raise OTLabError("bad-config", "a colormap needs at least two colors")

    @classmethod
    def parse(cls, spec: str | Sequence[ColorLike]) -> Colormap:
        """A registered name, a comma list of colors, or a sequence of colors."""
        if isinstance(spec, str):
            if spec.strip().lower() in COLORMAPS:
                return COLORMAPS[spec.strip().lower()]
            spec = spec.split(",")
        return cls(tuple(Color.parse(c) for c in spec))

    def at(self, t: float) -> Color:
        """The color at t in [0, 1]."""
        t = min(1.0, max(0.0, t))
        pos = t * (len(self.stops) - 1)
        i = min(int(pos), len(self.stops) - 2)
        return self.stops[i].lerp(self.stops[i + 1], pos - i)

    def series(self, count: int) -> list[str]:
        """``count`` hex colors spread over the map."""
        if count == 1:
            return [self.stops[0].to_hex()]
        return [self.at(i / (count - 1)).to_hex() for i in range(count)]

    def apply(self, values: ArrayLike, vmax: float | None = None) -> NDArray[np.uint8]:
        """RGB image of ``values`` scaled to [0, vmax]; the last axis is the channel."""
        v = np.asarray(values, dtype=np.float64)
        top = float(v.max()) if vmax is None and v.size else (vmax or 0.0)
        t = np.clip(v / top, 0.0, 1.0) if top > 0 else np.zeros_like(v)
        table = np.array([s.as_tuple() for s in self.stops], dtype=np.float64)
        pos = t * (len(self.stops) - 1)
        i = np.minimum(pos.astype(np.int64), len(self.stops) - 2)
        frac = (pos - i)[..., None]
        rgb = table[i] + (table[i + 1] - table[i]) * frac
        return np.rint(rgb).astype(np.uint8)


COLORMAPS: dict[str, Colormap] = {
    "ink": Colormap((Color(*NAMED_COLORS["white"]), Color(*NAMED_COLORS["navy"]))),
    "heat": Colormap(
        (Color(*NAMED_COLORS["black"]), Color(*NAMED_COLORS["crimson"]),
         Color(*NAMED_COLORS["gold"]), Color(*NAMED_COLORS["ivory"]))
    ),
    "series": Colormap(
        (Color(*NAMED_COLORS["steelblue"]), Color(*NAMED_COLORS["darkorange"]),
         Color(*NAMED_COLORS["seagreen"]), Color(*NAMED_COLORS["crimson"]))
    ),
}


def get_colormap(name: str) -> Colormap:
    """Look up a registered colormap, or parse a comma list of colors."""
    return Colormap.parse(name)
