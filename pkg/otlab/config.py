"""Numeric settings, experiment configuration files, and seeded randomness."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import OTLabError

logger = logging.getLogger(__name__)

EXPERIMENT_NAMES: tuple[str, ...] = (
    "contract",
    "rigidity",
    "stability",
    "tau",
    "density",
    "gaussian",
    "twopoint",
)


@dataclass(frozen=True, slots=True)
class Settings:
    """Tolerances and budgets consumed by the numerical modules."""

    grid_budget: int = 2**22
    pair_budget: int = 40_000_000
    mass_tol: float = 1e-9
    plan_tol: float = 1e-8
    gap_rel: float = 1e-6
    max_iter: int = 10_000_000
    tie_tol: float = 1e-9
    chunk_entries: int = 4_000_000
    tau_exact_nodes: int = 400
    tau_sample_sources: int = 64
    node_cap: int = 25

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: Settings | None = None) -> Settings:
        """Apply string overrides (a ``[tolerances]`` section) on top of ``base``."""
        base = base or cls()
        known = {f.name for f in dataclasses.fields(cls)}
        changes: dict[str, int | float] = {}
        for key, raw in values.items():
            name = key.strip().lower().replace("-", "_")
            if name not in known:
                raise OTLabError(
                    "bad-config",
                    f"Unknown tolerance: {key}. Available: {', '.join(sorted(known))}",
                )
            current = getattr(base, name)
            try:
                changes[name] = int(float(raw)) if isinstance(current, int) else float(raw)
            except ValueError as exc:
                raise OTLabError("bad-config", f"Invalid value for {key}: {raw!r}") from exc
        return dataclasses.replace(base, **changes)


DEFAULT_SETTINGS = Settings()


def thread_count() -> int:
    """Worker cap from ``OTLAB_THREADS`` (unset or invalid means 1)."""
    raw = os.environ.get("OTLAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring OTLAB_THREADS=%r", raw)
        return 1
    return max(1, value)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed``, optionally keyed to a substream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass(frozen=True, slots=True)
class MeasureSource:
    """Either a named generator with parameters or a measure file."""

    generator: str | None = None
    path: Path | None = None
    params: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_section(cls, section: Mapping[str, str], base_dir: Path) -> MeasureSource:
        items = dict(section)
        if "file" in items:
            path = Path(items.pop("file"))
            if not path.is_absolute():
                path = base_dir / path
            return cls(path=path, params=items)
        if "generator" not in items:
            raise OTLabError("bad-config", "measure section needs 'generator' or 'file'")
        return cls(generator=items.pop("generator").strip(), params=items)


def parse_floats(raw: str) -> tuple[float, ...]:
    """Parse a comma separated list of numbers."""
    try:
        values = tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise OTLabError("bad-config", f"Not a number list: {raw!r}") from exc
    if not values:
        raise OTLabError("bad-config", "empty sweep list")
    return values


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """A parsed ``otlab run`` configuration file."""

    name: str
    seed: int
    p: float
    kernel: str
    eps: tuple[float, ...]
    convention: str
    output: Path
    params: dict[str, str]
    lam: MeasureSource | None
    mu: MeasureSource | None
    settings: Settings
    digest: str = ""

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None, digest: str = "") -> ExperimentConfig:
        base_dir = base_dir or Path.cwd()
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise OTLabError("bad-config", str(exc).splitlines()[0]) from exc
        if not parser.has_section("experiment"):
            raise OTLabError("bad-config", "missing [experiment] section")
        exp = dict(parser["experiment"])
        name = exp.pop("name", "").strip().lower()
        if name not in EXPERIMENT_NAMES:
            raise OTLabError(
                "unknown-experiment",
                f"Unknown experiment: {name or '<missing>'}. Available: {', '.join(EXPERIMENT_NAMES)}",
            )
        try:
            seed = int(exp.pop("seed", "0"))
            p = float(exp.pop("p", "2"))
        except ValueError as exc:
            raise OTLabError("bad-config", f"Invalid seed or p: {exc}") from exc
        if not 0 <= seed < 2**64:
            raise OTLabError("bad-config", f"seed must be a 64-bit unsigned integer, got {seed}")
        if p < 1:
            raise OTLabError("bad-config", f"p must be >= 1, got {p}")
        convention = exp.pop("convention", "scaled").strip().lower()
        if convention not in ("scaled", "standard"):
            raise OTLabError("bad-config", f"Unknown convention: {convention}")
        output = Path(exp.pop("output", "out"))
        if not output.is_absolute():
            output = base_dir / output
        lam = MeasureSource.from_section(parser["lambda"], base_dir) if parser.has_section("lambda") else None
        mu = MeasureSource.from_section(parser["mu"], base_dir) if parser.has_section("mu") else None
        settings = (
            Settings.from_mapping(dict(parser["tolerances"]))
            if parser.has_section("tolerances")
            else DEFAULT_SETTINGS
        )
        return cls(
            name=name,
            seed=seed,
            p=p,
            kernel=exp.pop("kernel", "uniform-ball").strip(),
            eps=parse_floats(exp.pop("eps", "0.1")),
            convention=convention,
            output=output,
            params=exp,
            lam=lam,
            mu=mu,
            settings=settings,
            digest=digest,
        )

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        """Read and parse a config file; the sha256 of its bytes is kept as ``digest``."""
        path = Path(path)
        data = path.read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise OTLabError("bad-config", f"config is not UTF-8: {path}") from exc
        return cls.parse(text, base_dir=path.parent, digest=digest)

    def float_param(self, key: str, default: float) -> float:
        raw = self.params.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise OTLabError("bad-config", f"Invalid value for {key}: {raw!r}") from exc

    def int_param(self, key: str, default: int) -> int:
        return int(self.float_param(key, float(default)))

    def list_param(self, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        raw = self.params.get(key)
        return default if raw is None else parse_floats(raw)
