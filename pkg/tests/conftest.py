import textwrap
from pathlib import Path
from typing import Callable

import pytest

from otlab.generators import interval, uniform_box
from otlab.measures import GridMeasure


@pytest.fixture
def square() -> GridMeasure:
    """Uniform probability on [0, 0.5]^2, 10 x 10 cells."""
    return uniform_box([0.0, 0.0], [0.5, 0.5], 0.05)


@pytest.fixture
def unit_interval() -> GridMeasure:
    return interval(0.0, 1.0, 0.01)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    def write(text: str, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
        return path

    return write
