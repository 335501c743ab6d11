import hashlib
from dataclasses import replace

import pytest

from otlab import __version__
from otlab.cli import format_value, main, write_table
from otlab.experiments import EXPERIMENTS


def test_run_density(write_config, tmp_path):
    path = write_config(
        """
        [experiment]
        name = density
        seed = 7
        output = results
        """
    )
    assert main(["run", str(path)]) == 0
    out = tmp_path / "results"
    assert (out / "density.csv").read_text(encoding="utf-8").startswith("w1,sigma_mass,gap,inclusion")
    assert (out / "sigma.grid").exists()
    manifest = (out / "MANIFEST").read_text(encoding="utf-8").splitlines()
    assert manifest == [
        "experiment density",
        "seed 7",
        f"config_sha256 {hashlib.sha256(path.read_bytes()).hexdigest()}",
        "artifact density.csv",
        "artifact sigma.grid",
    ]


def test_summary_table(write_config, tmp_path):
    path = write_config("[experiment]\nname = stability\neps = 0.1, 0.2\ncells_per_eps = 50\n")
    assert main(["run", str(path)]) == 0
    summary = (tmp_path / "out" / "stability_summary.csv").read_text(encoding="utf-8").splitlines()
    assert summary[0] == "key,value"
    assert summary[1].startswith("slope,")


@pytest.mark.parametrize(
    "text",
    [
        "this is not an ini file\n",
        "[experiment]\nname = nope\n",
        "[experiment]\nname = contract\nkernel = triangle\n",
        "[experiment]\nname = contract\n[lambda]\ngenerator = blob\n[mu]\ngenerator = box\n",
    ],
)
def test_run_rejects_bad_configs(write_config, capsys, text):
    assert main(["run", str(write_config(text))]) == 2
    assert capsys.readouterr().err.startswith("otlab: ")


def test_run_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "absent.ini")]) == 3


def test_run_failed_check(write_config, tmp_path, capsys):
    path = write_config(
        """
        [experiment]
        name = contract
        p = 2
        eps = 0.1
        max_delta = -1

        [lambda]
        generator = box
        lo = 0, 0
        hi = 0.5, 0.5
        h = 0.05

        [mu]
        generator = box
        lo = 0.25, 0.1
        hi = 0.75, 0.6
        h = 0.05
        """
    )
    assert main(["run", str(path)]) == 1
    assert "FAIL rigidity" in capsys.readouterr().err
    assert (tmp_path / "out" / "contract.csv").exists()


def test_plot_command(tmp_path):
    table = tmp_path / "t.csv"
    table.write_text("eps,delta\n0.1,0.01\n0.2,0.04\n", encoding="utf-8")
    assert main(["plot", str(table), "--x", "eps", "--y", "delta", "--log"]) == 0
    assert (tmp_path / "t.svg").exists()
    assert main(["plot", str(table), "--x", "eps", "--y", "w2min"]) == 2
    assert main(["plot", str(tmp_path / "none.csv"), "--x", "eps", "--y", "delta"]) == 3


def test_selftest_command(capsys):
    assert main(["selftest", "--quick", "--suite", "rigidity"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)
    assert main(["selftest", "--suite", "nonsense"]) == 2


def test_render_command(square, tmp_path):
    square.save(tmp_path / "square.grid")
    assert main(["render", str(tmp_path / "square.grid"), "--colormap", "ink"]) == 0
    assert (tmp_path / "square.png").exists()
    assert main(["render", str(tmp_path / "square.grid"), "--colormap", "plaid"]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "true"
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(3) == "3"
    assert format_value("tent(eps=0.1)") == "tent(eps=0.1)"


def test_write_table_fills_missing_cells(tmp_path):
    write_table(tmp_path / "t.csv", [{"a": 1}, {"b": 2.5, "a": 2}])
    assert (tmp_path / "t.csv").read_text(encoding="utf-8") == "a,b\n1,\n2,2.5\n"


def test_unexpected_error_exits_with_check_failure(write_config, monkeypatch, capsys):
    def broken(cfg, point):
        raise ValueError("matrix is singular")

    monkeypatch.setitem(EXPERIMENTS, "density", replace(EXPERIMENTS["density"], run=broken))
    path = write_config("[experiment]\nname = density\n")
    assert main(["run", str(path)]) == 1
    assert capsys.readouterr().err.startswith("otlab: density failed: ValueError: matrix is singular")
