import re

import numpy as np
import pytest

from gtg.plot import PlotError, mean_curve, plot_csvs, read_curve


def write_csv(path, xs, ys):
    lines = ["env_steps,updates,mean_return"] + [f"{x},{i},{y}" for i, (x, y) in enumerate(zip(xs, ys))]
    path.write_text("\n".join(lines) + "\n")
    return path


def polylines(svg, cls):
    return re.findall(rf'<polyline class="{cls}"[^>]*points="([^"]*)"', svg)


def test_single_csv_single_bold_line(tmp_path):
    p = write_csv(tmp_path / "a.csv", [0, 10, 20], [0.0, 0.5, 1.0])
    out = plot_csvs([p], tmp_path / "o.svg")
    svg = out.read_text()
    assert len(polylines(svg, "mean")) == 1 and polylines(svg, "run") == []
    assert 'stroke-width="3"' in svg


def test_five_runs_and_mean(tmp_path):
    rng = np.random.default_rng(0)
    xs = np.arange(0, 100, 10)
    runs = [rng.random(len(xs)) for _ in range(5)]
    paths = [write_csv(tmp_path / f"r{i}.csv", xs, ys) for i, ys in enumerate(runs)]
    svg = plot_csvs(paths, tmp_path / "o.svg").read_text()
    assert len(polylines(svg, "run")) == 5 and len(polylines(svg, "mean")) == 1
    assert svg.count('stroke-opacity="0.3"') == 5
    mx, my = mean_curve([read_curve(p) for p in paths])
    for i in (0, 4, 9):
        assert mx[i] == xs[i]
        assert my[i] == pytest.approx(sum(r[i] for r in runs) / 5, abs=1e-12)


def test_mean_interpolates_on_common_range():
    a = (np.array([0.0, 10.0]), np.array([0.0, 1.0]))
    b = (np.array([0.0, 5.0, 20.0]), np.array([1.0, 1.0, 1.0]))
    mx, my = mean_curve([a, b])
    np.testing.assert_allclose(mx, [0, 5, 10])
    np.testing.assert_allclose(my, [0.5, 0.75, 1.0])


def test_empty_csv_errors_without_output(tmp_path):
    good = write_csv(tmp_path / "g.csv", [0, 1], [0, 1])
    empty = tmp_path / "e.csv"
    empty.write_text("")
    out = tmp_path / "o.svg"
    with pytest.raises(PlotError):
        plot_csvs([good, empty], out)
    assert not out.exists()
    header_only = tmp_path / "h.csv"
    header_only.write_text("env_steps,mean_return\n")
    with pytest.raises(PlotError, match="no data"):
        read_curve(header_only)


def test_missing_column_and_blank_values(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("env_steps,mean_return\n1,\n2,0.5\n")
    xs, ys = read_curve(p)
    assert xs.tolist() == [2.0] and ys.tolist() == [0.5]
    with pytest.raises(PlotError, match="missing column"):
        read_curve(p, y="win_rate")
