import re

import pytest

from ispsim.plot import PlotError, plot_files, read_series, render_svg

HEAD = "sim_time_ns,minibatches_done,test_accuracy,reads,pushes,bytes_transferred\n"


def csv(rows):
    return HEAD + "".join(f"{t},{i},{a:.6f},0,0,0\n" for i, (t, a) in enumerate(rows))


def write(tmp_path, name, rows):
    p = tmp_path / name
    p.write_text(csv(rows))
    return p


def test_one_series_one_polyline(tmp_path):
    f = write(tmp_path, "a.csv", [(10**6, 0.2), (2 * 10**6, 0.5), (3 * 10**6, 0.7)])
    svg = plot_files([f], tmp_path / "o.svg")
    lines = re.findall(r'<polyline[^>]*points="([^"]*)"', svg)
    assert len(lines) == 1
    xs = [float(p.split(",")[0]) for p in lines[0].split()]
    assert xs == sorted(xs) and len(xs) == 3
    assert "simulated time (ms)" in svg and "test accuracy" in svg


def test_byte_stable(tmp_path):
    f = write(tmp_path, "a.csv", [(10**6, 0.25)])
    a = plot_files([f], tmp_path / "1.svg")
    b = plot_files([f], tmp_path / "2.svg")
    assert a == b and (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()


def test_legend_in_input_order(tmp_path):
    files = [write(tmp_path, f"{n}.csv", [(10**6, 0.5)]) for n in ("synchronous", "downpour", "easgd")]
    svg = plot_files(files, tmp_path / "o.svg")
    assert re.findall(r">(synchronous|downpour|easgd)</text>", svg) == ["synchronous", "downpour", "easgd"]
    assert svg.count("<polyline") == 3


def test_labels_escaped():
    assert "a&lt;b" in render_svg([("a<b", [(0, 0.1)])])


def test_schema_mismatch(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,acc\n1,0.5\n")
    with pytest.raises(PlotError, match="header"):
        plot_files([write(tmp_path, "a.csv", [(1, 0.1)]), bad], tmp_path / "o.svg")
    with pytest.raises(PlotError):
        read_series(HEAD + "1,2\n", "x")


def test_header_only_csv_renders():
    svg = render_svg([("empty", read_series(HEAD, "x"))])
    assert svg.startswith("<svg") and svg.endswith("</svg>\n")
