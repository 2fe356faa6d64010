import pytest

from ispsim.cli import main
from ispsim.fabric import CSV_COLUMNS


def run_args(mnist_dir, out, *extra):
    return ["run", "--data-dir", str(mnist_dir), "--out", str(out), "--set", "data.test_limit=200", *extra]


def test_run_writes_outputs(mnist_dir, tmp_path, capsys):
    assert main(run_args(mnist_dir, tmp_path / "r", "--channels", "4", "--deadline-ms", "6",
                         "--cadence-ms", "2")) == 0
    out = tmp_path / "r"
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "config.echo", "summary.txt", "convergence.svg"}
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 4
    assert "time_to_target_ns" in capsys.readouterr().out


def test_config_echo_reproduces_run(mnist_dir, tmp_path):
    assert main(run_args(mnist_dir, tmp_path / "a", "--algorithm", "downpour", "--channels", "2",
                         "--deadline-ms", "5", "--cadence-ms", "1", "--trace")) == 0
    echo = tmp_path / "a" / "config.echo"
    assert main(["run", "--config", str(echo), "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "trace.txt", "convergence.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_deadline_gives_header_only(mnist_dir, tmp_path):
    assert main(run_args(mnist_dir, tmp_path / "z", "--deadline-ms", "0")) == 0
    assert (tmp_path / "z" / "metrics.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"


@pytest.mark.parametrize("argv,code", [
    (["run", "--data-dir", "/nonexistent"], 2),
    (["run", "--channels", "zero"], 1),
    (["run", "--set", "sgd.tau=0"], 1),
    (["run", "--set", "nosuchkey=1"], 1),
    (["run", "--set", "novalue"], 1),
    (["frobnicate"], 1),
    (["run", "--config", "/nonexistent.cfg"], 2),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert "error" in capsys.readouterr().err


def test_help_documents_csv_schema(capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "--help"])
    assert e.value.code == 0
    assert ",".join(CSV_COLUMNS) in capsys.readouterr().out


def test_sweep(mnist_dir, tmp_path):
    out = tmp_path / "s"
    argv = ["sweep", "--axis", "channels", "--values", "2,4", "--lr-grid", "0.3,1", "--data-dir", str(mnist_dir),
            "--out", str(out), "--deadline-ms", "6", "--cadence-ms", "2", "--set", "data.test_limit=200"]
    assert main(argv) == 0
    assert (out / "channels=2" / "metrics.csv").exists() and (out / "channels=4" / "summary.txt").exists()
    combined = (out / "combined.csv").read_text().splitlines()
    assert combined[0] == "channels,learning_rate," + ",".join(CSV_COLUMNS)
    assert [r.split(",")[0] for r in combined[1:]] == ["2"] * 3 + ["4"] * 3
    assert (out / "speedup.csv").read_text().startswith("channels,learning_rate,time_to_target_ns,speedup\n")


def test_sweep_empty_axis(mnist_dir, tmp_path):
    assert main(["sweep", "--axis", "tau", "--values", "", "--data-dir", str(mnist_dir),
                 "--out", str(tmp_path)]) == 1


def test_compare_ihp(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text("T_total_ns = 100000000000\nT_IO_ns = 30000000000\n")
    t = tmp_path / "t.txt"
    t.write_text("0 R 0 8192\n")
    assert main(["compare-ihp", str(m), str(t), "--csv", str(tmp_path / "r.csv")]) == 0
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "100000000000,30000000000,70000000000,75000,70000075000"
    assert "non-IO" in capsys.readouterr().out


def test_compare_ihp_bad_trace_names_line(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text("T_total_ns = 10\nT_IO_ns = 3\n")
    t = tmp_path / "t.txt"
    t.write_text("0 R 0 8192\n0 Q 0 8192\n")
    assert main(["compare-ihp", str(m), str(t)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_plot_command(tmp_path):
    head = ",".join(CSV_COLUMNS) + "\n"
    a = tmp_path / "a.csv"
    a.write_text(head + "1000000,1,0.5,1,1,1\n")
    b = tmp_path / "b.csv"
    b.write_text("x,y\n")
    assert main(["plot", str(a), "-o", str(tmp_path / "o.svg"), "--label", "easgd"]) == 0
    assert ">easgd</text>" in (tmp_path / "o.svg").read_text()
    assert main(["plot", str(a), str(b), "-o", str(tmp_path / "p.svg")]) == 2


def test_pack_manifest(mnist_dir, tmp_path):
    f = tmp_path / "layout.txt"
    assert main(["pack", "--data-dir", str(mnist_dir), "--channels", "16", "--manifest", str(f)]) == 0
    rows = f.read_text().splitlines()
    assert len(rows) == 400 and rows[0] == "0 0 0 0 10" and rows[17] == "17 1 0 1 10"
