import pytest

from admmbeam.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_selftest(capsys):
    code, out = _run(capsys, "selftest")
    assert code == 0
    assert out.out.count("PASS") == 4


def test_sweep_snr_deterministic_bytes(tmp_path, capsys):
    scen = tmp_path / "s.txt"
    scen.write_text("L = 3\nK = 2\nsnr_db = 0, 10\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        code, _ = _run(capsys, "sweep-snr", "--scenario", str(scen), "--trials", "2", "--deterministic", "--out", str(path))
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    lines = [ln for ln in a.read_text().splitlines() if not ln.startswith("#")]
    assert lines[0] == "snr_db,mean_opt_rate,mean_zf_rate,std_opt,std_zf,trials"
    assert len(lines) == 3


def test_timestamp_without_deterministic(capsys):
    code, out = _run(capsys, "maxmin")
    assert code == 0
    assert out.out.startswith("# generated = ")


def test_maxmin(capsys):
    code, out = _run(capsys, "maxmin", "--deterministic")
    assert code == 0
    header, values = [ln for ln in out.out.splitlines() if not ln.startswith("#")]
    row = dict(zip(header.split(","), values.split(",")))
    assert float(row["gamma_opt"]) >= float(row["zf_rate"])


@pytest.mark.parametrize("argv", [
    ["sweep-snr", "--scenario", "/nonexistent/file"],
    ["sweep-snr", "--threads", "0"],
    ["sweep-snr", "--trials", "0"],
    ["sweep-snr", "--trials", "-1"],
    ["sweep-snr", "--eps", "0"],
    ["no-such-command"],
])
def test_config_errors(capsys, argv):
    code, _ = _run(capsys, *argv)
    assert code == 1


def test_bad_scenario_key(tmp_path, capsys):
    scen = tmp_path / "s.txt"
    scen.write_text("colour = blue\n")
    code, out = _run(capsys, "bench-stuff", "--scenario", str(scen))
    assert code == 1 and "unknown key" in out.err


def test_numerical_failure_exit_code(capsys, monkeypatch):
    from admmbeam import cli
    from admmbeam.hsd import NumericalError

    def boom(*a, **k):
        raise NumericalError("factorization failed")

    monkeypatch.setattr(cli, "max_min_bisection", boom)
    code, out = _run(capsys, "maxmin")
    assert code == 2 and "numerical failure" in out.err
