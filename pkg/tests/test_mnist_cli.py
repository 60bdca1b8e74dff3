import os
import struct

import numpy as np
import pytest

from irmmv import cli
from irmmv.bench import ExperimentSpec, run_experiment
from irmmv.errors import FormatError
from irmmv.mnist import decode_idx3, encode_idx3, images_to_bytes, load_mnist_idx

HERE = os.path.dirname(__file__)
FIXTURE = os.path.join(HERE, "data", "mnist10-images-idx3-ubyte")


def test_fixture_header_is_idx3():
    raw = open(FIXTURE, "rb").read()
    assert struct.unpack(">IIII", raw[:16]) == (0x803, 10, 28, 28)
    assert len(raw) == 16 + 10 * 784


def test_load_shape_and_range():
    x = load_mnist_idx(FIXTURE, 10)
    assert x.shape == (784, 10)
    assert x.min() >= 0.0 and x.max() <= 1.0
    raw = open(FIXTURE, "rb").read()
    # column j is image j flattened row-major, scaled by 1/255
    assert x[28 * 5 + 7, 3] == raw[16 + 3 * 784 + 28 * 5 + 7] / 255.0


def test_count_one_round_trip(tmp_path):
    raw = open(FIXTURE, "rb").read()
    x = load_mnist_idx(FIXTURE, 1)
    assert images_to_bytes(x) == encode_idx3(decode_idx3(raw, 1))
    path = tmp_path / "one"
    path.write_bytes(images_to_bytes(x))
    np.testing.assert_array_equal(load_mnist_idx(path, 1), x)


def test_gzip_input(tmp_path):
    import gzip
    path = tmp_path / "imgs.gz"
    path.write_bytes(gzip.compress(open(FIXTURE, "rb").read()))
    np.testing.assert_array_equal(load_mnist_idx(path, 3), load_mnist_idx(FIXTURE, 3))


def test_format_errors(tmp_path):
    raw = open(FIXTURE, "rb").read()
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">I", 0x801) + raw[4:])
    with pytest.raises(FormatError):
        load_mnist_idx(bad, 1)
    short = tmp_path / "short"
    short.write_bytes(raw[:16 + 784 + 10])
    with pytest.raises(FormatError):
        load_mnist_idx(short, 2)
    with pytest.raises(FormatError):
        load_mnist_idx(FIXTURE, 11)
    with pytest.raises(FileNotFoundError, match="Download"):
        load_mnist_idx(tmp_path / "missing", 1)


def test_mnist_same_seed_same_results():
    spec = ExperimentSpec(kind="mnist", mnist_path=FIXTURE, mnist_count=2, mnist_batch=2,
                          snr_db="noiseless", solvers=("momp", "lsq"), timing=False)
    a = run_experiment(spec).to_csv()
    b = run_experiment(spec).to_csv()
    assert a == b


def test_parse_value_and_config(tmp_path):
    assert cli.parse_value("3") == 3
    assert cli.parse_value("1e-3") == 1e-3
    assert cli.parse_value("a,b") == ("a", "b")
    assert cli.parse_value("noiseless") == "noiseless"
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nkind = error_vs_k\nsweep_values = 1,2\nirmmv.eta_g = 5e-3\n")
    parsed = cli.read_config(cfg)
    spec = cli.build_spec(parsed)
    assert spec.kind == "error_vs_k" and spec.sweep_values == (1, 2)
    assert spec.irmmv == {"eta_g": 5e-3}
    with pytest.raises(ValueError):
        cli.build_spec({"bogus": 1})
    with pytest.raises(ValueError):
        cli.build_spec({"irmmv.bogus": 1})


def test_cli_bench(tmp_path, capsys):
    out = tmp_path / "res.csv"
    rc = cli.main(["bench", "--set", "solvers=momp,msp", "--set", "trials=2", "--set", "l=5",
                   "--seed", "3", "--out", str(out)])
    assert rc == 0
    assert out.read_text().startswith("solver,sweep_param")
    assert "momp" in capsys.readouterr().out


def test_cli_recover(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = cli.main(["recover", "--set", "l=5", "--set", "irmmv.max_iters=2000",
                   "--set", "irmmv.eta_g=5e-3", "--set", "irmmv.eta_v=5e-3", "--out", str(out)])
    assert rc == 0
    assert out.read_text().startswith("iter,loss,row")
    assert "rel_error=" in capsys.readouterr().out


def test_cli_dynamics(tmp_path, capsys):
    out = tmp_path / "rep.csv"
    rc = cli.main(["dynamics", "--set", "horizon=0.2", "--set", "record_every=10", "--out", str(out)])
    assert rc == 0
    text = out.read_text()
    assert text.startswith("check,row,time,lhs,rhs_lower,rhs_upper,violation")
    assert "violations=0" in capsys.readouterr().out


def test_cli_mnist(tmp_path, capsys):
    out = tmp_path / "mnist.csv"
    rc = cli.main(["mnist", "--set", f"mnist_path={FIXTURE}", "--set", "mnist_count=2",
                   "--set", "solvers=momp,lsq", "--out", str(out)])
    assert rc == 0
    assert len(out.read_text().splitlines()) == 1 + 4
