import numpy as np
import pytest

from pwkd.cli import main
from pwkd.config import Config, parse_lines, parse_overrides
from pwkd.errors import ConfigError
from pwkd.metrics import METRICS_COLUMNS, read_metrics

from .test_data import fake_mnist


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def tiny(tmp_path):
    data = fake_mnist(tmp_path / "data", n_train=64, n_test=20, side=8)
    conf = write_cfg(
        tmp_path / "run.cfg",
        f"""
        # toy run
        dataset.dir = {data}
        model.k = 1
        train.epochs = 4
        train.batch = 16
        out.dir = {tmp_path / 'out'}
        out.wall_clock = false
        """,
    )
    return tmp_path, conf


def test_parse_lines_and_comments():
    raw = parse_lines(["seed = 4  # trailing", "", "# full line"])
    assert raw == {"seed": "4"}


def test_duplicate_key_is_an_error():
    with pytest.raises(ConfigError) as e:
        parse_lines(["seed = 1", "seed = 2"])
    assert e.value.key == "seed"


def test_order_independent():
    a = Config(parse_lines(["seed = 1", "lr.max = 0.2"]))
    b = Config(parse_lines(["lr.max = 0.2", "seed = 1"]))
    assert a.values == b.values


def test_overrides():
    assert parse_overrides(["--seed", "3", "--lr.form=cosine"]) == {"seed": "3", "lr.form": "cosine"}
    with pytest.raises(ConfigError):
        parse_overrides(["--seed"])
    with pytest.raises(ConfigError):
        parse_overrides(["--seed", "1", "--seed", "2"])


def test_unparsable_value_names_key():
    with pytest.raises(ConfigError) as e:
        Config({"train.epochs": "many"})
    assert e.value.key == "train.epochs"


def test_help_documents_metrics_columns(capsys):
    assert main(["--help"]) == 0
    assert ",".join(METRICS_COLUMNS) in capsys.readouterr().out


def test_missing_dataset_dir(capsys, tmp_path):
    assert main(["distill", "--out.dir", str(tmp_path)]) == 2
    assert "dataset.dir" in capsys.readouterr().err


def test_unknown_key(capsys):
    assert main(["plan", "--model.depth", "3"]) == 2
    assert "model.depth" in capsys.readouterr().err


def test_unknown_key_in_file(capsys, tmp_path):
    conf = write_cfg(tmp_path / "c.cfg", "lr.bogus = 1\n")
    assert main(["plan", "--config", conf]) == 2
    assert "lr.bogus" in capsys.readouterr().err


def test_bad_value(capsys):
    assert main(["plan", "--lr.min", "abc"]) == 2
    assert "lr.min" in capsys.readouterr().err


def test_unknown_command():
    assert main(["train"]) == 2


def test_runtime_failure_exit_1(capsys, tmp_path):
    assert main(["eval", "--dataset.dir", str(tmp_path)]) == 1


def test_plan_outputs(tmp_path):
    out = tmp_path / "plan"
    argv = ["plan", "--train.epochs", "320", "--model.widths", "0.25,0.5,0.75,1.0", "--lr.form", "triangular",
            "--lr.min", "0.0001", "--lr.max", "0.1", "--out.dir", str(out)]
    assert main(argv) == 0
    rows = read_metrics(out / "plan.csv")
    assert len(rows) == 320
    assert [int(r["epoch"]) for r in rows if float(r["lr"]) == 0.1] == [40, 120, 200, 280]
    svg = (out / "plan.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_end_to_end_pipeline(tiny):
    tmp, conf = tiny
    out = tmp / "out"
    assert main(["decompose", "--config", conf]) == 0
    assert (out / "teacher.ckpt").exists()
    assert len(read_metrics(out / "decompose_metrics.csv")) == 4 * 4
    assert main(["eval", "--config", conf, "--eval.width", "0.5"]) == 0
    assert main(["eval", "--config", conf, "--eval.width", "0.3"]) == 2
    assert main(["distill", "--config", conf]) == 0
    rows = read_metrics(out / "metrics.csv")
    assert list(rows[0]) == list(METRICS_COLUMNS)
    assert [float(r["rho"]) for r in rows] == [0.25, 0.5, 0.75, 1.0]
    first = (out / "metrics.csv").read_bytes()
    assert main(["distill", "--config", conf]) == 0
    assert (out / "metrics.csv").read_bytes() == first
    assert main(["distill", "--config", conf, "--stage.order", "fixed:1.0", "--lr.cyclic", "false"]) == 0
    assert {float(r["rho"]) for r in read_metrics(out / "metrics.csv")} == {1.0}
    assert main(["baselines", "--config", conf]) == 0
    grid = read_metrics(out / "baselines.csv")
    assert len(grid) == 5 * 4 and list(grid[0])[0] == "run"
    assert main(["eval", "--config", conf, "--eval.checkpoint", str(out / "student.ckpt")]) == 0


def test_prepare_data(tmp_path):
    assert main(["prepare-data", "--dataset.dir", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "train-images-idx3-ubyte").stat().st_size == 16 + 4000 * 784
