import pandas as pd
import pytest

from lite_nvist.common import METRICS_NAME, UsageError, checkpoint_path
from lite_nvist.runner import main, parse_sets
from lite_nvist.scenes import load_dataset, write_ppm


def test_parse_sets_groups_by_section():
    assert parse_sets(["train.seed=3", "train.total_steps = 9", "data.size=16"]) == {
        "train": {"seed": "3", "total_steps": "9"}, "data": {"size": "16"}}
    assert parse_sets(None) == {}
    assert parse_sets(["renderer.background=1, 1, 1"]) == {"renderer": {"background": "1, 1, 1"}}
    for bad in ("seed=3", "train.seed", "=3"):
        with pytest.raises(UsageError):
            parse_sets([bad])


def test_invalid_flags_exit_with_usage_status(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--scenes", "0"]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--views", "2"]) == 2
    assert main(["verify", "--suite", "nope"]) == 2
    assert not (tmp_path / "d").exists()


def test_configuration_errors_exit_with_config_status():
    assert main(["param-count", "--config", "tiny", "--set", "train.nope=1"]) == 4
    assert main(["param-count", "--config", "no-such-preset"]) == 4


def test_missing_inputs_exit_with_io_status(tmp_path):
    assert main(["train", "--config", "tiny", "--data", str(tmp_path / "none"), "--run-dir", str(tmp_path / "r")]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.nvst"), "--data", str(tmp_path)]) == 3


def test_gen_data_and_param_count(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", "tiny", "--out", str(out), "--scenes", "2", "--seed", "5"]) == 0
    dataset = load_dataset(out)
    assert len(dataset.scenes) == 2
    assert main(["param-count", "--config", "full"]) == 0


def test_verify_command():
    assert main(["verify", "--suite", "losses", "--suite", "tokens"]) == 0


@pytest.mark.slow
def test_train_render_eval(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["gen-data", "--config", "tiny", "--out", str(data)]) == 0
    assert main(["train", "--config", "tiny", "--data", str(data), "--run-dir", str(run), "--steps", "2"]) == 0
    ckpt = checkpoint_path(run, 2)
    assert ckpt.exists()
    assert len(pd.read_csv(run / METRICS_NAME)) == 2

    dataset = load_dataset(data)
    view = tmp_path / "input.ppm"
    write_ppm(view, dataset.image(dataset.split("test")[0], 0))
    renders = tmp_path / "renders"
    assert main(["render", "--checkpoint", str(ckpt), "--input", str(view), "--out", str(renders),
                 "--orbit", "2"]) == 0
    names = sorted(p.name for p in renders.iterdir())
    assert names == ["view_000.depth.txt", "view_000.ppm", "view_000_acc.ppm", "view_000_depth.ppm",
                     "view_001.depth.txt", "view_001.ppm", "view_001_acc.ppm", "view_001_depth.ppm"]

    report = tmp_path / "eval.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(report)]) == 0
    assert len(pd.read_csv(report)) == 2
