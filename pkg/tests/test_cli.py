"""
Test Command-Line Application
"""
import json

import pandas as pd
import pytest

from siamtrack.main import main


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(
        json.dumps(
            {
                "profile": "desk",
                "train": {"epochs": 1, "steps_per_epoch": 1, "batch_size": 2},
                "data": {
                    "synthetic": {"num_frames": 5, "points_per_object": 100, "ground_points": 50},
                    "synthetic_train_sequences": 1,
                    "synthetic_test_sequences": 2,
                },
            }
        )
    )
    return path


def test_ground_truth_echo_evaluation(tmp_path, small_config, capsys):
    """Synthesized sequences evaluated with the ground-truth echo score 100"""
    assert main(["synth", "--config", str(small_config), "--out", str(tmp_path / "data")]) == 0
    assert len(list((tmp_path / "data" / "test").iterdir())) == 2

    code = main(
        [
            "eval",
            "--config", str(small_config),
            "--tracker", "gt-echo",
            "--data-dir", str(tmp_path / "data"),
            "--out", str(tmp_path / "eval"),
        ]
    )
    assert code == 0
    report = pd.read_csv(tmp_path / "eval" / "report.csv")
    assert report["success_3d"].tolist() == [100.0]
    assert (tmp_path / "eval" / "config.json").exists()
    assert "gt-echo" in capsys.readouterr().out


def test_train_then_track(tmp_path, small_config):
    """A trained checkpoint drives the track command"""
    assert main(["train", "--config", str(small_config), "--out", str(tmp_path / "train")]) == 0
    checkpoint = tmp_path / "train" / "checkpoint.npz"
    assert checkpoint.exists() and (tmp_path / "train" / "metrics.prom").exists()

    code = main(
        ["track", "--config", str(small_config), "--checkpoint", str(checkpoint), "--out", str(tmp_path / "track")]
    )
    assert code == 0
    frames = pd.read_csv(tmp_path / "track" / "frames.csv")
    assert frames["frame"].tolist() == [1, 2, 3, 4]


def test_error_exit_codes(tmp_path, small_config):
    """Configuration problems exit 2, missing data exits 3"""
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tracker": {"nms_iou": 5}}))
    assert main(["eval", "--config", str(bad), "--tracker", "gt-echo", "--out", str(tmp_path / "a")]) == 2
    assert main(["sweep", "--config", str(small_config), "--axis", "lambda", "--out", str(tmp_path / "b")]) == 2

    code = main(
        [
            "eval",
            "--config", str(small_config),
            "--tracker", "gt-echo",
            "--data-dir", str(tmp_path / "nowhere"),
            "--out", str(tmp_path / "c"),
        ]
    )
    assert code == 3


def test_missing_sequence_name(tmp_path, small_config):
    code = main(["track", "--config", str(small_config), "--sequence", "nope", "--out", str(tmp_path / "t")])
    assert code == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
