"""
Test Training Loop
"""
import numpy as np
import pandas as pd
import pytest

from siamtrack.services.network import SiameseRPN, load_network
from siamtrack.services.training import CHECKPOINT, LOSS_LOG, Trainer


@pytest.fixture
def tiny_run_config(desk_config, tiny_network_config):
    train = desk_config.train.model_copy(update={"epochs": 2, "steps_per_epoch": 2, "batch_size": 2})
    return desk_config.model_copy(update={"network": tiny_network_config, "train": train})


def test_training_writes_log_and_checkpoint(tiny_run_config, synthetic_sequence, tmp_path):
    """Each epoch appends a loss row and refreshes the checkpoint"""
    network = SiameseRPN(tiny_run_config.network, tiny_run_config.bins)
    trainer = Trainer(network, tiny_run_config, [synthetic_sequence], out_dir=tmp_path)
    history = trainer.train()

    assert [row.epoch for row in history] == [1, 2]
    assert all(np.isfinite(row.total) for row in history)
    log = pd.read_csv(tmp_path / LOSS_LOG)
    assert list(log.columns) == ["epoch", "cls_loss", "bin_loss", "res_loss", "total", "n_pos"]
    assert log["epoch"].tolist() == [1, 2]

    _, meta, adam_arrays = load_network(tmp_path / CHECKPOINT)
    assert meta["epoch"] == 2 and meta["class_name"] == "car"
    assert meta["anchor_size"] == list(tiny_run_config.tracker.anchor)
    assert adam_arrays
    assert not network.training


def test_resumed_run_matches_uninterrupted_run(tiny_run_config, synthetic_sequence, tmp_path):
    """Two epochs, save, resume for a third equals three straight epochs"""
    straight = SiameseRPN(tiny_run_config.network, tiny_run_config.bins)
    Trainer(straight, tiny_run_config, [synthetic_sequence], out_dir=tmp_path / "straight").train(3)

    first = SiameseRPN(tiny_run_config.network, tiny_run_config.bins)
    Trainer(first, tiny_run_config, [synthetic_sequence], out_dir=tmp_path / "resumed").train(2)
    network, meta, adam_arrays = load_network(tmp_path / "resumed" / CHECKPOINT)
    trainer = Trainer(network, tiny_run_config, [synthetic_sequence], anchor=meta["anchor_size"], out_dir=tmp_path / "resumed")
    trainer.resume(meta["epoch"], adam_arrays)
    history = trainer.train(3)

    assert [row.epoch for row in history] == [1, 2, 3]
    expected = straight.state_dict()
    for name, value in network.state_dict().items():
        np.testing.assert_array_equal(value, expected[name], err_msg=name)


def test_same_seed_same_trajectory(tiny_run_config, synthetic_sequence):
    """Identical seeds give bit-identical loss histories"""
    runs = []
    for _ in range(2):
        network = SiameseRPN(tiny_run_config.network, tiny_run_config.bins)
        runs.append([row.total for row in Trainer(network, tiny_run_config, [synthetic_sequence]).train()])
    assert runs[0] == runs[1]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
