"""
Desk Acceptance
Full desk-profile training and evaluation on synthetic cars (run with -m slow)
"""
import pytest

from siamtrack.services.datasets import load_tracks
from siamtrack.services.evaluation import ablation_sweep, evaluate
from siamtrack.services.network import SiameseRPN
from siamtrack.services.training import Trainer


@pytest.mark.slow
def test_desk_training_learns_to_track(desk_config, tmp_path):
    """Loss at least halves and the trained network beats its own initialization"""
    train_sources = load_tracks(desk_config, "train")
    test_sources = load_tracks(desk_config, "test")

    trainer = Trainer(SiameseRPN(desk_config.network, desk_config.bins), desk_config, train_sources, out_dir=tmp_path)
    history = trainer.train()
    assert history[-1].total <= 0.5 * history[0].total

    untrained = SiameseRPN(desk_config.network, desk_config.bins).eval()
    args = (desk_config.tracker, test_sources, desk_config.eval, desk_config.seed, trainer.anchor)
    trained_report = evaluate(trainer.network, *args)
    untrained_report = evaluate(untrained, *args)
    assert trained_report.success_3d >= untrained_report.success_3d + 20.0
    assert trained_report.fps >= 5.0


@pytest.mark.slow
def test_correlation_variants_beat_no_correlation(desk_config):
    """Trained pcw and pw cross-correlation both match or beat the uncorrelated baseline"""
    train_sources = load_tracks(desk_config, "train")
    test_sources = load_tracks(desk_config, "test")

    def prepare(cell):
        trainer = Trainer(SiameseRPN(cell.network, cell.bins), cell, train_sources)
        trainer.train()
        return trainer.network, trainer.anchor

    sweep = ablation_sweep("xcorr_variant", ["pcw", "pw", "none"], desk_config, prepare, test_sources)
    assert sweep["error"].eq("").all(), sweep["error"].tolist()
    success = dict(zip(sweep["value"], sweep["success_3d"]))
    assert success["pcw"] >= success["none"]
    assert success["pw"] >= success["none"]


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
