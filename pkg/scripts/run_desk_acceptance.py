"""
Desk Acceptance Run
Trains the desk profile on synthetic cars and compares it with untrained weights and the xcorr ablation
"""
import argparse
import sys
import time
from pathlib import Path

# Add package to path
package_path = Path(__file__).parent.parent
sys.path.insert(0, str(package_path))

import pandas as pd

from siamtrack.core.config import load_run_config
from siamtrack.core.logging import logger, setup_logging
from siamtrack.services.datasets import load_tracks
from siamtrack.services.evaluation import ablation_sweep, evaluate, format_report_table, write_report
from siamtrack.services.network import SiameseRPN
from siamtrack.services.training import Trainer

MIN_LOSS_RATIO = 0.5
MIN_SUCCESS_GAIN = 20.0
ABLATION_VARIANTS = ["pcw", "pw", "none"]


def run_acceptance(out_dir: Path, seed: int, epochs: int) -> bool:
    setup_logging()
    config = load_run_config(profile="desk", overrides={"seed": seed})
    config.echo(out_dir)
    train_sources = load_tracks(config, "train")
    test_sources = load_tracks(config, "test")

    start = time.time()
    trainer = Trainer(SiameseRPN(config.network, config.bins), config, train_sources, out_dir=out_dir / "train")
    history = trainer.train(epochs)
    loss_ratio = history[-1].total / history[0].total
    logger.info("desk_training_done", seconds=time.time() - start, loss_ratio=loss_ratio)

    untrained = SiameseRPN(config.network, config.bins).eval()
    reports = [
        evaluate(trainer.network, config.tracker, test_sources, config.eval, config.seed, trainer.anchor, "trained"),
        evaluate(untrained, config.tracker, test_sources, config.eval, config.seed, trainer.anchor, "untrained"),
    ]
    write_report(reports, out_dir / "eval")
    print(format_report_table(reports))
    gain = reports[0].success_3d - reports[1].success_3d

    def prepare(cell):
        cell_trainer = Trainer(SiameseRPN(cell.network, cell.bins), cell, train_sources)
        cell_trainer.train(epochs)
        return cell_trainer.network, cell_trainer.anchor

    sweep = ablation_sweep("xcorr_variant", ABLATION_VARIANTS, config, prepare, test_sources)
    sweep.to_csv(out_dir / "sweep.csv", index=False)
    success = dict(zip(sweep["value"], sweep["success_3d"]))

    checks = pd.DataFrame(
        [
            {"check": "loss halves", "value": loss_ratio, "passed": loss_ratio <= MIN_LOSS_RATIO},
            {"check": "trained beats untrained", "value": gain, "passed": gain >= MIN_SUCCESS_GAIN},
            {"check": "pcw >= none", "value": success["pcw"] - success["none"], "passed": success["pcw"] >= success["none"]},
            {"check": "pw >= none", "value": success["pw"] - success["none"], "passed": success["pw"] >= success["none"]},
            {
                "check": "throughput >= 5 fps",
                "value": reports[0].fps,
                "passed": reports[0].fps >= 5.0,
            },
        ]
    )
    checks.to_csv(out_dir / "acceptance.csv", index=False)
    print(checks.to_string(index=False))
    return bool(checks["passed"].all())


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs") / "desk_acceptance")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=50)
    args = parser.parse_args()

    print("=" * 60)
    print("siamtrack - Desk Acceptance")
    print("=" * 60)

    if run_acceptance(args.out, args.seed, args.epochs):
        print("\nAll acceptance checks passed")
    else:
        print("\nSome acceptance checks failed")
        sys.exit(1)
