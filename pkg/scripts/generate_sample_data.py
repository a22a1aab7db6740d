"""
Sample Data Generation Script
Writes desk-scale synthetic sequences and a small KITTI-format fixture under data/sample
"""
import argparse
import sys
from pathlib import Path

# Add package to path
package_path = Path(__file__).parent.parent
sys.path.insert(0, str(package_path))

from siamtrack.core.config import load_run_config
from siamtrack.core.logging import logger, setup_logging
from siamtrack.services.datasets import synthetic_split
from siamtrack.services.kitti import write_kitti_sequence
from siamtrack.services.synthetic import write_synthetic_sequence


def generate_sample_data(out_dir: Path, seed: int) -> bool:
    """Synthetic train/test splits plus KITTI sequence 0000 built from two test tracks"""
    try:
        setup_logging()
        config = load_run_config(profile="desk", overrides={"seed": seed})
        config.echo(out_dir)

        for split in ("train", "test"):
            sequences = synthetic_split(config, split)
            for sequence in sequences:
                write_synthetic_sequence(sequence, out_dir / "synthetic" / split / sequence.name, config.data.synthetic)
            logger.info("sample_split_written", split=split, sequences=len(sequences))

        pedestrians = synthetic_split(config, "test", class_name="pedestrian")
        cars = synthetic_split(config, "test")
        write_kitti_sequence(out_dir / "kitti", 0, [cars[0], pedestrians[0]])
        return True

    except Exception as e:
        logger.error(f"Sample data generation failed: {e}", exc_info=True)
        return False


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=package_path / "data" / "sample")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print("=" * 60)
    print("siamtrack - Sample Data Generation")
    print("=" * 60)

    if generate_sample_data(args.out, args.seed):
        print(f"\nSample data written to {args.out}")
        print("\nYou can now:")
        print(f"1. Train:    python -m siamtrack train --profile desk --data-dir {args.out / 'synthetic'}")
        print(f"2. Evaluate: python -m siamtrack eval --profile desk --data-dir {args.out / 'synthetic'}")
    else:
        print("\nGeneration failed. Check logs for details.")
        sys.exit(1)
