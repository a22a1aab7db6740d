"""
Prometheus Metrics
Stage latencies and counters for tracking and training runs
"""
from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

registry = CollectorRegistry()

STAGE_SECONDS = Histogram(
    "siamtrack_stage_seconds",
    "Wall-clock seconds per tracking stage",
    labelnames=["stage"],
    buckets=(0.0005, 0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0),
    registry=registry,
)

FALLBACK_FRAMES = Counter(
    "siamtrack_fallback_frames",
    "Frames answered with the previous box because the search area was empty",
    registry=registry,
)

TRAINED_EPOCHS = Counter(
    "siamtrack_trained_epochs",
    "Training epochs completed",
    registry=registry,
)


def write_metrics(out_dir: Path) -> Path:
    """Write the registry in text exposition format"""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "metrics.prom"
    write_to_textfile(str(path), registry)
    return path
