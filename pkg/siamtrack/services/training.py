"""
Training Loop
Mini-batch Adam training of the Siamese RPN on sampled template/search pairs
"""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from siamtrack.core.config import RunConfig
from siamtrack.core.errors import NumericError, SiamTrackError
from siamtrack.core.logging import logger
from siamtrack.core.metrics import TRAINED_EPOCHS
from siamtrack.models.network import LossBreakdown
from siamtrack.services.kitti import compute_anchor_sizes
from siamtrack.services.losses import total_loss
from siamtrack.services.network import SiameseRPN
from siamtrack.services.nn import Adam
from siamtrack.services.pairs import PairSource, sample_training_pair

LOSS_LOG = "loss_log.csv"
CHECKPOINT = "checkpoint.npz"


def resolve_anchor(config: RunConfig, sources: Sequence[PairSource]) -> Tuple[float, float, float]:
    """Mean ground-truth size for KITTI training data, the configured/class anchor otherwise"""
    if config.tracker.anchor_size is None and config.data.source == "kitti":
        tracklets = [source.tracklet for source in sources if hasattr(source, "tracklet")]
        if tracklets:
            return compute_anchor_sizes(tracklets)
    return config.tracker.anchor


class Trainer:
    """
    Trains a network in place

    Every step draws its batch from a generator seeded by (seed, epoch, step), so a run is
    reproducible and a resumed run continues exactly where the saved one stopped.
    """

    def __init__(
        self,
        network: SiameseRPN,
        config: RunConfig,
        sources: Sequence[PairSource],
        anchor: Optional[Sequence[float]] = None,
        out_dir: Optional[Path] = None,
    ):
        self.network = network
        self.config = config
        self.sources = list(sources)
        self.anchor = tuple(anchor) if anchor is not None else resolve_anchor(config, self.sources)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        opt = config.optimizer
        self.optimizer = Adam(network.parameters(), lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        self.epoch = 0
        self.history: List[LossBreakdown] = []

    def resume(self, epoch: int, adam_arrays: dict):
        self.epoch = epoch
        self.optimizer.state.load_arrays(adam_arrays)
        if self.out_dir is not None and (self.out_dir / LOSS_LOG).exists():
            rows = pd.read_csv(self.out_dir / LOSS_LOG)
            rows = rows[rows["epoch"] <= epoch]
            self.history = [LossBreakdown(**row) for row in rows.to_dict(orient="records")]
        logger.info("training_resumed", epoch=epoch, adam_step=self.optimizer.state.step)

    def _batch(self, rng: np.random.Generator):
        train = self.config.train
        pairs = []
        for _ in range(train.batch_size):
            pair = sample_training_pair(
                self.sources,
                rng,
                train,
                self.network.bins,
                self.anchor,
                self.config.tracker.margin,
                self.network.input_points,
                self.network.layout.kind,
            )
            if pair is not None:
                pairs.append(pair)
        return pairs

    def train_step(self, epoch: int, step: int) -> List[LossBreakdown]:
        """One optimizer step over a freshly sampled batch"""
        seed = (self.config.seed, epoch, step)
        rng = np.random.default_rng(seed)
        self.network.set_rng(rng)
        pairs = self._batch(rng)
        if not pairs:
            logger.warning("empty_batch", epoch=epoch, step=step)
            return []

        self.network.zero_grad()
        losses = []
        try:
            for pair in pairs:
                output = self.network.forward(pair.template, pair.search)
                breakdown, grad_scores, grad_reg = total_loss(
                    output.scores,
                    pair.foreground,
                    output.reg,
                    pair.targets,
                    self.network.layout,
                    self.config.loss,
                    epoch=epoch,
                )
                self.network.backward(grad_scores, grad_reg)
                losses.append(breakdown)
            self.optimizer.step(scale=1.0 / len(pairs))
        except NumericError:
            logger.error("non_finite_training_step", epoch=epoch, step=step, batch_seed=list(seed), exc_info=True)
            raise
        return losses

    def train(self, epochs: Optional[int] = None) -> List[LossBreakdown]:
        """
        Run until `epochs` epochs are completed in total

        Returns:
            Per-epoch mean loss breakdowns, resumed epochs included
        """
        epochs = epochs if epochs is not None else self.config.train.epochs
        self.network.train()
        progress = tqdm(range(self.epoch, epochs), desc="epochs", unit="epoch", disable=None)
        for epoch in progress:
            samples: List[LossBreakdown] = []
            for step in range(self.config.train.steps_per_epoch):
                samples.extend(self.train_step(epoch, step))
            if not samples:
                raise SiamTrackError(f"epoch {epoch + 1} produced no training pairs")
            summary = self._summarize(samples, epoch + 1)
            self.history.append(summary)
            self.epoch = epoch + 1
            TRAINED_EPOCHS.inc()
            progress.set_postfix(total=f"{summary.total:.4f}")
            logger.info("epoch_completed", **summary.model_dump())
            if self.out_dir is not None:
                self.write_log()
                self.save()
        self.network.eval()
        return self.history

    @staticmethod
    def _summarize(samples: List[LossBreakdown], epoch: int) -> LossBreakdown:
        frame = pd.DataFrame([sample.model_dump(exclude={"epoch"}) for sample in samples])
        means = frame[["cls_loss", "bin_loss", "res_loss", "total"]].mean()
        return LossBreakdown(
            cls_loss=float(means["cls_loss"]),
            bin_loss=float(means["bin_loss"]),
            res_loss=float(means["res_loss"]),
            total=float(means["total"]),
            n_pos=int(frame["n_pos"].sum()),
            epoch=epoch,
        )

    def write_log(self) -> Path:
        path = self.out_dir / LOSS_LOG
        columns = ["epoch", "cls_loss", "bin_loss", "res_loss", "total", "n_pos"]
        pd.DataFrame([row.model_dump() for row in self.history], columns=columns).to_csv(path, index=False)
        return path

    def save(self) -> Path:
        return self.network.save(
            self.out_dir / CHECKPOINT,
            epoch=self.epoch,
            adam=self.optimizer.state,
            extra={
                "anchor_size": list(self.anchor),
                "seed": self.config.seed,
                "class_name": self.config.tracker.class_name,
            },
        )
