"""
Training loop, presets and inference.

Each epoch draws fresh seeded patches from every training pair (or uses
whole images when patch_size is 0), shuffles them with a seeded
permutation, and runs minibatch Adam on the low -> high mapping. After
every epoch the held-out pairs are denoised and scored against their
reference (ground truth when present, else the high-exposure image).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from app.core.errors import DataError, TrainingDivergedError
from app.core.seeds import derive_seed, rng_for
from app.imaging.dataset import ImagePair, PairedDataset
from app.imaging.image import IMAGE_DTYPE, Image
from app.imaging.patches import extract_patches
from app.metrics.quality import finite_mean, format_metric, psnr
from app.metrics.ssim import SsimParams, mssim
from app.neural.losses import LossKind, compute_loss
from app.neural.network import Network, predict_array
from app.neural.optim import BETA1, BETA2, EPSILON, adam_step
from app.utils.logger import progress_enabled

logger = logging.getLogger(__name__)


class TrainPreset(str, Enum):
    """Training regimes: full-scale VDSR and U-Net, and the laptop-scale VDSR run."""
    VDSR = "vdsr"
    UNET = "unet"
    DESK = "desk"


class TrainConfig(BaseModel):
    """Optimizer and sampling settings; patch_size 0 trains on whole images."""
    model_config = ConfigDict(frozen=True)

    loss: LossKind = LossKind.MSE
    learning_rate: float = Field(default=1e-4, gt=0.0)
    epochs: int = Field(default=5, ge=0)
    batch_size: int = Field(default=32, ge=1)
    patch_size: int = Field(default=41, ge=0)
    patches_per_image: int = Field(default=128, ge=1)
    seed: int = Field(default=0, ge=0)
    beta1: float = Field(default=BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=BETA2, ge=0.0, lt=1.0)
    epsilon: float = Field(default=EPSILON, gt=0.0)
    ssim: SsimParams = SsimParams()
    prefer_truth: bool = True

    @classmethod
    def from_preset(cls, preset: "TrainPreset", **overrides) -> "TrainConfig":
        return {
            TrainPreset.VDSR: cls.vdsr_preset,
            TrainPreset.UNET: cls.unet_preset,
            TrainPreset.DESK: cls.desk_preset,
        }[TrainPreset(preset)](**overrides)

    @classmethod
    def vdsr_preset(cls, **overrides) -> "TrainConfig":
        """41x41 patches, 128 per image, 5 epochs, batch 32, lr 1e-4."""
        base = dict(learning_rate=1e-4, epochs=5, batch_size=32, patch_size=41, patches_per_image=128)
        return cls(**{**base, **overrides})

    @classmethod
    def unet_preset(cls, **overrides) -> "TrainConfig":
        """Whole tiles, 50 epochs, batch 8, lr 1e-4."""
        base = dict(learning_rate=1e-4, epochs=50, batch_size=8, patch_size=0, patches_per_image=1)
        return cls(**{**base, **overrides})

    @classmethod
    def desk_preset(cls, **overrides) -> "TrainConfig":
        """Laptop-scale VDSR run: 32 px patches, 16 per image, batch 8, 30 epochs."""
        base = dict(learning_rate=1e-4, epochs=30, batch_size=8, patch_size=32, patches_per_image=16)
        return cls(**{**base, **overrides})


HISTORY_FIELDS = ["epoch", "train_loss", "test_psnr", "test_ssim"]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: Optional[float] = None
    test_psnr: Optional[float] = None
    test_ssim: Optional[float] = None


@dataclass
class TrainingHistory:
    """Epoch 0 is the untrained network; later rows follow each epoch."""
    records: List[EpochRecord] = field(default_factory=list)

    def final(self) -> EpochRecord:
        return self.records[-1]

    def epochs_to_reach(self, ssim_target: float) -> Optional[int]:
        """First epoch whose test SSIM is at least the target."""
        for r in self.records:
            if r.test_ssim is not None and r.test_ssim >= ssim_target:
                return r.epoch
        return None

    def rows(self) -> List[dict]:
        def cell(v: Optional[float]) -> str:
            return "" if v is None else format_metric(v)

        return [{
            "epoch": r.epoch,
            "train_loss": cell(r.train_loss),
            "test_psnr": cell(r.test_psnr),
            "test_ssim": cell(r.test_ssim),
        } for r in self.records]


def predict(net: Network, img: Image) -> Image:
    """Single forward pass, output clamped to [0, 1]."""
    out = predict_array(net, img.data)
    return img.with_data(np.clip(out, 0.0, 1.0).astype(IMAGE_DTYPE))


def evaluate(net: Network, pairs: List[ImagePair], cfg: TrainConfig) -> Tuple[Optional[float], Optional[float]]:
    """Mean PSNR and SSIM of the net's outputs against each pair's reference."""
    if not pairs:
        return None, None
    psnrs, ssims = [], []
    for pair in pairs:
        out = predict(net, pair.low)
        ref = pair.reference(cfg.prefer_truth)
        psnrs.append(psnr(out, ref))
        ssims.append(mssim(out, ref, cfg.ssim))
    return finite_mean(psnrs, "test PSNR"), float(np.mean(ssims))


def _epoch_samples(data: PairedDataset, cfg: TrainConfig, epoch: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    samples = []
    for k, pair in enumerate(data.train):
        size = cfg.patch_size
        if size == 0 or size >= min(pair.low.shape):
            samples.append((pair.low.data, pair.high.data))
            continue
        seed = derive_seed(cfg.seed, "patches", epoch, k)
        for low, high in extract_patches(pair.low, pair.high, size, cfg.patches_per_image, seed):
            samples.append((low.data, high.data))
    order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(samples))
    return [samples[i] for i in order]


def _run_epoch(net: Network, samples, cfg: TrainConfig, epoch: int) -> float:
    total, count = 0.0, 0
    for start in range(0, len(samples), cfg.batch_size):
        batch = samples[start:start + cfg.batch_size]
        x = np.stack([s[0] for s in batch])[:, None].astype(net.dtype)
        y = np.stack([s[1] for s in batch])[:, None].astype(net.dtype)
        net.zero_grads()
        pred = net.forward(x)
        loss, grad = compute_loss(cfg.loss, pred, y, cfg.ssim)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at epoch {epoch}, batch {start // cfg.batch_size}; "
                f"learning rate {cfg.learning_rate:g} is probably too high"
            )
        net.backward(grad)
        net.step += 1
        adam_step(net.parameters(), net.step, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
        total += loss * len(batch)
        count += len(batch)
        logger.debug(f"epoch {epoch} batch {start // cfg.batch_size}: loss={loss:.6g}")
    net.release()
    return total / max(count, 1)


def train(net: Network, data: PairedDataset, cfg: TrainConfig) -> Tuple[Network, TrainingHistory]:
    """Minibatch Adam on low -> high pairs; returns the net and its per-epoch history."""
    if not data.train_idx:
        raise DataError("training set is empty")
    history = TrainingHistory()
    test = data.test
    if not test:
        logger.warning("No test pairs; history will hold training loss only")

    psnr0, ssim0 = evaluate(net, test, cfg)
    history.records.append(EpochRecord(0, None, psnr0, ssim0))

    epochs = range(1, cfg.epochs + 1)
    bar = tqdm(epochs, desc=f"train {net.topology.kind.name.lower()}", unit="epoch",
               disable=not progress_enabled(), leave=False)
    for epoch in bar:
        samples = _epoch_samples(data, cfg, epoch)
        loss = _run_epoch(net, samples, cfg, epoch)
        test_psnr, test_ssim = evaluate(net, test, cfg)
        history.records.append(EpochRecord(epoch, loss, test_psnr, test_ssim))
        summary = f"epoch {epoch}/{cfg.epochs}: loss={loss:.6g}"
        if test_ssim is not None:
            summary += f" test PSNR={test_psnr:.2f} dB SSIM={test_ssim:.4f}"
        logger.info(summary)
        bar.set_postfix(loss=f"{loss:.4g}")
    return net, history
