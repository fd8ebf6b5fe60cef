"""
Experiment commands.

Each command is a pure function of its ExperimentConfig: the master seed
feeds every random stream through derive_seed, and nothing time- or
host-dependent reaches the artifacts, so reruns reproduce them byte for
byte. Output layout under the run directory:

    dataset/   truth|low|high/<id>.imgf, manifest.csv, sinograms/*.sinf, preview/*.pgm
    train/     weights.nnwt, history.csv
    eval/      metrics.csv, baseline_median.csv, summary.csv, denoised/<id>.imgf|.pgm
    transfer/  source.nnwt, transfer_curve.csv, history_<arm>_<n>.csv
    loss/      metrics_<loss>.csv, histogram.csv, summary.csv, history_<loss>.csv
    closed_loop/  validation.csv, summary.csv, history.csv
    recon_study/  metrics.csv, summary.csv, residuals_<algorithm>_<phantom>.csv
"""

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from app.core.errors import DataError, InvalidRangeError, OutputLockedError
from app.imaging.dataset import ImagePair, PairedDataset, pair_dataset
from app.imaging.image import Image, normalize, percentile_bounds, tile
from app.imaging.io import read_imgf, write_imgf, write_pgm
from app.metrics.quality import finite_mean, porosity, psnr
from app.metrics.ssim import mssim
from app.neural.losses import LossKind
from app.neural.network import Network
from app.neural.trainer import HISTORY_FIELDS, TrainingHistory, predict, train
from app.neural.weights import load_weights, save_weights, warm_start
from app.pipeline.config import ExperimentConfig, PhantomSection
from app.pipeline.reports import (
    HISTOGRAM_FIELDS,
    METRIC_FIELDS,
    SUMMARY_FIELDS,
    MetricRow,
    Provenance,
    histogram_rows,
    metric_rows_as_dicts,
    read_csv,
    summarize,
    write_csv,
)
from app.recon import RESIDUAL_FIELDS, Algorithm, find_semiconvergence, reconstruct
from app.tomo.exposure import apply_exposure, counts_to_attenuation
from app.tomo.geometry import Geometry
from app.tomo.projector import forward_project
from app.tomo.sinogram import Sinogram, write_sinf
from app.utils.logger import progress_enabled

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"
MANIFEST_FIELDS = ["image_id", "phantom", "tile_row", "tile_col", "norm_lo", "norm_hi"]
SERIES = ("truth", "low", "high")
LEVELS = ("low", "high")


# ── Run directory ────────────────────────────────────────────────────

@contextmanager
def output_lock(out: Path) -> Iterator[Path]:
    """Exclusive lock file in the output directory for the duration of a command."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLockedError(f"{out} is in use by another command (remove {lock} if stale)")
    except OSError as e:
        raise InvalidRangeError(f"output directory {out} is not writable: {e}")
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def provenance(cfg: ExperimentConfig) -> Provenance:
    return Provenance(seed=cfg.seed, config_hash=cfg.config_hash())


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.run.out)


def _bar(items, desc: str):
    return tqdm(items, desc=desc, disable=not progress_enabled(), leave=False)


# ── Simulation ───────────────────────────────────────────────────────

@dataclass
class Series:
    """Matched truth/low/high tiles of one phantom family, normalized together."""
    ids: List[str] = field(default_factory=list)
    truth: List[Image] = field(default_factory=list)
    low: List[Image] = field(default_factory=list)
    high: List[Image] = field(default_factory=list)
    manifest: List[Dict] = field(default_factory=list)
    bounds: Tuple[float, float] = (0.0, 1.0)
    # attenuation sinograms of the first source image, per exposure level
    sinograms: Dict[str, Sinogram] = field(default_factory=dict)

    def dataset(self, train_fraction: float, seed: int) -> PairedDataset:
        return pair_dataset(self.low, self.high, self.truth, train_fraction, seed, self.ids)


def simulate_pair(truth: Image, geo: Geometry, cfg: ExperimentConfig, tag: str, index: int,
                  algorithm: Optional[Algorithm] = None) -> Tuple[Dict[str, Image], Dict[str, Sinogram]]:
    """Project, expose at both levels, and reconstruct one ground-truth image."""
    sino = forward_project(truth, geo)
    recon_cfg = cfg.recon.recon_config(algorithm)
    images, sinos = {}, {}
    for level in LEVELS:
        model = cfg.exposure.model(level, cfg.sub_seed("noise", tag, level, index))
        att = counts_to_attenuation(apply_exposure(sino, model), model)
        images[level] = reconstruct(att, recon_cfg).image
        sinos[level] = att
    return images, sinos


def simulate_series(truths: Sequence[Image], cfg: ExperimentConfig, tag: str,
                    tile_size: Optional[int] = None,
                    algorithm: Optional[Algorithm] = None) -> Series:
    """
    Low/high reconstructions of every truth image, normalized with bounds
    from the pooled high series, then optionally tiled.
    """
    if not truths:
        raise DataError(f"no ground-truth images for series '{tag}'")
    geo = cfg.geometry.geometry(truths[0].height)
    lows, highs = [], []
    first_sinos: Dict[str, Sinogram] = {}
    for i, truth in enumerate(_bar(truths, f"simulate {tag}")):
        images, sinos = simulate_pair(truth, geo, cfg, tag, i, algorithm)
        lows.append(images["low"])
        highs.append(images["high"])
        if i == 0:
            first_sinos = sinos

    lo, hi = percentile_bounds(highs)
    series = Series(bounds=(lo, hi), sinograms=first_sinos)
    for i, (t, l, h) in enumerate(zip(truths, lows, highs)):
        t, l, h = (normalize(img, lo, hi) for img in (t, l, h))
        if tile_size:
            parts = list(zip(tile(t, tile_size), tile(l, tile_size), tile(h, tile_size)))
        else:
            parts = [(t, l, h)]
        for k, (tt, lt, ht) in enumerate(parts):
            image_id = f"{tag}-{i:04d}-{k:02d}"
            series.ids.append(image_id)
            series.truth.append(tt)
            series.low.append(lt)
            series.high.append(ht)
            series.manifest.append({
                "image_id": image_id,
                "phantom": i,
                "tile_row": tt.origin[0],
                "tile_col": tt.origin[1],
                "norm_lo": lo,
                "norm_hi": hi,
            })
    logger.info(
        f"Series '{tag}': {len(truths)} images -> {len(series.ids)} samples, "
        f"normalization [{lo:.4f}, {hi:.4f}]"
    )
    return series


def build_series(section: PhantomSection, cfg: ExperimentConfig, tag: str) -> Series:
    """Generate phantoms of one family and simulate their scans."""
    truths = [section.make(cfg.sub_seed("phantom", tag, i))
              for i in _bar(range(section.count), f"phantoms {tag}")]
    return simulate_series(truths, cfg, tag, section.tile)


# ── Dataset on disk ──────────────────────────────────────────────────

def write_series(series: Series, root: Path, prov: Provenance) -> None:
    for name in SERIES:
        for image_id, img in zip(series.ids, getattr(series, name)):
            write_imgf(root / name / f"{image_id}.imgf", img)
    write_csv(root / "manifest.csv", MANIFEST_FIELDS, series.manifest, prov)
    for level, sino in series.sinograms.items():
        write_sinf(root / "sinograms" / f"{level}_{series.ids[0].rsplit('-', 1)[0]}.sinf", sino)
    for name in SERIES:
        write_pgm(root / "preview" / f"{name}_{series.ids[0]}.pgm", getattr(series, name)[0])


def load_dataset(cfg: ExperimentConfig) -> PairedDataset:
    """Read dataset/ written by generate and split it with the run's seed."""
    root = run_dir(cfg) / "dataset"
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"no dataset at {root}; run 'generate' first")
    ids = [row["image_id"] for row in read_csv(manifest)]
    series = {name: [read_imgf(root / name / f"{i}.imgf") for i in ids] for name in SERIES}
    return pair_dataset(series["low"], series["high"], series["truth"],
                        cfg.train.train_fraction, cfg.sub_seed("split"), ids)


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Ground truth plus low/high exposure reconstructions, tiled and normalized."""
    out = run_dir(cfg)
    with output_lock(out):
        series = build_series(cfg.phantom, cfg, "target")
        root = out / "dataset"
        write_series(series, root, provenance(cfg))
    logger.info(f"Dataset written to {root} ({len(series.ids)} samples)")
    return root


# ── Training and evaluation ──────────────────────────────────────────

def fresh_network(cfg: ExperimentConfig, component: str = "init",
                  preset=None) -> Network:
    section = cfg.network if preset is None else cfg.network.model_copy(update={"preset": preset})
    return section.build(cfg.sub_seed(component), cfg.dtype)


def write_history(history: TrainingHistory, path: Path, prov: Provenance) -> Path:
    return write_csv(path, HISTORY_FIELDS, history.rows(), prov)


def cmd_train(cfg: ExperimentConfig) -> Path:
    """Train the configured network; writes train/weights.nnwt and train/history.csv."""
    data = load_dataset(cfg)
    net = fresh_network(cfg)
    if cfg.train.warm_start:
        warm_start(net, cfg.train.warm_start, cfg.train.warm_start_moments)
    out = run_dir(cfg)
    with output_lock(out):
        net, history = train(net, data, cfg.train_config())
        weights = save_weights(net, out / "train" / "weights.nnwt")
        write_history(history, out / "train" / "history.csv", provenance(cfg))
    return weights


def score(pairs: Sequence[ImagePair], outputs: Sequence[Image], prefer_truth: bool,
          cfg: ExperimentConfig) -> List[MetricRow]:
    """Before (noisy input) and after (restored) quality of every pair."""
    params = cfg.eval.ssim_params()
    rows = []
    for pair, out in zip(pairs, outputs):
        ref = pair.reference(prefer_truth)
        rows.append(MetricRow(
            image_id=pair.image_id,
            psnr_before=psnr(pair.low, ref),
            psnr_after=psnr(out, ref),
            ssim_before=mssim(pair.low, ref, params),
            ssim_after=mssim(out, ref, params),
            porosity_reference=porosity(ref),
            porosity_before=porosity(pair.low),
            porosity_after=porosity(out),
        ))
    return rows


def median_baseline(img: Image, size: int) -> Image:
    """Conventional denoiser for comparison with the learned one."""
    return img.with_data(ndimage.median_filter(img.data, size=size, mode="reflect"))


def _weights_path(cfg: ExperimentConfig, weights: Optional[Path]) -> Path:
    path = Path(weights) if weights else run_dir(cfg) / "train" / "weights.nnwt"
    if not path.is_file():
        raise DataError(f"weights file not found: {path}; run 'train' first or pass --weights")
    return path


def cmd_eval(cfg: ExperimentConfig, weights: Optional[Path] = None) -> Path:
    """Denoise the test split and report before/after metrics for the net and a median filter."""
    data = load_dataset(cfg)
    net = load_weights(_weights_path(cfg, weights), dtype=cfg.dtype)
    test = data.test
    if not test:
        raise DataError("test split is empty; lower [train] train_fraction")
    prefer_truth = cfg.train_config().prefer_truth
    out = run_dir(cfg)
    prov = provenance(cfg)
    with output_lock(out):
        outputs = [predict(net, pair.low) for pair in _bar(test, "denoise")]
        baseline = [median_baseline(pair.low, cfg.eval.median_size) for pair in test]
        rows = score(test, outputs, prefer_truth, cfg)
        base_rows = score(test, baseline, prefer_truth, cfg)
        root = out / "eval"
        for pair, img in zip(test, outputs):
            write_imgf(root / "denoised" / f"{pair.image_id}.imgf", img)
            write_pgm(root / "denoised" / f"{pair.image_id}.pgm", img)
        write_csv(root / "metrics.csv", METRIC_FIELDS, metric_rows_as_dicts(rows), prov)
        write_csv(root / "baseline_median.csv", METRIC_FIELDS, metric_rows_as_dicts(base_rows), prov)
        summaries = [summarize(rows, "network"), summarize(base_rows, f"median{cfg.eval.median_size}")]
        write_csv(root / "summary.csv", SUMMARY_FIELDS, summaries, prov)
    net_summary = summaries[0]
    logger.info(
        f"Eval on {len(test)} images: PSNR {net_summary['mean_psnr_before']:.2f} -> "
        f"{net_summary['mean_psnr_after']:.2f} dB, SSIM {net_summary['mean_ssim_before']:.4f} -> "
        f"{net_summary['mean_ssim_after']:.4f}"
    )
    return root / "metrics.csv"


# ── Studies ──────────────────────────────────────────────────────────

TRANSFER_FIELDS = ["n_train", "arm", "mean_ssim", "mean_psnr", "epochs", "epochs_to_scratch_final"]


def cmd_transfer_study(cfg: ExperimentConfig) -> Path:
    """
    Scratch vs warm-start training on growing target subsets.

    The warm-start arm starts from a network trained on the source phantom
    family; both arms share the initial seed and the target test split.
    """
    grid = cfg.study.transfer_grid
    if not grid:
        raise InvalidRangeError("transfer study needs a non-empty training-size grid")
    target = build_series(cfg.phantom, cfg, "target").dataset(cfg.train.train_fraction, cfg.sub_seed("split"))
    if grid[-1] > len(target.train_idx):
        raise InvalidRangeError(
            f"transfer grid asks for {grid[-1]} training images, target series has {len(target.train_idx)}"
        )
    source_series = build_series(cfg.source, cfg, "source")
    source = source_series.dataset(cfg.train.train_fraction, cfg.sub_seed("split-source"))

    out = run_dir(cfg)
    prov = provenance(cfg)
    rows = []
    with output_lock(out):
        root = out / "transfer"
        pretrained, _ = train(fresh_network(cfg), source, cfg.train_config())
        source_weights = save_weights(pretrained, root / "source.nnwt")

        tcfg = cfg.train_config(epochs=cfg.study.transfer_epochs)
        for n in grid:
            subset = target.subset_train(n)
            _, scratch = train(fresh_network(cfg), subset, tcfg)
            warm_net = warm_start(fresh_network(cfg), source_weights)
            _, warm = train(warm_net, subset, tcfg)
            scratch_final = scratch.final().test_ssim
            for arm, history in (("scratch", scratch), ("warm", warm)):
                write_history(history, root / f"history_{arm}_{n}.csv", prov)
                rows.append({
                    "n_train": n,
                    "arm": arm,
                    "mean_ssim": history.final().test_ssim,
                    "mean_psnr": history.final().test_psnr,
                    "epochs": tcfg.epochs,
                    "epochs_to_scratch_final": history.epochs_to_reach(scratch_final)
                    if scratch_final is not None else None,
                })
            logger.info(
                f"Transfer n={n}: scratch SSIM={scratch_final:.4f}, warm SSIM={warm.final().test_ssim:.4f}"
            )
        path = write_csv(root / "transfer_curve.csv", TRANSFER_FIELDS, rows, prov)
    return path


def cmd_loss_study(cfg: ExperimentConfig) -> Path:
    """One network per loss from the same initial weights; metric rows and histograms per arm."""
    data = load_dataset(cfg)
    test = data.test
    if not test:
        raise DataError("test split is empty; lower [train] train_fraction")
    out = run_dir(cfg)
    prov = provenance(cfg)
    arms: Dict[str, List[MetricRow]] = {}
    with output_lock(out):
        root = out / "loss"
        for loss in (LossKind.MSE, LossKind.SSIM):
            tcfg = cfg.train_config(loss=loss)
            net, history = train(fresh_network(cfg), data, tcfg)
            outputs = [predict(net, pair.low) for pair in test]
            arms[loss.value] = score(test, outputs, tcfg.prefer_truth, cfg)
            write_csv(root / f"metrics_{loss.value}.csv", METRIC_FIELDS, metric_rows_as_dicts(arms[loss.value]), prov)
            write_history(history, root / f"history_{loss.value}.csv", prov)

        hist = []
        bins = cfg.eval.histogram_bins
        for metric in ("psnr", "ssim"):
            pooled = [getattr(r, f"{metric}_{when}") for rows in arms.values() for r in rows
                      for when in ("before", "after")]
            finite = [v for v in pooled if np.isfinite(v)]
            value_range = (min(finite), max(finite)) if finite else None
            if value_range and value_range[0] == value_range[1]:
                value_range = (value_range[0] - 0.5, value_range[1] + 0.5)
            for arm, rows in arms.items():
                for when in ("before", "after"):
                    hist.extend(histogram_rows([getattr(r, f"{metric}_{when}") for r in rows],
                                               bins, arm, metric, when, value_range))
        write_csv(root / "histogram.csv", HISTOGRAM_FIELDS, hist, prov)
        write_csv(root / "summary.csv", SUMMARY_FIELDS, [summarize(rows, arm) for arm, rows in arms.items()], prov)
    return root / "summary.csv"


CLOSED_LOOP_FIELDS = ["image_id", "ssim_low", "ssim_high", "ssim_net", "psnr_low", "psnr_high", "psnr_net"]
CLOSED_LOOP_SUMMARY_FIELDS = ["images", "mean_ssim_low", "mean_ssim_high", "mean_ssim_net",
                              "mean_psnr_low", "mean_psnr_high", "mean_psnr_net"]


def cmd_closed_loop(cfg: ExperimentConfig, weights: Optional[Path] = None) -> Path:
    """
    Validation with known truth: the trained net's outputs become ground
    truth, are rescanned at both exposures and reconstructed by FBP, and a
    fresh network trained low -> high is scored against that truth.
    """
    data = load_dataset(cfg)
    net = load_weights(_weights_path(cfg, weights), dtype=cfg.dtype)
    truths = [predict(net, pair.low) for pair in _bar(data.pairs, "denoise")]
    truths = [Image(t.data) for t in truths]
    series = simulate_series(truths, cfg, "closed-loop", algorithm=Algorithm.FBP)
    dataset = series.dataset(cfg.study.closed_loop_train_fraction, cfg.sub_seed("split-closed-loop"))
    if not dataset.test:
        raise DataError("closed-loop test split is empty")

    out = run_dir(cfg)
    prov = provenance(cfg)
    params = cfg.eval.ssim_params()
    with output_lock(out):
        root = out / "closed_loop"
        fresh = fresh_network(cfg, "init-closed-loop", cfg.study.closed_loop_network)
        tcfg = cfg.train_config(cfg.study.closed_loop_network, prefer_truth=True)
        fresh, history = train(fresh, dataset, tcfg)
        write_history(history, root / "history.csv", prov)
        rows = []
        for pair in dataset.test:
            restored = predict(fresh, pair.low)
            rows.append({
                "image_id": pair.image_id,
                "ssim_low": mssim(pair.low, pair.truth, params),
                "ssim_high": mssim(pair.high, pair.truth, params),
                "ssim_net": mssim(restored, pair.truth, params),
                "psnr_low": psnr(pair.low, pair.truth),
                "psnr_high": psnr(pair.high, pair.truth),
                "psnr_net": psnr(restored, pair.truth),
            })
        write_csv(root / "validation.csv", CLOSED_LOOP_FIELDS, rows, prov)
        summary = {"images": len(rows)}
        for key in ("ssim_low", "ssim_high", "ssim_net", "psnr_low", "psnr_high", "psnr_net"):
            summary[f"mean_{key}"] = finite_mean((r[key] for r in rows), key)
        write_csv(root / "summary.csv", CLOSED_LOOP_SUMMARY_FIELDS, [summary], prov)
    logger.info(
        f"Closed loop on {len(rows)} images: SSIM low={summary['mean_ssim_low']:.4f} "
        f"high={summary['mean_ssim_high']:.4f} net={summary['mean_ssim_net']:.4f}"
    )
    return root / "summary.csv"


RECON_FIELDS = ["phantom", "algorithm", "iterations", "psnr", "ssim", "rmse", "best_iteration"]
RECON_SUMMARY_FIELDS = ["algorithm", "images", "mean_psnr", "mean_ssim", "mean_rmse"]

# Phantoms reconstructed by recon-study
RECON_STUDY_PHANTOMS = 4


def cmd_recon_study(cfg: ExperimentConfig) -> Path:
    """FBP vs SIRT vs CGLS on the same low-exposure sinograms, scored against truth."""
    section = cfg.phantom
    count = min(section.count, RECON_STUDY_PHANTOMS)
    geo = cfg.geometry.geometry(section.size)
    out = run_dir(cfg)
    prov = provenance(cfg)
    params = cfg.eval.ssim_params()
    rows = []
    with output_lock(out):
        root = out / "recon_study"
        for i in _bar(range(count), "recon study"):
            truth = section.make(cfg.sub_seed("phantom", "target", i))
            model = cfg.exposure.model("low", cfg.sub_seed("noise", "target", "low", i))
            att = counts_to_attenuation(apply_exposure(forward_project(truth, geo), model), model)
            for algorithm in cfg.study.algorithms:
                recon_cfg = cfg.recon.recon_config(algorithm)
                result = reconstruct(att, recon_cfg, truth=truth)
                img = normalize(result.image, 0.0, 1.0)
                best = None
                if result.log.entries:
                    write_csv(root / f"residuals_{algorithm.value}_{i:04d}.csv", RESIDUAL_FIELDS,
                              result.log.rows(), prov)
                    best = find_semiconvergence(result.log)
                diff = result.image.data.astype(np.float64) - truth.data.astype(np.float64)
                rows.append({
                    "phantom": i,
                    "algorithm": algorithm.value,
                    "iterations": recon_cfg.iterations,
                    "psnr": psnr(img, truth),
                    "ssim": mssim(img, truth, params),
                    "rmse": float(np.sqrt(np.mean(diff * diff))),
                    "best_iteration": best,
                })
        write_csv(root / "metrics.csv", RECON_FIELDS, rows, prov)
        summary = []
        for algorithm in cfg.study.algorithms:
            mine = [r for r in rows if r["algorithm"] == algorithm.value]
            summary.append({
                "algorithm": algorithm.value,
                "images": len(mine),
                "mean_psnr": finite_mean((r["psnr"] for r in mine), f"{algorithm.value} PSNR"),
                "mean_ssim": float(np.mean([r["ssim"] for r in mine])),
                "mean_rmse": float(np.mean([r["rmse"] for r in mine])),
            })
            logger.info(
                f"{algorithm.value.upper()}: PSNR={summary[-1]['mean_psnr']:.2f} dB "
                f"SSIM={summary[-1]['mean_ssim']:.4f}"
            )
        write_csv(root / "summary.csv", RECON_SUMMARY_FIELDS, summary, prov)
    return root / "summary.csv"
