"""
Experiment run files.

A run file is INI text read with configparser; each section validates into
a pydantic model and the sections together form an ExperimentConfig. One
master seed ([run] seed, or --seed) derives every random stream. See
docs/CONFIG_REFERENCE.md for all keys.
"""

import configparser
import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.config import settings
from app.core.errors import InvalidRangeError
from app.core.seeds import derive_seed
from app.imaging.image import Image
from app.metrics.ssim import SsimParams, WindowKind
from app.neural.losses import LossKind
from app.neural.network import UNET_WIDTHS, Network, build_unet, build_vdsr
from app.neural.trainer import TrainConfig, TrainPreset
from app.phantoms import RockPhantomSpec, disk_phantom, rock_phantom, shepp_logan
from app.recon.config import Algorithm, RampFilter, ReconConfig
from app.tomo.exposure import ExposureModel
from app.tomo.geometry import Geometry

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    return value


class RunSection(_Section):
    seed: int = Field(default=0, ge=0)
    out: str = Field(default_factory=lambda: str(Path(settings.OUTPUT_DIR) / "desk"))
    threads: int = Field(default=0, ge=0)
    precision: str = Field(default_factory=lambda: settings.PRECISION)

    @field_validator("precision")
    @classmethod
    def check_precision(cls, v: str) -> str:
        if v not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {v!r}")
        return v


class PhantomFamily(str, Enum):
    ROCK = "rock"
    SHEPP_LOGAN = "shepp-logan"
    DISK = "disk"


class PhantomSection(_Section):
    """One phantom family plus the tiling applied to its reconstructions."""
    family: PhantomFamily = PhantomFamily.ROCK
    count: int = Field(default=40, ge=1)
    size: int = Field(default=128, ge=16)
    tile: int = Field(default=64, ge=8)
    grain_count: int = Field(default=40, ge=0)
    radius_min: float = Field(default=3.0, ge=0.0)
    radius_max: float = Field(default=10.0, ge=0.0)
    density_min: float = Field(default=0.45, ge=0.0, le=1.0)
    density_max: float = Field(default=0.95, ge=0.0, le=1.0)
    porosity: float = Field(default=0.3, ge=0.0, lt=1.0)
    texture: float = Field(default=0.04, ge=0.0)
    variant: str = "modified"
    supersample: int = Field(default=1, ge=1)
    disk_radius: float = Field(default=40.0, gt=0.0)
    disk_value: float = Field(default=1.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_tile(self) -> "PhantomSection":
        if self.tile > self.size:
            raise ValueError(f"tile {self.tile} exceeds phantom size {self.size}")
        return self

    def rock_spec(self, seed: int) -> RockPhantomSpec:
        return RockPhantomSpec(
            size=self.size,
            grain_count=self.grain_count,
            grain_radius_range=(self.radius_min, self.radius_max),
            grain_density_range=(self.density_min, self.density_max),
            porosity_target=self.porosity,
            texture_amplitude=self.texture,
            seed=seed,
        )

    def make(self, seed: int) -> Image:
        """One ground-truth phantom of this family."""
        if self.family == PhantomFamily.ROCK:
            return rock_phantom(self.rock_spec(seed))
        if self.family == PhantomFamily.SHEPP_LOGAN:
            return shepp_logan(self.size, self.variant, self.supersample)
        return disk_phantom(self.size, self.disk_radius, self.disk_value)


# Transfer-study source family: coarser, less porous rock than the target
SOURCE_DEFAULTS = {"radius_min": 6.0, "radius_max": 16.0, "porosity": 0.2}


class GeometrySection(_Section):
    n_views: int = Field(default=180, ge=2)
    # 0 = smallest even count covering the image diagonal
    n_detectors: int = Field(default=192, ge=0)
    detector_spacing: float = Field(default=1.0, gt=0.0)
    pixel_size: float = Field(default=0.03, gt=0.0)

    def geometry(self, image_size: int) -> Geometry:
        if self.n_detectors == 0:
            return Geometry.for_image(image_size, self.n_views,
                                      detector_spacing=self.detector_spacing,
                                      pixel_size=self.pixel_size)
        return Geometry(n_views=self.n_views, n_detectors=self.n_detectors,
                        detector_spacing=self.detector_spacing, image_size=image_size,
                        pixel_size=self.pixel_size)


class ExposureSection(_Section):
    i0_reference: float = Field(default=1.0e4, gt=0.0)
    reference_exposure: float = Field(default=1.4, gt=0.0)
    low: float = Field(default=0.5, gt=0.0)
    high: float = Field(default=1.4, gt=0.0)

    def model(self, level: str, seed: int) -> ExposureModel:
        exposure = self.low if level == "low" else self.high
        return ExposureModel(i0_reference=self.i0_reference,
                             reference_exposure=self.reference_exposure,
                             exposure=exposure, seed=seed)


class ReconSection(_Section):
    algorithm: Algorithm = Algorithm.FBP
    iterations: Optional[int] = Field(default=None, ge=0)
    relaxation: float = Field(default=1.0, gt=0.0, le=2.0)
    filter: RampFilter = RampFilter.RAM_LAK
    nonneg_clamp: Optional[bool] = None

    def recon_config(self, algorithm: Optional[Algorithm] = None) -> ReconConfig:
        return ReconConfig(
            algorithm=algorithm or self.algorithm,
            iterations=self.iterations,
            relaxation=self.relaxation,
            filter=self.filter,
            nonneg_clamp=self.nonneg_clamp,
        )


class NetworkPreset(str, Enum):
    VDSR = "vdsr"
    UNET = "unet"


class NetworkSection(_Section):
    preset: NetworkPreset = NetworkPreset.VDSR
    depth: int = Field(default=6, ge=2)
    width: int = Field(default=16, ge=1)
    widths: Tuple[int, ...] = UNET_WIDTHS
    residual: bool = True
    # Start from the identity map (zeroed output conv)
    identity_init: bool = True

    @field_validator("widths", mode="before")
    @classmethod
    def split_widths(cls, v: Any) -> Any:
        return _split_list(v)

    def build(self, seed: int, dtype) -> Network:
        if self.preset == NetworkPreset.UNET:
            net = build_unet(self.widths, self.residual, seed=seed, dtype=dtype)
        else:
            net = build_vdsr(self.depth, self.width, self.residual, seed=seed, dtype=dtype)
        if self.identity_init and self.residual:
            net.zero_output_layer()
        return net


class TrainSection(_Section):
    """Optimizer keys left unset come from the preset regime."""
    # None follows [network] preset: vdsr -> desk, unet -> unet
    preset: Optional[TrainPreset] = None
    loss: LossKind = LossKind.MSE
    learning_rate: Optional[float] = Field(default=None, gt=0.0)
    epochs: Optional[int] = Field(default=None, ge=0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    patch_size: Optional[int] = Field(default=None, ge=0)
    patches_per_image: Optional[int] = Field(default=None, ge=1)
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    # NNWT file to start from instead of fresh weights
    warm_start: Optional[str] = None
    warm_start_moments: bool = False


# [train] keys a preset supplies when the run file leaves them unset
PRESET_KEYS = ("learning_rate", "epochs", "batch_size", "patch_size", "patches_per_image")


class ReferenceKind(str, Enum):
    TRUTH = "truth"
    HIGH = "high"


class EvalSection(_Section):
    reference: ReferenceKind = ReferenceKind.TRUTH
    ssim_window: WindowKind = WindowKind.GAUSSIAN
    ssim_size: int = Field(default=11, ge=1)
    ssim_sigma: float = Field(default=1.5, gt=0.0)
    median_size: int = Field(default=3, ge=1)
    histogram_bins: int = Field(default=20, ge=1)

    def ssim_params(self) -> SsimParams:
        return SsimParams(window=self.ssim_window, size=self.ssim_size, sigma=self.ssim_sigma)


class StudySection(_Section):
    transfer_grid: Tuple[int, ...] = (4, 8, 16, 32)
    transfer_epochs: int = Field(default=10, ge=1)
    algorithms: Tuple[Algorithm, ...] = (Algorithm.FBP, Algorithm.SIRT, Algorithm.CGLS)
    closed_loop_network: Optional[NetworkPreset] = None
    closed_loop_train_fraction: float = Field(default=0.6, gt=0.0, lt=1.0)

    @field_validator("transfer_grid", "algorithms", mode="before")
    @classmethod
    def split_lists(cls, v: Any) -> Any:
        return _split_list(v)

    @field_validator("transfer_grid")
    @classmethod
    def check_grid(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("transfer_grid must list at least one training-set size")
        if any(n <= 0 for n in v):
            raise ValueError(f"transfer_grid sizes must be positive, got {list(v)}")
        return tuple(sorted(v))


class ExperimentConfig(_Section):
    """Everything one run needs; built from an INI file or defaults."""
    run: RunSection = RunSection()
    phantom: PhantomSection = PhantomSection()
    source: PhantomSection = PhantomSection(**SOURCE_DEFAULTS)
    geometry: GeometrySection = GeometrySection()
    exposure: ExposureSection = ExposureSection()
    recon: ReconSection = ReconSection()
    network: NetworkSection = NetworkSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    study: StudySection = StudySection()

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def dtype(self):
        return np.float64 if self.run.precision == "float64" else np.float32

    def sub_seed(self, *components) -> int:
        return derive_seed(self.run.seed, *components)

    def train_preset(self, network: Optional[NetworkPreset] = None) -> TrainPreset:
        """[train] preset, else the regime of the network being trained."""
        if self.train.preset is not None:
            return self.train.preset
        network = network or self.network.preset
        return TrainPreset.UNET if network == NetworkPreset.UNET else TrainPreset.DESK

    def train_config(self, network: Optional[NetworkPreset] = None, **overrides) -> TrainConfig:
        """
        TrainConfig for one training run.

        Starts from the preset regime, then applies the [train] keys the run
        file sets, then the caller's overrides.
        """
        t = self.train
        explicit = {k: getattr(t, k) for k in PRESET_KEYS if getattr(t, k) is not None}
        base = dict(
            loss=t.loss,
            seed=self.sub_seed("train"),
            ssim=self.eval.ssim_params(),
            prefer_truth=self.eval.reference == ReferenceKind.TRUTH,
            **explicit,
        )
        return TrainConfig.from_preset(self.train_preset(network), **{**base, **overrides})

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       threads: Optional[int] = None) -> "ExperimentConfig":
        update: Dict[str, Any] = {}
        if seed is not None:
            update["seed"] = seed
        if out is not None:
            update["out"] = str(out)
        if threads is not None:
            update["threads"] = threads
        if not update:
            return self
        return self.model_copy(update={"run": self.run.model_copy(update=update)})

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of everything except seed, output and threads."""
        payload = self.model_dump(mode="json")
        payload["run"] = {"precision": payload["run"]["precision"]}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# INI section name -> ExperimentConfig field
SECTIONS = {
    "run": "run",
    "phantom": "phantom",
    "phantom.source": "source",
    "geometry": "geometry",
    "exposure": "exposure",
    "recon": "recon",
    "network": "network",
    "train": "train",
    "eval": "eval",
    "study": "study",
}


def parse_config_text(text: str) -> ExperimentConfig:
    """INI text -> validated ExperimentConfig; blank values mean 'use the default'."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise InvalidRangeError(f"run file is not valid INI: {e}")
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise InvalidRangeError(f"unknown run file sections: {', '.join(unknown)}")

    data: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        values = {k.replace("-", "_"): v.strip() for k, v in parser.items(section)}
        data[SECTIONS[section]] = {k: v for k, v in values.items() if v != ""}
    # the source family inherits the target family keys it does not set
    data["source"] = {**data.get("phantom", {}), **SOURCE_DEFAULTS, **data.get("source", {})}
    return ExperimentConfig(**data)


def load_config(path: Optional[PathLike]) -> ExperimentConfig:
    """Read a run file; None gives the built-in desk defaults."""
    if path is None:
        logger.info("No run file given, using desk defaults")
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise InvalidRangeError(f"run file not found: {path}")
    try:
        cfg = parse_config_text(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidRangeError(f"invalid run file {path}:\n{e}")
    logger.info(f"Loaded run file {path} (config {cfg.config_hash()})")
    return cfg


def describe(cfg: ExperimentConfig) -> List[str]:
    """One line per section, for the startup banner."""
    dumped = cfg.model_dump(mode="json")
    return [f"[{name}] " + ", ".join(f"{k}={v}" for k, v in dumped[field].items())
            for name, field in SECTIONS.items()]
