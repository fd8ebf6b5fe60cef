"""
Run files, CSV reports, experiment commands and the CLI.
"""

import logging
import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.config import Settings
from app.core.errors import DataError, InvalidRangeError, OutputLockedError
from app.core.parallel import set_workers
from app.pipeline.cli import EXIT_INVALID, EXIT_OK, main
from app.pipeline.commands import (
    LOCK_NAME,
    MANIFEST_FIELDS,
    cmd_closed_loop,
    cmd_eval,
    cmd_generate,
    cmd_loss_study,
    cmd_recon_study,
    cmd_train,
    cmd_transfer_study,
    load_dataset,
    output_lock,
)
from app.neural.trainer import TrainPreset
from app.pipeline.config import ExperimentConfig, NetworkPreset, load_config, parse_config_text
from app.pipeline.reports import Provenance, histogram_rows, read_csv, write_csv
from app.utils.logger import PrettyFormatter
from tests.conftest import TINY_RUN_FILE


def tree_bytes(root: Path) -> dict:
    """Relative path -> content of every file under root, lock file excluded."""
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != LOCK_NAME}


# ---------------------------------------------------------------------------
# Run files
# ---------------------------------------------------------------------------

class TestRunFile:

    def test_defaults_are_desk_scale(self):
        cfg = ExperimentConfig()
        assert (cfg.network.depth, cfg.network.width) == (6, 16)
        tcfg = cfg.train_config()
        assert (tcfg.epochs, tcfg.batch_size, tcfg.patch_size) == (30, 8, 32)
        assert cfg.exposure.high / cfg.exposure.low == pytest.approx(2.8)

    def test_tiny_file(self, tiny_config):
        assert tiny_config.seed == 11
        assert tiny_config.study.transfer_grid == (1, 2)
        assert [a.value for a in tiny_config.study.algorithms] == ["fbp", "cgls"]
        assert tiny_config.network.depth == 3

    def test_blank_value_keeps_default(self):
        cfg = parse_config_text("[train]\nepochs =\nbatch_size = 4\n")
        assert cfg.train.epochs is None
        assert cfg.train_config().epochs == 30
        assert cfg.train_config().batch_size == 4

    def test_unknown_section(self):
        with pytest.raises(InvalidRangeError):
            parse_config_text("[trian]\nepochs = 1\n")

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            parse_config_text("[train]\nepoch = 1\n")

    def test_source_inherits_target_family(self):
        cfg = parse_config_text("[phantom]\nsize = 64\ntile = 32\n\n[phantom.source]\nporosity = 0.1\n")
        assert cfg.source.size == 64
        assert cfg.source.tile == 32
        assert cfg.source.porosity == 0.1
        assert cfg.source.radius_min == 6.0

    def test_tile_must_fit(self):
        with pytest.raises(ValidationError):
            parse_config_text("[phantom]\nsize = 32\ntile = 64\n")

    def test_hash_ignores_seed_out_and_threads(self, tiny_config):
        moved = tiny_config.with_overrides(seed=99, out="elsewhere", threads=3)
        assert moved.seed == 99
        assert moved.config_hash() == tiny_config.config_hash()
        changed = parse_config_text(TINY_RUN_FILE.replace("epochs = 1", "epochs = 2"))
        assert changed.config_hash() != tiny_config.config_hash()

    def test_load_config_reports_bad_values(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nlearning_rate = -1\n")
        with pytest.raises(InvalidRangeError):
            load_config(path)

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(InvalidRangeError):
            load_config(tmp_path / "nope.ini")

    def test_shipped_desk_file(self):
        cfg = load_config(Path(__file__).parents[1] / "configs" / "desk.ini")
        assert cfg.phantom.count == 13
        assert cfg.study.transfer_grid == (4, 8, 16, 32)
        assert cfg.source.size == cfg.phantom.size
        assert cfg.network == ExperimentConfig().network

    def test_load_config_none_gives_defaults(self):
        assert load_config(None) == ExperimentConfig()

    def test_sub_seeds_differ_by_component(self, tiny_config):
        assert tiny_config.sub_seed("split") != tiny_config.sub_seed("train")
        assert tiny_config.sub_seed("split") == tiny_config.with_overrides(out="x").sub_seed("split")

    def test_train_preset_follows_network(self):
        cfg = parse_config_text("[network]\npreset = unet\n")
        assert cfg.train_preset() == TrainPreset.UNET
        assert cfg.train_config().patch_size == 0
        assert cfg.train_config().epochs == 50
        assert ExperimentConfig().train_preset() == TrainPreset.DESK

    def test_explicit_keys_override_preset(self):
        cfg = parse_config_text("[train]\npreset = vdsr\nepochs = 2\n")
        tcfg = cfg.train_config()
        assert (tcfg.epochs, tcfg.patch_size, tcfg.patches_per_image, tcfg.batch_size) == (2, 41, 128, 32)

    def test_preset_for_another_network(self, tiny_config):
        tcfg = ExperimentConfig().train_config(NetworkPreset.UNET, prefer_truth=True)
        assert tcfg.patch_size == 0
        # keys set in the run file still win
        assert tiny_config.train_config(NetworkPreset.UNET).patch_size == 8

    def test_unknown_preset(self):
        with pytest.raises(ValidationError):
            parse_config_text("[train]\npreset = huge\n")


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------

class TestSettings:

    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("THREADS", "3")
        monkeypatch.setenv("PRECISION", "float64")
        s = Settings()
        assert (s.THREADS, s.PRECISION) == (3, "float64")

    def test_reads_env_file_and_ignores_unknown_keys(self, tmp_path, monkeypatch):
        monkeypatch.delenv("OUTPUT_DIR", raising=False)
        monkeypatch.chdir(tmp_path)
        (tmp_path / ".env").write_text("OUTPUT_DIR=elsewhere\nUNRELATED_KEY=x\n")
        assert Settings().OUTPUT_DIR == "elsewhere"

    def test_rejects_bad_precision(self, monkeypatch):
        monkeypatch.setenv("PRECISION", "float16")
        with pytest.raises(ValidationError):
            Settings()


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class TestReports:

    def test_provenance_columns_first(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["name", "value"],
                         [{"name": "a", "value": 0.5}, {"name": "b", "value": math.inf}],
                         Provenance(seed=7, config_hash="abc"))
        lines = path.read_text().splitlines()
        assert lines == ["seed,config_hash,name,value", "7,abc,a,0.500000", "7,abc,b,inf"]

    def test_missing_cells_are_blank(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [{"a": 1}], Provenance(0, "h"))
        assert read_csv(path) == [{"seed": "0", "config_hash": "h", "a": "1", "b": ""}]

    def test_histogram_skips_infinities(self):
        rows = histogram_rows([0.1, 0.2, math.inf, 0.3], 2, "mse", "psnr", "after")
        assert len(rows) == 2
        assert sum(r["count"] for r in rows) == 3
        assert rows[0]["bin_lo"] == pytest.approx(0.1)
        assert rows[-1]["bin_hi"] == pytest.approx(0.3)

    def test_histogram_of_nothing(self):
        assert histogram_rows([math.inf], 4, "mse", "psnr", "after") == []


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

class TestLogging:

    def test_formatter_uses_module_alias(self):
        record = logging.LogRecord("app.recon.fbp", logging.INFO, __file__, 1, "filtered %d views", (180,), None)
        line = PrettyFormatter().format(record)
        assert "fbp" in line
        assert "filtered 180 views" in line
        assert "app.recon.fbp" not in line

    def test_unknown_module_falls_back_to_last_segment(self):
        record = logging.LogRecord("app.some.thing", logging.WARNING, __file__, 1, "odd", None, None)
        assert "thing" in PrettyFormatter().format(record)


# ---------------------------------------------------------------------------
# Output lock
# ---------------------------------------------------------------------------

class TestOutputLock:

    def test_second_holder_is_refused(self, tmp_path):
        with output_lock(tmp_path):
            assert (tmp_path / LOCK_NAME).exists()
            with pytest.raises(OutputLockedError):
                with output_lock(tmp_path):
                    pass
        assert not (tmp_path / LOCK_NAME).exists()

    def test_stale_lock_blocks_generate(self, tiny_config):
        out = Path(tiny_config.run.out)
        out.mkdir(parents=True)
        (out / LOCK_NAME).write_text("123")
        with pytest.raises(OutputLockedError):
            cmd_generate(tiny_config)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """Tiny run with dataset and weights already produced."""
    cfg = parse_config_text(TINY_RUN_FILE).with_overrides(out=str(tmp_path_factory.mktemp("trained")))
    set_workers(1)
    cmd_generate(cfg)
    cmd_train(cfg)
    return cfg


class TestGenerate:

    def test_layout(self, trained_run):
        root = Path(trained_run.run.out) / "dataset"
        manifest = read_csv(root / "manifest.csv")
        # 3 phantoms of 32 px in 16 px tiles
        assert len(manifest) == 12
        assert list(manifest[0])[2:] == MANIFEST_FIELDS
        for series in ("truth", "low", "high"):
            assert len(list((root / series).glob("*.imgf"))) == 12
        assert len(list((root / "sinograms").glob("*.sinf"))) == 2
        assert len(list((root / "preview").glob("*.pgm"))) == 3

    def test_one_normalization_for_the_series(self, trained_run):
        manifest = read_csv(Path(trained_run.run.out) / "dataset" / "manifest.csv")
        assert len({(r["norm_lo"], r["norm_hi"]) for r in manifest}) == 1

    def test_dataset_reload_and_split(self, trained_run):
        data = load_dataset(trained_run)
        assert len(data) == 12
        assert len(data.train_idx) == 6
        assert not set(data.train_idx) & set(data.test_idx)
        pair = data.pairs[0]
        assert pair.low.shape == pair.high.shape == pair.truth.shape == (16, 16)

    def test_low_exposure_noisier_on_every_phantom(self, trained_run):
        data = load_dataset(trained_run)
        flat_residuals = {}
        for pair in data.pairs:
            truth = pair.truth.data.astype(np.float64)
            gy, gx = np.gradient(truth)
            flat = (gx == 0) & (gy == 0)
            phantom = pair.image_id.rsplit("-", 1)[0]
            low, high = flat_residuals.setdefault(phantom, ([], []))
            low.extend((pair.low.data - truth)[flat])
            high.extend((pair.high.data - truth)[flat])
        assert len(flat_residuals) == 3
        for low, high in flat_residuals.values():
            assert np.std(low) > np.std(high)

    def test_missing_dataset(self, tiny_config):
        with pytest.raises(DataError):
            load_dataset(tiny_config)

    def test_rerun_is_byte_identical_across_threads(self, tmp_path):
        base = parse_config_text(TINY_RUN_FILE)
        set_workers(1)
        cmd_generate(base.with_overrides(out=str(tmp_path / "a")))
        set_workers(3)
        cmd_generate(base.with_overrides(out=str(tmp_path / "b")))
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_changes_dataset(self, tmp_path):
        base = parse_config_text(TINY_RUN_FILE)
        cmd_generate(base.with_overrides(out=str(tmp_path / "a")))
        cmd_generate(base.with_overrides(out=str(tmp_path / "b"), seed=12))
        a = tree_bytes(tmp_path / "a" / "dataset" / "low")
        b = tree_bytes(tmp_path / "b" / "dataset" / "low")
        assert a.keys() == b.keys()
        assert a != b


class TestTrainAndEval:

    def test_train_outputs(self, trained_run):
        root = Path(trained_run.run.out) / "train"
        assert (root / "weights.nnwt").read_bytes()[:4] == b"NNWT"
        history = read_csv(root / "history.csv")
        assert [r["epoch"] for r in history] == ["0", "1"]
        assert history[0]["train_loss"] == ""

    def test_eval_outputs(self, trained_run):
        path = cmd_eval(trained_run)
        rows = read_csv(path)
        assert len(rows) == 6
        assert all(r["config_hash"] == trained_run.config_hash() for r in rows)
        summary = read_csv(path.parent / "summary.csv")
        assert [r["arm"] for r in summary] == ["network", "median3"]
        assert len(read_csv(path.parent / "baseline_median.csv")) == 6
        assert len(list((path.parent / "denoised").glob("*.pgm"))) == 6

    def test_eval_without_weights(self, tmp_path):
        cfg = parse_config_text(TINY_RUN_FILE).with_overrides(out=str(tmp_path))
        cmd_generate(cfg)
        with pytest.raises(DataError):
            cmd_eval(cfg)

    def test_loss_study(self, trained_run):
        path = cmd_loss_study(trained_run)
        summary = read_csv(path)
        assert [r["arm"] for r in summary] == ["mse", "ssim"]
        hist = read_csv(path.parent / "histogram.csv")
        assert {r["arm"] for r in hist} == {"mse", "ssim"}
        # 2 arms x 2 metrics x before/after, one row per bin
        assert len(hist) == 8 * trained_run.eval.histogram_bins

    def test_closed_loop(self, trained_run):
        path = cmd_closed_loop(trained_run)
        summary = read_csv(path)[0]
        validation = read_csv(path.parent / "validation.csv")
        assert int(summary["images"]) == len(validation) > 0
        for row in validation:
            assert -1.0 <= float(row["ssim_net"]) <= 1.0 + 1e-9


class TestStudies:

    def test_transfer_study(self, tiny_config):
        path = cmd_transfer_study(tiny_config)
        rows = read_csv(path)
        assert [(r["n_train"], r["arm"]) for r in rows] == [
            ("1", "scratch"), ("1", "warm"), ("2", "scratch"), ("2", "warm")]
        root = path.parent
        assert (root / "source.nnwt").is_file()
        assert (root / "history_warm_2.csv").is_file()
        # scratch reaches its own final SSIM by its final epoch at the latest
        for r in rows:
            if r["arm"] == "scratch":
                assert r["epochs_to_scratch_final"] in ("0", "1")

    def test_transfer_grid_too_large(self, tiny_config):
        cfg = tiny_config.model_copy(update={
            "study": tiny_config.study.model_copy(update={"transfer_grid": (50,)})})
        with pytest.raises(InvalidRangeError):
            cmd_transfer_study(cfg)

    def test_recon_study(self, tiny_config):
        path = cmd_recon_study(tiny_config)
        root = path.parent
        metrics = read_csv(root / "metrics.csv")
        assert len(metrics) == 3 * 2
        assert {r["algorithm"] for r in metrics} == {"fbp", "cgls"}
        for r in metrics:
            if r["algorithm"] == "fbp":
                assert r["best_iteration"] == ""
            else:
                assert 0 <= int(r["best_iteration"]) <= 30
        assert len(list(root.glob("residuals_cgls_*.csv"))) == 3
        for residual_file in root.glob("residuals_cgls_*.csv"):
            residuals = read_csv(residual_file)
            assert list(residuals[0])[:2] == ["seed", "config_hash"]
            assert {(r["seed"], r["config_hash"]) for r in residuals} == {
                (str(tiny_config.seed), tiny_config.config_hash())}
            assert [int(r["iteration"]) for r in residuals] == list(range(len(residuals)))
        assert not list(root.glob("residuals_fbp_*.csv"))
        assert [r["algorithm"] for r in read_csv(path)] == ["fbp", "cgls"]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_RUN_FILE)
    return path


class TestCli:

    def test_generate(self, run_file, tmp_path):
        out = tmp_path / "cli"
        code = main(["generate", "--config", str(run_file), "--out", str(out), "--threads", "2",
                     "--log-level", "WARNING"])
        assert code == EXIT_OK
        assert (out / "dataset" / "manifest.csv").is_file()
        assert not (out / LOCK_NAME).exists()

    def test_seed_override_reaches_reports(self, run_file, tmp_path):
        out = tmp_path / "cli"
        assert main(["generate", "--config", str(run_file), "--out", str(out), "--seed", "5",
                     "--log-level", "WARNING"]) == EXIT_OK
        rows = read_csv(out / "dataset" / "manifest.csv")
        assert {r["seed"] for r in rows} == {"5"}

    def test_train_without_dataset(self, run_file, tmp_path):
        code = main(["train", "--config", str(run_file), "--out", str(tmp_path / "empty"),
                     "--log-level", "ERROR"])
        assert code == EXIT_INVALID

    def test_missing_run_file(self, tmp_path):
        code = main(["generate", "--config", str(tmp_path / "missing.ini"), "--log-level", "ERROR"])
        assert code == EXIT_INVALID

    def test_negative_seed(self, run_file, tmp_path):
        code = main(["generate", "--config", str(run_file), "--out", str(tmp_path), "--seed", "-1",
                     "--log-level", "ERROR"])
        assert code == EXIT_INVALID

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["fly"])
