"""
Desk-scale end-to-end runs.

Each test drives the experiment commands on the desk preset and checks the
qualitative result the experiment exists to show. They take minutes, so they
are marked slow and deselected by default (pytest -m slow runs them).
"""

from pathlib import Path

import pytest

from app.pipeline.commands import (
    cmd_closed_loop,
    cmd_eval,
    cmd_generate,
    cmd_loss_study,
    cmd_train,
    cmd_transfer_study,
)
from app.pipeline.config import parse_config_text
from app.pipeline.reports import read_csv

pytestmark = pytest.mark.slow

# 13 rock slices of 128 px in 64 px tiles: 52 tiles, 42 train / 10 test
DESK_RUN_FILE = """
[run]
seed = 2024

[phantom]
family = rock
count = 13
size = 128
tile = 64

[train]
train_fraction = 0.8
"""


def _summary(path: Path) -> dict:
    return {row.get("arm", str(i)): row for i, row in enumerate(read_csv(path))}


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    cfg = parse_config_text(DESK_RUN_FILE).with_overrides(out=str(tmp_path_factory.mktemp("desk")))
    cmd_generate(cfg)
    cmd_train(cfg)
    return cfg


class TestDenoising:

    def test_network_improves_held_out_tiles(self, desk_run):
        path = cmd_eval(desk_run)
        net = _summary(path.parent / "summary.csv")["network"]
        assert int(net["images"]) == 10
        assert float(net["mean_psnr_after"]) >= float(net["mean_psnr_before"]) + 5.0
        assert float(net["mean_ssim_after"]) >= float(net["mean_ssim_before"]) + 0.1


class TestLossComparison:

    def test_both_losses_improve_and_ssim_arm_holds_up(self, desk_run):
        summary = _summary(cmd_loss_study(desk_run))
        for arm in ("mse", "ssim"):
            row = summary[arm]
            assert float(row["mean_psnr_after"]) > float(row["mean_psnr_before"])
            assert float(row["mean_ssim_after"]) > float(row["mean_ssim_before"])
        assert float(summary["ssim"]["mean_ssim_after"]) >= float(summary["mse"]["mean_ssim_after"]) - 0.02


class TestClosedLoop:

    def test_network_beats_its_training_targets(self, tmp_path_factory):
        # 32 slices -> 128 tiles; 40% held out leaves more than 50 test tiles
        text = DESK_RUN_FILE.replace("count = 13", "count = 32")
        cfg = parse_config_text(text).with_overrides(out=str(tmp_path_factory.mktemp("closed")))
        cmd_generate(cfg)
        cmd_train(cfg)
        path = cmd_closed_loop(cfg)
        row = read_csv(path)[0]
        assert int(row["images"]) >= 50
        assert float(row["mean_ssim_net"]) > float(row["mean_ssim_high"]) > float(row["mean_ssim_low"])


class TestTransfer:

    def test_warm_start_keeps_up_with_scratch(self, tmp_path_factory):
        # 10 slices -> 40 tiles, 32 for training
        text = DESK_RUN_FILE.replace("count = 13", "count = 10")
        cfg = parse_config_text(text).with_overrides(out=str(tmp_path_factory.mktemp("transfer")))
        rows = read_csv(cmd_transfer_study(cfg))
        by_n = {}
        for row in rows:
            by_n.setdefault(int(row["n_train"]), {})[row["arm"]] = row
        assert sorted(by_n) == [4, 8, 16, 32]
        for n, arms in by_n.items():
            warm, scratch = arms["warm"], arms["scratch"]
            assert float(warm["mean_ssim"]) >= float(scratch["mean_ssim"]) - 0.01, n
            reached = warm["epochs_to_scratch_final"]
            assert reached != "" and int(reached) <= int(warm["epochs"]) // 2, n
        for arm in ("warm", "scratch"):
            curve = [float(by_n[n][arm]["mean_ssim"]) for n in sorted(by_n)]
            assert all(b >= a - 0.02 for a, b in zip(curve, curve[1:])), arm
