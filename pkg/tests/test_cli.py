import csv

import numpy as np
import pytest

from glfnet.cli import ablation_table, main, to_pgm
from glfnet.flops import count_flops
from glfnet.io import read_array
from glfnet.network import ModelConfig

TINY_CFG = "stage_widths = 4,4,4,4,4\npatch_size = 2\nepochs = 1\nbatch_size = 4\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(root / "ds"), "--n", "6", "--size", "32", "--seed", "2"]) == 0
    (root / "cfg.txt").write_text(TINY_CFG)
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    ckpt = workspace / "m.ckpt"
    rc = main(["train", "--data", str(workspace / "ds"), "--config", str(workspace / "cfg.txt"),
               "--out", str(ckpt), "--val", "2"])
    assert rc == 0
    return ckpt


def test_gen_writes_layout(workspace):
    assert (workspace / "ds" / "header.txt").exists()
    assert read_array(workspace / "ds" / "masks" / "0005.glft").dtype == np.uint8


def test_train_writes_checkpoint_log_and_csv(trained):
    rows = list(csv.reader(open(str(trained) + ".csv")))
    assert rows[0] == ["epoch", "loss", "dice_class1", "dice_class2", "dice_class3", "mean_dice"]
    assert len(rows) == 2 and rows[1][0] == "1"
    assert float(rows[1][-1]) == pytest.approx(np.mean([float(v) for v in rows[1][2:5]]), abs=1e-9)
    assert open(str(trained) + ".log").read().startswith("epoch 1 loss")
    assert trained.read_bytes()[:4] == b"GLFC"


def test_eval_prints_table(workspace, trained, capsys):
    capsys.readouterr()
    assert main(["eval", "--data", str(workspace / "ds"), "--ckpt", str(trained)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("Avg. | class1 | class2 | class3")
    assert (workspace / "m.ckpt.eval.txt").read_text().strip() == out.strip()


def test_predict_writes_mask_and_pgm(workspace, trained):
    out, pgm = workspace / "p.glft", workspace / "p.pgm"
    rc = main(["predict", "--image", str(workspace / "ds" / "images" / "0000.glft"), "--ckpt", str(trained),
               "--out", str(out), "--pgm", str(pgm)])
    assert rc == 0
    mask = read_array(out)
    assert mask.shape == (32, 32) and mask.max() < 4
    lines = pgm.read_text().split("\n")
    assert lines[:3] == ["P2", "32 32", "255"]


def test_pgm_encoding():
    assert to_pgm(np.array([[0, 3], [1, 2]]), 4) == "P2\n2 2\n255\n0 255\n85 170\n"


def test_flops_totals_match_rows(workspace, capsys):
    capsys.readouterr()
    assert main(["flops"]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [ln.split() for ln in lines[2:] if not ln.startswith("total")]
    total_line = [ln for ln in lines if ln.startswith("total ") and "GFLOPs" in ln][0]
    assert sum(int(r[-1]) for r in rows) == int(total_line.split()[1])
    assert int(total_line.split()[1]) == count_flops(ModelConfig()).total


def test_gradcheck_module_exit_zero(capsys):
    assert main(["gradcheck", "--module", "spectral"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_ablate_two_variants(workspace, capsys):
    capsys.readouterr()
    rc = main(["ablate", "--data", str(workspace / "ds"), "--config", str(workspace / "cfg.txt"),
               "--wiring", "gfb", "LFB-only", "--val", "2", "--out", str(workspace / "ab.txt")])
    assert rc == 0
    table = (workspace / "ab.txt").read_text().splitlines()
    assert table[0].startswith("wiring | GFB | LFB | mean_dice")
    assert [row.split(" | ")[0] for row in table[1:]] == ["gfb", "lfb"]


def test_ablation_table_ranks():
    text = ablation_table([("gfb", (0.5,), 0.5, 10, 0.1), ("gfb+lfb", (0.9,), 0.9, 20, 0.2)])
    rows = [line.split(" | ") for line in text.splitlines()[1:]]
    assert rows[0][-1] == "2" and rows[1][-1] == "1"
    assert rows[1][1:3] == ["1", "1"]


@pytest.mark.parametrize(
    "argv",
    [["train", "--bogus"], ["frobnicate"], ["eval", "--data", "/nonexistent", "--ckpt", "x"],
     ["gradcheck", "--module", "nope"], ["ablate", "--data", ".", "--wiring", "xyz"]],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_runtime_failure_exit_1(workspace, tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("num_classes = 3\n")
    rc = main(["train", "--data", str(workspace / "ds"), "--config", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "disagrees with dataset" in capsys.readouterr().err
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["eval", "--data", str(workspace / "ds"), "--ckpt", str(tmp_path / "junk.ckpt")]) == 1


def test_process_boundary_exit_codes(tmp_path):
    import subprocess
    import sys

    ok = subprocess.run([sys.executable, "-m", "glfnet", "flops"], capture_output=True, text=True)
    assert ok.returncode == 0 and "GFLOPs" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "glfnet", "train", "--nope"], capture_output=True, text=True)
    assert bad.returncode == 2
    (tmp_path / "x.glft").write_bytes(b"XXXX")
    fail = subprocess.run(
        [sys.executable, "-m", "glfnet", "predict", "--image", str(tmp_path / "x.glft"),
         "--ckpt", str(tmp_path / "x.glft"), "--out", str(tmp_path / "o.glft")],
        capture_output=True, text=True,
    )
    assert fail.returncode == 1 and "error" in fail.stderr
