"""End-to-end CLI behavior: subcommands, exit codes, and artifacts."""

import json

import numpy as np
import pytest

from parefine import pnm
from parefine.cli import main
from parefine.data import SynthConfig, load_dataset


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthdata")
    rc = main(["synth", "--out", str(root), "--n-train", "6", "--n-test", "2",
               "--seed", "3", "--size", "48x48"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def trained_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--data", str(synth_dir), "--out", str(out),
               "--iters", "20", "--eval-every", "10", "--seed", "5",
               "--batch", "2", "--patch-ratio", "0.5"])
    assert rc == 0
    return out


def test_synth_writes_dataset_tree(synth_dir):
    train = load_dataset(synth_dir, "train")
    test = load_dataset(synth_dir, "test")
    assert len(train) == 6 and len(test) == 2
    assert train[0].image.shape == (3, 48, 48)


def test_synth_deterministic_across_invocations(synth_dir, tmp_path):
    rc = main(["synth", "--out", str(tmp_path), "--n-train", "6", "--n-test", "2",
               "--seed", "3", "--size", "48x48"])
    assert rc == 0
    for sub in ("images", "labels", "masks"):
        for p in sorted((synth_dir / sub).iterdir()):
            assert p.read_bytes() == (tmp_path / sub / p.name).read_bytes()


def test_train_writes_artifacts(trained_dir):
    assert (trained_dir / "checkpoint.parf").exists()
    assert (trained_dir / "loss_curve.png").exists()
    resolved = (trained_dir / "resolved.cfg").read_text()
    assert "max_iters=20" in resolved and "seed=5" in resolved
    log = (trained_dir / "metrics.log").read_text().strip().splitlines()
    assert len(log) == 2  # 20 iters / eval every 10
    assert log[0].startswith("iter=10 ")
    loss = (trained_dir / "loss.csv").read_text().strip().splitlines()
    assert loss[0] == "iter,total,l_s,l_r"
    assert len(loss) == 21


def test_train_bad_config_exit_2(synth_dir, tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("d_filter=4\n")
    rc = main(["train", "--data", str(synth_dir), "--out", str(tmp_path / "o"),
               "--config", str(cfgfile)])
    assert rc == 2


def test_train_missing_data_exit_3(tmp_path):
    rc = main(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_infer_roundtrip(trained_dir, synth_dir, tmp_path):
    image = next((synth_dir / "images").glob("*.ppm"))
    out = tmp_path / "refined.pgm"
    mask_out = tmp_path / "mask.pgm"
    rc = main(["infer", "--ckpt", str(trained_dir / "checkpoint.parf"),
               "--image", str(image), "--out", str(out), "--mask-out", str(mask_out)])
    assert rc == 0
    refined = pnm.load_image(out, channels=1)
    assert refined.shape == (1, 48, 48)
    assert 0.0 <= refined.min() and refined.max() <= 1.0
    mask = pnm.load_image(mask_out, channels=1)
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_infer_missing_checkpoint_exit_3(tmp_path, synth_dir):
    image = next((synth_dir / "images").glob("*.ppm"))
    rc = main(["infer", "--ckpt", str(tmp_path / "none.parf"),
               "--image", str(image), "--out", str(tmp_path / "o.pgm")])
    assert rc == 3


def test_eval_perfect_predictions(synth_dir, tmp_path, capsys):
    outdir = tmp_path / "metrics"
    rc = main(["eval", "--pred-dir", str(synth_dir / "labels"),
               "--gt-dir", str(synth_dir / "labels"),
               "--mask-dir", str(synth_dir / "masks"),
               "--out", str(outdir)])
    assert rc == 0
    table = capsys.readouterr().out
    mean_line = [l for l in table.splitlines() if l.startswith("mean")][0]
    assert mean_line.split("\t")[1:] == ["100.00", "100.00", "100.00"]
    assert (outdir / "metrics.txt").exists()
    assert (outdir / "metrics_bars.png").exists()
    payload = json.loads((outdir / "metrics.json").read_text())
    assert all(v["f1"] == 100.0 for v in payload.values())


def test_eval_hand_case(tmp_path, capsys):
    pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
    pred_dir.mkdir()
    gt_dir.mkdir()
    pnm.save_pnm(pred_dir / "a.pgm",
                 np.array([[230, 51], [204, 26]], dtype=np.uint8))
    pnm.save_pnm(gt_dir / "a.pgm",
                 np.array([[255, 255], [0, 0]], dtype=np.uint8))
    rc = main(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
    assert rc == 0
    row = capsys.readouterr().out.splitlines()[1]
    name, f1, auc, acc = row.split("\t")
    assert f1 == "50.00" and acc == "50.00"


def test_dump_filters_grid(trained_dir, synth_dir, tmp_path):
    image = next((synth_dir / "images").glob("*.ppm"))
    out = tmp_path / "grid.pgm"
    rc = main(["dump-filters", "--ckpt", str(trained_dir / "checkpoint.parf"),
               "--image", str(image), "--out", str(out), "--stride", "8"])
    assert rc == 0
    grid = pnm.load_pnm(out)
    # 41x41 region, stride 8 -> 6x6 tiles of 5x5 plus separators
    assert grid.shape == (37, 37)


def test_bench_report(tmp_path, capsys):
    rc = main(["bench", "--out", str(tmp_path), "--hw", "32x32"])
    assert rc == 0
    text = (tmp_path / "bench.tsv").read_text()
    assert "peak_volume_bytes" in text
    ratio = float(text.strip().splitlines()[-1].split("=")[-1])
    assert 7.0 <= ratio <= 11.0
    assert (tmp_path / "bench_memory.png").exists()


def test_gradcheck_command_passes(capsys):
    rc = main(["gradcheck"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "gradient checks passed" in out


def test_identical_train_invocations_identical_logs(synth_dir, tmp_path):
    args = ["train", "--data", str(synth_dir), "--iters", "8", "--eval-every", "4",
            "--seed", "11", "--batch", "2", "--patch-ratio", "0.5"]
    rc1 = main(args + ["--out", str(tmp_path / "r1")])
    rc2 = main(args + ["--out", str(tmp_path / "r2")])
    assert rc1 == 0 and rc2 == 0
    assert (tmp_path / "r1" / "metrics.log").read_bytes() == \
           (tmp_path / "r2" / "metrics.log").read_bytes()
    assert (tmp_path / "r1" / "checkpoint.parf").read_bytes() == \
           (tmp_path / "r2" / "checkpoint.parf").read_bytes()
