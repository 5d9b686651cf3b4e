import csv
import json

import numpy as np
import pytest

from mrecnn.checkpoint import load_checkpoint
from mrecnn.cli import evaluate, main, minmax_u8, tile_grid
from mrecnn.network import ArchSpec, build_subnetwork
from mrecnn.preprocess import read_image
from diskdata import TINY_TRAIN, tree_bytes, write_pairs, write_raw_corpus


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- preprocess
def test_preprocess_writes_four_crops(tmp_path):
    manifest = write_raw_corpus(tmp_path / "raw", n=1)
    out = tmp_path / "out"
    assert main(["preprocess", str(manifest), "--out", str(out), "--size", "48"]) == 0
    crops = sorted(p for p in out.rglob("*.ppm"))
    assert len(crops) == 4
    for p in crops:
        img = read_image(p)
        assert (img.width, img.height) == (48, 48)
    for region in ("left_eye", "nose", "mouth"):
        rows = read_rows(out / f"pairs_{region}.csv")
        assert len(rows) == 1 and rows[0]["region"].startswith(region)
    assert json.loads((out / "config.json").read_text())["size"] == 48


def test_preprocess_offline_augmentation_count(tmp_path):
    manifest = write_raw_corpus(tmp_path / "raw", n=1)
    out = tmp_path / "out"
    assert main(["preprocess", str(manifest), "--out", str(out), "--size", "32", "--augment-offline"]) == 0
    assert len(list(out.rglob("*.ppm"))) == 64
    assert len(read_rows(out / "pairs_nose.csv")) == 16


def test_preprocess_rerun_is_byte_identical(tmp_path):
    manifest = write_raw_corpus(tmp_path / "raw", n=2)
    for name in ("a", "b"):
        assert main(["preprocess", str(manifest), "--out", str(tmp_path / name), "--size", "32",
                     "--augment-offline", "--seed", "3"]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    a.pop("config.json"), b.pop("config.json")
    assert a == b


def test_preprocess_bad_rows(tmp_path):
    manifest = write_raw_corpus(tmp_path / "raw", n=1, bad_rows=1)
    out = tmp_path / "out"
    assert main(["preprocess", str(manifest), "--out", str(out), "--size", "32"]) == 0
    assert "missing0" in (out / "errors.log").read_text()
    assert len(read_rows(out / "pairs_mouth.csv")) == 1
    assert main(["preprocess", str(manifest), "--out", str(tmp_path / "s"), "--size", "32", "--strict"]) == 2


def test_preprocess_missing_manifest(tmp_path):
    assert main(["preprocess", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


# -------------------------------------------------------------------- train
def train_args(manifest, out, *extra):
    return ["train", str(manifest), "--out", str(out), *TINY_TRAIN, *extra]


@pytest.fixture(scope="module")
def pairs_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pairs")
    write_pairs(root)
    return root


def test_train_outputs(pairs_dir, tmp_path):
    assert main(train_args(pairs_dir / "pairs.csv", tmp_path, "--iterations", "5")) == 0
    trace = (tmp_path / "loss_trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,lr,loss,accuracy" and len(trace) == 6
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["total_iterations"] == 5 and cfg["channel_scale"] == "1/16"
    net, opt = load_checkpoint(tmp_path / "checkpoint.mre")
    assert opt.iteration == 5 and net.region == "left_eye"


def test_train_zero_iterations_is_initialization(pairs_dir, tmp_path):
    assert main(train_args(pairs_dir / "pairs.csv", tmp_path, "--iterations", "0", "--seed", "9")) == 0
    net, _ = load_checkpoint(tmp_path / "checkpoint.mre")
    init = build_subnetwork(ArchSpec("alexnet", 8, "1/16", (8,)), "left_eye", 9)
    for k in init.params:
        assert net.params[k].tobytes() == init.params[k].tobytes()


def test_train_is_deterministic(pairs_dir, tmp_path):
    for name in ("a", "b"):
        assert main(train_args(pairs_dir / "pairs.csv", tmp_path / name, "--iterations", "4",
                               "--augment")) == 0
    for f in ("checkpoint.mre", "loss_trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_missing_manifest_names_path(tmp_path, caplog):
    missing = tmp_path / "absent.csv"
    assert main(train_args(missing, tmp_path / "o", "--iterations", "1")) != 0
    assert str(missing) in caplog.text


def test_train_config_file_and_unknown_key(pairs_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"family": "alexnet", "input_size": 8, "channel_scale": "1/16",
                               "fc_widths": [8], "total_iterations": 2, "batch_size": 4}))
    assert main(["train", str(pairs_dir / "pairs.csv"), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["train", str(pairs_dir / "pairs.csv"), "--config", str(cfg), "--out", str(tmp_path / "p")]) == 1


def test_train_wrong_image_size_is_data_error(pairs_dir, tmp_path):
    args = train_args(pairs_dir / "pairs.csv", tmp_path, "--iterations", "1")
    args[args.index("--input-size") + 1] = "16"
    assert main(args) == 2


def test_train_divergence_exit_code(pairs_dir, tmp_path):
    args = train_args(pairs_dir / "pairs.csv", tmp_path, "--iterations", "50", "--momentum", "0")
    args[args.index("--lr") + 1] = "1e6"
    assert main(args) == 3


def test_usage_errors(tmp_path):
    assert main([]) == 1
    assert main(["train", "x.csv", "--family", "resnet"]) == 1
    assert main(["--help"]) == 0


# --------------------------------------------------------------- eval/predict
@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("ens")
    manifest = write_pairs(root / "data")
    ckpts = []
    for region in ("left_eye", "nose", "mouth"):
        out = root / region
        assert main(train_args(manifest, out, "--iterations", "3", "--region", region)) == 0
        ckpts.append(str(out / "checkpoint.mre"))
    return ckpts, [str(manifest)] * 3, root


def eval_args(trained, out, *extra, cmd="eval"):
    ckpts, manifests, _ = trained
    return [cmd, "--checkpoints", *ckpts, "--manifests", *manifests, "--out", str(out), *extra]


def test_eval_single_weight_matches_single_subnet(trained, tmp_path):
    ckpts, manifests, _ = trained
    assert main(eval_args(trained, tmp_path / "a", "--weights", "1,0,0")) == 0
    solo = [ckpts[0]] * 3
    assert main(["eval", "--checkpoints", *solo, "--manifests", *manifests, "--out",
                 str(tmp_path / "b"), "--weights", "1/3,1/3,1/3"]) == 0
    a = (tmp_path / "a" / "report.csv").read_text()
    b = (tmp_path / "b" / "report.csv").read_text()
    assert a == b
    assert a.splitlines()[-1].startswith("mean_diagonal,")


def test_eval_protocols_agree_for_single_frame_clips(trained, tmp_path):
    assert main(eval_args(trained, tmp_path / "s", "--protocol", "still")) == 0
    assert main(eval_args(trained, tmp_path / "c", "--protocol", "clip")) == 0
    assert (tmp_path / "s" / "report.csv").read_bytes() == (tmp_path / "c" / "report.csv").read_bytes()


def test_eval_rejects_misaligned_manifests(trained, tmp_path):
    ckpts, manifests, root = trained
    other = write_pairs(root / "shuffled", seed=5)
    rows = read_rows(other)
    rows[1], rows[2] = rows[2], rows[1]
    with other.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["face", "region", "label", "clip_id"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    code = main(["eval", "--checkpoints", *ckpts, "--manifests", manifests[0], str(other), manifests[0],
                 "--out", str(tmp_path)])
    assert code == 2


def test_eval_bad_weights(trained, tmp_path):
    assert main(eval_args(trained, tmp_path, "--weights", "0.5,0.5,0.5")) == 1


def test_predict_writes_file(trained, tmp_path):
    assert main(eval_args(trained, tmp_path, "--weights", "alexnet", cmd="predict")) == 0
    rows = read_rows(tmp_path / "predictions.csv")
    assert len(rows) == 14
    scores = np.array([[float(r[f"score_{c}"]) for c in range(7)] for r in rows])
    np.testing.assert_allclose(scores.sum(axis=1), 1, atol=1e-5)
    assert [int(r["predicted"]) for r in rows] == scores.argmax(axis=1).tolist()


def test_evaluate_perfect_scores():
    labels = np.arange(7).repeat(2)
    scores = np.eye(7)[labels]
    cm = evaluate(scores, labels, [""] * 14, "still")
    assert np.trace(cm.counts) == 14
    cm = evaluate(scores, labels, [f"v{y}" for y in labels], "clip")
    assert cm.counts.sum() == 7 and np.trace(cm.counts) == 7


# --------------------------------------------------------- inspect-features
def inspect(trained, tmp_path, face, layer="face.conv1"):
    ckpts, _, root = trained
    return main(["inspect-features", "--checkpoint", ckpts[0], "--face", str(face),
                 "--region", str(face), "--layer", layer, "--out", str(tmp_path)])


def test_inspect_conv1_tiles(trained, tmp_path):
    _, _, root = trained
    assert inspect(trained, tmp_path, root / "data" / "f000.ppm") == 0
    net, _ = load_checkpoint(trained[0][0])
    channels = net.params["face.conv1.weight"].shape[0]
    tiles = sorted(tmp_path.glob("face_conv1_c*.pgm"))
    assert len(tiles) == channels
    assert (tmp_path / "face_conv1_grid.pgm").is_file()


def test_inspect_zero_input_gives_zero_tiles(trained, tmp_path):
    from mrecnn.preprocess import ImageBuffer, write_image
    face = tmp_path / "zero.pgm"
    write_image(ImageBuffer(np.zeros((8, 8), np.uint8)), face)
    assert inspect(trained, tmp_path / "o", face) == 0
    for p in (tmp_path / "o").glob("face_conv1_c*.pgm"):
        assert not read_image(p).pixels.any()


def test_inspect_unknown_layer(trained, tmp_path, caplog):
    _, _, root = trained
    assert inspect(trained, tmp_path, root / "data" / "f000.ppm", layer="face.conv9") == 1
    assert "face.conv1" in caplog.text


def test_minmax_spans_full_range():
    m = minmax_u8(np.random.default_rng(0).standard_normal((6, 6)))
    assert m.min() == 0 and m.max() == 255
    assert not minmax_u8(np.full((3, 3), 2.5)).any()


def test_tile_grid_layout():
    grid = tile_grid([np.full((2, 2), v, np.uint8) for v in (10, 20, 30)])
    assert grid.shape == (5, 5)
    assert grid[0, 0] == 10 and grid[0, 3] == 20 and grid[3, 0] == 30 and grid[3, 3] == 0
