"""Command-line entry point.

Subcommands: preprocess, train, eval, predict, inspect-features.
Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ensemble import (EnsembleWeights, clip_average, confusion, ensemble_predict, format_report,
                       predict_labels)
from .network import ArchSpec
from .preprocess import (ImageBuffer, extract_regions, offline_augment, read_image,
                         read_landmarks, to_tensor, write_image)
from .preprocess.align import sample_affine
from .preprocess.pipeline import CROP_ORDER
from .training import NumericalError, OptimizerState, PairDataset, TrainConfig, predict_scores, train

log = logging.getLogger("mrecnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_HEADER = ["image", "landmarks", "label", "clip_id"]
PAIR_HEADER = ["face", "region", "label", "clip_id"]
SUBNET_REGIONS = ("left_eye", "nose", "mouth")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    family: str = "alexnet"
    input_size: int = 32
    channel_scale: str = "1/8"
    fc_widths: list[int] | None = None
    num_classes: int = 7
    region: str = "left_eye"
    base_lr: float = 0.0005
    total_iterations: int = 1000
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 0.0001
    augment: bool = False
    crop_margin: int = 4
    seed: int = 0
    mean: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    manifest: str | None = None
    out: str = "."

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def arch(self) -> ArchSpec:
        fc = None if self.fc_widths is None else tuple(self.fc_widths)
        return ArchSpec(self.family, self.input_size, self.channel_scale, fc, self.num_classes)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.arch(), self.region, self.base_lr, self.total_iterations,
                           self.batch_size, self.momentum, self.weight_decay, self.augment,
                           self.crop_margin)


def _write_effective_config(out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}")
    return vals


# ---------------------------------------------------------------- manifests
def _read_csv(path: Path, header: list[str]) -> list[dict]:
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise DataError(f"{path}: header must be {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_pairs(manifest: Path, mean, input_size: int | None = None):
    rows = _read_csv(manifest, PAIR_HEADER)
    if not rows:
        raise DataError(f"{manifest}: no samples")
    base = manifest.parent
    faces, regions, labels, clips = [], [], [], []
    for i, row in enumerate(rows):
        try:
            face = read_image(_resolve(base, row["face"]))
            region = read_image(_resolve(base, row["region"]))
            label = int(row["label"])
        except (OSError, ValueError) as exc:
            raise DataError(f"{manifest} row {i + 1}: {exc}") from None
        for what, img in (("face", face), ("region", region)):
            if input_size is not None and (img.width, img.height) != (input_size, input_size):
                raise DataError(f"{manifest} row {i + 1}: {what} image is {img.width}x{img.height}, "
                                f"network expects {input_size}x{input_size}")
        faces.append(to_tensor(face, mean)[0])
        regions.append(to_tensor(region, mean)[0])
        labels.append(label)
        clips.append(row["clip_id"])
    return rows, PairDataset(np.stack(faces), np.stack(regions), np.asarray(labels), clips)


# --------------------------------------------------------------- preprocess
def cmd_preprocess(args) -> int:
    manifest = Path(args.manifest)
    rows = _read_csv(manifest, MANIFEST_HEADER)
    out = Path(args.out)
    template = None
    if args.template:
        template = read_landmarks(args.template)
    for name in CROP_ORDER:
        (out / name).mkdir(parents=True, exist_ok=True)
    _write_effective_config(out, {"command": "preprocess", "manifest": str(manifest),
                                  "template": args.template, "size": args.size, "seed": args.seed,
                                  "augment_offline": args.augment_offline})
    pairs = {r: [] for r in SUBNET_REGIONS}
    errors = []
    base = manifest.parent
    for i, row in enumerate(rows):
        try:
            img = read_image(_resolve(base, row["image"]))
            landmarks = read_landmarks(_resolve(base, row["landmarks"]))
            label = int(row["label"])
            if not 0 <= label <= 6:
                raise ValueError(f"label {label} outside 0..6")
            crops = extract_regions(img, landmarks, args.size, template)
        except (OSError, ValueError) as exc:
            errors.append(f"row {i + 1} ({row.get('image')}): {exc}")
            continue
        stem = f"{i:05d}_{Path(row['image']).stem}"
        written = {}
        for k, name in enumerate(CROP_ORDER):
            variants = [crops[name]]
            if args.augment_offline:
                variants += offline_augment(crops[name], args.seed, stream=(i, k))
            paths = []
            for v, img_v in enumerate(variants):
                suffix = ".ppm" if img_v.channels == 3 else ".pgm"
                rel = Path(name) / (f"{stem}{'' if v == 0 else f'_aug{v:02d}'}{suffix}")
                write_image(img_v, out / rel)
                paths.append(rel.as_posix())
            written[name] = paths
        for region in SUBNET_REGIONS:
            for face_p, region_p in zip(written["whole_face"], written[region]):
                pairs[region].append([face_p, region_p, label, row["clip_id"]])
    for region, rows_out in pairs.items():
        with (out / f"pairs_{region}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PAIR_HEADER)
            w.writerows(rows_out)
    if errors:
        (out / "errors.log").write_text("\n".join(errors) + "\n")
        for e in errors:
            log.error(e)
        if args.strict:
            return EXIT_DATA
    log.info("preprocessed %d of %d rows into %s", len(rows) - len(errors), len(rows), out)
    return EXIT_OK


# -------------------------------------------------------------------- train
def _train_config_from_args(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(data)
    overrides = {
        "manifest": args.manifest, "out": args.out, "seed": args.seed,
        "total_iterations": args.iterations, "family": args.family,
        "input_size": args.input_size, "channel_scale": args.channel_scale,
        "region": args.region, "base_lr": args.lr, "batch_size": args.batch_size,
        "momentum": args.momentum, "weight_decay": args.weight_decay, "augment": args.augment,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.fc_widths is not None:
        cfg.fc_widths = [int(v) for v in args.fc_widths.split(",") if v]
    if args.mean is not None:
        cfg.mean = _parse_floats(args.mean, 3, "--mean")
    if cfg.manifest is None:
        raise UsageError("a pair manifest is required (positional argument or config key)")
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    try:
        tc = cfg.train_config()
        OptimizerState(cfg.base_lr, cfg.total_iterations, cfg.momentum, cfg.weight_decay)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg.out)
    _, data = load_pairs(Path(cfg.manifest), cfg.mean, cfg.input_size)
    _write_effective_config(out, {"command": "train", **dataclasses.asdict(cfg)})
    try:
        result = train(tc, data, seed=cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    save_checkpoint(result.net, result.opt, out / "checkpoint.mre")
    (out / "loss_trace.csv").write_text(result.trace_csv())
    if result.trace:
        log.info("trained %d iterations, final loss %.4f", len(result.trace), result.trace[-1][2])
    return EXIT_OK


# --------------------------------------------------------------- eval/predict
def _load_subnets(paths):
    if len(paths) != 3:
        raise UsageError("need exactly three checkpoints (left_eye, nose, mouth)")
    nets = []
    for p in paths:
        try:
            nets.append(load_checkpoint(p)[0])
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {p}: {exc}") from None
        except CheckpointError as exc:
            raise DataError(f"{p}: {exc}") from None
    return nets


def _load_aligned(manifests, nets, mean):
    if len(manifests) != 3:
        raise UsageError("need exactly three pair manifests (left_eye, nose, mouth)")
    loaded = [load_pairs(Path(m), mean, net.spec.input_size) for m, net in zip(manifests, nets)]
    ref_rows = loaded[0][0]
    for m, (rows, _) in zip(manifests[1:], loaded[1:]):
        if len(rows) != len(ref_rows):
            raise DataError(f"{m} has {len(rows)} samples, {manifests[0]} has {len(ref_rows)}")
        for i, (a, b) in enumerate(zip(ref_rows, rows)):
            ka = (a["face"], a["label"], a["clip_id"])
            kb = (b["face"], b["label"], b["clip_id"])
            if ka != kb:
                raise DataError(f"manifests diverge at sample {i + 1}: {manifests[0]} has {ka}, {m} has {kb}")
    return ref_rows, [d for _, d in loaded]


def ensemble_scores(nets, datasets, weights: EnsembleWeights) -> np.ndarray:
    scores = [predict_scores(net, d.faces, d.regions) for net, d in zip(nets, datasets)]
    return ensemble_predict(scores, weights)


def evaluate(scores: np.ndarray, labels, clip_ids, protocol: str, num_classes: int = 7):
    """Confusion matrix under the still-image or per-clip protocol."""
    labels = np.asarray(labels)
    if protocol == "still":
        return confusion(predict_labels(scores), labels, num_classes)
    if protocol != "clip":
        raise UsageError(f"unknown protocol {protocol!r}")
    ids = [c if c else f"#row{i}" for i, c in enumerate(clip_ids)]
    clip_labels: dict[str, int] = {}
    for cid, y in zip(ids, labels):
        if clip_labels.setdefault(cid, int(y)) != int(y):
            raise DataError(f"clip {cid!r} has frames with different labels")
    order, clip_scores = clip_average(scores, ids)
    return confusion(predict_labels(clip_scores), np.array([clip_labels[c] for c in order]), num_classes)


def _weights(text: str) -> EnsembleWeights:
    try:
        return EnsembleWeights.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_eval(args) -> int:
    weights = _weights(args.weights)
    mean = _parse_floats(args.mean, 3, "--mean")
    nets = _load_subnets(args.checkpoints)
    rows, datasets = _load_aligned(args.manifests, nets, mean)
    scores = ensemble_scores(nets, datasets, weights)
    cm = evaluate(scores, datasets[0].labels, datasets[0].clip_ids, args.protocol,
                  nets[0].spec.num_classes)
    report = format_report(cm)
    out = Path(args.out)
    _write_effective_config(out, {"command": "eval", "checkpoints": args.checkpoints,
                                  "manifests": args.manifests, "weights": list(weights.alpha),
                                  "protocol": args.protocol, "mean": mean})
    (out / "report.csv").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_predict(args) -> int:
    weights = _weights(args.weights)
    mean = _parse_floats(args.mean, 3, "--mean")
    nets = _load_subnets(args.checkpoints)
    rows, datasets = _load_aligned(args.manifests, nets, mean)
    scores = ensemble_scores(nets, datasets, weights)
    out = Path(args.out)
    _write_effective_config(out, {"command": "predict", "checkpoints": args.checkpoints,
                                  "manifests": args.manifests, "weights": list(weights.alpha),
                                  "mean": mean})
    k = scores.shape[1]
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["face", "clip_id", "predicted", *[f"score_{c}" for c in range(k)]])
        for row, s, p in zip(rows, scores, predict_labels(scores)):
            w.writerow([row["face"], row["clip_id"], int(p), *[f"{v:.6f}" for v in s]])
    return EXIT_OK


# ---------------------------------------------------------- feature maps
def minmax_u8(fmap: np.ndarray) -> np.ndarray:
    """Scale a 2-D map to 0..255; a constant map becomes all zeros."""
    lo, hi = float(fmap.min()), float(fmap.max())
    if hi <= lo:
        return np.zeros(fmap.shape, dtype=np.uint8)
    return np.floor((fmap.astype(np.float64) - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)


def tile_grid(tiles: list[np.ndarray], pad: int = 1) -> np.ndarray:
    n = len(tiles)
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    h, w = tiles[0].shape
    grid = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad), dtype=np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, cols)
        grid[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = t
    return grid


def _fit_size(img: ImageBuffer, size: int) -> ImageBuffer:
    if img.width == size and img.height == size:
        return img
    sx, sy = img.width / size, img.height / size
    return sample_affine(img, np.array([[sx, 0.0], [0.0, sy]]),
                         np.array([0.5 * sx - 0.5, 0.5 * sy - 0.5]), size, size)


def feature_maps(net, face, region, layer: str) -> np.ndarray:
    names = net.layer_names()
    if layer not in names:
        raise UsageError(f"unknown layer {layer!r}; valid names: {', '.join(names)}")
    taps: dict = {}
    net.forward(face, region, taps=taps)
    return taps[layer][0]


def cmd_inspect_features(args) -> int:
    mean = _parse_floats(args.mean, 3, "--mean")
    try:
        net, _ = load_checkpoint(args.checkpoint)
        face_img = read_image(args.face)
        region_img = read_image(args.region)
    except (OSError, CheckpointError, ValueError) as exc:
        raise DataError(str(exc)) from None
    size = net.spec.input_size
    face = to_tensor(_fit_size(face_img, size), mean)
    region = to_tensor(_fit_size(region_img, size), mean)
    act = feature_maps(net, face, region, args.layer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    safe = args.layer.replace(".", "_")
    if act.ndim == 1:
        act = act[:, None, None]
    tiles = [minmax_u8(ch) for ch in act]
    for c, t in enumerate(tiles):
        write_image(ImageBuffer(t), out / f"{safe}_c{c:03d}.pgm")
    write_image(ImageBuffer(tile_grid(tiles)), out / f"{safe}_grid.pgm")
    _write_effective_config(out, {"command": "inspect-features", "checkpoint": args.checkpoint,
                                  "face": args.face, "region": args.region, "layer": args.layer,
                                  "mean": mean})
    log.info("wrote %d tiles for %s", len(tiles), args.layer)
    return EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrecnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="align faces and cut region crops")
    p.add_argument("manifest", help='CSV with header "image,landmarks,label,clip_id"')
    p.add_argument("--template", help="68-point template file in unit-square coordinates")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-offline", action="store_true", help="also write 15 variants per crop")
    p.add_argument("--strict", action="store_true", help="exit nonzero if any row fails")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one sub-network")
    p.add_argument("manifest", nargs="?", help='pair CSV with header "face,region,label,clip_id"')
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--family", choices=["vgg16", "alexnet"])
    p.add_argument("--input-size", type=int)
    p.add_argument("--channel-scale")
    p.add_argument("--fc-widths", help="comma-separated hidden widths")
    p.add_argument("--region", choices=list(SUBNET_REGIONS))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mean", help="per-channel mean, e.g. 0.5,0.5,0.5")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate the three-subnet ensemble"),
                                 ("predict", cmd_predict, "write ensemble predictions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoints", nargs=3, required=True, metavar=("EYE", "NOSE", "MOUTH"))
        p.add_argument("--manifests", nargs=3, required=True, metavar=("EYE", "NOSE", "MOUTH"))
        p.add_argument("--weights", default="vgg", help='preset (vgg, alexnet) or "a,b,c"')
        p.add_argument("--mean", default="0,0,0")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
        if name == "eval":
            p.add_argument("--protocol", choices=["still", "clip"], default="still")
        p.set_defaults(func=func)

    p = sub.add_parser("inspect-features", help="export one layer's feature maps as PGM tiles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--face", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--layer", required=True, help="e.g. face.conv1")
    p.add_argument("--mean", default="0,0,0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
