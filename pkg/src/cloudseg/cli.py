"""Command-line entry point: ``cloudseg <verb> [options]``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
Every option can also come from ``--config FILE``, a ``key = value`` file
whose keys are option names (dashes or underscores). Command-line flags
win over the config file.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import augment as aug_mod
from .dataset import (
    AnnotationError,
    SubmissionRecord,
    load_annotations,
    predict_and_encode,
    score_submission,
    split_train_val,
    write_annotations,
)
from .encoder import VARIANTS, describe, variant_config
from .metrics import pr_curve
from .model import (
    CLASSES,
    MODEL_INPUT_SIZE,
    build_efficientunet,
    decoder_features,
    decoder_parameter_count,
    model_forward,
    prepare_input,
)
from .radam import RAdamHyperparams, head_mean_dice, train_head
from .rle import parse_rle, rle_decode, rle_encode, rle_text, scale_mask
from .synthetic import texture_features
from .weights import save_weights

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _read_gray(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def _read_rgb(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _write_png(path, arr) -> None:
    from PIL import Image

    Image.fromarray(arr).save(path)


def _image_files(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _build_model(args):
    if args.weights:
        return build_efficientunet(args.variant, init="weight-store", store=args.weights, seed=args.seed)
    return build_efficientunet(args.variant, init="random", seed=args.seed)


# ------------------------------------------------------------------- verbs

def cmd_describe(args) -> int:
    names = list(VARIANTS) if args.variant == "all" else [args.variant]
    rows = []
    for v in names:
        info = describe(variant_config(v))
        info["decoder_parameter_count"] = decoder_parameter_count(variant_config(v))
        rows.append(info)
    _emit(json.dumps(rows if len(rows) > 1 else rows[0], indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    mask = _read_gray(args.mask) > 127
    _emit(rle_text(rle_encode(mask)) + "\n", args.out)
    return EXIT_OK


def cmd_decode(args) -> int:
    text = Path(args.rle_file).read_text() if args.rle_file else (args.rle or "")
    mask = rle_decode(parse_rle(text), args.height, args.width)
    _write_png(args.out, mask.astype(np.uint8) * 255)
    return EXIT_OK


def cmd_scale_masks(args) -> int:
    index = load_annotations(args.input)
    rows = []
    for rec in index.records():
        m = rle_decode(parse_rle(rec.encoded_pixels), args.height, args.width)
        rows.append(SubmissionRecord(rec.image_label, rle_text(rle_encode(scale_mask(m, args.factor)))))
    write_annotations(rows, args.output)
    return EXIT_OK


def cmd_augment(args) -> int:
    src = Path(args.input)
    index = load_annotations(src / args.csv)
    records = []
    for name in index.images:
        img = _read_rgb(src / args.images_subdir / name).transpose(2, 0, 1)
        records.append(aug_mod.Record(name, img, index.masks(name, img.shape[1:])))
    out = aug_mod.augment_dataset(records, seed=args.seed)
    dst = Path(args.output)
    (dst / args.images_subdir).mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in out:
        _write_png(dst / args.images_subdir / rec.name, np.ascontiguousarray(rec.image.transpose(1, 2, 0)))
        rows += [SubmissionRecord(f"{rec.name}_{c}", rle_text(rle_encode(m)))
                 for c, m in zip(CLASSES, rec.masks)]
    write_annotations(rows, dst / args.csv)
    print(json.dumps({"input_records": len(records), "output_records": len(out)}))
    return EXIT_OK


def cmd_split(args) -> int:
    index = load_annotations(args.annotations)
    train, val = split_train_val(index, args.train_fraction, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_annotations(train, out / "train.csv")
    write_annotations(val, out / "val.csv")
    print(json.dumps({"train": len(train), "val": len(val)}))
    return EXIT_OK


def cmd_forward(args) -> int:
    model = _build_model(args)
    x = prepare_input(_read_rgb(args.input), tuple(args.size))
    logits = model_forward(model, x)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    logits.astype("<f4").tofile(out.with_suffix(".bin"))
    header = {"shape": list(logits.shape), "dtype": "float32", "byte_order": "little",
              "layout": "NCHW", "variant": args.variant, "classes": list(CLASSES),
              "input_shape": list(x.shape)}
    out.with_suffix(".json").write_text(json.dumps(header, indent=2))
    print(json.dumps(header))
    return EXIT_OK


def _dataset_arrays(directory, csv_name, images_subdir):
    directory = Path(directory)
    index = load_annotations(directory / csv_name)
    if not index.images:
        raise ValueError("dataset is empty")
    images, masks = [], []
    for name in index.images:
        img = _read_rgb(directory / images_subdir / name)
        images.append(img)
        masks.append(index.masks(name, img.shape[:2]))
    return index, images, np.stack(masks)


def cmd_train_head(args) -> int:
    index, images, masks = _dataset_arrays(args.dataset, args.csv, args.images_subdir)
    if args.features == "texture":
        x = np.stack([im.transpose(2, 0, 1) for im in images]).astype(np.float32) / 255
        feats = texture_features(x)
    else:
        model = _build_model(args)
        h, w = images[0].shape[:2]
        size = tuple(args.size) if args.size else (h, w)
        if size != (h, w):
            raise ValueError(f"trunk features need --size equal to the image size {(h, w)}")
        feats = np.concatenate([decoder_features(model, prepare_input(im, size)) for im in images])
    train, val = split_train_val(index, args.train_fraction, args.seed)
    pos = {n: i for i, n in enumerate(index.images)}
    tr = [pos[n] for n in train.images]
    va = [pos[n] for n in val.images]
    hp = RAdamHyperparams(lr=args.lr)
    res = train_head(feats[tr], masks[tr].astype(np.float64), hp, epochs=args.epochs,
                     batch=args.batch, seed=args.seed)

    def val_dice(w, b):
        return head_mean_dice(feats[va], masks[va], w, b) if va else float("nan")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(out / "head", {"head.weight": res.weight, "head.bias": res.bias})
    with open(out / "loss_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for e, loss in enumerate(res.loss_history):
            writer.writerow([e, repr(float(loss))])
    summary = {
        "features": args.features, "n_train": len(tr), "n_val": len(va),
        "val_dice_init": val_dice(np.zeros_like(res.weight), np.zeros_like(res.bias)),
        "val_dice_final": val_dice(res.weight, res.bias),
        "final_loss": res.loss_history[-1],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.head:
        model = build_efficientunet(args.variant, init="weight-store", store=args.head,
                                    strict=False, seed=args.seed)
        if args.weights:
            raise ValueError("use either --weights (full model) or --head (head over seeded trunk)")
    else:
        model = _build_model(args)
    files = _image_files(args.images)
    report = predict_and_encode(model, [(p.name, p) for p in files], args.threshold, args.scale,
                                tuple(args.size), args.scale_order, args.threads)
    write_annotations(report.records, args.out)
    summary = {"images": len(files), "encoded": len(files) - len(report.failures),
               "failures": [{"image": n, "error": e} for n, e in report.failures]}
    print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_score(args) -> int:
    report = score_submission(args.pred, args.truth)
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


def _load_pr_inputs(args):
    if args.table:
        data = np.loadtxt(args.table, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1] > 0
    if not (args.scores and args.labels):
        raise ValueError("pr-curve needs --table or both --scores and --labels")
    return np.load(args.scores), np.load(args.labels).astype(bool)


def cmd_pr_curve(args) -> int:
    scores, labels = _load_pr_inputs(args)
    curve = pr_curve(scores, labels)
    lines = ["threshold,precision,recall"]
    lines += [f"{t!r},{p!r},{r!r}" for t, p, r in
              zip(curve.thresholds.tolist(), curve.precision.tolist(), curve.recall.tolist())]
    lines.append(f"auc,{curve.auc!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # verbs accept the global flags too, without clobbering values given before the verb
        g = argparse.ArgumentParser(add_help=False)
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--seed", type=int, default=dflt(0), help="single source of randomness")
        g.add_argument("--threads", type=int, default=dflt(1))
        g.add_argument("--config", default=dflt(None),
                       help="key = value file mirroring the command-line flags")
        return g

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="cloudseg", parents=[global_flags(suppress=False)],
                                     description="EfficientUNet cloud segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    variants = list(VARIANTS)

    p = verb("describe", cmd_describe, "print block table and parameter counts as JSON")
    p.add_argument("--variant", default="all", choices=variants + ["all"])
    p.add_argument("--out")

    p = verb("encode", cmd_encode, "mask image (0/255) -> RLE text line")
    p.add_argument("--mask", required=True)
    p.add_argument("--out")

    p = verb("decode", cmd_decode, "RLE text -> mask image (0/255)")
    p.add_argument("--rle")
    p.add_argument("--rle-file")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--out", required=True)

    p = verb("scale-masks", cmd_scale_masks, "rescale a submission CSV by decode -> scale -> encode")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--height", type=int, default=1400)
    p.add_argument("--width", type=int, default=2100)
    p.add_argument("--factor", type=float, default=0.25)

    p = verb("augment", cmd_augment, "double a dataset with one random transform per image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--csv", default="train.csv")
    p.add_argument("--images-subdir", default="train_images")

    p = verb("split", cmd_split, "image-level train/validation split")
    p.add_argument("--annotations", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = verb("forward", cmd_forward, "run the network on one image, dump logits")
    p.add_argument("--variant", default="b0", choices=variants)
    p.add_argument("--input", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True, help="output prefix; writes <prefix>.bin and <prefix>.json")
    p.add_argument("--size", type=int, nargs=2, default=list(MODEL_INPUT_SIZE), metavar=("H", "W"))

    p = verb("train-head", cmd_train_head, "fit the 4-class 1x1 head with RAdam on frozen features")
    p.add_argument("--dataset", required=True)
    p.add_argument("--csv", default="train.csv")
    p.add_argument("--images-subdir", default="train_images")
    p.add_argument("--variant", default="b0", choices=variants)
    p.add_argument("--weights")
    p.add_argument("--features", default="texture", choices=["texture", "trunk"])
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out", required=True)

    p = verb("predict", cmd_predict, "images -> submission CSV")
    p.add_argument("--images", required=True)
    p.add_argument("--variant", default="b0", choices=variants)
    p.add_argument("--weights")
    p.add_argument("--head")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--scale", default="quarter", choices=["native", "quarter"])
    p.add_argument("--scale-order", default="threshold-first", choices=["threshold-first", "scale-first"])
    p.add_argument("--size", type=int, nargs=2, default=list(MODEL_INPUT_SIZE), metavar=("H", "W"))
    p.add_argument("--out", required=True)

    p = verb("score", cmd_score, "mean Dice of a submission against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")

    p = verb("pr-curve", cmd_pr_curve, "precision/recall table plus AUC")
    p.add_argument("--scores")
    p.add_argument("--labels")
    p.add_argument("--table", help="CSV with header and columns score,label")
    p.add_argument("--out")
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _convert(action: argparse.Action, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return value.lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    if action.nargs not in (None, "?"):
        return [conv(v) for v in value.split()]
    return conv(value)


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    global_dests = {a.dest for a in parser._actions}
    for p in [parser, *sub_action.choices.values()]:
        defaults = {}
        for action in p._actions:
            # global flags live on the top-level parser so a verb cannot override them
            if action.dest in values and (p is parser or action.dest not in global_dests):
                defaults[action.dest] = _convert(action, values[action.dest])
                action.required = False
        p.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
