"""Command-line entry points.

Commands: train, evaluate, edit, inpaint, synth-data, q-sweep, serve.
Exit codes are a stable scripting contract: 0 success, 2 usage or config
error, 3 numerical failure during training.

Training options merge three layers with fixed precedence: command-line flag
over JSON config file over built-in default. The config file carries exactly
the training-config schema (see ``TrainConfig``).
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (
    ColorPalette,
    InpaintingDataset,
    SegmentationDataset,
    default_palette,
    synthesize_shapes,
    write_dataset,
)
from .evaluation import (
    apply_edit,
    evaluate,
    evaluate_inpainting,
    q_sweep,
    write_q_sweep_csv,
    write_report,
)
from .geometry import EditBox
from .training import (
    NonFiniteLossError,
    TrainConfig,
    bind_palette,
    load_checkpoint,
    run_training,
)

# TrainConfig fields that have a dedicated override flag.
_CONFIG_FLAGS = (
    "variant",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "q",
    "alpha",
    "beta",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "checkpoint_every",
)


def _add_config_flags(parser: argparse.ArgumentParser, variants: tuple[str, ...]) -> None:
    parser.add_argument("--config", type=Path, help="JSON file of training-config fields")
    parser.add_argument("--variant", choices=variants)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--q", type=int)
    parser.add_argument("--alpha", type=int)
    parser.add_argument("--beta", type=int)
    parser.add_argument("--lambda1", type=float)
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--lambda3", type=float)
    parser.add_argument("--lambda4", type=float)
    parser.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)


def merged_config(
    args: argparse.Namespace,
    defaults: dict | None = None,
    forced: dict | None = None,
) -> TrainConfig:
    """Assemble a training config: forced > flag > file > defaults."""
    doc = dict(defaults or {})
    if getattr(args, "config", None):
        file_doc = json.loads(Path(args.config).read_text())
        if not isinstance(file_doc, dict):
            raise ValueError("config file must hold a JSON object")
        doc.update(file_doc)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    doc.update(forced or {})
    return TrainConfig.from_dict(doc)


def _load_palette(path: Path) -> ColorPalette:
    if path.is_dir():
        path = path / "palette.json"
    return ColorPalette.from_json(json.loads(path.read_text()))


def _parse_box(text: str, target: int) -> EditBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"box must be r1,c1,r2,c2 (got {text!r})")
    try:
        corners = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"box coordinates must be integers (got {text!r})") from None
    return EditBox(corners, target_label=target)


def _read_label_png(path: Path) -> np.ndarray:
    image = Image.open(path)
    if image.mode != "L":
        raise ValueError(f"label map must be an 8-bit grayscale PNG, got mode {image.mode}")
    return np.asarray(image, dtype=np.uint8)


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def _load_dataset(root: Path, split: str, task: str):
    if task == "inpainting":
        return InpaintingDataset.load(root, split)
    return SegmentationDataset.load(root, split)


def cmd_train(args: argparse.Namespace) -> int:
    config = merged_config(args)
    dataset = _load_dataset(args.data, "train", config.task)
    final = run_training(dataset, config, args.out)
    print(final)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    if state.config.task == "inpainting":
        dataset = InpaintingDataset.load(args.data, args.split)
        report = evaluate_inpainting(
            dataset, state, test_seed=args.seed, fid_shrinkage=args.fid_shrinkage
        )
    else:
        dataset = SegmentationDataset.load(args.data, args.split)
        report = evaluate(
            dataset,
            state,
            test_seed=args.seed,
            fid_shrinkage=args.fid_shrinkage,
            fid_reference=args.fid_reference,
        )
    text = json.dumps(report, sort_keys=True, indent=2)
    print(text)
    if args.out:
        write_report(report, args.out)
    return 0


def _edit_via_server(args: argparse.Namespace, labels: np.ndarray, box: EditBox) -> tuple[bytes, bytes]:
    import httpx

    payload = {
        "label_map": base64.b64encode(_png_bytes(labels, "L")).decode("ascii"),
        "box": list(box.corners),
        "target_label": box.target_label,
    }
    response = httpx.post(args.server.rstrip("/") + "/api/edit", json=payload, timeout=120.0)
    if response.status_code != 200:
        raise ValueError(f"server returned {response.status_code}: {response.text}")
    doc = response.json()
    return base64.b64decode(doc["manipulated_color"]), base64.b64decode(doc["manipulated_labels"])


def cmd_edit(args: argparse.Namespace) -> int:
    labels = _read_label_png(args.label_map)
    box = _parse_box(args.box, args.target)
    box.validate(*labels.shape)
    out_labels = args.out_labels or args.out.with_name(args.out.stem + "_labels.png")

    if args.server:
        color_png, labels_png = _edit_via_server(args, labels, box)
    else:
        if not args.checkpoint or not args.palette:
            raise ValueError("local mode needs --checkpoint and --palette (or pass --server)")
        state = load_checkpoint(args.checkpoint)
        bind_palette(state, _load_palette(args.palette))
        result = apply_edit(state, labels, box)
        color_png = _png_bytes(result.color, "RGB")
        labels_png = _png_bytes(result.labels.astype(np.uint8), "L")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(color_png)
    Path(out_labels).write_bytes(labels_png)
    print(args.out)
    print(out_labels)
    return 0


def cmd_inpaint(args: argparse.Namespace) -> int:
    # gl is the raw-crop special case; gl-a-mex adds the shared-discriminator
    # expansion terms on full-canvas masked levels
    recipe = args.variant or "gl-a-mex"
    args.variant = None  # mapped through `forced`, kept out of the generic merge
    forced = {
        "task": "inpainting",
        "variant": "gl" if recipe == "gl" else "a-mex",
    }
    config = merged_config(args, defaults={"q": 4, "alpha": 4, "beta": 4}, forced=forced)
    dataset = InpaintingDataset.load(args.data, "train")
    final = run_training(dataset, config, args.out)
    print(final)
    if (Path(args.data) / "test" / "images").is_dir():
        state = load_checkpoint(final)
        test_set = InpaintingDataset.load(args.data, "test")
        report = evaluate_inpainting(
            state=state, dataset=test_set, fid_shrinkage=args.fid_shrinkage
        )
        print(json.dumps(report, sort_keys=True, indent=2))
        write_report(report, Path(args.out) / "report.json")
    return 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    palette = default_palette()
    rng = np.random.default_rng(args.seed)
    train = synthesize_shapes(args.train, args.height, args.width, rng, palette)
    test = synthesize_shapes(args.test, args.height, args.width, rng, palette)
    image_rng = np.random.default_rng(args.image_seed)
    write_dataset(
        args.out, train, test, palette, with_images=args.with_images, image_rng=image_rng
    )
    print(args.out)
    return 0


def cmd_q_sweep(args: argparse.Namespace) -> int:
    base = merged_config(args, forced={"task": "segmentation"})
    q_values = [int(p) for p in args.q_values.split(",") if p.strip() != ""]
    train_set = SegmentationDataset.load(args.data, "train")
    test_set = SegmentationDataset.load(args.data, "test")
    rows = q_sweep(train_set, test_set, base, q_values, args.out, test_seed=args.test_seed)
    csv_path = Path(args.out) / "q_sweep.csv"
    write_q_sweep_csv(rows, csv_path)
    for row in rows:
        print(f"q={row['q']} tiou={row['tiou']:.4f} hamm={row['hamm']:.4f}")
    print(csv_path)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    static_dir = args.static
    if static_dir is None and Path("frontend/dist").is_dir():
        static_dir = Path("frontend/dist")
    app = create_app(
        checkpoint=args.checkpoint,
        dataset_dir=args.dataset,
        translate_checkpoint=args.translate_checkpoint,
        static_dir=static_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segedit",
        description="Semantic editing of segmentation maps with expansion-consistent adversarial training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an editing model on a label-map dataset")
    p_train.add_argument("--data", type=Path, required=True, help="dataset root directory")
    p_train.add_argument("--out", type=Path, required=True, help="run directory")
    _add_config_flags(p_train, ("basic", "gl", "mex", "a-mex"))
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a held-out split")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--seed", type=int, default=679, help="test-time box sampling seed")
    p_eval.add_argument("--out", type=Path, help="also write the report to this file")
    p_eval.add_argument("--fid-shrinkage", dest="fid_shrinkage", type=float, default=0.0)
    p_eval.add_argument(
        "--fid-reference", dest="fid_reference", choices=("edited", "all"), default="edited"
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_edit = sub.add_parser("edit", help="apply one edit to a label map")
    p_edit.add_argument("--label-map", dest="label_map", type=Path, required=True)
    p_edit.add_argument("--box", required=True, help="r1,c1,r2,c2 (inclusive corners)")
    p_edit.add_argument("--target", type=int, required=True, help="label painted inside the box")
    p_edit.add_argument("--out", type=Path, required=True, help="output color PNG path")
    p_edit.add_argument("--out-labels", dest="out_labels", type=Path)
    p_edit.add_argument("--checkpoint", type=Path)
    p_edit.add_argument("--palette", type=Path, help="palette.json or dataset root")
    p_edit.add_argument("--server", help="edit through a running service instead of a local checkpoint")
    p_edit.set_defaults(func=cmd_edit)

    p_inpaint = sub.add_parser("inpaint", help="train (and score) the image inpainting pipeline")
    p_inpaint.add_argument("--data", type=Path, required=True, help="RGB dataset root")
    p_inpaint.add_argument("--out", type=Path, required=True, help="run directory")
    p_inpaint.add_argument("--fid-shrinkage", dest="fid_shrinkage", type=float, default=0.0)
    _add_config_flags(p_inpaint, ("gl", "gl-a-mex"))
    p_inpaint.set_defaults(func=cmd_inpaint)

    p_synth = sub.add_parser("synth-data", help="generate the bundled synthetic shapes dataset")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--train", type=int, default=64)
    p_synth.add_argument("--test", type=int, default=16)
    p_synth.add_argument("--height", type=int, default=32)
    p_synth.add_argument("--width", type=int, default=32)
    p_synth.add_argument("--seed", type=int, default=20)
    p_synth.add_argument("--image-seed", dest="image_seed", type=int, default=21)
    p_synth.add_argument("--with-images", dest="with_images", action="store_true")
    p_synth.set_defaults(func=cmd_synth_data)

    p_sweep = sub.add_parser("q-sweep", help="train one model per expansion count and tabulate scores")
    p_sweep.add_argument("--data", type=Path, required=True)
    p_sweep.add_argument("--out", type=Path, required=True)
    p_sweep.add_argument("--q-values", dest="q_values", default="0,1,2,4,8")
    p_sweep.add_argument("--test-seed", dest="test_seed", type=int, default=679)
    _add_config_flags(p_sweep, ("mex", "a-mex"))
    p_sweep.set_defaults(func=cmd_q_sweep)

    p_serve = sub.add_parser("serve", help="run the HTTP edit service")
    p_serve.add_argument(
        "--checkpoint", type=Path, help="model to serve; omit to browse only (edits answer 503)"
    )
    p_serve.add_argument("--dataset", type=Path, help="dataset root to browse and score against")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--translate-checkpoint", dest="translate_checkpoint", type=Path)
    p_serve.add_argument("--static", type=Path, help="frontend bundle to serve at / (default: frontend/dist if present)")
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
