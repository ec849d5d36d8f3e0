"""Command-line entry points.

    artextract extract --model resnet50 --layer pool --images <dir> --out <emb1>
    artextract finetune-deep --config <path>

Both write an EMB1 embedding file plus a `filename,item_id,status`
manifest CSV.
"""

import argparse
import json
import sys
from pathlib import Path

from .extract import ExtractorSpec, extract
from .finetune import FinetuneSpec, TaskDef, TrainingDivergedError, deep_fine_tune, split_items
from .metadata import load_metadata
from .models import WeightsUnavailableError


def _cmd_extract(args) -> int:
    spec = ExtractorSpec(
        model=args.model,
        images_dir=Path(args.images),
        out_path=Path(args.out),
        layer=args.layer,
        weights=args.weights,
        input_size=args.input_size,
        seed=args.seed,
        manifest_path=Path(args.manifest) if args.manifest else None,
    )
    result = extract(spec)
    print(f"Wrote {len(result.item_ids)} embeddings of dim {result.dim} to {result.out_path}")
    if result.skipped:
        print(f"Skipped {len(result.skipped)} undecodable images (see {result.manifest_path})")
    return 0


def _cmd_finetune_deep(args) -> int:
    config_path = Path(args.config)
    base = config_path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    raw = json.loads(config_path.read_text(encoding="utf-8"))
    tasks = [
        TaskDef(t["attribute"], t["kind"], float(t.get("weight", 1.0)))
        for t in raw["tasks"]
    ]
    spec = FinetuneSpec(
        model=raw["model"],
        images_dir=resolve(raw["images"]),
        out_path=resolve(raw["out"]),
        tasks=tasks,
        weights=raw.get("weights", "imagenet"),
        input_size=raw.get("input_size"),
        seed=int(raw.get("seed", 0)),
        learning_rate=float(raw.get("learning_rate", 0.0001)),
        batch_size=int(raw.get("batch_size", 32)),
        patience=int(raw.get("patience", 5)),
        max_epochs=int(raw.get("max_epochs", 50)),
        manifest_path=resolve(raw["manifest"]) if "manifest" in raw else None,
        history_path=resolve(raw["history"]) if "history" in raw else None,
    )
    _, rows = load_metadata(resolve(raw["metadata"]))
    labeled = [
        item for item in sorted(rows)
        if all(rows[item].get(t.attribute) is not None for t in tasks)
    ]
    split = split_items(labeled, seed=int(raw.get("split_seed", 0)))
    result = deep_fine_tune(spec, rows, split)
    print(
        f"Fine-tuned {spec.model} for {result.stopped_epoch} epochs; "
        f"exported {len(result.item_ids)} embeddings of dim {result.dim} to {result.out_path}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artextract", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="embed a directory of images")
    p_ext.add_argument("--model", required=True,
                       help="vgg19 | resnet50 | inception_v3 | inception_resnet_v2 | nasnet_large")
    p_ext.add_argument("--layer", default="pool", help="extraction layer (default: pooled output)")
    p_ext.add_argument("--images", required=True, help="image directory")
    p_ext.add_argument("--out", required=True, help="output EMB1 path")
    p_ext.add_argument("--weights", default="imagenet",
                       help="'imagenet', 'random', or a weights file path")
    p_ext.add_argument("--input-size", type=int, default=None)
    p_ext.add_argument("--seed", type=int, default=0)
    p_ext.add_argument("--manifest", default=None)
    p_ext.set_defaults(func=_cmd_extract)

    p_ft = sub.add_parser("finetune-deep", help="update all backbone weights, then export")
    p_ft.add_argument("--config", required=True, help="JSON fine-tune config")
    p_ft.set_defaults(func=_cmd_finetune_deep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (WeightsUnavailableError, TrainingDivergedError, ValueError, OSError,
            KeyError, NotADirectoryError) as exc:
        print(f"artextract: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
