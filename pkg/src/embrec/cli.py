"""Command-line entry points.

    embrec eval --config <path>      run a full experiment and write reports
    embrec finetune --config <path>  train the fine-tune block and export only
    embrec metrics --recs <csv> --truth <csv> --k 20
                                     score externally produced rankings
    embrec synth --out <dir>         generate a synthetic demo dataset

Exit code is nonzero on any error.
"""

import argparse
import csv
import sys
from pathlib import Path

from .dataset import DatasetError, load_transactions
from .embedding_store import EmbeddingFormatError, load_embeddings, save_embeddings
from .harness import ExperimentConfig, HarnessError, run_experiment, run_finetune
from .metrics import METRIC_NAMES, aggregate, score_transaction
from .multitask import TrainingError
from .synthetic import make_planted_dataset, permute_rows, write_metadata_csv, write_transactions_csv


def _cmd_eval(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    report = run_experiment(config)
    sys.stdout.write(report.render_text())
    print(f"Report written to {config.report_text} and {config.report_csv}")
    return 0


def _cmd_finetune(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    if config.finetune is None:
        raise HarnessError(f"{args.config}: config has no finetune block")
    if config.metadata_path is None:
        raise HarnessError(f"{args.config}: finetune requires a metadata path")
    from .dataset import load_metadata

    log = load_transactions(config.transactions_path)
    base_label = config.finetune.base_method
    method = next((m for m in config.methods if m.label == base_label), None)
    if method is None:
        raise HarnessError(f"fine-tune base method {base_label!r} is not a configured method")
    base = load_embeddings(method.path)
    metadata = load_metadata(config.metadata_path)
    if config.finetune.export_path is None:
        config.finetune.export_path = Path(args.config).parent / "finetuned.emb"
    tuned, result = run_finetune(config, log, base, metadata)
    print(
        f"Trained {len(result.history)} epochs; best epoch {result.best_epoch} "
        f"(val loss {result.best_val_loss:.6f})"
    )
    print(f"Exported {len(tuned)} embeddings of dim {tuned.dim} to {config.finetune.export_path}")
    return 0


def _cmd_metrics(args) -> int:
    recs: dict[str, list[tuple[int, str]]] = {}
    with open(args.recs, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["transaction_id", "rank", "item_id"]:
            raise DatasetError(f"{args.recs}: expected header transaction_id,rank,item_id")
        for row in reader:
            if row:
                recs.setdefault(row[0], []).append((int(row[1]), row[2]))
    truth: dict[str, set[str]] = {}
    with open(args.truth, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["transaction_id", "item_id"]:
            raise DatasetError(f"{args.truth}: expected header transaction_id,item_id")
        for row in reader:
            if row:
                truth.setdefault(row[0], set()).add(row[1])
    if not truth:
        raise DatasetError(f"{args.truth}: no ground-truth rows")
    missing = sorted(set(truth) - set(recs))
    if missing:
        raise DatasetError(f"no recommendations for ground-truth transactions {missing[:5]}")
    scores = []
    for tid in truth:
        ranked = [item for _, item in sorted(recs[tid])]
        scores.append(score_transaction(ranked, truth[tid], args.k))
    result = aggregate(scores, args.k)
    for name in METRIC_NAMES:
        print(f"{name}@{args.k}: {getattr(result, name):.4f}")
    print(f"transactions: {len(scores)}")
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = make_planted_dataset(args.seed)
    write_transactions_csv(data.log, out / "transactions.csv")
    write_metadata_csv(data.metadata, out / "metadata.csv")
    save_embeddings(data.embedding, out / "aligned.emb")
    save_embeddings(permute_rows(data.embedding, args.seed + 1), out / "permuted.emb")
    config = {
        "methods": [
            {"label": "aligned", "path": "aligned.emb"},
            {"label": "permuted", "path": "permuted.emb"},
        ],
        "transactions": "transactions.csv",
        "metadata": "metadata.csv",
        "k": 20,
        "random_baseline": {"seed": args.seed, "trials": 50},
        "finetune": {
            "base_method": "aligned",
            "label": "aligned-shallow-ft-style",
            "tasks": [{"attribute": "style", "kind": "classification", "weight": 1.0}],
            "learning_rate": 0.01,
            "batch_size": 32,
            "patience": 5,
            "max_epochs": 60,
            "shared_dim": 32,
            "seed": args.seed,
            "export_path": "finetuned.emb",
            "history_path": "history.csv",
        },
        "output": {"text": "report.txt", "csv": "report.csv"},
    }
    import json

    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"Synthetic dataset written to {out}/ (try: embrec eval --config {out / 'config.json'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="run a full recommendation experiment")
    p_eval.add_argument("--config", required=True, help="JSON experiment config")
    p_eval.set_defaults(func=_cmd_eval)

    p_ft = sub.add_parser("finetune", help="train the fine-tune block and export embeddings")
    p_ft.add_argument("--config", required=True, help="JSON experiment config")
    p_ft.set_defaults(func=_cmd_finetune)

    p_met = sub.add_parser("metrics", help="score externally produced recommendation lists")
    p_met.add_argument("--recs", required=True, help="CSV: transaction_id,rank,item_id")
    p_met.add_argument("--truth", required=True, help="CSV: transaction_id,item_id")
    p_met.add_argument("--k", type=int, default=20)
    p_met.set_defaults(func=_cmd_metrics)

    p_syn = sub.add_parser("synth", help="generate a synthetic demo dataset")
    p_syn.add_argument("--out", required=True, help="output directory")
    p_syn.add_argument("--seed", type=int, default=7)
    p_syn.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, DatasetError, EmbeddingFormatError, TrainingError,
            ValueError, KeyError, OSError) as exc:
        print(f"embrec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
