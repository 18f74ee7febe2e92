"""Command-line entry point wiring the modules into reproducible runs.

Subcommands: synth, stats, encode, fewshot, train, eval.  Exit codes:
0 success, 1 usage error, 2 data error, 3 upstream-service error.  File
outputs are written atomically (write-then-rename) and every artifact-
producing run records a manifest before doing any work.  Flag values
override a JSON --config file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Callable

from .evaluate import CSV_HEADER, MODES, evaluate_run
from .formats import convert_causal, convert_seq2seq, distill_to_training
from .llm import LLMError, MockLLMClient, OpenAIChatClient, PermanentLLMError, RetryPolicy
from .manifest import RunManifest
from .records import DataError, read_records, write_records
from .synth import (
    PROMPT_VERSION,
    label_stats,
    render_label_stats,
    subsample,
    synthesize,
)
from .codec import write_tagged
from .tagger import HashedWindowTagger, LookupTagger, TrainConfig, fit_tagger
from .tasks import (
    FewShotSpec,
    fewshot_sample,
    read_task_items,
    schema_from_config,
    to_training_examples,
    write_task_items,
)


class UsageError(Exception):
    """Bad invocation; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the spec wants 1
        raise UsageError(f"{self.prog}: {message}")


def _atomic_write(path: Path, write_fn: Callable[[Path], object]) -> None:
    """Write via a sibling temp file so interrupted runs leave no partials."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        config = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return config


def _resolve(args: argparse.Namespace, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def _require_readable(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"not a readable file: {path}")
    return p


def _load_schema(args: argparse.Namespace):
    if not getattr(args, "task_config", None):
        raise UsageError("--task-config is required for task datasets")
    config = _load_config_file(args.task_config)
    if getattr(args, "task", None):
        config.setdefault("task", args.task)
        if config["task"].lower() != args.task.lower():
            raise UsageError(
                f"--task {args.task} does not match task config {config['task']!r}"
            )
    try:
        return schema_from_config(config)
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad task config: {exc}") from exc


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    n = _resolve(args, config, "n", 1000)
    seed = _resolve(args, config, "seed", 0)
    parallelism = _resolve(args, config, "parallelism", 1)
    model = _resolve(args, config, "model", "gpt-3.5-turbo")
    temperature = _resolve(args, config, "temperature", 0.0)
    retries = _resolve(args, config, "retries", 3)

    corpus_path = _require_readable(args.corpus)
    out = Path(args.out)

    if args.mock:
        client = MockLLMClient()
    else:
        try:
            client = OpenAIChatClient(model=model, temperature=temperature)
        except PermanentLLMError as exc:
            raise UsageError(str(exc)) from exc

    resolved = {
        "corpus": str(corpus_path),
        "out": str(out),
        "n": n,
        "mock": bool(args.mock),
        "model": None if args.mock else model,
        "temperature": None if args.mock else temperature,
        "parallelism": parallelism,
        "retries": retries,
        "prompt_version": PROMPT_VERSION,
    }
    manifest = RunManifest(command="synth", config=resolved, seed=seed)
    manifest.add_input(corpus_path)
    manifest.write(out.with_name(out.name + ".manifest.json"))

    with corpus_path.open("r", encoding="utf-8") as fh:
        result = synthesize(
            (line for line in fh if line.strip()),
            client,
            n=n,
            parallelism=parallelism,
            retry=RetryPolicy(max_retries=retries),
            corpus_name=corpus_path.stem,
        )
    _atomic_write(out, lambda tmp: write_records(tmp, result.records))
    diag_path = out.with_name(out.name + ".diagnostics.json")
    diag_path.write_text(json.dumps(result.diagnostics.as_dict(), indent=2) + "\n", "utf-8")
    if result.diagnostics.corpus_exhausted:
        print(
            f"warning: corpus exhausted after {len(result.records)} sentences "
            f"(requested {n})",
            file=sys.stderr,
        )
    print(
        f"wrote {len(result.records)} records to {out} "
        f"(drop rate {result.diagnostics.drop_rate:.3f})"
    )
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    path = _require_readable(args.data)
    bad_lines: list[int] = []
    records = list(read_records(path, bad_lines=bad_lines))
    for lineno in bad_lines:
        print(f"warning: {path}:{lineno}: malformed record skipped", file=sys.stderr)
    if not records and bad_lines:
        raise DataError(f"{path}: no valid records")
    stats = label_stats(records, top_k=args.top_k)
    if args.json_out:
        out = Path(args.json_out)
        _atomic_write(
            out,
            lambda tmp: tmp.write_text(json.dumps(stats.as_dict(), indent=2) + "\n", "utf-8"),
        )
    print(render_label_stats(stats))
    return 0


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


def _load_examples(args: argparse.Namespace, seed: int, negatives: int):
    data_path = _require_readable(args.data)
    if args.data_kind == "distill":
        records = list(read_records(data_path))
        if args.subsample is not None:
            records = subsample(records, args.subsample, seed)
        return distill_to_training(records, negatives_per_record=negatives, seed=seed)
    schema = _load_schema(args)
    items = read_task_items(data_path, schema.task)
    skipped: list[str] = []
    examples = to_training_examples(schema, items, skipped=skipped)
    for item_id in skipped:
        print(f"warning: skipped item {item_id}: unalignable gold span", file=sys.stderr)
    return examples


def cmd_encode(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    seed = _resolve(args, config, "seed", 0)
    negatives = _resolve(args, config, "negatives", 1)
    out = Path(args.out)

    resolved = {
        "data": args.data,
        "data_kind": args.data_kind,
        "format": args.format,
        "negatives": negatives,
        "subsample": args.subsample,
        "out": str(out),
    }
    manifest = RunManifest(command="encode", config=resolved, seed=seed)
    manifest.add_input(_require_readable(args.data))
    manifest.write(out.with_name(out.name + ".manifest.json"))

    examples = _load_examples(args, seed, negatives)

    if args.format == "bio":
        _atomic_write(out, lambda tmp: write_tagged(tmp, examples))
    elif args.format == "seq2seq":
        def write_s2s(tmp: Path):
            with tmp.open("w", encoding="utf-8") as fh:
                for ex in examples:
                    source, target = convert_seq2seq(ex)
                    fh.write(json.dumps({"input": source, "target": target}, ensure_ascii=False) + "\n")
        _atomic_write(out, write_s2s)
    else:
        def write_causal(tmp: Path):
            with tmp.open("w", encoding="utf-8") as fh:
                for ex in examples:
                    c = convert_causal(ex)
                    doc = {
                        "text": c.text,
                        "target_start": c.target_start,
                        "target_end": c.target_end,
                    }
                    fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
        _atomic_write(out, write_causal)
    print(f"wrote {len(examples)} {args.format} examples to {out}")
    return 0


# ---------------------------------------------------------------------------
# fewshot
# ---------------------------------------------------------------------------


def cmd_fewshot(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    seed = _resolve(args, config, "seed", 0)
    rules = [args.k is not None, args.fraction is not None, args.count is not None]
    if sum(rules) != 1:
        raise UsageError("exactly one of --k / --fraction / --count is required")
    if args.k is not None:
        spec = FewShotSpec.per_label(args.k, seed=seed)
    elif args.fraction is not None:
        spec = FewShotSpec.of_fraction(args.fraction, seed=seed)
    else:
        spec = FewShotSpec.absolute(args.count, seed=seed)

    schema = _load_schema(args)
    data_path = _require_readable(args.data)
    out = Path(args.out)
    resolved = {
        "data": str(data_path),
        "task": schema.task,
        "rule": spec.rule,
        "k": spec.k,
        "fraction": spec.fraction,
        "count": spec.count,
        "out": str(out),
    }
    manifest = RunManifest(command="fewshot", config=resolved, seed=seed)
    manifest.add_input(data_path)
    manifest.write(out.with_name(out.name + ".manifest.json"))

    items = read_task_items(data_path, schema.task)
    try:
        sample = fewshot_sample(items, spec, schema)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    for warning in sample.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    _atomic_write(out, lambda tmp: write_task_items(tmp, sample.items))
    print(f"wrote {len(sample.items)} of {len(items)} items to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    seed = _resolve(args, config, "seed", 0)
    negatives = _resolve(args, config, "negatives", 1)
    train_config = TrainConfig(
        learning_rate=_resolve(args, config, "learning_rate", 2e-5),
        weight_decay=_resolve(args, config, "weight_decay", 0.01),
        batch_size=_resolve(args, config, "batch_size", 64),
        epochs=_resolve(args, config, "epochs", 1),
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resolved = {
        "data": args.data,
        "data_kind": args.data_kind,
        "subsample": args.subsample,
        "negatives": negatives if args.data_kind == "distill" else None,
        "init": args.init,
        "train_config": train_config.as_dict(),
    }
    manifest = RunManifest(command="train", config=resolved, seed=seed)
    manifest.add_input(_require_readable(args.data))
    manifest.write(out_dir / "manifest.json")

    if args.init:
        tagger = HashedWindowTagger.load(args.init)
        tagger.set_params(warm_start=True)
    else:
        tagger = HashedWindowTagger(
            n_features=_resolve(args, config, "n_features", 2**16),
            window=_resolve(args, config, "window", 2),
        )

    examples = _load_examples(args, seed, negatives)
    if not examples:
        raise DataError("no training examples produced from the input data")
    tagger, log = fit_tagger(tagger, examples, train_config)
    tagger.save(out_dir)
    log.to_jsonl(out_dir / "training_log.jsonl")
    final_loss = log.entries[-1].loss if log.entries else float("nan")
    print(
        f"trained on {log.n_examples} examples "
        f"({log.batches_per_epoch} batches/epoch x {train_config.epochs} epochs), "
        f"final batch loss {final_loss:.4f}; model saved to {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    schema = _load_schema(args)
    data_path = _require_readable(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if bool(args.model) == bool(args.oracle):
        raise UsageError("exactly one of --model / --oracle is required")

    resolved = {
        "data": str(data_path),
        "task": schema.task,
        "mode": args.mode,
        "model": args.model,
        "oracle": bool(args.oracle),
    }
    manifest = RunManifest(command="eval", config=resolved, seed=None)
    manifest.add_input(data_path)
    manifest.write(out_dir / "manifest.json")

    items = read_task_items(data_path, schema.task)
    if args.oracle:
        examples = to_training_examples(schema, items)
        tagger = LookupTagger().fit(examples)
    else:
        tagger = HashedWindowTagger.load(args.model)

    report = evaluate_run(schema, tagger, items, mode=args.mode)
    (out_dir / "report.json").write_text(report.to_json() + "\n", "utf-8")
    if args.csv:
        (out_dir / "report.csv").write_text(
            CSV_HEADER + "\n" + report.to_csv_row(run=str(out_dir)) + "\n", "utf-8"
        )
    print(report.render_table())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="spandistill",
        description="Distill label-to-span IE from an LLM into small taggers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a distillation dataset from a corpus")
    p.add_argument("--corpus", required=True, help="newline-delimited paragraphs, UTF-8")
    p.add_argument("--out", required=True, help="output JSONL dataset")
    p.add_argument("--n", type=int, help="number of sentences to annotate")
    p.add_argument("--mock", action="store_true", help="use the offline rule-based client")
    p.add_argument("--model", help="chat model name")
    p.add_argument("--temperature", type=float)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="label statistics of a distillation dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--json-out", help="also write the stats as JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("encode", help="convert datasets to training formats")
    p.add_argument("--data", required=True)
    p.add_argument("--data-kind", choices=("distill", "task"), default="distill")
    p.add_argument("--task", help="task id for --data-kind task")
    p.add_argument("--task-config", help="task config JSON")
    p.add_argument("--format", choices=("bio", "seq2seq", "causal"), default="bio")
    p.add_argument("--negatives", type=int, help="all-O examples per record")
    p.add_argument("--subsample", type=int, help="subsample the records first")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("fewshot", help="draw a few-shot subset of a task dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--task")
    p.add_argument("--task-config", required=True)
    p.add_argument("--k", type=int, help="per-label k-shot")
    p.add_argument("--fraction", type=float, help="uniform fraction")
    p.add_argument("--count", type=int, help="absolute sample size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("train", help="fit a tagger on distill records or a task dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--data-kind", choices=("distill", "task"), default="distill")
    p.add_argument("--task")
    p.add_argument("--task-config")
    p.add_argument("--subsample", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--init", help="directory of a saved model to fine-tune")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a tagger on a task test set")
    p.add_argument("--data", required=True)
    p.add_argument("--task")
    p.add_argument("--task-config", required=True)
    p.add_argument("--model", help="directory of a saved model")
    p.add_argument("--oracle", action="store_true", help="score a gold-memorizing tagger")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--csv", action="store_true", help="also write report.csv")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except LLMError as exc:
        print(f"upstream error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
