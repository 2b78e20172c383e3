#!/usr/bin/env python3
"""
Temporal N-tuple Reasoner - Main Entry Point
Train, evaluate and explain multi-hop reasoning agents on n-tuple temporal KGs.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, TextIO

# Add reasoner to path
sys.path.insert(0, str(Path(__file__).parent))

from reasoner.checkpoint import load_checkpoint
from reasoner.config_parser import ConfigParser
from reasoner.dataset import add_inverse_facts, convert_tsv, extract_queries, load_dataset
from reasoner.errors import ConfigError, ReasonerError
from reasoner.inference import beam_search, evaluate, explain, select_queries, SUBSETS
from reasoner.models import Query, RunConfig
from reasoner.synth import generate
from reasoner.training import train

logger = logging.getLogger("reasoner.cli")

ABLATIONS = ("no_sc", "no_pp", "no_cp", "no_fp", "uniform_gate")


def config_keys_help() -> str:
    """Every run-config key with its default and meaning."""
    defaults = RunConfig()
    lines = ["run config keys (YAML file or --set key=value):"]
    for key in RunConfig.keys():
        lines.append(f"  {key} (default {getattr(defaults, key)!r}): {RunConfig.help_for(key)}")
    return "\n".join(lines)


class ReasonerCLI:
    """Command implementations; each returns the JSON document it prints."""

    def __init__(self, out: TextIO | None = None):
        self.out = out or sys.stdout
        self.parser = ConfigParser()

    def emit(self, document: Any) -> None:
        self.out.write(json.dumps(document, ensure_ascii=False) + "\n")

    def cmd_train(self, args: argparse.Namespace) -> dict:
        flags = {
            "dataset": args.dataset,
            "output_dir": args.output_dir,
            "seed": args.seed,
            "threads": args.threads,
            "epochs": args.epochs,
        }
        for name in ABLATIONS:
            if getattr(args, name):
                flags[name] = True
        config = self.parser.load_run_config(args.config, args.set or (), **flags)
        if not config.dataset:
            raise ConfigError("no dataset given; set `dataset` in the config or pass --dataset")
        result = train(config)
        return {
            "output_dir": config.output_dir,
            "best_epoch": result.best_epoch,
            "best_valid_mrr": result.best_valid_mrr,
            "config": config.to_dict(),
        }

    def _restore(self, checkpoint_path: str, dataset: str | None):
        checkpoint = load_checkpoint(checkpoint_path)
        config = checkpoint.config
        ds = add_inverse_facts(load_dataset(dataset or config.dataset))
        return checkpoint, config, ds, checkpoint.restore_policy(ds)

    def cmd_eval(self, args: argparse.Namespace) -> dict:
        checkpoint, config, ds, policy = self._restore(args.checkpoint, args.dataset)
        beam_size = args.beam_size or config.beam_size
        queries = select_queries(extract_queries(ds.splits[args.split]), ds, args.subset, args.predicates)
        echo = {**config.to_dict(), "split": args.split, "subset": args.subset,
                "beam_size": beam_size, "predicates": args.predicates}
        result = evaluate(queries, ds, policy, beam_size, config.max_steps,
                          threads=args.threads if args.threads is not None else config.threads,
                          config=echo)
        document = result.to_dict()
        if args.output:
            with open(args.output, "w", encoding="utf-8") as f:
                json.dump(document, f, indent=2)
        return document

    def cmd_explain(self, args: argparse.Namespace) -> list[dict]:
        checkpoint, config, ds, policy = self._restore(args.checkpoint, args.dataset)
        ds, facts = ds.with_query_facts(args.queries)
        queries = []
        for fact in facts:
            sources = (fact, fact.inverted()) if args.both else (fact,)
            queries.extend(Query(source=s, answer=s.object, query_time=s.timestamp) for s in sources)
        beam_size = args.beam_size or config.beam_size
        encodings = {}
        records = []
        for query in queries:
            if query.query_time not in encodings:
                encodings[query.query_time] = policy.encode_snapshot(ds, query.query_time)
            ranked = beam_search(query, ds, encodings[query.query_time], policy, beam_size,
                                 config.max_steps, config.score_aggregation)
            record = explain(query, ranked, ds)
            record["config"] = config.to_dict()
            records.append(record)
        if args.output:
            with open(args.output, "w", encoding="utf-8") as f:
                for record in records:
                    f.write(json.dumps(record, ensure_ascii=False) + "\n")
        return records

    def cmd_synth_gen(self, args: argparse.Namespace) -> dict:
        cfg = self.parser.load_synth_config(args.config, seed=args.seed)
        ds = generate(cfg, args.out_dir)
        return {**ds.stats(), **ds.metadata, "output_dir": str(args.out_dir)}

    def cmd_stats(self, args: argparse.Namespace) -> dict:
        return load_dataset(args.dataset).stats()

    def cmd_convert(self, args: argparse.Namespace) -> dict:
        return convert_tsv(args.src, args.dst).stats()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reasoner",
        description="Explainable multi-hop reasoning over n-tuple temporal knowledge graphs.",
    )
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent", epilog=config_keys_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p.add_argument("--output-dir", dest="output_dir", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, help="worker threads, 0 for all cores")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--no-sc", dest="no_sc", action="store_true", help=RunConfig.help_for("no_sc"))
    p.add_argument("--no-pp", dest="no_pp", action="store_true", help=RunConfig.help_for("no_pp"))
    p.add_argument("--no-cp", dest="no_cp", action="store_true", help=RunConfig.help_for("no_cp"))
    p.add_argument("--no-fp", dest="no_fp", action="store_true", help=RunConfig.help_for("no_fp"))
    p.add_argument("--uniform-gate", dest="uniform_gate", action="store_true",
                   help=RunConfig.help_for("uniform_gate"))

    p = sub.add_parser("eval", help="evaluate a checkpoint with time-aware filtered ranking")
    p.add_argument("checkpoint", help="checkpoint.json written by train")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--dataset", help="dataset directory (defaults to the checkpoint's)")
    p.add_argument("--beam-size", dest="beam_size", type=int, help="beam width (defaults to the checkpoint's)")
    p.add_argument("--subset", default="all", choices=SUBSETS, help="seen/unseen query subset")
    p.add_argument("--predicates", nargs="+", help="only score queries of these predicates")
    p.add_argument("--threads", type=int, help="worker threads, 0 for all cores")
    p.add_argument("--output", help="also write the result JSON here")

    p = sub.add_parser("explain", help="emit the best reasoning path for each query")
    p.add_argument("checkpoint", help="checkpoint.json written by train")
    p.add_argument("queries", help="JSON-lines facts; the second core entity is predicted")
    p.add_argument("--both", action="store_true", help="also predict the first core entity")
    p.add_argument("--dataset", help="dataset directory (defaults to the checkpoint's)")
    p.add_argument("--beam-size", dest="beam_size", type=int, help="beam width")
    p.add_argument("--output", help="write JSON-lines here instead of stdout")

    p = sub.add_parser("synth-gen", help="generate a synthetic corpus with planted rules")
    p.add_argument("config", help="YAML generator config")
    p.add_argument("out_dir", help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the generator seed")

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("dataset", help="dataset directory")

    p = sub.add_parser("convert", help="convert tab-separated corpora into the canonical format")
    p.add_argument("src", help="directory with train/valid/test .txt or .tsv files")
    p.add_argument("dst", help="output dataset directory")
    return parser


COMMANDS = {
    "train": ReasonerCLI.cmd_train,
    "eval": ReasonerCLI.cmd_eval,
    "explain": ReasonerCLI.cmd_explain,
    "synth-gen": ReasonerCLI.cmd_synth_gen,
    "stats": ReasonerCLI.cmd_stats,
    "convert": ReasonerCLI.cmd_convert,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cli = ReasonerCLI()
    try:
        document = COMMANDS[args.command](cli, args)
    except ReasonerError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    if isinstance(document, list):
        if not getattr(args, "output", None):
            for record in document:
                cli.emit(record)
    else:
        cli.emit(document)
    return 0


if __name__ == "__main__":
    sys.exit(main())
