"""Command-line entry point.

Subcommands mirror the pipeline stages; every command takes --config and
optional --seed/--out overrides.  Exit codes: 0 success, 2 configuration
error, 3 runtime failure.
"""

import argparse
import logging
import sys

from evonas import pipeline
from evonas.errors import ConfigError, EvoNasError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="evonas",
        description="Architecture search for speaker-embedding networks")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output dir")
        return p

    add("gen-data", "generate a synthetic corpus")
    add("extract-features", "extract features from a WAV manifest")
    train = add("train-hypernet", "train the weight-sharing hyper-network")
    train.add_argument("--resume", default=None,
                       help="resume from an earlier train-hypernet stage dir")
    add("search", "run the memetic search against the trained hyper-network")
    retrain = add("retrain", "retrain searched and baseline sub-networks")
    retrain.add_argument("--genome", default=None,
                         help="genome text; default: latest search result")
    evaluate = add("evaluate", "score the final trial set with a model")
    evaluate.add_argument("--checkpoint", default=None,
                          help="model checkpoint; default: latest retrain")
    evaluate.add_argument("--genome", default=None,
                          help="genome text for the checkpoint")
    add("report", "aggregate stage outputs into one report")
    return parser


def run(args):
    config = pipeline.load_config(args.config, seed=args.seed, out_dir=args.out)
    if args.command == "gen-data":
        out = pipeline.cmd_gen_data(config)
    elif args.command == "extract-features":
        out = pipeline.cmd_extract_features(config)
    elif args.command == "train-hypernet":
        out = pipeline.cmd_train_hypernet(config, resume_from=args.resume)
    elif args.command == "search":
        out = pipeline.cmd_search(config)
    elif args.command == "retrain":
        out = pipeline.cmd_retrain_eval(config, genome_text=args.genome)
    elif args.command == "evaluate":
        out = pipeline.cmd_evaluate(config, checkpoint=args.checkpoint,
                                    genome_text=args.genome)
    else:
        out = pipeline.cmd_report(config)
    print(out)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvoNasError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
