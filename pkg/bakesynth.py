"""
bakesynth: crowded synthetic detection datasets from single-object images.

Subcommands:
  annotate    derive crops and boxes from candidate masks of single-object images
  synthesize  Copy-Paste synthesis of a dataset from the configured object banks
  stats       objects per image, class histogram and area fractions of a dataset
  augment     standardize and run the online augmentation chain on a dataset
  validate    check label files of a dataset, exit 1 on any violation
  assemble    write the real sets of a preset (and a synthetic run) into one dataset
  config      print the default, a preset's or the resolved configuration

Usage:
    python bakesynth.py annotate --input raw/train_b --output banks/train_b
    python bakesynth.py synthesize --config run.json --preset type-balance -n 2000 --jobs 4
    python bakesynth.py stats out/synth --json out/synth_stats.json --plot out/synth_classes.png
    python bakesynth.py config --defaults

Exit codes: 0 success, 1 validation or data failure, 2 configuration or usage error.
"""

import sys
import json
import logging
import argparse
from pathlib import Path

from data_collector.auto_annotate import annotate_directory
from data_collector.bank_loader import BankError, load_backgrounds, load_object_bank
from data_collector.records import ObjectBank
from data_collector.utils import write_json
from evaluation.metric_calculator import MetricCalculator
from synthesis.config import (
    BANK_NAMES, PRESETS, ConfigError, RunConfig, default_config_dict, load_run_config,
)
from synthesis.copy_paste import CanvasTooSmallError, balance_pool, select_backgrounds, synthesize_dataset
from synthesis.export import assemble_dataset, augment_dataset

logger = logging.getLogger("bakesynth")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2

BANK_ORIGINS = {"train_b": "captured", "train_c": "captured", "train_s": "generated"}


# ================= Arguments =================

def parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", type=str, default=None, help="Base directory for every relative path (default: .)")
    common.add_argument("--config", type=str, default=None, help="JSON run config")
    common.add_argument("--preset", type=str, default=None, choices=sorted(PRESETS),
                        help="Training-set composition preset")
    common.add_argument("--seed", type=int, default=None, help="Seed (default: config, then $BAKESYNTH_SEED)")
    common.add_argument("--jobs", type=int, default=None, help="Worker processes")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(description="bakesynth: synthetic crowded detection datasets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", parents=[common], help="Crops and boxes from candidate masks")
    p.add_argument("--input", type=str, default=None, help="Directory of <id>.png, <id>.label, <id>.masks/")
    p.add_argument("--output", type=str, default=None, help="Bank directory (default: paths.<annotate_source>)")
    p.add_argument("--source", type=str, default=None, choices=list(BANK_NAMES), help="Bank the crops belong to")

    p = sub.add_parser("synthesize", parents=[common], help="Copy-Paste synthesis")
    p.add_argument("-n", "--n-images", type=int, default=None, help="Number of images (default: config)")
    p.add_argument("--output", type=str, default=None, help="Output dataset directory")
    p.add_argument("--run-name", type=str, default=None, help="File name prefix of the run")
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=None,
                   help="Oversample classes below the threshold share")

    p = sub.add_parser("stats", parents=[common], help="Dataset statistics")
    p.add_argument("path", type=str, help="Dataset directory (images/ + labels/)")
    p.add_argument("--json", type=str, default=None, help="Also write the report as JSON here ('-' for stdout)")
    p.add_argument("--plot", type=str, default=None, help="Save a class share bar chart here")

    p = sub.add_parser("augment", parents=[common], help="Standardize and augment a dataset")
    p.add_argument("--input", type=str, default=None, help="Input dataset (default: paths.dataset)")
    p.add_argument("--output", type=str, default=None, help="Output dataset (default: paths.output)")
    p.add_argument("--longest-side", type=int, default=None, help="Longest image side after resizing")
    p.add_argument("--grayscale", action=argparse.BooleanOptionalAction, default=None, help="Export grayscale")
    p.add_argument("--dp", dest="apply_dp", action=argparse.BooleanOptionalAction, default=None,
                   help="Apply the online augmentation chain")

    p = sub.add_parser("validate", parents=[common], help="Check a dataset's labels")
    p.add_argument("path", type=str, help="Dataset directory (images/ + labels/)")

    p = sub.add_parser("assemble", parents=[common], help="Real sets plus a synthetic run as one dataset")
    p.add_argument("--output", type=str, default=None, help="Output dataset (default: paths.output)")
    p.add_argument("--synthetic", type=str, default=None, help="Synthetic run to include")
    p.add_argument("--longest-side", type=int, default=None, help="Longest image side after resizing")
    p.add_argument("--grayscale", action=argparse.BooleanOptionalAction, default=None, help="Export grayscale")

    p = sub.add_parser("config", parents=[common], help="Print configuration")
    p.add_argument("--defaults", action="store_true", help="Print the built-in defaults")

    return parser.parse_args(argv)


def build_overrides(args):
    """Flags that were given, shaped like the config file."""
    overrides = {}
    if args.root is not None:
        overrides["root"] = args.root
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.seed is not None:
        overrides.setdefault("synthesis", {})["seed"] = args.seed
    for flag, key in (("n_images", "n_images"), ("run_name", "run_name"), ("balance", "balance"),
                      ("longest_side", "longest_side"), ("grayscale", "grayscale"), ("apply_dp", "apply_dp"),
                      ("source", "annotate_source")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def print_banner(title):
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def usage_error(message):
    logger.error(message)
    return EXIT_CONFIG


# ================= Commands =================

def cmd_annotate(cfg: RunConfig, args):
    input_dir = cfg.resolve(args.input) if args.input else cfg.resolve(cfg.paths.annotate_input)
    output_dir = cfg.resolve(args.output) if args.output else cfg.resolve(getattr(cfg.paths, cfg.annotate_source))
    if not input_dir or not output_dir:
        return usage_error("annotate needs an input and an output directory (flags or config paths)")
    try:
        results = annotate_directory(input_dir, output_dir, cfg.annotation, source=cfg.annotate_source,
                                     jobs=cfg.jobs)
    except OSError as e:
        logger.error(str(e))
        return EXIT_DATA

    ok = sum(r.status == "ok" for r in results)
    skipped = sum(r.status == "skipped" for r in results)
    failed = sum(r.status == "failed" for r in results)
    print_banner("Annotation summary")
    print(f"  {'Input':<12} {input_dir}")
    print(f"  {'Output':<12} {output_dir}")
    print(f"  {'Succeeded':<12} {ok:>6}")
    print(f"  {'Skipped':<12} {skipped:>6}")
    print(f"  {'Failed':<12} {failed:>6}")
    return EXIT_DATA if failed else EXIT_OK


def load_pool(cfg: RunConfig) -> ObjectBank:
    banks = []
    for name in cfg.pool:
        path = cfg.resolve(getattr(cfg.paths, name))
        if path is None:
            raise BankError(f"pool names '{name}' but paths.{name} is not set")
        banks.append(load_object_bank(path, cfg.class_list, cast_unknown=cfg.cast_unknown,
                                      origin=BANK_ORIGINS[name]))
    return ObjectBank.merge(banks)


def cmd_synthesize(cfg: RunConfig, args):
    if not cfg.class_list:
        return usage_error("class_list is empty")
    output_dir = cfg.resolve(args.output) if args.output else cfg.resolve(cfg.paths.output)
    backgrounds_dir = cfg.resolve(cfg.paths.backgrounds)
    if not output_dir or not backgrounds_dir:
        return usage_error("synthesize needs paths.output (or --output) and paths.backgrounds")

    syn = cfg.synthesis
    try:
        bank = load_pool(cfg)
        if cfg.balance:
            bank = balance_pool(bank, syn.oversample_threshold)
        backgrounds = select_backgrounds(load_backgrounds(backgrounds_dir), syn.max_backgrounds, syn.seed)
        logger.info(f"Pool: {len(bank)} crops, {len(backgrounds)} background sources")
        manifest = synthesize_dataset(bank, backgrounds, syn, cfg.n_images, output_dir, cfg.run_name,
                                      jobs=cfg.jobs, config_hash=cfg.config_hash())
    except (BankError, CanvasTooSmallError, OSError, ValueError) as e:
        logger.error(str(e))
        return EXIT_DATA

    print_banner(f"Synthesis summary: {cfg.run_name}")
    print(f"  {'Images':<20} {manifest['n_images']:>8}")
    print(f"  {'Objects requested':<20} {manifest['requested_objects']:>8}")
    print(f"  {'Objects placed':<20} {manifest['placed_objects']:>8}")
    print(f"  {'Mean per image':<20} {manifest['placed_objects'] / manifest['n_images']:>8.2f}")
    print(f"  {'Config hash':<20} {manifest['config_hash'][:16]}")
    return EXIT_OK


def print_stats(report):
    print_banner(f"Dataset: {report['dataset']}")
    opi = report["objects_per_image"]
    print(f"  {'Images':<20} {report['n_images']:>8}")
    print(f"  {'Annotations':<20} {report['n_annotations']:>8}")
    print(f"  {'Objects per image':<20} mean {opi['mean']:.2f}  min {opi['min']}  max {opi['max']}")
    af = report["area_fraction"]
    print(f"  {'Area fraction':<20} min {af['min']:.4f}  max {af['max']:.4f}")
    if report["per_class"]:
        print(f"\n  {'Class':<24} {'Count':>8} {'Share':>8}")
        print("  " + "-" * 42)
        for label, entry in sorted(report["per_class"].items(), key=lambda kv: (-kv[1]["count"], kv[0])):
            print(f"  {label:<24} {entry['count']:>8} {entry['share']:>8.2%}")
    if report["warnings"]:
        print(f"\n  Warnings ({len(report['warnings'])}):")
        for warning in report["warnings"]:
            print(f"    - {warning}")


def cmd_stats(cfg: RunConfig, args):
    path = cfg.resolve(args.path)
    if not Path(path).is_dir():
        logger.error(f"Dataset directory not found: {path}")
        return EXIT_DATA
    report = MetricCalculator.dataset_stats(path)
    print_stats(report)
    if args.json == "-":
        print(json.dumps(report, indent=2, sort_keys=True))
    elif args.json:
        write_json(cfg.resolve(args.json), report)
        print(f"Saved report to {cfg.resolve(args.json)}")
    if args.plot:
        from evaluation.visualize import plot_class_shares
        plot_class_shares(report["per_class"], cfg.resolve(args.plot))
    return EXIT_OK


def cmd_augment(cfg: RunConfig, args):
    input_dir = cfg.resolve(args.input) if args.input else cfg.resolve(cfg.paths.dataset)
    output_dir = cfg.resolve(args.output) if args.output else cfg.resolve(cfg.paths.output)
    if not input_dir or not output_dir:
        return usage_error("augment needs an input and an output dataset (flags or config paths)")
    try:
        manifest = augment_dataset(input_dir, output_dir, cfg.augmentation, cfg.synthesis.seed,
                                   longest_side=cfg.longest_side, grayscale=cfg.grayscale,
                                   apply_dp=cfg.apply_dp, jobs=cfg.jobs, config_hash=cfg.config_hash())
    except (OSError, ValueError) as e:
        logger.error(str(e))
        return EXIT_DATA
    print_banner("Augmentation summary")
    print(f"  {'Images':<20} {manifest['n_images']:>8}")
    for kind, n in manifest["fired"].items():
        print(f"  {kind:<20} {n:>8}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args):
    path = cfg.resolve(args.path)
    if not Path(path).is_dir():
        logger.error(f"Dataset directory not found: {path}")
        return EXIT_DATA
    violations, warnings = MetricCalculator.validate_dataset(path)
    for warning in warnings:
        logger.warning(warning)
    print_banner(f"Validation: {path}")
    print(f"  {'Violations':<12} {len(violations):>6}")
    print(f"  {'Warnings':<12} {len(warnings):>6}")
    for violation in violations:
        print(f"    - {violation}")
    return EXIT_DATA if violations else EXIT_OK


def cmd_assemble(cfg: RunConfig, args):
    if not cfg.class_list:
        return usage_error("class_list is empty")
    output_dir = cfg.resolve(args.output) if args.output else cfg.resolve(cfg.paths.output)
    if not output_dir:
        return usage_error("assemble needs paths.output or --output")
    try:
        manifest = assemble_dataset(cfg, output_dir, cfg.resolve(args.synthetic) if args.synthetic else None)
    except (OSError, ValueError) as e:
        logger.error(str(e))
        return EXIT_DATA
    print_banner(f"Assembled '{cfg.preset}' into {output_dir}")
    for source, n in manifest["counts"].items():
        print(f"  {source:<12} {n:>8}")
    print(f"  {'Total':<12} {manifest['n_images']:>8}")
    return EXIT_OK


def cmd_config(cfg: RunConfig, args):
    data = default_config_dict() if args.defaults else cfg.to_dict()
    print(json.dumps(data, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "annotate": cmd_annotate,
    "synthesize": cmd_synthesize,
    "stats": cmd_stats,
    "augment": cmd_augment,
    "validate": cmd_validate,
    "assemble": cmd_assemble,
    "config": cmd_config,
}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        cfg = load_run_config(args.config, args.preset, build_overrides(args))
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    logger.info(f"Resolved config (hash {cfg.config_hash()[:16]}): "
                f"{json.dumps(cfg.to_dict(), sort_keys=True)}")
    return COMMANDS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
