"""Command-line entry point: ``tenet <subcommand> ...``.

Exit codes: 0 success, 1 validation or property failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from . import config as cfgio
from .compute import configure_threads
from .data import SynthSpec, evaluate, read_manifest, read_wav, synth_dataset, write_report_json
from .errors import ConfigurationError, FormatError, TenetError
from .trainer import (TrainConfig, enhance, format_ablation, load_manifest_pairs,
                      run_ablation_matrix, train_from_manifests)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("tenet")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; their defaults are suppressed so
    # that ``tenet --seed 3 train ...`` is not reset by the subparser
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default(None),
                        help="override the seed of the config or synthesis spec")
    common.add_argument("--threads", type=int, default=default(None),
                        help="number of intra-op threads (default: config value, else 1)")
    common.add_argument("--verbose", "-v", action="count", default=default(0),
                        help="more logging; repeat for debug output")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="tenet", parents=[_global_flags(suppress=False)],
                                     description="Time-reversal siamese speech enhancement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic noisy dataset")
    p.add_argument("--spec", required=True, help="synthesis spec file with a [synth] section")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", parents=[common], help="train a model from manifests")
    p.add_argument("--config", required=True, help="training config file")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--ablation-matrix", action="store_true",
                   help="train all five ablation variants into subdirectories of --out")

    p = sub.add_parser("enhance", parents=[common], help="enhance a WAV file or directory")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--in", dest="inp", required=True, help="input WAV or directory")
    p.add_argument("--out", required=True, help="output WAV or directory")

    p = sub.add_parser("evaluate", parents=[common], help="SI-SDR report for enhanced files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True, help="directory of <id>.wav files")
    p.add_argument("--json", help="also write the report as JSON")

    p = sub.add_parser("verify", parents=[common], help="run the built-in property checks")
    p.add_argument("--wav", help="also run the signal checks on this file")
    p.add_argument("--no-gradients", action="store_true",
                   help="skip the finite-difference gradient check")
    return parser


def _load_synth_spec(path, seed) -> SynthSpec:
    sections = cfgio.read_config(path)
    cfgio.check_sections(sections, ("synth",), str(path))
    if "synth" not in sections:
        raise ConfigurationError(f"{path}: missing [synth] section")
    values = dict(sections["synth"])
    if seed is not None:
        values["seed"] = seed
    return cfgio.fill_dataclass(SynthSpec, values, "synth")


def cmd_synth_data(args) -> int:
    spec = _load_synth_spec(args.spec, args.seed)
    result = synth_dataset(spec, args.out)
    manifests = result if isinstance(result, dict) else {"all": result}
    for name, manifest in manifests.items():
        print(f"{name}: {len(manifest)} items -> {Path(manifest.root) / 'manifest.csv'}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **overrides))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, augment=dataclasses.replace(cfg.augment, seed=args.seed))
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    train_manifest, val_manifest = read_manifest(args.train), read_manifest(args.val)
    if args.ablation_matrix:
        rows = run_ablation_matrix(cfg, load_manifest_pairs(train_manifest, cfg.train.sample_rate),
                                   load_manifest_pairs(val_manifest, cfg.train.sample_rate),
                                   args.out)
        print(format_ablation(rows))
        return EXIT_OK
    result = train_from_manifests(cfg, train_manifest, val_manifest, args.out)
    print(f"best validation SI-SDR {result.best_val_sisdr:.3f} dB after "
          f"{len(result.runlog)} epochs; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    if not Path(args.inp).exists():
        raise FileNotFoundError(f"input not found: {args.inp}")
    outputs = enhance(args.ckpt, args.inp, args.out)
    for item in outputs:
        log.info("%s -> %s (%d samples)", item["input"], item["output"], item["samples"])
    print(f"enhanced {len(outputs)} file(s) into {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate(read_manifest(args.manifest), args.enhanced)
    print(report.table())
    if args.json:
        write_report_json(args.json, report)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    wav = read_wav(args.wav) if args.wav else None
    results = run_all(seed=args.seed or 0, wav=wav, gradients=not args.no_gradients)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_FAILED


COMMANDS = {"synth-data": cmd_synth_data, "train": cmd_train, "enhance": cmd_enhance,
            "evaluate": cmd_evaluate, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    configure_threads(args.threads or 1)
    try:
        return COMMANDS[args.command](args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TenetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
