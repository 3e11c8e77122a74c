"""Command-line driver for the full pipeline.

    ffdvlc gen-channels --count 250 --out data
    ffdvlc train --data data --checkpoint model.ffdn
    ffdvlc fit-mmse --data data --mmse prior.mmse
    ffdvlc sweep --data data --checkpoint model.ffdn --out sweep.csv
    ffdvlc compare --data data --checkpoint model.ffdn --mmse prior.mmse \\
        --mode tunable --out compare.csv

Every subcommand reads ``--config`` (flat ``key = value`` file), then the
``--array`` scene preset, then the ``--set key=value`` overrides, then the
dedicated flags.
"""

import argparse
import logging
import sys

from .channel import VlcScene, large_scene
from .config import dump_config, load_config
from .dataset import generate_dataset, load_dataset, save_dataset, split_ids
from .experiments import (
    ExperimentConfig,
    csv_comment,
    run_mmse_comparison,
    run_sensitivity_sweep,
    write_curve_csv,
)
from .mmse import fit_mmse, load_mmse, save_mmse
from .model import load_checkpoint
from .training import load_train_ids, save_train_ids, save_training, train
from .utils import ArtifactMissingError, FfdvlcError
from .version import version

logger = logging.getLogger("ffdvlc")

# Subcommand -> config key that --seed overrides
SEED_KEYS = {
    "gen-channels": "dataset.seed",
    "train": "train.seed",
    "fit-mmse": "mmse.seed",
    "sweep": "sweep.seeds",
    "compare": "sweep.seeds",
}

# --array value -> scene with that channel-image size
ARRAY_PRESETS = {"128": VlcScene(), "256": large_scene()}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config entry (repeatable)",
    )
    common.add_argument("--seed", type=int, help="seed for this stage")
    common.add_argument(
        "--array",
        choices=sorted(ARRAY_PRESETS),
        help="scene preset by channel-image size (N_r = N_t)",
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging"
    )

    parser = argparse.ArgumentParser(
        prog="ffdvlc",
        description="Channel-image denoising for massive-MIMO VLC.",
    )
    parser.add_argument("--version", action="version", version=version)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "gen-channels", parents=[common], help="generate a channel-image dataset"
    )
    gen.add_argument("--count", type=int, help="number of records")
    gen.add_argument("--out", default="data", help="dataset directory")

    tr = sub.add_parser("train", parents=[common], help="train the denoiser")
    tr.add_argument("--data", default="data", help="dataset directory")
    tr.add_argument("--checkpoint", default="model.ffdn", help="output file")

    fm = sub.add_parser(
        "fit-mmse", parents=[common], help="fit the MMSE baseline prior"
    )
    fm.add_argument("--data", default="data", help="dataset directory")
    fm.add_argument("--mmse", default="prior.mmse", help="output file")

    for name, helptext, out in (
        ("sweep", "noise-level sensitivity sweep", "sweep.csv"),
        ("compare", "compare the denoiser with MMSE", "compare.csv"),
    ):
        ev = sub.add_parser(name, parents=[common], help=helptext)
        ev.add_argument("--data", default="data", help="dataset directory")
        ev.add_argument("--checkpoint", default="model.ffdn")
        if name == "compare":
            ev.add_argument("--mmse", default="prior.mmse")
        ev.add_argument("--mode", choices=["fixed", "tunable"])
        ev.add_argument("--policy", choices=["matched", "plus5"])
        ev.add_argument("--out", default=out, help="output CSV")
    return parser


def preset_overrides(scene):
    return [
        f"scene.{grid}.{axis}={getattr(getattr(scene, grid), axis)}"
        for grid in ("led_grid", "pd_grid")
        for axis in ("count_x", "count_y", "spacing", "height")
    ]


def resolve_config(args):
    overrides = []
    if args.array is not None:
        overrides += preset_overrides(ARRAY_PRESETS[args.array])
    overrides += args.overrides
    if args.seed is not None:
        overrides.append(f"{SEED_KEYS[args.command]}={args.seed}")
    if getattr(args, "count", None) is not None:
        overrides.append(f"dataset.count={args.count}")
    if getattr(args, "mode", None) is not None:
        overrides.append(f"sweep.mode={args.mode}")
    if getattr(args, "policy", None) is not None:
        overrides.append(f"sweep.tunable_policy={args.policy}")
    return load_config(ExperimentConfig(), args.config, overrides)


def log_config(config):
    """Log the resolved config and seeds at the default verbosity."""
    logger.warning("Resolved configuration:\n%s", dump_config(config).rstrip())
    logger.warning(
        "Seeds: dataset=%d train=%d mmse=%d sweep=%s",
        config.dataset.seed,
        config.train.seed,
        config.mmse.seed,
        ",".join(map(str, config.sweep.seeds)),
    )


def _split(config, directory):
    records = load_dataset(directory)
    if not records:
        raise ArtifactMissingError(f"Dataset {directory} holds no records")
    train_ids, test_ids = split_ids(
        [r.id for r in records], config.dataset.test_fraction
    )
    train_set = set(train_ids)
    return (
        [r for r in records if r.id in train_set],
        [r for r in records if r.id not in train_set],
    )


def cmd_gen_channels(config, args):
    records = generate_dataset(
        config.scene,
        config.dataset.count,
        config.dataset.seed,
        config.ranges,
        workers=config.dataset.workers,
        max_retries=config.dataset.max_retries,
    )
    save_dataset(records, args.out)


def cmd_train(config, args):
    train_records, _ = _split(config, args.data)
    result = train(train_records, config.model, config.train)
    save_training(result, config.model, args.checkpoint)


def cmd_fit_mmse(config, args):
    train_records, _ = _split(config, args.data)
    model = fit_mmse(
        [r.clean_image for r in train_records],
        patch_size=config.mmse.patch_size,
        max_patches=config.mmse.max_patches,
        seed=config.mmse.seed,
    )
    save_mmse(model, args.mmse)
    save_train_ids([r.id for r in train_records], args.mmse)


def _load_model(config, checkpoint):
    params, model_config = load_checkpoint(checkpoint)
    if model_config != config.model:
        logger.warning(
            "Checkpoint architecture %s differs from the configured %s;"
            " using the checkpoint's",
            model_config,
            config.model,
        )
    return params, load_train_ids(checkpoint)


def cmd_sweep(config, args):
    params, train_ids = _load_model(config, args.checkpoint)
    _, test_records = _split(config, args.data)
    points = run_sensitivity_sweep(
        params, test_records, config.sweep, train_ids=train_ids
    )
    write_curve_csv(points, args.out, csv_comment(config))


def cmd_compare(config, args):
    params, train_ids = _load_model(config, args.checkpoint)
    mmse_model = load_mmse(args.mmse)
    mmse_ids = load_train_ids(args.mmse)
    _, test_records = _split(config, args.data)
    run_ids = sorted(set(train_ids) | set(mmse_ids))
    points = run_mmse_comparison(
        params, mmse_model, test_records, config.sweep, train_ids=run_ids
    )
    write_curve_csv(points, args.out, csv_comment(config))


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "train": cmd_train,
    "fit-mmse": cmd_fit_mmse,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def cli_main(argv=None):
    """Run the command line and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        config = resolve_config(args)
        log_config(config)
        COMMANDS[args.command](config, args)
    except (FfdvlcError, OSError) as exc:
        print(f"ffdvlc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


__all__ = ["build_parser", "resolve_config", "cli_main", "main"]
