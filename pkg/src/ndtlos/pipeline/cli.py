"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
Worker processes for dataset generation come from ``NDTLOS_WORKERS``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, InvalidInputError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("ndtlos")


def _config(args):
    from .config import load_config, parse_config, default_config_text

    if args.config:
        return load_config(args.config, args.seed)
    return parse_config(default_config_text(), args.seed)


def _dims(text):
    try:
        h, w = (int(v) for v in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W got {text!r}") from None
    return h, w


def _snrs(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from None


def cmd_generate(args, cfg):
    from . import experiment as ex

    samples, m = ex.generate(cfg, args.out, args.force)
    print(f"{m.n_samples} samples ({m.n_los} LoS, fraction {m.los_fraction:.3f}); "
          f"{m.n_outage} outage and {m.n_cp_rejected} cyclic-prefix rejections of {m.n_grid} grid points")
    if not m.split:
        m = ex.make_split(cfg, args.out, samples, m)
        print(f"split: {len(m.indices('train'))} train / {len(m.indices('test'))} test")


def cmd_split(args, cfg):
    from . import experiment as ex

    samples, m = ex.load_dataset(args.out)
    m = ex.make_split(cfg, args.out, samples, m, args.test_count)
    print(f"split: {len(m.indices('train'))} train / {len(m.indices('test'))} test (seed {m.split_seed})")


def cmd_features(args, cfg):
    from ..adcpm import compute_adcpm, angle_delay_transform, save_csv
    from ..evalkit import build_test_inputs
    from ..features import write_feature_csv
    from . import experiment as ex

    samples, m = ex.load_dataset(args.out)
    ofdm, array = ex.profile(cfg)
    ws = ex.Workspace(args.out)
    ws.ensure()
    tr = [samples[i] for i in m.indices("train")]
    te = [samples[i] for i in m.indices("test")]
    write_feature_csv(ws.results / "features_train.csv", ex.training_features(tr),
                      [s.label for s in tr], float("inf"))
    chans = ex.channels_for_test(te)
    labels = [s.label for s in te]
    for snr in args.snr or cfg.eval.snr_db:
        F = build_test_inputs("svm", chans, snr, cfg.seed, array, ofdm, None,
                              cfg.classic.mpc_max_paths, cfg.classic.mpc_threshold_db)
        write_feature_csv(ws.results / f"features_test_{ex.snr_tag(snr)}.csv", F, labels, snr)
    for i in range(min(args.dump_adcpm, len(te))):
        save_csv(compute_adcpm(angle_delay_transform(te[i].channel, array, ofdm)),
                 ws.results / f"adcpm_test{i}.csv")
    print(f"features written to {ws.results}")


def cmd_train(args, cfg):
    from . import experiment as ex

    arts = ex.train_models(cfg, args.out, args.model)
    for name, art in arts.items():
        print(f"trained {name} ({art.family})")


def _print_rows(results):
    for name, rows in results.items():
        for r in rows:
            print(f"{name:>16s}  snr {r.snr_db:+6.1f} dB  accuracy {r.accuracy:.4f}  auc {r.auc:.4f}")


def cmd_eval(args, cfg):
    from . import experiment as ex

    snrs = args.snr or cfg.eval.roc_snr_db
    res = ex.evaluate(cfg, args.out, args.model, snrs, snrs, write_sweep=False)
    _print_rows(res)


def cmd_sweep(args, cfg):
    from . import experiment as ex

    res = ex.evaluate(cfg, args.out, args.model, args.snr or None)
    _print_rows(res)


def cmd_flops(args, cfg):
    from ..deepnet.net import build_preset
    from ..evalkit import SEGNET_ENCODER_FLOPS, flops, reduction

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = args.input_dims or [(128, 512), (32, 128)]
    reports = []
    for d in dims:
        rep = flops(build_preset(args.preset, d))
        path = out / f"flops_{args.preset}_{d[0]}x{d[1]}.txt"
        path.write_text(rep.to_text())
        reports.append(rep)
        print(f"{args.preset} {d[0]}x{d[1]}: {rep.gflops:.4f} GFLOPs "
              f"({reduction(rep.total_flops, SEGNET_ENCODER_FLOPS):.2f}% below the 40 GFLOPs SegNet encoder)")
    if len(reports) > 1:
        base = reports[0].total_flops
        for rep in reports[1:]:
            print(f"reduction vs {'x'.join(map(str, reports[0].input_dims[1:]))}: "
                  f"{reduction(rep.total_flops, base):.2f}%")


def cmd_report(args, cfg):
    from . import experiment as ex

    path = ex.write_summary(cfg, args.out)
    sys.stdout.write(path.read_text())


def cmd_run(args, cfg):
    from . import experiment as ex

    res = ex.run_experiment(cfg, args.out, args.force)
    if res["skipped"]:
        print(f"{args.out}: already complete (use --force to rerun)")
        return
    print(Path(res["summary"]).read_text(), end="")


COMMANDS = {
    "generate": (cmd_generate, "trace the scene and write the dataset container"),
    "split": (cmd_split, "assign samples to train/test"),
    "features": (cmd_features, "write feature CSVs (and optional ADCPM dumps)"),
    "train": (cmd_train, "train the models declared in the config"),
    "eval": (cmd_eval, "score stored models at selected SNRs and write ROC CSVs"),
    "sweep": (cmd_sweep, "accuracy/AUC over the configured SNR sweep"),
    "flops": (cmd_flops, "analytic inference cost of a preset network"),
    "report": (cmd_report, "summary table from stored artifacts"),
    "run": (cmd_run, "generate, split, train, sweep and report in one go"),
}


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not overwrite flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None),
                        help="experiment config (INI); built-in desk defaults if omitted")
    common.add_argument("--seed", type=int, default=d(None), help="override the experiment seed")
    common.add_argument("--out", default=d("ndtlos_out"), help="output directory (default: ndtlos_out)")
    common.add_argument("--force", action="store_true", default=d(False),
                        help="redo work even if outputs are current")
    common.add_argument("-v", "--verbose", action="count", default=d(0))
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndtlos", description="LoS/NLoS classification on a twin-generated dataset",
                                parents=[_common(False)])
    sub = p.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, help=h, parents=[_common(True)])
               for name, (_, h) in COMMANDS.items()}
    parsers["split"].add_argument("--test-count", type=int, help="held-out sample count (default: config fraction)")
    parsers["features"].add_argument("--snr", type=_snrs, help="test SNRs in dB (default: config sweep)")
    parsers["features"].add_argument("--dump-adcpm", type=int, default=0, metavar="N",
                                     help="also write the clean ADCPM of the first N test samples")
    for name in ("train", "eval", "sweep"):
        parsers[name].add_argument("--model", action="append", help="restrict to this model (repeatable)")
    for name in ("eval", "sweep"):
        parsers[name].add_argument("--snr", type=_snrs, help="comma-separated SNRs in dB")
    parsers["flops"].add_argument("--preset", default="resnet34_reference")
    parsers["flops"].add_argument("--input-dims", type=_dims, action="append", metavar="H,W")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
