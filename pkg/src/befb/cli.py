"""Command-line entry point: ``befb {train,eval,attack,gradcheck,ablate}``.

Exit codes: 0 success, 1 configuration or unreadable input, 2 runtime
failure (such as a non-finite loss), 3 gradient check failure.
"""

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, gradcheck
from .attacks import perturb
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import BEFBError, CheckpointError, ConfigError, DataFormatError
from .train import REPORT_FIELDS, evaluate, feature_diff_metrics, train, write_history_csv, write_rows

log = logging.getLogger("befb")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


def version_string():
    try:
        git = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        desc = git.stdout.strip() if git.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"befb {__version__}" + (f" ({desc})" if desc else "")


def _prepare_dir(cfg, override=None):
    out = Path(override or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "config.resolved")
    (out / "version.txt").write_text(version_string() + "\n")
    (out / "seeds.txt").write_text(" ".join(map(str, cfg.seeds)) + "\n")
    return out


def _train_one(cfg, spec, train_ds, test_ds, seed):
    net = spec.build(train_ds.shape, train_ds.class_count, seed=seed)
    return train(net, train_ds, cfg.train_config(seed), test_ds)


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    out = _prepare_dir(cfg, args.output)
    train_ds, test_ds = cfg.load_data()
    spec = cfg.model_spec()
    for seed in cfg.seeds:
        net, history = _train_one(cfg, spec, train_ds, test_ds, seed)
        save_checkpoint(net, out / f"checkpoint_seed{seed}.befb")
        write_history_csv(history, out / f"history_seed{seed}.csv")
        last = history[-1] if history else {}
        print(f"{net.name} seed={seed} epochs={len(history)} "
              f"test_acc={last.get('test_acc', float('nan')):.4f}")
    return EXIT_OK


def _load_net(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc


def cmd_eval(args):
    cfg = RunConfig.load(args.config)
    net = _load_net(args.checkpoint)
    out = _prepare_dir(cfg, args.output)
    _, test_ds = cfg.load_data()
    report = evaluate(net, test_ds, cfg.attack_list(), seed=cfg.seeds[0])
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    for row in report.rows():
        print(f"{row['model']:<28s} {row['attack']:<44s} {row['accuracy']:.4f}")
    return EXIT_OK


def cmd_attack(args):
    """Write perturbed test images for each configured attack, plus feature-difference stats."""
    cfg = RunConfig.load(args.config)
    net = _load_net(args.checkpoint)
    out = _prepare_dir(cfg, args.output)
    _, test_ds = cfg.load_data()
    n = min(args.limit, len(test_ds)) if args.limit else len(test_ds)
    x, y = test_ds.images[:n], test_ds.labels[:n]
    attacks = cfg.attack_list()
    if not attacks:
        raise ConfigError("no attacks configured", "attacks")
    arrays, summary = {"clean": x, "labels": y}, []
    for i, acfg in enumerate(attacks):
        x_adv = perturb(net, x, y, acfg, np.random.default_rng([cfg.seeds[0], acfg.seed]))
        arrays[f"adv{i}"] = x_adv
        row = {"attack": acfg.label, "accuracy": float(np.mean(net.predict(x_adv) == y)),
               "linf": float(np.abs(x_adv - x).max()) if n else 0.0}
        if net.branch is not None:
            row["texture_rmse"], row["binary_diff_pixels"] = feature_diff_metrics(net, x, x_adv)
        summary.append(row)
        print(json.dumps(row))
    np.savez_compressed(out / "adversarial.npz", **arrays)
    (out / "attack_summary.json").write_text(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_gradcheck(args):
    return gradcheck.main()


def cmd_ablate(args):
    """Train and evaluate the full branch and its tlre/slre ablations."""
    cfg = RunConfig.load(args.config)
    if cfg.branch == "none":
        raise ConfigError("ablation needs a branch (single or multiple)", "branch")
    out = _prepare_dir(cfg, args.output)
    train_ds, test_ds = cfg.load_data()
    rows = []
    for seed in cfg.seeds:
        for variant in ("full", "tlre", "slre"):
            spec = cfg.model_spec(variant=variant)
            net, history = _train_one(cfg, spec, train_ds, test_ds, seed)
            save_checkpoint(net, out / f"checkpoint_{variant}_seed{seed}.befb")
            write_history_csv(history, out / f"history_{variant}_seed{seed}.csv")
            report = evaluate(net, test_ds, cfg.attack_list(), seed=seed, history=history)
            rows.extend(report.rows())
    write_rows(out / "ablation.csv", rows, REPORT_FIELDS)
    for row in rows:
        print(f"{row['model']:<28s} seed={row['seed']} {row['attack']:<44s} {row['accuracy']:.4f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="befb", description="Binary edge feature branch experiments")
    p.add_argument("--version", action="version", version=version_string())
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help, checkpoint=False):
        s = sub.add_parser(name, help=help)
        if checkpoint:
            s.add_argument("checkpoint", help="checkpoint file written by 'befb train'")
        s.add_argument("config", help="flat key = value run configuration")
        s.add_argument("-o", "--output", help="override output_dir from the config")
        s.set_defaults(func=fn)
        return s

    with_config("train", cmd_train, "train one model per seed")
    with_config("eval", cmd_eval, "clean and robust accuracy of a checkpoint", checkpoint=True)
    a = with_config("attack", cmd_attack, "save adversarial test images", checkpoint=True)
    a.add_argument("--limit", type=int, default=0, help="attack only the first N test images")
    with_config("ablate", cmd_ablate, "compare full, tlre and slre branches")
    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, DataFormatError) as exc:
        print(f"befb {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BEFBError, FloatingPointError) as exc:
        print(f"befb {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
