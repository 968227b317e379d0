"""Command-line entry point: ``train``, ``eval``, ``gradcheck``, ``gen-fixtures``, ``bench``.

Options the command itself owns (``--config``, ``--out`` ...) are parsed
first; every remaining ``--key value`` pair overrides a config key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .. import kernels
from ..model import init_model
from ..tasks import FixtureFormatError, save_episode
from . import bench as bench_mod
from . import checkpoint as ckpt_io
from . import runner
from .config import ConfigError, load_config, parse_config_text, parse_overrides


def _parser():
    p = argparse.ArgumentParser(prog="fewshot-ssm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write metrics, DTW curves and a checkpoint")
    t.add_argument("--config")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write the confusion matrix")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="defaults to the snapshot stored in the checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--eval-episodes", type=int, default=1000)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    g.add_argument("--config")
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--max-coords", type=int, help="check a random subset of coordinates per group")

    f = sub.add_parser("gen-fixtures", help="export episodes as binary fixture files")
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--count", type=int, default=4)

    b = sub.add_parser("bench", help="time the scan kernels on every available backend")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--json", action="store_true")
    return p


def _progress(every):
    def show(rec):
        if every and (rec.episode + 1) % every == 0:
            dtw = "" if rec.dtw is None else " dtw " + " ".join(f"{o}:{s:.4f}" for o, s in rec.dtw.items())
            print(f"episode {rec.episode + 1} l_ce {rec.l_ce:.4f} l_hc {rec.l_hc:.4f} "
                  f"acc {rec.accuracy:.3f}{dtw}", flush=True)
    return show


def cmd_train(args, overrides):
    config = load_config(args.config, overrides)
    result = runner.train(config, args.out, progress=_progress(config.eval_every))
    print(f"wrote {len(result.records)} records and checkpoint to {args.out}")
    return 0


def cmd_eval(args, overrides):
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    base = load_config(None, parse_config_text(ckpt.config_text, args.checkpoint)) if ckpt.config_text else None
    config = load_config(args.config, overrides, base=base)
    params = init_model(config.model_config(), config.seed)
    try:
        ckpt_io.into_model(ckpt, params)
    except ckpt_io.CheckpointFormatError as exc:
        raise ValueError(f"checkpoint does not match config: {exc}") from None
    res = runner.evaluate(params, config, args.eval_episodes, args.out)
    print(f"accuracy {res.mean:.4f} +/- {res.ci95:.4f} over {args.eval_episodes} episodes")
    return 0


def cmd_gradcheck(args, overrides):
    config = load_config(args.config, overrides, base=runner.GRADCHECK_DEFAULT)
    results = runner.gradcheck_report(config, eps=args.eps, max_coords=args.max_coords)
    print(runner.format_report(results))
    ok = runner.report_passes(results)
    print("all groups pass" if ok else f"FAILED: some group exceeds {runner.GRADCHECK_TOL:g}")
    return 0 if ok else 1


def cmd_gen_fixtures(args, overrides):
    config = load_config(args.config, overrides)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        batch = runner.make_episode(config, runner.episode_seed(config.seed, i, runner.EVAL_STREAM))
        path = os.path.join(args.out, f"episode_{i:04d}.mepb")
        save_episode(path, batch)
        print(path)
    return 0


def cmd_bench(args, overrides):
    if overrides:
        raise ConfigError("bench takes no config keys")
    rows = bench_mod.bench(repeats=args.repeats)
    print(json.dumps(rows, indent=1) if args.json else bench_mod.format_rows(rows))
    print(f"active backend: {kernels.BACKEND}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "gen-fixtures": cmd_gen_fixtures, "bench": cmd_bench}


def main(argv=None):
    args, rest = _parser().parse_known_args(argv)
    try:
        overrides = parse_overrides(rest)
        return COMMANDS[args.command](args, overrides)
    except (ConfigError, ckpt_io.CheckpointFormatError, FixtureFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except runner.NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
