"""Command-line entry point: run episodes, batches, field generation, checks."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, oracles, plants, report
from .config import ConfigError, load_config, parse_seeds, save_config

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--study", choices=("battery", "vehicle"), default=None)
    parser.add_argument("--dro", choices=("on", "off"), default=None)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--mutants", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the full-scale mutant counts and 10 seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassmpc",
        description="Learning MPC with Wasserstein-robust constraint tightening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one episode")
    _add_common(run_p)
    run_p.add_argument("--seed", type=int, default=None)

    batch_p = sub.add_parser("batch", help="run a seed list and summarize")
    _add_common(batch_p)
    batch_p.add_argument("--seeds", default=None, help="e.g. 1..3 or 1,5,9")

    field_p = sub.add_parser("gen-field", help="generate an obstacle field file")
    field_p.add_argument("--seed", type=int, required=True)
    field_p.add_argument("--out", default="field.txt")
    field_p.add_argument("--config", default=None)
    field_p.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE")

    verify_p = sub.add_parser("verify", help="run the oracle cross-checks")
    verify_p.add_argument("--lp-cases", type=int, default=50)
    verify_p.add_argument("--grad-cases", type=int, default=20)
    return parser


def _build_config(args, seeds):
    cfg = load_config(
        path=args.config,
        overrides=args.overrides,
        study=args.study,
        dro=None if args.dro is None else args.dro == "on",
        seeds=seeds,
    )
    params = cfg.params
    if args.paper_scale:
        params = replace(params, mutants=params.paper_scale_mutants)
        if seeds is None and len(cfg.seeds) == 1:
            cfg = replace(cfg, seeds=tuple(range(1, 11)))
    if args.mutants is not None:
        params = replace(params, mutants=args.mutants)
    return replace(cfg, **{cfg.study: params})


def _cmd_run(args) -> int:
    seeds = (args.seed,) if args.seed is not None else None
    cfg = _build_config(args, seeds)
    cfg = replace(cfg, seeds=cfg.seeds[:1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "effective_config.ini")
    log = harness.run_episode(cfg, cfg.seeds[0])
    metrics = harness.compute_metrics(log, cfg)
    report.write_run_csv(log, out)
    report.plot_run(log, cfg, out)
    report.write_summary_csv([metrics], harness.summarize([metrics]), out)
    print(f"{cfg.study} seed {log.seed}: {metrics.violation_pct:.2f}% violations, "
          f"max constraint {metrics.max_constraint:.4f}, "
          f"completion {metrics.completion}")
    print(f"artifacts written to {out}")
    return 0


def _cmd_batch(args) -> int:
    seeds = parse_seeds(args.seeds) if args.seeds is not None else None
    cfg = _build_config(args, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "effective_config.ini")
    logs, metrics, summary = harness.run_batch(cfg)
    report.export(logs, metrics, summary, cfg, out)
    for m in metrics:
        print(f"seed {m.seed}: {m.violation_pct:.2f}% violations, "
              f"max {m.max_constraint:.4f}, completion {m.completion}")
    print(f"average: {summary.violation_pct:.2f}% violations, "
          f"max {summary.max_constraint:.4f}, completion {summary.completion}")
    print(f"artifacts written to {out}")
    return 0


def _cmd_gen_field(args) -> int:
    cfg = load_config(path=args.config, overrides=args.overrides, study="vehicle")
    v = cfg.vehicle
    field = plants.generate_obstacle_field(
        seed=args.seed,
        n_gaussians=v.n_gaussians,
        cutoff_quantile=v.cutoff_quantile,
        extent=v.arena,
        resolution=v.grid_resolution,
        amplitude_range=(v.amplitude_min, v.amplitude_max),
        sigma_range=(v.sigma_min, v.sigma_max),
        start=(v.x1_initial, v.x2_initial),
        corridor_width_m=v.corridor_width,
        corridor_progress_m=v.corridor_progress,
    )
    field.save_text(args.out)
    print(f"field with cutoff {field.cutoff:.4f} written to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    results = oracles.run_verification(lp_cases=args.lp_cases,
                                       grad_cases=args.grad_cases)
    all_ok = True
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok &= ok
    return 0 if all_ok else 1


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "batch": _cmd_batch,
                "gen-field": _cmd_gen_field, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
