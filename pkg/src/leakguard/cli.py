"""``leakguard`` command line: calibrate, run, report, verify-audit, bound."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .audit import verify_file
from .bound import bound_from_file
from .config import ExperimentConfig
from .errors import ConfigurationError, LeakGuardError
from .report import format_table, write_report

log = logging.getLogger("leakguard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 2 with a one-line message, like argparse, but testable
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config) if args.config else ExperimentConfig()


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    cal = ex.calibrate_tier1(cfg, args.seed)
    digest = ex.save_calibration(cal, args.out)
    for n, th in sorted(cal.thresholds.items()):
        print(f"n={n}: delta_budget={th.delta_budget:.6g} delta_kill={th.delta_kill:.6g}")
    print(f"artifact digest {digest.hex()}")
    return 0


def cmd_run(cfg: ExperimentConfig, args) -> int:
    cal = ex.load_calibration(cfg, args.artifacts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    if args.tier == 1:
        results = ex.run_tier1(cfg, cal, args.seed, out_dir=out, monitor_only=args.monitor_only)
        th = cal.thresholds
    else:
        th, _ = ex.transfer_thresholds(cfg, cal, args.seed)
        results, _ = ex.run_tier2(cfg, cal, args.seed, out_dir=out, thresholds2=th)
    (out / f"thresholds_t{args.tier}.json").write_text(ex.thresholds_to_json(th))
    rows = write_report(results, out, cfg.report.bootstrap_resamples, cfg.report.ci_level,
                        cfg.report.hist_bins)
    print(format_table(rows))
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    episodes = ex.load_episodes(args.results)
    if not episodes:
        raise UsageError(f"no episode files under {args.results}/episodes")
    rows = write_report(episodes, args.out or args.results, cfg.report.bootstrap_resamples,
                        cfg.report.ci_level, cfg.report.hist_bins)
    print(format_table(rows))
    return 0


def cmd_verify_audit(cfg: ExperimentConfig, args) -> int:
    files = []
    for p in map(Path, args.paths):
        files.extend(sorted(p.glob("**/*.audit")) if p.is_dir() else [p])
    if not files:
        raise UsageError("no audit files found")
    bad = 0
    for f in files:
        try:
            ok, idx = verify_file(f)
        except OSError as exc:
            ok, idx = False, None
            log.error("%s: %s", f, exc)
        if not ok:
            bad += 1
            print(f"FAIL {f} (first bad record {idx})")
        elif args.verbose:
            print(f"ok   {f}")
    print(f"{len(files) - bad}/{len(files)} audit logs verified")
    return 1 if bad else 0


def cmd_bound(cfg: ExperimentConfig, args) -> int:
    eps = cfg.calibration.eps_est if args.eps_est is None else args.eps_est
    sync = cfg.calibration.eps_sync if args.eps_sync is None else args.eps_sync
    res = bound_from_file(args.episode, eps, sync)
    print(json.dumps(res.to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leakguard", description="Interval-level leakage monitoring experiments")
    p.add_argument("--config", help="experiment config JSON (see --show-config)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--show-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("calibrate", help="build locked artifacts and Tier I thresholds")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("run", help="run a Tier I or Tier II grid")
    r.add_argument("--tier", type=int, choices=(1, 2), required=True)
    r.add_argument("--artifacts", required=True, help="directory written by calibrate")
    r.add_argument("--out", required=True)
    r.add_argument("--monitor-only", action="store_true", help="Tier I without enforcement")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="summaries from episode files")
    s.add_argument("results")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    v = sub.add_parser("verify-audit", help="verify audit chains (files or directories)")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_verify_audit)

    b = sub.add_parser("bound", help="advantage bound for one episode file")
    b.add_argument("episode")
    b.add_argument("--eps-est", type=float)
    b.add_argument("--eps-sync", type=float)
    b.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _load_config(args)
        if args.show_config:
            print(cfg.to_json())
            return 0
        if not args.command:
            raise UsageError("a subcommand is required")
        return args.func(cfg, args)
    except (UsageError, ConfigurationError) as exc:
        print(f"leakguard: error: {exc}", file=sys.stderr)
        return 2
    except LeakGuardError as exc:
        print(f"leakguard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
