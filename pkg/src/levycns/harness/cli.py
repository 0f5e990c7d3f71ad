"""Command line entry point.

Exit codes: 0 all gates pass, 1 a gate failed, 2 bad configuration or input,
3 runtime fault (non-finite state).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from levycns.diagnostics import budget_report, cor32_bound, lemma31_check
from levycns.harness.config import ConfigError, load_config
from levycns.harness.experiments import hypothesis_report, output_dir, run_experiment
from levycns.harness.reports import read_ledger_csv
from levycns.integrator import CheckpointError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3


def _print_result(result, out: Path):
    print(f"{result.name} [{result.kind}] -> {result.status}  ({out})")
    for name, gate in result.gates.items():
        print(f"  {'PASS' if gate['passed'] else 'FAIL'}  {name}")
    if result.fault:
        print(f"  FAULT  {result.fault}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else output_dir(cfg)
    result = run_experiment(cfg, out)
    _print_result(result, out)
    return result.exit_code


def cmd_resume(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else output_dir(cfg)
    try:
        payload = Path(args.checkpoint).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}", "checkpoint") from exc
    result = run_experiment(cfg, out, resume_payload=payload)
    _print_result(result, out)
    return result.exit_code


def cmd_hypotheses(args) -> int:
    cfg = load_config(args.config)
    rep = hypothesis_report(cfg)
    print(json.dumps(rep.as_dict(), indent=2, default=float))
    status = "PASS" if rep.passed else "FAIL"
    print(f"hypotheses: {status} (lambda0 {rep.lambda0_status}, L_G {rep.L_G_status}, "
          f"jump {rep.jump_status}, margin {rep.margin_status})")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    """Recheck the stored ledgers of a finished run against its summary constants."""
    root = Path(args.dir)
    summary_path = root / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"{summary_path} not found", "dir")
    summary = json.loads(summary_path.read_text())
    constants = summary.get("constants", {})
    tol = summary.get("config", {}).get("tolerances", {})
    ok = summary["status"] == "PASS"
    print(f"summary status: {summary['status']}")
    ledgers = sorted(root.rglob("*.csv"))
    checked = 0
    for path in ledgers:
        try:
            rows = read_ledger_csv(path)
        except (ValueError, KeyError):
            continue  # not a ledger
        checked += 1
        inv = lemma31_check(rows, constants.get("c0_linf"), tol.get("mass_rel", 1e-10), tol.get("linf_overshoot", 1e-6))
        line = f"  {path.relative_to(root)}: mass {'ok' if inv.mass_ok else 'FAIL'}"
        gates = summary.get("gates", {})
        if "max_principle" in gates:
            line += f", max principle {'ok' if inv.linf_ok else 'FAIL'}"
            ok &= inv.linf_ok
        if "budget" in gates:
            bud = budget_report(rows, float(constants.get("C_budget", 0.0)))
            line += f", budget {'ok' if bud.passed else 'FAIL'}"
            ok &= bud.passed
        if "cor32" in gates:
            cor = cor32_bound(rows, float(constants.get("C2", 0.0)))
            line += f", growth bound {'ok' if cor.passed else 'FAIL'}"
            ok &= cor.passed
        ok &= inv.mass_ok
        print(line)
    print(f"checked {checked} ledger(s): {'PASS' if ok else 'FAIL'}")
    return EXIT_PASS if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levycns", description="Stochastic chemotaxis-fluid simulator harness")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: $CNS_OUTPUT_ROOT/<output.dir>)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="recheck ledgers of a finished run")
    v.add_argument("dir")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("resume", help="continue a single run from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_resume)

    h = sub.add_parser("hypotheses", help="empirical check of the noise hypotheses")
    h.add_argument("config")
    h.set_defaults(func=cmd_hypotheses)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
