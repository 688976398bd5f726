"""Command-line entry point: ``pvfc synth | run | verify | report``.

Exit codes: 0 all gating checks pass, 1 a check failed or the run aborted,
2 configuration error, 3 synthesis failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .harness import (ScenarioConfig, builtin_case, case_verdicts, compute_metrics, run_scenario, synth_gains,
                      TimeSeries, MetricsReport)
from .lmi import SynthesisFailure
from .plant import ConfigurationError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SYNTH = 0, 1, 2, 3


def _print_report(name: str, rep: MetricsReport) -> None:
    print(f"== {name}  runtime {rep.runtime:.1f} s")
    if rep.aborted:
        print(f"ABORTED: {rep.aborted}")
        return
    for iv in rep.intervals:
        m = iv.means
        print(f"  [{iv.start:5.2f}, {iv.end:5.2f}) P_grid {m['P_grid_W'] / 1e3:8.2f} kW  Q_grid {m['Q_grid_var'] / 1e3:8.2f} kvar"
              f"  P_pv {m['P_pv_W'] / 1e3:7.2f}  P_fc {m['P_fc_W'] / 1e3:7.2f}  P_dump {m['P_dump_W'] / 1e3:6.2f}")
    for v in rep.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        if not v.gating:
            tag = f"info/{tag.lower()}"
        print(f"  {tag:9s} {v.name}: {v.detail}")


def _report_json(rep: MetricsReport) -> dict:
    return {
        "runtime": rep.runtime, "aborted": rep.aborted, "passed": rep.passed,
        "v_dc_max_dev": rep.v_dc_max_dev, "v_dc_band": rep.v_dc_band,
        "intervals": [asdict(i) for i in rep.intervals], "sags": [asdict(s) for s in rep.sags],
        "verdicts": [asdict(v) for v in rep.verdicts],
    }


def cmd_synth(args) -> int:
    try:
        rep = synth_gains(alpha=args.alpha, tau_i=args.tau_i, path=args.out, seed=args.seed)
    except SynthesisFailure as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTH
    o, f = rep.observer, rep.feedback
    print(f"observer: epsilon {o.epsilon:.4g}  margin {o.margin:.3g}  envelope rate <= -{o.alpha:g}")
    print(f"current loop: k1 {rep.gains.k1:.6g}  k2 {rep.gains.k2:.6g}  vertex margins "
          + ", ".join(f"{m:.3g}" for m in f.margins))
    print(f"synthesis time {rep.seconds:.1f} s" + (f", gains written to {args.out}" if args.out else ""))
    return EXIT_OK


def _config_from_args(args) -> ScenarioConfig:
    if (args.case is None) == (args.config is None):
        raise ConfigurationError("give exactly one of --case or --config")
    cfg = builtin_case(args.case) if args.case is not None else ScenarioConfig.from_json(args.config)
    if args.gains:
        cfg = replace(cfg, gains=args.gains)
    if args.factor is not None:
        cfg = cfg.with_uncertainty(args.factor)
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    ts, rep = run_scenario(cfg)
    if args.out:
        ts.to_csv(args.out, cfg.channels)
    if args.json:
        Path(args.json).write_text(json.dumps(_report_json(rep), indent=2) + "\n")
    _print_report(cfg.name, rep)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    ok = True
    for factor in args.factors:
        references = {}
        for case in args.cases:
            cfg = builtin_case(case).with_uncertainty(factor)
            ts, rep = run_scenario(cfg, reference=references.get(1) if case == 2 else None)
            references[case] = rep
            _print_report(cfg.name, rep)
            ok &= rep.passed
    print("ALL PASS" if ok else "SOME CHECKS FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(args) -> int:
    cfg = builtin_case(args.case) if args.case is not None else ScenarioConfig.from_json(args.config)
    if args.factor is not None:
        cfg = cfg.with_uncertainty(args.factor)
    ts = TimeSeries.from_csv(args.csv, cfg.name)
    rep = compute_metrics(ts, cfg)
    if cfg.case_id is not None and cfg.case_id != 2:
        rep.verdicts = case_verdicts(cfg.case_id, ts, rep, cfg)
    _print_report(f"{cfg.name} (from {args.csv})", rep)
    return EXIT_OK if rep.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pvfc", description="Hybrid PV/fuel-cell plant simulator and controller synthesis")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="synthesize observer and current-loop gains")
    sp.add_argument("--alpha", type=float, default=50.0, help="observer decay rate, 1/s")
    sp.add_argument("--tau-i", type=float, default=2e-3, help="current-loop time constant, s")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="gains file to write")
    sp.set_defaults(func=cmd_synth)

    def scenario_args(p):
        p.add_argument("--case", type=int, choices=(1, 2, 3, 4))
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--factor", type=float, help="R, L, C uncertainty factor in [0.7, 1.3]")

    rp = sub.add_parser("run", help="simulate one scenario")
    scenario_args(rp)
    rp.add_argument("--gains", help="'synth', 'table' or a gains file")
    rp.add_argument("--out", help="CSV output path")
    rp.add_argument("--json", help="metrics report JSON path")
    rp.set_defaults(func=cmd_run)

    vp = sub.add_parser("verify", help="run builtin cases across uncertainty factors")
    vp.add_argument("--cases", type=int, nargs="+", default=[1, 2, 3, 4])
    vp.add_argument("--factors", type=float, nargs="+", default=[1.0, 0.7, 1.3])
    vp.set_defaults(func=cmd_verify)

    ep = sub.add_parser("report", help="recompute metrics from a CSV")
    ep.add_argument("csv")
    scenario_args(ep)
    ep.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SynthesisFailure as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTH


if __name__ == "__main__":
    sys.exit(main())
