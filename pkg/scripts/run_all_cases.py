"""Simulate the builtin cases, write CSVs and JSON reports, print verdicts.

    python scripts/run_all_cases.py --out results --factors 1.0 0.7 1.3
"""
import argparse
import json
from pathlib import Path

from pvfc.cli import _print_report, _report_json
from pvfc.harness import builtin_case, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--cases", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--factors", type=float, nargs="+", default=[1.0])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = True
    for factor in args.factors:
        reference = None
        for case in args.cases:
            cfg = builtin_case(case).with_uncertainty(factor)
            ts, rep = run_scenario(cfg, reference=reference if case == 2 else None)
            if case == 1:
                reference = rep
            stem = f"case{case}_f{factor:g}"
            ts.to_csv(out / f"{stem}.csv")
            (out / f"{stem}.json").write_text(json.dumps(_report_json(rep), indent=2) + "\n")
            _print_report(cfg.name, rep)
            ok &= rep.passed
    print("ALL PASS" if ok else "SOME CHECKS FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
