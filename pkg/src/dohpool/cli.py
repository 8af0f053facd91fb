"""Command line: ``dohpool serve|query|simulate|curve``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from fractions import Fraction
from typing import Optional, Sequence

from .codec import Question, RCode, RRType


def _int_range(text: str) -> list[int]:
    """'2-12', '3,5,7' or '4'."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_range(text: str) -> list[float]:
    """'0.1,0.2' or 'start:stop:step' (inclusive stop)."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        vals, i = [], 0
        while start + i * step <= stop + step * 1e-9:
            vals.append(round(start + i * step, 12))
            i += 1
        return vals
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    config = ServiceConfig.load(args.config)
    serve(config)
    return 0


def cmd_query(args) -> int:
    from .service import PoolResolver, ServiceConfig

    config = ServiceConfig.load(args.config)
    logging.basicConfig(level=config.log_level, stream=sys.stderr)
    question = Question(args.name, RRType[args.type])

    async def run():
        resolver = PoolResolver(config)
        try:
            return await resolver.resolve(question)
        finally:
            await resolver.aclose()

    res = asyncio.run(run())
    print(f"; {config.guarantee()}")
    for r in res.responses:
        print(f"; {r.summary()}")
    print(f"; rcode={RCode(res.rcode).name} answers={len(res.answers)}" + (f" ({res.reason})" if res.reason else ""))
    if res.pool is not None:
        print(f"; k={res.pool.k} n_used={res.pool.n_used}")
        ttl = min((a.ttl for a in res.answers), default=0)
        for entry in res.pool.entries:
            print(f"{entry.record.text}\t{ttl}\t{entry.provenance}")
    else:
        for a in res.answers:
            print(f"{a.text}\t{a.ttl}\tmajority")
    return 0 if res.rcode == RCode.NOERROR else 1


def cmd_simulate(args) -> int:
    from .security import ThreatParams, attack_probability_exact
    from .sim import load_scenario, outcome_rows, run_naive_baseline, run_scenario, sweep

    loaded = load_scenario(args.scenario)
    if loaded.sweep:
        s = loaded.sweep
        sc = loaded.scenario
        y = Fraction(str(s.get("y", "1/2")))
        result = sweep(
            sc.n, s["p"], y, int(s.get("runs", 10000)), seed=sc.seed, strategy=sc.strategy,
            policy=loaded.policy, benign_template=sc.benign_template, unreachable=sc.unreachable,
        )
        exact = attack_probability_exact(ThreatParams(sc.n, result.y, s["p"]))
        if args.runs_csv:
            with open(args.runs_csv, "w") as fh:
                fh.write(result.to_csv())
        print("n,p,y,runs,success_rate,stderr,exact_tail")
        print(f"{sc.n},{result.p},{result.y},{result.runs},{result.success_rate!r},{result.stderr!r},{exact!r}")
        return 0
    outcomes = {
        "truncated": run_scenario(loaded.scenario, loaded.policy, transport=args.transport),
        "naive_union": run_naive_baseline(loaded.scenario),
    }
    sys.stdout.write(outcome_rows(loaded.scenario, outcomes))
    if args.verbose:
        for name, out in outcomes.items():
            for note in out.notes:
                print(f"# {name}: {note}", file=sys.stderr)
    return 0


def cmd_curve(args) -> int:
    from .security import curve_to_csv, decay_violations, security_curve

    x = Fraction(args.x)
    rows = security_curve(_int_range(args.n), x, _float_range(args.p), mc_trials=args.trials, seed=args.seed)
    curve_to_csv(rows, sys.stdout)
    for problem in decay_violations(rows):
        print(f"# {problem}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dohpool", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the DNS frontend")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="one-shot pooled lookup with provenance")
    p.add_argument("--config", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--type", choices=["A", "AAAA"], default="A")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("simulate", help="run an attack scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--transport", choices=["inprocess", "https"], default="inprocess")
    p.add_argument("--runs-csv", help="write per-run sweep rows here")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="attack probability table as CSV")
    p.add_argument("--n", required=True, help="e.g. 2-12 or 3,5,7")
    p.add_argument("--p", required=True, help="e.g. 0.1,0.2 or 0.05:0.5:0.05")
    p.add_argument("--x", required=True, help="fraction, e.g. 1/2 or 0.5")
    p.add_argument("--trials", type=int, default=0, help="Monte Carlo trials per row (0: skip)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
