#!/usr/bin/env python3
"""Reference case study: built-in agent + shield over synthetic days.

Runs day episodes at the reference scale (two 3.5 kW / 6.54 kWh storages,
one 5 kW market connection, 1-minute steps, 60-minute islanding window)
and prints the evaluation table:

    python3 scripts/run_case_study.py --days 20 --out case_study_out

Writes per-day trace CSVs, metrics.csv, and metrics.txt into --out.
"""

import argparse
import sys
from pathlib import Path

from gridshield.cli import write_simulation_outputs
from gridshield.env import (
    BASELINE_SHIELD,
    FULL_SHIELD,
    MicroGridEnv,
    format_metrics_table,
    greedy_agent,
    random_admissible_agent,
    run_days,
)
from gridshield.gridmodel import default_grid


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--agent", choices=("greedy", "random"), default="greedy")
    ap.add_argument("--mode", choices=(FULL_SHIELD, BASELINE_SHIELD),
                    default=FULL_SHIELD)
    ap.add_argument("--out", default="case_study_out")
    args = ap.parse_args(argv)

    params = default_grid()
    env = MicroGridEnv(params, mode=args.mode, n_days=args.days,
                       synth_seed=args.seed)
    agent = (greedy_agent(params) if args.agent == "greedy"
             else random_admissible_agent(params, seed=args.seed))

    metrics, traces = run_days(env, agent, args.days, base_seed=args.seed)
    out = Path(args.out)
    write_simulation_outputs(out, metrics, traces)
    print(format_metrics_table(metrics))
    print(f"days: {metrics['days']}  aborted: {metrics['aborted days']}")
    print(f"outputs in {out}/")
    return 3 if metrics["aborted days"] else 0


if __name__ == "__main__":
    sys.exit(main())
