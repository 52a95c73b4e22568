"""Command line interface: run episodes, sweep grids, build demos, plot CSVs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    EpisodeConfig,
    POLICY_NAMES,
    generate_demos,
    run_episode,
    save_demo_file,
    sweep,
)


def _add_episode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene", required=True, help="scene JSON file")
    parser.add_argument("--instructions", required=True, help="instruction text file")
    parser.add_argument("--policy", default="exrap", choices=POLICY_NAMES)
    parser.add_argument("--ns", default="medium", choices=["low", "medium", "high"])
    parser.add_argument("--period", type=int, default=None, help="explicit change period")
    parser.add_argument("--horizon", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--theta", type=float, default=0.5)
    parser.add_argument("--wt", type=float, default=None, help="exploitation weight")
    parser.add_argument("--wr", type=float, default=None, help="exploration weight")
    parser.add_argument("--k", type=int, default=12, help="retrieved facts per query")
    parser.add_argument("--prior-samples", type=int, default=10)
    parser.add_argument("--n-instructions", type=int, default=None)
    parser.add_argument("--backend", default="scripted", choices=["scripted", "http"])
    parser.add_argument("--endpoint", default=None, help="generation server base URL")
    parser.add_argument("--demos", default=None, help="demonstration JSON file")


def _episode_config(args: argparse.Namespace) -> EpisodeConfig:
    return EpisodeConfig(
        scene=args.scene,
        instructions=args.instructions,
        horizon=args.horizon,
        ns=args.ns if args.period is None else None,
        period=args.period,
        seed=args.seed,
        backend=args.backend,
        endpoint=args.endpoint,
        policy=args.policy,
        theta=args.theta,
        k=args.k,
        n_prior_samples=args.prior_samples,
        w_t=args.wt,
        w_r=args.wr,
        n_instructions=args.n_instructions,
        demos=args.demos,
    )


def cmd_run(args: argparse.Namespace) -> int:
    trace = run_episode(_episode_config(args))
    if args.out:
        Path(args.out).write_text(trace.to_jsonl(), encoding="utf-8")
        print(f"trace written to {args.out}")
    m = trace.metrics
    print(
        f"policy={trace.policy} seed={trace.seed} sr={m.sr:.4f} ps={m.ps:.2f} "
        f"unresolved={m.unresolved} changes={m.fired_changes}"
        + (" [aborted]" if trace.aborted else "")
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    result = sweep(grid, out_csv=args.out)
    print(f"{len(result.rows)} runs, {len(result.aggregates)} aggregates -> {args.out}")
    for agg in result.aggregates:
        print(
            f"  {agg['policy']:>16} ns={agg['ns']:<6} "
            f"sr={agg['sr']:.4f}±{agg['sr_ci95']:.4f} ps={agg['ps']:.2f}±{agg['ps_ci95']:.2f}"
        )
    return 0


def cmd_demos(args: argparse.Namespace) -> int:
    demos = generate_demos(args.scene, args.instructions, args.n, args.seed)
    save_demo_file(demos, args.out)
    print(f"{len(demos)} demonstrations written to {args.out}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    import csv as csv_mod

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.csv, encoding="utf-8") as fh:
        rows = [r for r in csv_mod.DictReader(fh) if r["seed"] == "aggregate"]
    if not rows:
        print("no aggregate rows in CSV", file=sys.stderr)
        return 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    degrees = sorted({r["ns"] for r in rows})
    policies = sorted({r["policy"] for r in rows})
    for metric in ("sr", "ps"):
        fig, ax = plt.subplots(figsize=(7, 4))
        width = 0.8 / max(len(policies), 1)
        for i, policy in enumerate(policies):
            xs, ys, errs = [], [], []
            for j, ns in enumerate(degrees):
                match = [r for r in rows if r["policy"] == policy and r["ns"] == ns]
                if match:
                    xs.append(j + i * width)
                    ys.append(float(match[0][metric]))
                    errs.append(float(match[0].get(f"{metric}_ci95") or 0))
            ax.bar(xs, ys, width=width, yerr=errs, capsize=3, label=policy)
        ax.set_xticks([j + width * (len(policies) - 1) / 2 for j in range(len(degrees))])
        ax.set_xticklabels(degrees)
        ax.set_xlabel("non-stationarity")
        ax.set_ylabel(metric.upper())
        ax.legend(fontsize=8)
        fig.tight_layout()
        target = out_dir / f"{metric}.svg"
        fig.savefig(target, format="svg")
        plt.close(fig)
        print(f"wrote {target}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="caretaker",
        description="Continual household instruction following: run, sweep, demos, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single episode")
    _add_episode_flags(p_run)
    p_run.add_argument("--out", default=None, help="trace JSONL output path")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of episodes to CSV")
    p_sweep.add_argument("--grid", required=True, help="grid JSON file")
    p_sweep.add_argument("--out", required=True, help="results CSV path")
    p_sweep.set_defaults(func=cmd_sweep)

    p_demos = sub.add_parser("demos", help="generate expert demonstrations")
    p_demos.add_argument("--scene", required=True)
    p_demos.add_argument("--instructions", required=True)
    p_demos.add_argument("--n", type=int, default=20)
    p_demos.add_argument("--seed", type=int, default=0)
    p_demos.add_argument("--out", required=True)
    p_demos.set_defaults(func=cmd_demos)

    p_plot = sub.add_parser("plot", help="bar charts of SR/PS from a sweep CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True, help="output directory for SVGs")
    p_plot.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
