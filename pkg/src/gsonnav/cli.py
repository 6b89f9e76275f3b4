"""Command-line entry point: ``gsonnav run | batch | replay | scenario``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_scenario, save_scenario
from .runner import ESTIMATORS, STACKS, EpisodeSpec, load_manifest, manifest_specs, replay, run_batch, run_episode
from .scenarios import ARCHETYPES, build_scenario


def _scenario(ref: str):
    """A scenario file path, or ``<archetype>`` / ``<archetype>:<seed>`` for a generated one."""
    name, _, seed = ref.partition(":")
    if name in ARCHETYPES or name == "empty":
        return build_scenario(name, int(seed or 0))
    return load_scenario(ref)


def cmd_run(args) -> int:
    config = _scenario(args.scenario)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    ep = run_episode(config, args.estimator, args.stack)
    out = Path(args.out)
    path = ep.write(out / f"{config.name}__{args.stack}__{args.estimator}__s{config.seed}.jsonl")
    r = ep.report
    print(f"log: {path}")
    print(
        f"success={r.success} time_to_goal={r.time_to_goal:.1f}s "
        f"disturbing_group={r.time_disturbing_group:.1f}s disturbing_individual={r.time_disturbing_individual:.1f}s "
        f"comfort={r.comfort_distance:.3f}m"
    )
    return 0


def cmd_batch(args) -> int:
    manifest, base = load_manifest(args.manifest)
    specs = manifest_specs(manifest, base)
    out = Path(args.out or (base / manifest.out))
    result = run_batch(specs, out)
    for row in result.aggregate:
        print(
            f"{row['group']:<32} n={row['episodes']:>3} "
            f"group={row['time_disturbing_group_mean']:.2f}±{row['time_disturbing_group_std']:.2f}s "
            f"comfort={row['comfort_distance_mean']:.3f}±{row['comfort_distance_std']:.3f}m "
            f"success={row['success_mean']:.2f}"
        )
    print(f"wrote {out / 'episodes.csv'} and {out / 'aggregate.csv'}")
    if result.failures:
        print(f"{len(result.failures)} episode(s) crashed; see {out / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def cmd_replay(args) -> int:
    ok, message = replay(args.log)
    print(("identical: " if ok else "MISMATCH: ") + message)
    return 0 if ok else 1


def cmd_scenario(args) -> int:
    config = build_scenario(args.archetype, args.seed, map_ref=args.map)
    save_scenario(config, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsonnav", description="Group-aware social navigation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--scenario", required=True, help="scenario JSON file, or ARCHETYPE[:SEED]")
    r.add_argument("--estimator", choices=ESTIMATORS, default="oracle")
    r.add_argument("--stack", choices=STACKS, default="gson")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default="runs")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run every episode listed in a manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--out", default=None, help="override the manifest's output directory")
    b.set_defaults(func=cmd_batch)

    rp = sub.add_parser("replay", help="re-run a logged episode and compare bit-for-bit")
    rp.add_argument("--log", required=True)
    rp.set_defaults(func=cmd_replay)

    s = sub.add_parser("scenario", help="write a generated scenario to a JSON file")
    s.add_argument("archetype", choices=(*ARCHETYPES, "empty"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--map", default="pkg:hall")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any crash inside an episode
        print(f"episode crashed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
