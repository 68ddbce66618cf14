"""``macsim`` command-line front end.

Exit status: 0 when every check passes, 1 when a check fails, 2 on bad
input (unparsable scenario, topology or scheduler).
"""

from __future__ import annotations

import argparse
import json
import sys

from .scenarios import (PROTOCOLS, Scenario, ScenarioError, get_scenario, list_presets, parse_seeds,
                        rows_to_csv, run_scenario)
from .schedulers import ConfigurationError
from .topology import TopologyError, export_topology, parse_topology


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="preset name or scenario JSON file")
    p.add_argument("--topology", action="append", help="topology spec; repeat for several")
    p.add_argument("--scheduler", help="sync | maxdelay | random[:skew=1] | semisync:t=N | bridge:t=N | exhaustive:depth=N")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--values", help="alternate | all0 | all1 | random | split | bitstring")
    p.add_argument("--fack", type=int, help="f_ack bound")
    p.add_argument("--n-known", type=int, help="network size given to wPAXOS")
    p.add_argument("--mutation", help="inject a known bug (for checker testing)")
    p.add_argument("--out-dir", help="write results here")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="jsonl also writes full traces")


def build_scenario(args) -> Scenario:
    sc = get_scenario(args.scenario) if args.scenario else Scenario()
    data = sc.to_dict()
    overrides = {
        "topologies": args.topology,
        "scheduler": args.scheduler,
        "protocol": args.protocol,
        "values": args.values,
        "f_ack": args.fack,
        "n_known": args.n_known,
        "mutation": args.mutation,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "seeds", None):
        data["seeds"] = parse_seeds(args.seeds)
    return Scenario.from_dict(data, "<command line>")


def _print_result(result: dict) -> None:
    if "summary" in result:
        sys.stdout.write(rows_to_csv(result["summary"]))
    else:
        shown = {k: v for k, v in result.items() if k != "checks"}
        print(json.dumps(shown, indent=1, sort_keys=True, default=str))
        for c in result.get("checks", []):
            print(f"  {c['name']}: {c['verdict']}")
    print(f"verdict: {result['verdict']}")


def cmd_run(args) -> int:
    result = run_scenario(build_scenario(args), args.out_dir, args.format)
    _print_result(result)
    return 0 if result["verdict"] == "pass" else 1


def cmd_list(args) -> int:
    for name in list_presets():
        sc = get_scenario(name)
        print(f"{name:16} {sc.kind:15} {sc.protocol:10} {' '.join(sc.topologies)}")
    return 0


def cmd_export(args) -> int:
    topo = parse_topology(args.topology)
    export_topology(topo, args.path)
    print(f"wrote {topo.n} nodes, {len(topo.edges())} edges to {args.path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="macsim", description="Abstract MAC layer consensus simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario once over its seeds")
    _add_overrides(run)
    run.add_argument("--seeds", help="a..b or comma list")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a scenario over a seed range")
    _add_overrides(sw)
    sw.add_argument("--seeds", required=True, help="a..b or comma list")
    sw.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-presets", help="list built-in scenarios")
    ls.set_defaults(func=cmd_list)

    ex = sub.add_parser("export-topology", help="write a topology as an edge list")
    ex.add_argument("topology")
    ex.add_argument("path")
    ex.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ConfigurationError, TopologyError) as exc:
        print(f"macsim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"macsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
