"""Command line front end.

Subcommands cover the two protocol roles (provisioner, miner), local
mining, scenario generation and the experiment drivers. Run
`confine <subcommand> -h` for the full flag list.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .attest import ReferenceRegistry, default_measurement
from .eventlog import parse_log, partition_by_org, serialize_log
from .harness import (
    MEMORY_PRESETS,
    SCALABILITY_TESTS,
    SPLIT_SCHEMES,
    ScenarioParams,
    run_convergence,
    run_memory_experiment,
    run_scalability_suite,
    split_real_log,
    standalone_net,
    write_scenario_files,
)
from .hminer import MinerConfig, serialize_net
from .miner import DEFAULT_CAPACITY, MinerReceiver, MinerSession
from .provisioner import ProvisionerServer, ProvisionerService
from .transport import HttpTransport
from .wire import DEFAULT_SEG_SIZE, parse_size

log = logging.getLogger(__name__)


def _add_host_port(parser: argparse.ArgumentParser, default_port: int) -> None:
    parser.add_argument("--host", default="127.0.0.1", help="bind address")
    parser.add_argument("--port", type=int, default=default_port, help="bind port, 0 for ephemeral")


def _add_miner_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dependency-threshold", type=float, default=0.9)
    parser.add_argument("--and-threshold", type=float, default=0.65)
    parser.add_argument("--min-df-count", type=int, default=1)
    parser.add_argument(
        "--no-all-connected",
        action="store_true",
        help="drop the rescue arcs that keep every activity connected",
    )


def _miner_config(args: argparse.Namespace) -> MinerConfig:
    return MinerConfig(
        dependency_threshold=args.dependency_threshold,
        and_threshold=args.and_threshold,
        min_df_count=args.min_df_count,
        all_activities_connected=not args.no_all_connected,
    )


def _add_scenario(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cases", type=int, default=1000)
    parser.add_argument("--specialized-prob", type=float, default=1 / 3)
    parser.add_argument("--loop-iterations", type=int, default=1)
    parser.add_argument("--org-count", type=int, default=3)
    parser.add_argument("--seed", type=int, default=42)


def _scenario_params(args: argparse.Namespace) -> ScenarioParams:
    return ScenarioParams(
        cases=args.cases,
        specialized_care_prob=args.specialized_prob,
        loop_iterations=args.loop_iterations,
        org_count=args.org_count,
        seed=args.seed,
    )


def _write_net(net, out_dir: str | None) -> None:
    if out_dir is None:
        print(serialize_net(net, "json"), end="")
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "net.json").write_text(serialize_net(net, "json"), encoding="utf-8")
    (out / "net.dot").write_text(serialize_net(net, "dot"), encoding="utf-8")
    print(f"wrote {out / 'net.json'} and {out / 'net.dot'}")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_registry(args: argparse.Namespace) -> int:
    registry = ReferenceRegistry.of(default_measurement())
    registry.write(args.out)
    print(f"wrote {args.out} ({default_measurement().hex()})")
    return 0


def _cmd_provisioner(args: argparse.Namespace) -> int:
    log_data = parse_log(args.log)
    if args.registry:
        registry = ReferenceRegistry.load(args.registry)
    else:
        registry = ReferenceRegistry.of(default_measurement())
    allowed = set(args.allow) if args.allow else {"*"}
    service = ProvisionerService(
        org_id=args.org,
        log_data=log_data,
        registry=registry,
        allowed_miners=allowed,
        push=HttpTransport().push_segment,
    )
    server = ProvisionerServer(service, host=args.host, port=args.port).start()
    print(f"provisioner {args.org}: {len(log_data)} cases at {server.url}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return 0
    finally:
        server.close()


def _cmd_miner(args: argparse.Namespace) -> int:
    session = MinerSession(
        providers=args.providers,
        transport=HttpTransport(),
        callback_url="",
        seg_size=parse_size(args.seg_size),
        mode=args.mode,
        batch_cases=args.batch_cases,
        capacity=parse_size(args.capacity),
        miner_config=_miner_config(args),
        miner_id=args.miner_id,
        timeout_s=args.timeout,
    )
    receiver = MinerReceiver(session, host=args.host, port=args.port).start()
    session.callback_url = receiver.url
    try:
        net = session.run()
    finally:
        receiver.close()
    assert net is not None
    print(
        f"mined {len(net.activities)} activities, {len(net.arcs)} arcs; "
        f"peak enclave memory {session.budget.peak} bytes"
    )
    _write_net(net, args.out)
    if args.out:
        Path(args.out, "metrics.csv").write_bytes(session.exports()["metrics.csv"])
    return 0


def _cmd_mine(args: argparse.Namespace) -> int:
    net = standalone_net(parse_log(args.log), _miner_config(args))
    _write_net(net, args.out)
    return 0


def _cmd_gen(args: argparse.Namespace) -> int:
    log_path, map_path = write_scenario_files(args.out, _scenario_params(args))
    print(f"wrote {log_path} and {map_path}")
    return 0


def _cmd_converge(args: argparse.Namespace) -> int:
    result = run_convergence(
        params=_scenario_params(args),
        seg_size=parse_size(args.seg_size),
        networked=args.networked,
        mode=args.mode,
        batch_cases=args.batch_cases,
        timeout_s=args.timeout,
    )
    print(
        f"converged={result.equal} cases={result.case_count} events={result.event_count} "
        f"elapsed={result.elapsed_s:.2f}s peak={result.peak_bytes}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "confine_net.json").write_text(serialize_net(result.confine_net), encoding="utf-8")
        (out / "standalone_net.json").write_text(serialize_net(result.standalone), encoding="utf-8")
    return 0 if result.equal else 1


def _cmd_mem(args: argparse.Namespace) -> int:
    sweep = _SWEEP_DEFAULT
    if args.sweep_sizes:
        sweep = tuple(parse_size(s) for s in args.sweep_sizes.split(","))
    summary = run_memory_experiment(
        args.preset,
        out_dir=args.out,
        params=_scenario_params(args),
        seg_size=parse_size(args.seg_size),
        sweep_sizes=sweep,
        capacity=parse_size(args.capacity),
        mode=args.mode,
        batch_cases=args.batch_cases,
    )
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_scale(args: argparse.Namespace) -> int:
    xs = tuple(int(x) for x in args.xs.split(",")) if args.xs else None
    seg_sizes = tuple(parse_size(s) for s in args.seg_sizes.split(",")) if args.seg_sizes else None
    summary = run_scalability_suite(
        args.test,
        out_dir=args.out,
        xs=xs,
        seg_sizes=seg_sizes,
        cases=args.cases,
        seed=args.seed,
    )
    print(f"test={summary['test']} all_converged={summary['all_converged']}")
    for seg, stats in summary["regressions"].items():
        print(
            f"  seg={seg}: r2_lin={stats['r2_lin']:.4f} "
            f"slope={stats['slope_hat']:.4f} r2_log={stats['r2_log']:.4f}"
        )
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    log_data = parse_log(args.log)
    if args.map:
        scheme: str | dict = json.loads(Path(args.map).read_text(encoding="utf-8"))
    else:
        scheme = args.scheme
    partitions = split_real_log(log_data, scheme)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for org, sub in sorted(partitions.items()):
        path = out / f"{org}.csv"
        path.write_text(serialize_log(sub), encoding="utf-8")
        print(f"{org}: {len(sub)} cases, {sub.event_count()} events -> {path}")
    return 0


def _cmd_partition(args: argparse.Namespace) -> int:
    log_data = parse_log(args.log)
    org_map = json.loads(Path(args.map).read_text(encoding="utf-8"))
    partitions = partition_by_org(log_data, org_map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for org, sub in sorted(partitions.items()):
        path = out / f"{org}.csv"
        path.write_text(serialize_log(sub), encoding="utf-8")
        print(f"{org}: {len(sub)} cases, {sub.event_count()} events -> {path}")
    return 0


_SWEEP_DEFAULT = None  # resolved inside run_memory_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confine", description=__doc__)
    parser.add_argument("--log-level", default="WARNING", help="logging level name")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("registry", help="write a reference registry for the packaged manifest")
    p.add_argument("--out", default="ref_registry.json")
    p.set_defaults(func=_cmd_registry)

    p = sub.add_parser("provisioner", help="serve one org's sub-log to attested miners")
    p.add_argument("--log", required=True, help="CSV or XES sub-log for this org")
    p.add_argument("--org", required=True, help="organization identifier")
    p.add_argument("--registry", help="accepted-measurement registry JSON")
    p.add_argument("--allow", action="append", help="allowed miner id (repeatable, default any)")
    _add_host_port(p, 8421)
    p.set_defaults(func=_cmd_provisioner)

    p = sub.add_parser("miner", help="mine a net from remote provisioners")
    p.add_argument("providers", nargs="+", help="provisioner base URLs")
    p.add_argument("--seg-size", default=str(DEFAULT_SEG_SIZE))
    p.add_argument("--mode", choices=["single_batch", "incremental"], default="single_batch")
    p.add_argument("--batch-cases", type=int, default=100)
    p.add_argument("--capacity", default=str(DEFAULT_CAPACITY))
    p.add_argument("--miner-id", default="miner1")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", help="directory for net.json, net.dot, metrics.csv")
    _add_miner_config(p)
    _add_host_port(p, 0)
    p.set_defaults(func=_cmd_miner)

    p = sub.add_parser("mine", help="mine a local log without the protocol")
    p.add_argument("--log", required=True)
    p.add_argument("--out", help="directory for net.json and net.dot; stdout otherwise")
    _add_miner_config(p)
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("gen", help="write the synthetic scenario log and org map")
    p.add_argument("--out", default="scenario")
    _add_scenario(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("converge", help="compare protocol result against standalone mining")
    p.add_argument("--seg-size", default=str(DEFAULT_SEG_SIZE))
    p.add_argument("--networked", action="store_true", help="use localhost HTTP instead of loopback")
    p.add_argument("--mode", choices=["single_batch", "incremental"], default="single_batch")
    p.add_argument("--batch-cases", type=int, default=100)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", help="directory for both net JSON files")
    _add_scenario(p)
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("mem", help="memory experiments over real sessions")
    p.add_argument("--preset", choices=list(MEMORY_PRESETS), required=True)
    p.add_argument("--out", help="directory for metrics CSVs and the summary")
    p.add_argument("--seg-size", default=str(DEFAULT_SEG_SIZE))
    p.add_argument("--sweep-sizes", help="comma list like 64KB,128KB,1MB")
    p.add_argument("--capacity", default=str(DEFAULT_CAPACITY))
    p.add_argument("--mode", choices=["single_batch", "incremental"], default="single_batch")
    p.add_argument("--batch-cases", type=int, default=100)
    _add_scenario(p)
    p.set_defaults(func=_cmd_mem)

    p = sub.add_parser("scale", help="scalability sweep with per-cell convergence")
    p.add_argument("--test", choices=list(SCALABILITY_TESTS), required=True)
    p.add_argument("--xs", help="comma list of x values")
    p.add_argument("--seg-sizes", help="comma list like 100KB,1000KB")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="directory for summary JSON and cell CSV")
    p.set_defaults(func=_cmd_scale)

    p = sub.add_parser("split", help="split a real log by a named scheme or custom map")
    p.add_argument("--log", required=True)
    p.add_argument("--scheme", choices=list(SPLIT_SCHEMES))
    p.add_argument("--map", help="JSON file mapping activity to org")
    p.add_argument("--out", default="partitions")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("partition", help="split a log by an activity-to-org map")
    p.add_argument("--log", required=True)
    p.add_argument("--map", required=True, help="JSON file mapping activity to org")
    p.add_argument("--out", default="partitions")
    p.set_defaults(func=_cmd_partition)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    if args.command == "split" and not args.map and not args.scheme:
        print("split needs --scheme or --map", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
