"""Command-line surface: monitor, simulate, verify, bench, sweep.

Configuration is a flat ``key=value`` file merged under command-line
flags (flags win). Exit codes: 0 success, 1 usage or configuration
error, 2 I/O error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

from . import bench as bench_mod
from . import correlation, verify
from .detector import DetectionParams
from .logs import FORMATS, ParseStats, iter_entries
from .pipeline import run_monitor
from .simulate import labeled_scenario, write_labels_csv, write_stream_csv
from .window import WindowConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VERIFY = 3


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_PARAM_KEYS = {
    "omega": float, "eps1": float, "eps2": float,
    "k_l_frac": float, "k_u_frac": float, "k_s_frac": float,
    "c": int, "knee_theta": float,
}
_GENERAL_KEYS = {
    "format": str, "seed": int, "alerts": str, "diag": str,
    "window_len_secs": int, "step_secs": int, "reorder_slack_secs": int,
    "mode": str, "windows": str, "sigma_tol": float, "reanchor_period": int,
    "strip_query": lambda v: v.lower() not in ("0", "false", "no"),
    "salt": str,
}


def _merged(args: argparse.Namespace, config: dict[str, str]) -> dict:
    """Config values fill in for flags the user did not pass."""
    out: dict = {}
    for key, cast in {**_GENERAL_KEYS, **_PARAM_KEYS}.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in config:
            try:
                out[key] = cast(config[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    return out


def _detection_params(merged: dict) -> DetectionParams:
    kwargs = {k: merged[k] for k in _PARAM_KEYS if k in merged}
    try:
        return DetectionParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _window_configs(merged: dict, window_flags: list[str] | None) -> list[WindowConfig]:
    specs: list[tuple[int, int | None]] = []
    if window_flags:
        for spec in window_flags:
            parts = spec.split(":")
            try:
                length = int(parts[0])
                step = int(parts[1]) if len(parts) > 1 and parts[1] else None
            except (ValueError, IndexError):
                raise ConfigError(f"bad --window spec {spec!r}, expected LEN[:STEP]") from None
            specs.append((length, step))
    elif "windows" in merged:
        for spec in merged["windows"].split(","):
            parts = spec.strip().split(":")
            specs.append((int(parts[0]), int(parts[1]) if len(parts) > 1 else None))
    elif "window_len_secs" in merged:
        specs.append((merged["window_len_secs"], merged.get("step_secs")))
    else:
        specs.append((600, None))
    mode = merged.get("mode", "sliding")
    slack = merged.get("reorder_slack_secs", 5)
    try:
        return [
            WindowConfig(window_len=ln, step=st, mode=mode, reorder_slack=slack)
            for ln, st in specs
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _open_sink(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


def cmd_monitor(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else {}
    merged = _merged(args, config)
    params = _detection_params(merged)
    window_configs = _window_configs(merged, args.window)
    fmt = merged.get("format", "triple-csv")
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}")
    seed = merged.get("seed", 0)
    salt = merged.get("salt")
    salt_bytes = salt.encode() if salt else None

    if args.input == "-":
        line_iter = sys.stdin
        close_input = False
    else:
        line_iter = open(args.input)
        close_input = True

    def lines():
        try:
            if args.follow:
                while True:
                    line = line_iter.readline()
                    if not line:
                        time.sleep(0.2)
                        continue
                    yield line
            else:
                yield from line_iter
        finally:
            if close_input:
                line_iter.close()

    alert_out, close_alerts = _open_sink(merged.get("alerts", args.alerts))
    diag_path = merged.get("diag")
    diag_out = open(diag_path, "w") if diag_path else None

    stats = ParseStats()
    try:
        entries = iter_entries(
            lines(), fmt, strip_query=merged.get("strip_query", True),
            salt=salt_bytes, stats=stats,
        )
        run_stats = run_monitor(
            entries,
            window_configs,
            params,
            seed=seed,
            alert_sink=lambda alert: print(alert.to_json(), file=alert_out),
            diag_sink=(lambda rec: print(json.dumps(rec), file=diag_out)) if diag_out else None,
            sigma_tol=merged.get("sigma_tol", correlation.DEFAULT_SIGMA_TOL),
            reanchor_period=merged.get("reanchor_period", correlation.DEFAULT_REANCHOR_PERIOD),
        )
    finally:
        if close_alerts:
            alert_out.close()
        if diag_out:
            diag_out.close()

    print(
        f"entries={run_stats.entries} malformed={stats.malformed} "
        + " ".join(
            f"[len={lane.window_len}s windows={lane.windows} alerts={lane.alerts} "
            f"stale={lane.stale_dropped} degenerate={lane.degenerate}]"
            for lane in run_stats.lanes
        ),
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else {}
    merged = _merged(args, config)
    seed = merged.get("seed", 0)
    bot_groups = [
        {
            "hosts": args.duplication + 1,
            "start": int(args.bot_start + i * args.duration / max(args.botnets, 1)),
            "duration": float(args.bot_duration),
            "mode": args.mode,
            "rate": args.rate,
            "jitter": args.jitter,
        }
        for i in range(args.botnets)
    ]
    entries, labels = labeled_scenario(
        n_background=args.hosts,
        duration=float(args.duration),
        background_session=args.session if args.session else None,
        bot_groups=bot_groups,
        seed=seed,
        link_list=[f"/item/{i:03d}" for i in range(args.links)],
    )
    write_stream_csv(entries, args.out)
    if args.labels:
        write_labels_csv(labels, args.labels)
    print(
        f"wrote {len(entries)} entries, {sum(1 for l in labels if l.is_bot)} bot hosts "
        f"in {args.botnets} group(s) -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    if args.inject_fault:
        correlation.set_fault_injection(True)
    try:
        results = verify.run_all(
            seed=args.seed if args.seed is not None else 11,
            slides=args.slides,
            matrices=args.matrices,
            windows=args.windows,
            m=args.size_m,
        )
    finally:
        correlation.set_fault_injection(False)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _write_csv(rows: list[dict], path: str | None) -> None:
    if not rows:
        print("no rows produced", file=sys.stderr)
        return
    out, close = _open_sink(path)
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    if close:
        out.close()


def cmd_bench(args: argparse.Namespace) -> int:
    rows: list[dict] = []
    if args.matrix:
        for m in args.matrix:
            rows.append(bench_mod.matrix_benchmark(m, seed=args.seed or 0, runs=args.runs))
    if args.hosts:
        rows.extend(
            bench_mod.grid_bench(
                args.hosts,
                args.window_lens,
                bot_hosts=args.bot_hosts,
                seed=args.seed or 0,
            )
        )
    _write_csv(rows, args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    rows = bench_mod.sweep(args.eps2, args.c, seed=args.seed or 0)
    _write_csv(rows, args.out)
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="botmon", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--format", choices=FORMATS, default=None,
                        help="log wire format (commands that read logs)")
    common.add_argument("--alerts", default=None, help="alert stream path (default stdout)")
    common.add_argument("--diag", default=None, help="diagnostics stream path")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mon = sub.add_parser("monitor", parents=[common], help="watch a log stream for botnets")
    p_mon.add_argument("--input", default="-", help="log file path or - for stdin")
    p_mon.add_argument("--follow", action="store_true", help="keep reading as the file grows")
    p_mon.add_argument(
        "--window", action="append",
        help="window LEN[:STEP] in seconds; repeat for multiple lanes",
    )
    p_mon.add_argument("--mode", choices=("sliding", "fixed"), default=None)
    p_mon.add_argument("--salt", default=None, help="anonymize identifiers with this salt")
    for key, cast in _PARAM_KEYS.items():
        p_mon.add_argument(f"--{key.replace('_', '-')}", type=cast, dest=key, default=None)
    p_mon.set_defaults(func=cmd_monitor)

    p_sim = sub.add_parser("simulate", parents=[common], help="generate labeled traffic")
    p_sim.add_argument("--out", required=True, help="triple-csv output path")
    p_sim.add_argument("--labels", help="labels CSV output path")
    p_sim.add_argument("--hosts", type=int, default=100, help="background host count")
    p_sim.add_argument("--botnets", type=int, default=1, help="number of injected groups")
    p_sim.add_argument("--duplication", type=int, default=9,
                       help="copies per bot template (group size is duplication+1; 0 disables)")
    p_sim.add_argument("--mode", choices=("single_request", "random_list", "fixed_list", "random_walk"),
                       default="random_list")
    p_sim.add_argument("--duration", type=float, default=36000.0)
    p_sim.add_argument("--bot-start", type=int, default=6000)
    p_sim.add_argument("--bot-duration", type=float, default=3000.0)
    p_sim.add_argument("--session", type=float, default=600.0, help="background session length")
    p_sim.add_argument("--rate", type=float, default=1.0, help="bot rate multiplier")
    p_sim.add_argument("--jitter", type=int, default=0)
    p_sim.add_argument("--links", type=int, default=40)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", parents=[common], help="run oracle-equivalence suites")
    p_ver.add_argument("--slides", type=int, default=200)
    p_ver.add_argument("--matrices", type=int, default=300)
    p_ver.add_argument("--windows", type=int, default=400)
    p_ver.add_argument("--size-m", type=int, default=40, help="host count for the drift suite")
    p_ver.add_argument("--inject-fault", action="store_true",
                       help="negative control: perturb one update term")
    p_ver.set_defaults(func=cmd_verify)

    p_ben = sub.add_parser("bench", parents=[common], help="fast vs dense pipeline comparison")
    p_ben.add_argument("--hosts", type=_int_list, default=None, help="grid of host counts")
    p_ben.add_argument("--window-lens", type=_int_list, default=[1800])
    p_ben.add_argument("--bot-hosts", type=int, default=20)
    p_ben.add_argument("--matrix", type=_int_list, default=None,
                       help="matrix sizes for the estimate-vs-solve timing rows")
    p_ben.add_argument("--runs", type=int, default=5)
    p_ben.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p_ben.set_defaults(func=cmd_bench)

    p_swp = sub.add_parser("sweep", parents=[common], help="eps2/c trade-off curves")
    p_swp.add_argument("--eps2", type=_float_list, default=[0.1, 0.05, 0.01, 0.005])
    p_swp.add_argument("--c", type=_int_list, default=[5, 15, 25, 40])
    p_swp.add_argument("--out", default=None)
    p_swp.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
