#!/usr/bin/env python3
"""
Launcher for the CDN cache-placement simulator.

Subcommands:
    simulate          run every cell of an experiment manifest
    gen-workload      write a synthetic request stream
    fit               fit popularity-decay profiles to a request trace
    solve-subproblem  solve one capacity-constrained subproblem

Exit status: 0 on success, 1 on configuration or usage errors, 2 on
runtime failures.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

logger = logging.getLogger("cdnsim")


def check_dependencies() -> bool:
    """Check if all required dependencies are available."""
    try:
        import numpy
        import pandas
        import scipy
        return True
    except ImportError as e:
        print(f"Required module not found: {e}\n\n"
              "Please install the required dependencies with:\n"
              "pip install -r requirements.txt", file=sys.stderr)
        return False


if __name__ == '__main__' and not check_dependencies():
    sys.exit(EXIT_RUNTIME)

import pandas as pd

try:
    from .data_manager import (DataManager, get_bool, get_float, get_int, get_optional_float,
                               get_optional_int, get_str, load_manifest, load_profiles, load_stream)
    from .errors import CdnSimError, ConfigError, ParameterError, TraceFormatError
    from .models import Catalog, ExperimentConfig, NetworkConfig, PolicyName, RequestStream, RunManifest, Topology
    from .penalty import PenaltySpec
    from .simulator import Simulator, rdv_learning_curve
    from .subproblem import SubproblemInstance, solve
    from .workload import (catalog_from_stream, decay_profiles, decay_stream, fit_profiles, ingest_trace,
                           static_stream, upscale, workload_seeds, zipf_catalog)
except ImportError:
    from data_manager import (DataManager, get_bool, get_float, get_int, get_optional_float,
                              get_optional_int, get_str, load_manifest, load_profiles, load_stream)
    from errors import CdnSimError, ConfigError, ParameterError, TraceFormatError
    from models import Catalog, ExperimentConfig, NetworkConfig, PolicyName, RequestStream, RunManifest, Topology
    from penalty import PenaltySpec
    from simulator import Simulator, rdv_learning_curve
    from subproblem import SubproblemInstance, solve
    from workload import (catalog_from_stream, decay_profiles, decay_stream, fit_profiles, ingest_trace,
                          static_stream, upscale, workload_seeds, zipf_catalog)


class UsageError(CdnSimError):
    """Bad command line."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the configuration status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


Settings = Dict[str, Dict[str, str]]

WORKLOAD_KINDS = ("zipf", "decay", "trace", "stream")


def build_workload(settings: Settings, seed: int, k: int = 1) -> Tuple[Catalog, RequestStream]:
    """Catalog and request stream described by the [workload] section."""
    kind = get_str(settings, 'workload', 'kind').lower()
    horizon = get_int(settings, 'run', 'horizon')
    caches = get_int(settings, 'network', 'caches')
    files = get_int(settings, 'workload', 'files')
    size_range = (get_float(settings, 'workload', 'size_min'), get_float(settings, 'workload', 'size_max'))
    seeds = workload_seeds(seed)
    if kind == 'zipf':
        catalog, p = zipf_catalog(files, get_float(settings, 'workload', 'zipf_s'), size_range, seeds.catalog)
        stream = static_stream(catalog, p, get_float(settings, 'workload', 'rate'), horizon, seeds.stream, caches,
                               get_str(settings, 'workload', 'arrivals'))
        return catalog, stream
    if kind == 'decay':
        path = get_str(settings, 'workload', 'profiles')
        if path:
            profiles = load_profiles(path)
            files = max(p.file_id for p in profiles) + 1
        else:
            profiles = decay_profiles(files, horizon, get_float(settings, 'workload', 'mean_requests'),
                                      (get_float(settings, 'workload', 'omega_min'),
                                       get_float(settings, 'workload', 'omega_max')), seeds.profiles)
        catalog, _ = zipf_catalog(files, 0.0, size_range, seeds.catalog)
        return catalog, decay_stream(upscale(profiles, k), catalog, horizon, seeds.stream, caches)
    if kind == 'trace':
        path = get_str(settings, 'workload', 'trace')
        if not path:
            raise ConfigError("[workload] kind = trace needs trace = <path>")
        return ingest_trace(path, bitrate=get_float(settings, 'workload', 'bitrate'),
                            allow_unsorted=get_bool(settings, 'workload', 'allow_unsorted'),
                            slot_length=get_float(settings, 'workload', 'slot_length'))
    if kind == 'stream':
        path = get_str(settings, 'workload', 'stream')
        if not path:
            raise ConfigError("[workload] kind = stream needs stream = <path>")
        stream = load_stream(path)
        return catalog_from_stream(stream), stream
    raise ConfigError(f"unknown workload kind {kind!r}; use {', '.join(WORKLOAD_KINDS)}")


def build_config(settings: Settings, catalog: Catalog, policy: PolicyName, cache_size: float,
                 interval: int, seed: int) -> ExperimentConfig:
    """Experiment configuration of one sweep cell."""
    network = NetworkConfig.uniform(
        get_int(settings, 'network', 'caches'),
        catalog.storage_for_percent(cache_size),
        get_float(settings, 'network', 'cache_capacity'),
        get_float(settings, 'network', 'root_capacity'),
        PenaltySpec.parse(get_str(settings, 'penalty', 'cache')),
        PenaltySpec.parse(get_str(settings, 'penalty', 'root')))
    return ExperimentConfig(
        topology=get_str(settings, 'run', 'topology').lower(),
        policy=policy,
        network=network,
        horizon=get_int(settings, 'run', 'horizon'),
        mu=get_optional_float(settings, 'dual', 'mu'),
        dual_interval=get_int(settings, 'dual', 'dual_interval'),
        cache_update_interval=interval,
        warmup=get_int(settings, 'run', 'warmup'),
        seed=seed,
        init_mode=get_str(settings, 'dual', 'init_mode'),
        delta=get_float(settings, 'dual', 'delta'),
        miss_log_capacity=get_optional_int(settings, 'placement', 'miss_log_capacity'),
        virtual_capacity=get_optional_int(settings, 'placement', 'virtual_capacity'),
        initial_fill=get_str(settings, 'placement', 'initial_fill') or None)


def validate_settings(manifest: RunManifest):
    """Catch configuration errors before any cell runs."""
    settings = manifest.settings
    for section, key in (('network', 'caches'), ('run', 'horizon'), ('run', 'warmup'), ('dual', 'dual_interval'),
                         ('workload', 'files'), ('workload', 'upscale')):
        get_int(settings, section, key)
    for section, key in (('network', 'cache_capacity'), ('network', 'root_capacity'), ('dual', 'delta'),
                         ('workload', 'rate'), ('workload', 'zipf_s'), ('workload', 'size_min'),
                         ('workload', 'size_max'), ('workload', 'bitrate'), ('workload', 'slot_length')):
        get_float(settings, section, key)
    get_optional_float(settings, 'dual', 'mu')
    PenaltySpec.parse(get_str(settings, 'penalty', 'cache'))
    PenaltySpec.parse(get_str(settings, 'penalty', 'root'))
    try:
        topology = Topology(get_str(settings, 'run', 'topology').lower())
    except ValueError:
        raise ConfigError("[run] topology must be 'one' or 'two'") from None
    if topology is Topology.ONE and PolicyName.LEAST_X_F in manifest.policies:
        raise ConfigError("leastxf admits files on root downloads and needs topology two")
    if get_str(settings, 'workload', 'kind').lower() not in WORKLOAD_KINDS:
        raise ConfigError(f"[workload] kind must be one of {', '.join(WORKLOAD_KINDS)}")


def cell_name(policy: PolicyName, cache_size: float, interval: int, seed: int) -> str:
    return f"{policy.value}_size{cache_size:g}_tv{interval}_seed{seed}"


def run_cell(manifest: RunManifest, cell: Tuple[PolicyName, float, int, int], k: int = 1) -> Dict:
    """Run one sweep cell and write its artifacts; failures are reported in the row."""
    policy, cache_size, interval, seed = cell
    row = {'policy': policy.value, 'cache_size': cache_size, 'cache_update_interval': interval, 'seed': seed}
    settings = manifest.settings
    try:
        catalog, stream = build_workload(settings, seed, k)
        config = build_config(settings, catalog, policy, cache_size, interval, seed)
        result = Simulator(config, catalog).run(stream)
        dm = DataManager(os.path.join(manifest.output_dir, cell_name(*cell)))
        summary = dict(row, **result.summary(), violations=len(result.violations), status='ok')
        ok = dm.save_metrics(result.metrics) and dm.save_summary([summary])
        ok = dm.save_run_info(config, catalog) and ok
        if get_bool(settings, 'run', 'events'):
            ok = dm.save_events(result.events) and ok
        if get_bool(settings, 'run', 'learning_curve'):
            ok = dm.save_learning_curve(rdv_learning_curve(result.metrics)) and ok
        if get_bool(settings, 'run', 'dual_snapshot') and result.dual is not None:
            ok = dm.save_dual_snapshot(result.dual) and ok
        if not ok:
            summary['status'] = 'write-failed'
        return summary
    except Exception as e:
        logger.error("cell %s failed: %s", cell_name(*cell), e)
        return dict(row, status=f"failed: {e}")


def _run_cell_args(args):
    return run_cell(*args)


def comparison_table(rows: Sequence[Dict]):
    """Seed-averaged metrics per cache size, update interval and policy."""
    frame = pd.DataFrame([r for r in rows if r.get('status') == 'ok'])
    if frame.empty:
        return frame
    return (frame.groupby(['cache_size', 'cache_update_interval', 'policy'], sort=True)
            [['nc', 'rdv', 'bbc', 'hit_ratio']].mean())


def cmd_simulate(args) -> int:
    if not args.config:
        raise UsageError("simulate needs --config")
    seeds = [args.seed] if args.seed is not None else None
    manifest = load_manifest(args.config, args.out, seeds)
    validate_settings(manifest)
    jobs = args.jobs if args.jobs is not None else get_int(manifest.settings, 'run', 'jobs')
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")
    cells = manifest.cells()
    logger.info("running %d cells with %d worker(s) into %s", len(cells), jobs, manifest.output_dir)
    k = args.upscale if args.upscale != 1 else get_int(manifest.settings, 'workload', 'upscale')
    work = [(manifest, cell, k) for cell in cells]
    if jobs == 1:
        rows = [_run_cell_args(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_args, work))

    dm = DataManager(manifest.output_dir)
    header = ['policy', 'cache_size', 'cache_update_interval', 'seed', 'slots', 'nc', 'rdv', 'bbc',
              'hit_ratio', 'requests', 'violations', 'status']
    ok = dm.save_summary([{key: row.get(key, '') for key in header} for row in rows])
    table = comparison_table(rows)
    if not table.empty:
        ok = dm.save_table(table, 'comparison.csv') and ok
    failed = [row for row in rows if row.get('status') != 'ok']
    for row in failed:
        logger.error("%s %g%% tv=%d seed=%d: %s", row['policy'], row['cache_size'],
                     row['cache_update_interval'], row['seed'], row['status'])
    return EXIT_OK if ok and not failed else EXIT_RUNTIME


def cmd_gen_workload(args) -> int:
    if not args.out:
        raise UsageError("gen-workload needs --out")
    seeds = workload_seeds(args.seed if args.seed is not None else 0)
    if args.kind == 'zipf':
        if args.upscale != 1:
            raise UsageError("--upscale applies to decay workloads only")
        catalog, p = zipf_catalog(args.files, args.zipf_s, (args.size_min, args.size_max), seeds.catalog)
        stream = static_stream(catalog, p, args.rate, args.horizon, seeds.stream, args.caches)
    else:
        if args.profiles:
            profiles = load_profiles(args.profiles)
            files = max(p.file_id for p in profiles) + 1
        else:
            files = args.files
            profiles = decay_profiles(files, args.horizon, args.mean_requests, seed=seeds.profiles)
        catalog, _ = zipf_catalog(files, 0.0, (args.size_min, args.size_max), seeds.catalog)
        stream = decay_stream(upscale(profiles, args.upscale), catalog, args.horizon, seeds.stream, args.caches)
    out = os.path.abspath(args.out)
    if not DataManager(os.path.dirname(out)).save_stream(stream, os.path.basename(out)):
        return EXIT_RUNTIME
    logger.info("wrote %d requests to %s", len(stream), out)
    return EXIT_OK


def cmd_fit(args) -> int:
    if not args.out:
        raise UsageError("fit needs --out")
    _, stream = ingest_trace(args.trace, args.format, args.bitrate, args.allow_unsorted, args.slot_length)
    profiles = upscale(fit_profiles(stream), args.upscale)
    out = os.path.abspath(args.out)
    if not DataManager(os.path.dirname(out)).save_profiles(profiles, os.path.basename(out)):
        return EXIT_RUNTIME
    logger.info("fitted %d profiles into %s", len(profiles), out)
    return EXIT_OK


def parse_instance(path: str) -> SubproblemInstance:
    """Read ``# capacity=C penalty=<family> key=value ...`` then one price per line."""
    with open(path, 'r', encoding='utf-8') as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or not lines[0].startswith('#'):
        raise UsageError("instance file must start with '# capacity=... penalty=...'")
    capacity = None
    penalty_tokens: List[str] = []
    for token in lines[0].lstrip('#').split():
        key, _, value = token.partition('=')
        if key == 'capacity':
            try:
                capacity = float(value)
            except ValueError:
                raise UsageError(f"capacity {value!r} is not a number") from None
        elif key == 'penalty':
            penalty_tokens.append(value)
        elif penalty_tokens:
            penalty_tokens.append(token)
        else:
            raise UsageError(f"unexpected header field {token!r}")
    if capacity is None or not penalty_tokens:
        raise UsageError("instance header needs capacity=... and penalty=...")
    try:
        prices = [float(line) for line in lines[1:]]
    except ValueError as e:
        raise UsageError(f"bad price line: {e}") from None
    try:
        return SubproblemInstance(prices, capacity, PenaltySpec.parse(" ".join(penalty_tokens)))
    except (ConfigError, ParameterError) as e:
        raise UsageError(str(e)) from None


def cmd_solve_subproblem(args) -> int:
    inst = parse_instance(args.instance)
    sol = solve(inst, args.delta)
    print("u = " + " ".join(f"{u:.12g}" for u in sol.flows))
    print(f"upsilon = {sol.multiplier:.12g}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="cdnsim", description="CDN cache-placement simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    common = CliParser(add_help=False)
    common.add_argument("--out", help="output directory (simulate) or file")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--upscale", type=int, default=1, help="multiply decay-profile request counts by k")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="run an experiment manifest")
    p.add_argument("--config", help="INI experiment manifest")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-workload", parents=[common], help="write a synthetic request stream")
    p.add_argument("kind", choices=("zipf", "decay"))
    p.add_argument("--files", type=int, default=100)
    p.add_argument("--zipf-s", type=float, default=0.8)
    p.add_argument("--rate", type=float, default=40.0, help="requests per slot")
    p.add_argument("--horizon", type=int, default=100, help="slots")
    p.add_argument("--caches", type=int, default=1)
    p.add_argument("--size-min", type=float, default=0.5)
    p.add_argument("--size-max", type=float, default=5.0)
    p.add_argument("--mean-requests", type=float, default=20.0)
    p.add_argument("--profiles", help="profile CSV for the decay model")
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("fit", parents=[common], help="fit decay profiles to a trace")
    p.add_argument("trace")
    p.add_argument("--format", default="csv")
    p.add_argument("--bitrate", type=float, default=1.0, help="volume units per minute")
    p.add_argument("--slot-length", type=float, default=1.0)
    p.add_argument("--allow-unsorted", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("solve-subproblem", help="solve one subproblem instance")
    p.add_argument("instance")
    p.add_argument("--delta", type=float, default=1e-9)
    p.set_defaults(func=cmd_solve_subproblem)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main launcher function."""
    if not check_dependencies():
        return EXIT_RUNTIME
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"cdnsim: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, TraceFormatError, ParameterError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("run failed: %s", e)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
