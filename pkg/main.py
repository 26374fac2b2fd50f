"""
Command-line entry point.

    python main.py run configs/logistic_docofl.env
    python main.py codec-bench --budgets 2 3 4 --dims 4096 65536
    python main.py counterexample --omegas 0 0.25 0.5 --seeds 5
    python main.py schedule-audit --clients 50 --per-round 5 --rounds 20000
    python main.py kv-sweep configs/kv_template.env --anchor-rates 1 5 10 --capacities 1 3

Exit codes: 0 success, 1 configuration error, 2 numeric or protocol failure at run time.
"""

import argparse
import json
import logging
import os
import sys

from dotenv import load_dotenv

from src.exceptions import CodecError, ConfigError, NumericBlowup, ProtocolViolation

EXIT_CODES = {'success': 0, 'config_error': 1, 'numeric_failure': 2, 'runtime_error': 2}


def _configure_logging():
    load_dotenv()
    level = os.getenv('DOCOFL_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='docofl', description='DoCoFL federated learning simulator')
    sub = parser.add_subparsers(dest='command', required=True)

    run_p = sub.add_parser('run', help='run one experiment config')
    run_p.add_argument('config')
    run_p.add_argument('--no-archive', action='store_true', help='skip GCS archival')

    bench = sub.add_parser('codec-bench', help='NMSE / encode-time benchmark of the codecs')
    bench.add_argument('--schemes', nargs='+', default=None, help="spec templates, '{b}' is the budget")
    bench.add_argument('--distributions', nargs='+', default=['lognormal'])
    bench.add_argument('--budgets', nargs='+', type=int, default=[2, 3, 4])
    bench.add_argument('--dims', nargs='+', type=int, default=[4096])
    bench.add_argument('--trials', type=int, default=10)
    bench.add_argument('--seed', type=int, default=0)
    bench.add_argument('--output', default='codec_bench.csv')

    counter = sub.add_parser('counterexample', help='naive weight compression vs DoCoFL on the scalar task')
    counter.add_argument('--omegas', nargs='+', type=float, default=[0.0, 0.25, 0.5, 0.75])
    counter.add_argument('--eta', type=float, default=0.05)
    counter.add_argument('--rounds', type=int, default=20000)
    counter.add_argument('--seed', type=int, default=0)
    counter.add_argument('--seeds', type=int, default=1)
    counter.add_argument('--naive-only', action='store_true')
    counter.add_argument('--output', default='counterexample.csv')

    audit = sub.add_parser('schedule-audit', help='participation-frequency audit of a schedule')
    audit.add_argument('--clients', type=int, default=50)
    audit.add_argument('--per-round', type=int, default=5)
    audit.add_argument('--rounds', type=int, default=20000)
    audit.add_argument('--policy', choices=['uniform', 'two_tier'], default='two_tier')
    audit.add_argument('--strong-delay', type=int, default=0)
    audit.add_argument('--weak-delay', type=int, default=5)
    audit.add_argument('--weak-fraction', type=float, default=0.5)
    audit.add_argument('--sampling', choices=['iid', 'epoch'], default='iid')
    audit.add_argument('--seed', type=int, default=0)
    audit.add_argument('--schedule-csv', default=None, help='audit a schedule.csv written by a run')

    sweep = sub.add_parser('kv-sweep', help='grid of runs over anchor rate K and queue capacity V')
    sweep.add_argument('config')
    sweep.add_argument('--anchor-rates', nargs='+', type=int, default=[1, 5, 10, 20])
    sweep.add_argument('--capacities', nargs='+', type=int, default=[1, 3, 5])
    sweep.add_argument('--workers', type=int, default=1)
    sweep.add_argument('--output', default='kv_sweep.csv')
    return parser


def dispatch(args) -> dict:
    from src.harness import commands, load_config
    from src.orchestrator import run

    if args.command == 'run':
        result = run(load_config(args.config), archive=not args.no_archive)
        return {'status': result.status, 'run_dir': result.run_dir}
    if args.command == 'codec-bench':
        kwargs = {} if args.schemes is None else {'schemes': args.schemes}
        return commands.codec_bench(distributions=args.distributions, budgets=args.budgets, dims=args.dims,
                                    trials=args.trials, seed=args.seed, output=args.output, **kwargs)
    if args.command == 'counterexample':
        return commands.counterexample_cmd(omegas=args.omegas, eta=args.eta, T=args.rounds, seed=args.seed,
                                           seeds=args.seeds, include_docofl=not args.naive_only,
                                           output=args.output)
    if args.command == 'schedule-audit':
        return commands.schedule_audit_cmd(
            clients=args.clients, per_round=args.per_round, rounds=args.rounds, policy=args.policy,
            strong_delay=args.strong_delay, weak_delay=args.weak_delay, weak_fraction=args.weak_fraction,
            seed=args.seed, sampling=args.sampling, schedule_csv=args.schedule_csv,
        )
    return commands.kv_sweep(load_config(args.config), anchor_rates=args.anchor_rates,
                             capacities=args.capacities, workers=args.workers, output=args.output)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        result = dispatch(args)
    except ProtocolViolation as e:
        print(f"Runtime failure: {e}", file=sys.stderr)
        return EXIT_CODES['runtime_error']
    except (ConfigError, CodecError, ValueError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CODES['config_error']
    except NumericBlowup as e:
        print(f"Numeric failure: {e} (last good round {e.last_good_round})", file=sys.stderr)
        return EXIT_CODES['numeric_failure']

    if args.command == 'schedule-audit':
        print(json.dumps(result, indent=2, default=str))
    elif 'table' in result:
        print(f"\n{'=' * 70}")
        print(result['table'].to_string(index=False))
        print(f"{'=' * 70}")
        if result.get('output'):
            print(f"✓ Written to {result['output']}")
    return EXIT_CODES.get(result.get('status'), 0)


if __name__ == '__main__':
    sys.exit(main())
