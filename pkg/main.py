#!/usr/bin/env python3
"""
Safe Imitation Learning for Highway Car-Following

A CLI tool that generates expert driving logs, processes them into
experience tuples, trains spline-output driving policies with behavioral
cloning (BC) or the barrier-augmented safe loss (SAFE), and validates both
in a closed-loop kinematic simulator.

Usage:
    python main.py gen --scenario scenarios/straight.env --duration 600 --out runs/log.csv
    python main.py process --log runs/log.csv --out runs/tuples.csv
    python main.py train --tuples runs/tuples.csv --mode SAFE --out runs/safe.npz
    python main.py eval-safety --bc runs/bc.npz --safe runs/safe.npz --out runs/safety
    python main.py eval-human --log runs/log.csv --held 0 --bc runs/bc.npz --safe runs/safe.npz --out runs/human
    python main.py report --in runs --out runs/report

Exit codes:
    0 success, 1 experiment failure, 2 usage or configuration error
"""
import argparse
import sys

from config import ConfigError, config
from experiments import create_runner

EXIT_OK = 0
EXIT_EXPERIMENT = 1
EXIT_CONFIG = 2


def print_banner():
    """Print application banner."""
    banner = """
================================================================

     Safe Imitation Learning for Highway Car-Following

     Expert logs -> experience tuples -> BC / SAFE policies
     -> closed-loop safety and human-likeness validation

================================================================
"""
    print(banner)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Experiment seed (default: SAFEIL_SEED or 0)')
    common.add_argument('--config', '-c', help='Experiment config file (key=value)')
    common.add_argument('--workers', '-w', type=int, default=None, help='Worker processes for scenario fan-out')
    common.add_argument('--verbose', '-v', action='store_true', help='Show detailed progress')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        description="Safe imitation learning experiments for highway car-following",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s gen --scenario scenarios/highway115.env --duration 600 --out runs/log.csv -c scenarios/experiment.env
  %(prog)s train --tuples runs/tuples.csv --mode BC --hold 0 --out runs/bc.npz
  %(prog)s eval-safety --bc runs/bc.npz --safe runs/safe.npz --out runs/safety
        """,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common], help='Generate a synthetic expert log')
    gen.add_argument('--scenario', '-s', required=True, help='Scenario file (key=value)')
    gen.add_argument('--duration', '-d', type=float, default=600.0, help='Log duration in seconds (default: 600)')
    gen.add_argument('--out', '-o', required=True, help='Log CSV path')

    process = sub.add_parser('process', parents=[common], help='Filter a log into experience tuples')
    process.add_argument('--log', required=True, help='Log CSV path')
    process.add_argument('--out', '-o', required=True, help='Tuples CSV path')

    train = sub.add_parser('train', parents=[common], help='Train a BC or SAFE policy')
    train.add_argument('--tuples', required=True, help='Tuples CSV path')
    train.add_argument('--mode', '-m', choices=['BC', 'SAFE', 'bc', 'safe'], required=True, help='Training mode')
    train.add_argument('--hold', type=int, default=None, help='Maneuver id excluded from training')
    train.add_argument('--out', '-o', required=True, help='Checkpoint path (.npz)')

    safety = sub.add_parser('eval-safety', parents=[common], help='Closed-loop safety benchmark')
    safety.add_argument('--bc', required=True, help='BC checkpoint')
    safety.add_argument('--safe', required=True, help='SAFE checkpoint')
    safety.add_argument('--out', '-o', required=True, help='Output directory')

    human = sub.add_parser('eval-human', parents=[common], help='Held-out maneuver replay')
    human.add_argument('--log', required=True, help='Log CSV the maneuvers come from')
    human.add_argument('--held', type=int, required=True, help='Held-out maneuver id')
    human.add_argument('--bc', required=True, help='BC checkpoint')
    human.add_argument('--safe', required=True, help='SAFE checkpoint')
    human.add_argument('--out', '-o', required=True, help='Output directory')

    report = sub.add_parser('report', parents=[common], help='Assemble Word and PDF reports')
    report.add_argument('--in', dest='in_dir', required=True, help='Results directory')
    report.add_argument('--out', '-o', required=True, help='Report directory')
    return parser


def run_command(args: argparse.Namespace) -> dict:
    """Dispatch a parsed command to the experiment runner."""
    runner = create_runner(output_dir=config.OUTPUT_DIR, seed=args.seed, workers=args.workers,
                           settings_path=args.config)
    if args.command == 'gen':
        return runner.generate(args.scenario, args.duration, args.out, verbose=args.verbose)
    if args.command == 'process':
        return runner.process(args.log, args.out, verbose=args.verbose)
    if args.command == 'train':
        return runner.train(args.tuples, args.mode, args.out, held_id=args.hold, verbose=args.verbose)
    checkpoints = {'BC': args.bc, 'SAFE': args.safe} if hasattr(args, 'bc') else {}
    if args.command == 'eval-safety':
        return runner.eval_safety(checkpoints, args.out, verbose=args.verbose)
    if args.command == 'eval-human':
        return runner.eval_human(args.log, args.held, checkpoints, args.out, verbose=args.verbose)
    return runner.report(args.in_dir, args.out, verbose=args.verbose)


def main(argv=None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose or config.VERBOSE:
        args.verbose = True
        print_banner()

    try:
        config.validate()
        result = run_command(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_CONFIG

    if result['success']:
        for name, path in result['outputs'].items():
            print(f"[OK] {name}: {path}")
        return EXIT_OK

    print(f"[ERROR] {args.command} failed: {result['error']}", file=sys.stderr)
    return EXIT_CONFIG if result['error_type'] == 'config' else EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())
