import argparse
from dataclasses import replace
import logging
import os
import sys

from .errors import PreconditionError
from .experiments import (
    RUNNERS,
    execute,
    load_config,
    report,
    sweep,
    write_report,
)
from .utils import to_json


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PRECONDITION = 2


def parse_value(value):  # wiki: ignore
    number = float(value)
    return int(number) if number.is_integer() else number


def build_parser():
    parser = argparse.ArgumentParser(
        prog='apsgd',
        description='Asynchronous perturbed SGD experiments.')
    parser.add_argument('--config', help='JSON config, defaults to '
                                         '$APSGD_CONFIG or built-in values')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--out', help='Output directory')
    parser.add_argument('--trials', type=int)
    parser.add_argument('--live', action='store_true',
                        help='Run with worker threads instead of a schedule')
    parser.add_argument('--workers', type=int)
    parser.add_argument('--handshake', action='store_true')
    parser.add_argument('--delay-cap', type=int,
                        help='Fail live runs on gradients older than this')
    parser.add_argument('--decompose', action='store_true',
                        help='Coupled escape runs split into psi and residual')
    parser.add_argument('--feasible-search', action='store_true',
                        help='Tune (w, u, B) until every condition passes')
    parser.add_argument('--log-level', default='WARNING',
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))

    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in RUNNERS:
        subparsers.add_parser(name)
    sweep_parser = subparsers.add_parser('sweep')
    sweep_parser.add_argument('--axis', required=True)
    sweep_parser.add_argument('--values', required=True, nargs='+',
                              type=parse_value)
    sweep_parser.add_argument('--experiment', default='escape',
                              choices=tuple(RUNNERS))
    sweep_parser.add_argument('--max-workers', type=int, default=4)
    return parser


def apply_flags(config, args):
    """
    Config with command-line flags taking precedence over file values.
    """
    changes = {}
    for name in ('seed', 'out', 'trials', 'workers', 'delay_cap'):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    if args.live:
        changes['mode'] = 'live'
    if args.handshake:
        changes['handshake'] = True
    if args.feasible_search:
        changes['feasible_search'] = True
    if args.decompose:
        changes.update(coupled=True, decomposed=True)
    return replace(config, **changes)


def run_command(args, stdout=None):
    stdout = stdout or sys.stdout
    config = apply_flags(load_config(args.config), args)
    if args.command == 'sweep':
        records = sweep(config, args.axis, args.values,
                        experiment=args.experiment,
                        max_workers=args.max_workers)
        df = report(records)
        if config.out:
            path = write_report(
                records, os.path.join(config.out, f'sweep-{args.axis}.csv'))
            logger.info('Sweep report written to %s', path)
        stdout.write(df.to_csv(index=False))
        return EXIT_OK

    record = execute(config, args.command)
    output = {'experiment': record.experiment,
              'config_hash': record.config_hash,
              'content_hash': record.content_hash,
              'metrics': record.metrics,
              'paths': record.paths,
              **record.details}
    stdout.write(to_json(output, indent=2, sort_keys=True) + '\n')
    return EXIT_OK


def main(argv=None):
    """
    Entry point of the `apsgd` command.

    Returns 0 on success, 2 when a precondition or feasibility check rejects
    the input and 1 on any other error.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return run_command(args)
    except (AssertionError, PreconditionError) as error:
        logger.error('Rejected: %s', error)
        print(f'error: {error}', file=sys.stderr)
        return EXIT_PRECONDITION
    except Exception as error:
        logger.exception('Failed: %s', error)
        print(f'error: {error}', file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
