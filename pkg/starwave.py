"""Command-line entry point: one subcommand per experiment."""
import argparse
import logging
import sys
from pathlib import Path

from artifacts import write_error
from errors import StarwaveError, exit_code_for
from experiments import EXPERIMENTS, run_experiment
from run_config import RUN_DEFAULTS, load_experiment_config

logger = logging.getLogger('starwave')

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def build_parser():
    parser = argparse.ArgumentParser(
        prog='starwave',
        description='NLS solitons, linearized spectra and scattering data on star graphs',
    )
    subparsers = parser.add_subparsers(dest='experiment', required=True)
    for name in EXPERIMENTS:
        sub = subparsers.add_parser(name, help=f'Run the {name} experiment')
        sub.add_argument('--config', type=Path, help='INI config file')
        sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                         help='Override one config value (repeatable, applied after --config)')
        sub.add_argument('--out', type=Path, help=f"Output directory (default {RUN_DEFAULTS['out']})")
        sub.add_argument('--seed', help='Unsigned 64-bit seed (default [run] seed, then STARWAVE_SEED)')
        sub.add_argument('--quiet', action='store_true', help='Only log warnings and errors')
    return parser


def configure_logging(quiet=False):
    level = RUN_DEFAULTS['log_level'] or ('WARNING' if quiet else 'INFO')
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    out_dir = args.out or Path(RUN_DEFAULTS['out'])
    try:
        cfg = load_experiment_config(args.experiment, args.config, args.overrides, args.seed, out_dir)
    except StarwaveError as exc:
        code = exit_code_for(exc)
        logger.error('Invalid configuration: %s', exc)
        write_error(out_dir, exc, code)
        return code
    result = run_experiment(cfg)
    if result.exit_code:
        logger.error('Artifacts and error record written to %s', result.out_dir)
    else:
        logger.info('Artifacts written to %s', result.out_dir)
    return result.exit_code


if __name__ == '__main__':
    sys.exit(main())
