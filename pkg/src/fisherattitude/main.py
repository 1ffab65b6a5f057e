from fisherattitude.config import (
    CliConfig, ConfigException, ConfigType, DensityConfig, EstimateConfig,
    ObservabilityConfig, SimulateConfig, from_mapping, load_config)
from fisherattitude.harness import (
    Combo, Estimator, HarnessException, RunResult, monte_carlo, run_streams)
from fisherattitude.logfile import (
    LogFileException, ingest_log, write_observability, write_sphere_density,
    write_states, write_summary, write_time_series)
from fisherattitude.matrix_fisher import (
    MatrixFisher, MatrixFisherException, NotAMomentException, sphere_density)
from fisherattitude.mekf import MekfException
from fisherattitude.observability import ObservabilityReport, report
from fisherattitude.so3 import So3Exception
from fisherattitude.utils import Settings

import configupdater
import numpy as np

import argparse
import sys
import logging
import pathlib

from typing import Tuple

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

SUBCOMMAND_FLAGS = {
    'simulate': ['combo', 'estimator', 'runs', 'seed', 'duration', 'gamma',
                 'kappa', 'gyro_rate', 'meas_rate', 'ref', 'truth', 'out',
                 'jobs'],
    'estimate': ['log', 'estimator', 'gamma', 'kappa', 'ref', 'out'],
    'observability': ['parameter', 'moment', 'out'],
    'density': ['parameter', 'level', 'grid', 'out'],
}


class FisherAttitudeException(Exception):
    pass


class ConfigNotExistsException(FisherAttitudeException):
    pass


class InvalidConfigFile(FisherAttitudeException):
    pass


def read_settings(
    settings_path: pathlib.Path = pathlib.Path(
        './config/fisherattitude.conf')
) -> Settings:
    logger = logging.getLogger('fisherattitude')

    file_path = settings_path.joinpath(
        'fisherattitude.conf') if not settings_path.suffix else settings_path

    if not file_path.exists():
        logger.info('Settings file does not exist, raising exception')

        raise ConfigNotExistsException()

    conf = configupdater.ConfigUpdater(
        empty_lines_in_values=False,
        allow_no_value=False
    )

    conf.read(file_path)

    try:
        options = conf.get_section('configuration')

        s = Settings(
            jobs=int(options['jobs'].value),
            zero_tolerance=float(options['zero_tolerance'].value),
            marginal_grid=int(options['marginal_grid'].value),
            icosphere_level=int(options['icosphere_level'].value),
        )
    except (KeyError, ValueError, TypeError):
        raise InvalidConfigFile()

    return s


def configure_logging(
        use_stdout: bool,
        file_path: pathlib.Path | None = None,
        verbosity: int = logging.INFO) -> None:
    logger = logging.getLogger('fisherattitude')
    logger.setLevel(verbosity)
    logger.handlers.clear()

    fmt = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    if use_stdout:
        stdout_handler = logging.StreamHandler()
        stdout_handler.setFormatter(fmt)
        logger.addHandler(stdout_handler)

    if not file_path:
        return

    if not file_path.exists():
        file_path.mkdir(parents=True)

    file_handler = logging.FileHandler(
        file_path.joinpath('fisherattitude.log'))
    file_handler.setFormatter(fmt)
    logger.addHandler(file_handler)


def get_version_info() -> str:
    try:
        from fisherattitude._version import __version__
    except ImportError:
        return '0+unknown'

    return __version__


def _float_list(text: str, count: int) -> list[float]:
    parts = text.split(',')

    if len(parts) != count:
        raise argparse.ArgumentTypeError(
            f'Expected {count} comma-separated numbers, got {text!r}')

    try:
        return [float(part) for part in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Invalid number in {text!r}')


def parse_vector(text: str) -> list[float]:
    return _float_list(text, 3)


def parse_matrix(text: str) -> list[list[float]]:
    values = _float_list(text, 9)
    return [values[0:3], values[3:6], values[6:9]]


def _enum_list(enum_type: type, text: str) -> list[str]:
    if text == 'all':
        return [member.value for member in enum_type]

    values = [part.strip() for part in text.split(',')]

    for value in values:
        try:
            enum_type(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f'Invalid choice {value!r}')

    return values


def parse_combos(text: str) -> list[str]:
    return _enum_list(Combo, text)


def parse_estimators(text: str) -> list[str]:
    return _enum_list(Estimator, text)


def parse_args(args: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog='FisherAttitude',
        description=('Attitude estimation with the matrix Fisher '
                     'distribution, stochastic observability analysis and '
                     'Monte-Carlo filter comparisons.'),
        epilog='Exit codes: 0 success, 2 usage or config error, 3 runtime '
               'error.'
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'{get_version_info()}'
    )

    parser.add_argument(
        '-v', '--verbose',
        action='count',
        help=('Sets the output verbosity in the order of: warning, info, '
              'debug'),
        default=0
    )

    parser.add_argument(
        '-o', '--log-output',
        action='store',
        type=str,
        help='Write a log file to this directory.',
        dest='log_dir'
    )

    parser.add_argument(
        '--settings',
        action='store',
        type=str,
        help=('Settings file (INI, section [configuration]). Defaults to '
              './config/fisherattitude.conf when it exists.')
    )

    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_config(sub: argparse.ArgumentParser) -> None:
        sub.add_argument(
            '--config',
            action='store',
            type=str,
            help='JSON parameter document; cannot be combined with flags.'
        )
        sub.add_argument(
            '--out',
            action='store',
            type=str,
            help='Existing output directory (default: current directory).'
        )

    sim = subparsers.add_parser(
        'simulate', help='Monte-Carlo filter runs on simulated data.')
    add_config(sim)
    sim.add_argument('--combo', type=parse_combos,
                     help=('Comma-separated combos (AVI_RVI, AVI_RVB, '
                           'AVB_RVI, AVB_RVB) or "all".'))
    sim.add_argument('--estimator', type=parse_estimators,
                     help='Comma-separated estimators (matrix_fisher, mekf) '
                          'or "all".')
    sim.add_argument('--runs', type=int, help='Runs per combo and estimator.')
    sim.add_argument('--seed', type=int,
                     help='Base seed; run i uses seed + i. Required.')
    sim.add_argument('--duration', type=float, help='Seconds per run.')
    sim.add_argument('--gamma', type=float,
                     help='Gyro random walk density in deg/sqrt(s).')
    sim.add_argument('--kappa', type=float,
                     help='Direction measurement concentration.')
    sim.add_argument('--gyro-rate', type=float, help='Gyro rate in Hz.')
    sim.add_argument('--meas-rate', type=float,
                     help='Direction measurement rate in Hz.')
    sim.add_argument('--ref', type=parse_vector,
                     help='Reference unit vector as x,y,z.')
    sim.add_argument('--truth', choices=['spin_precess', 'fixed_axis'],
                     help='True attitude trajectory.')
    sim.add_argument('--jobs', type=int,
                     help='Worker processes (default: logical cores).')

    est = subparsers.add_parser(
        'estimate', help='Run one estimator on a sensor log.')
    add_config(est)
    est.add_argument('--log', type=str, help='Sensor log CSV.')
    est.add_argument('--estimator', choices=[e.value for e in Estimator],
                     help='Estimator to run.')
    est.add_argument('--gamma', type=float,
                     help='Gyro random walk density in deg/sqrt(s).')
    est.add_argument('--kappa', type=float,
                     help='Direction measurement concentration.')
    est.add_argument('--ref', type=parse_vector,
                     help='Reference unit vector as x,y,z.')

    obs = subparsers.add_parser(
        'observability', help='Observability report for F or E[R].')
    add_config(obs)
    obs.add_argument('--parameter', type=parse_matrix,
                     help='Matrix Fisher parameter F, nine numbers row-major.')
    obs.add_argument('--moment', type=parse_matrix,
                     help='First moment E[R], nine numbers row-major.')

    den = subparsers.add_parser(
        'density', help='Marginal principal-axis densities on a sphere grid.')
    add_config(den)
    den.add_argument('--parameter', type=parse_matrix,
                     help='Matrix Fisher parameter F, nine numbers row-major.')
    den.add_argument('--level', type=int, help='Icosphere subdivision level.')
    den.add_argument('--grid', type=int,
                     help='Quadrature nodes about each direction.')

    return parser.parse_args(args)


def validate_args(
    args: argparse.Namespace
) -> Tuple[bool, str, str]:
    """Ensures that conflicting arguments have not been used together.

    Args:
        args (argparse.Namespace): ArgParse Namespace of arguments.

    Returns:
        tuple[bool, str, str]:
            The success value and, if unsuccessful, the offending argument
            and the argument it conflicts with (empty when it is missing).
    """

    flags = SUBCOMMAND_FLAGS[args.command]

    if args.config:
        for flag in flags:
            if flag != 'out' and getattr(args, flag) is not None:
                return (False, 'config', flag.replace('_', '-'))

        return (True, '', '')

    if args.command == 'simulate' and args.seed is None:
        return (False, 'seed', '')

    if args.command == 'estimate' and args.log is None:
        return (False, 'log', '')

    if args.command == 'observability':
        if args.parameter is not None and args.moment is not None:
            return (False, 'parameter', 'moment')

        if args.parameter is None and args.moment is None:
            return (False, 'parameter', '')

    if args.command == 'density' and args.parameter is None:
        return (False, 'parameter', '')

    return (True, '', '')


def convert_verbosity(verbosity: int) -> int:
    if verbosity == 0:
        return logging.ERROR
    elif verbosity == 1:
        return logging.WARNING
    elif verbosity == 2:
        return logging.INFO
    else:
        return logging.DEBUG


def _document(config_type: type[ConfigType], args: argparse.Namespace,
              data: dict[str, object]) -> ConfigType:
    if not args.config:
        return from_mapping(config_type, data)

    config = load_config(args.config, config_type)

    if args.out is not None:
        config.out = args.out

    return config


def config_from_args(args: argparse.Namespace,
                     settings: Settings) -> CliConfig:
    """Builds the parameter document for a subcommand from flags or a file."""

    renamed = {'combo': 'combos', 'estimator': 'estimators',
               'gamma': 'gamma_deg'}

    if args.command == 'estimate':
        renamed = {'gamma': 'gamma_deg'}

    data: dict[str, object] = {
        renamed.get(flag, flag): getattr(args, flag)
        for flag in SUBCOMMAND_FLAGS[args.command]
        if getattr(args, flag) is not None}

    match args.command:
        case 'simulate':
            return _document(SimulateConfig, args, data)
        case 'estimate':
            return _document(EstimateConfig, args, data)
        case 'observability':
            return _document(ObservabilityConfig, args, data)
        case _:
            data.setdefault('level', settings.icosphere_level)
            data.setdefault('grid', settings.marginal_grid)

            return _document(DensityConfig, args, data)


def _output_dir(config: CliConfig) -> pathlib.Path:
    out = pathlib.Path(config.out)

    if not out.is_dir():
        raise FileNotFoundError(f'Output directory {out} does not exist')

    return out


def _print_report(rep: ObservabilityReport) -> None:
    print(f'd = {np.array2string(rep.d, precision=6)}')
    print(f'rho = {rep.rho:.6g}')
    print('fim_mean diag = '
          f'{np.array2string(np.diag(rep.fim_mean), precision=6)}')
    print(f'mmse = {rep.classification.case.value}')

    if rep.classification.ambiguity_axis is not None:
        axis = np.array2string(rep.classification.ambiguity_axis, precision=6)
        print(f'ambiguity axis = {axis}')


def _series_name(run: RunResult) -> str:
    return f'series_{run.estimator.value}_{run.combo.value}_{run.seed}.csv'


def cmd_simulate(config: SimulateConfig,
                 settings: Settings) -> list[pathlib.Path]:
    logger = logging.getLogger('fisherattitude')

    out = _output_dir(config)
    jobs = config.jobs if config.jobs is not None else settings.worker_count

    result = monte_carlo(config.scenario(), config.runs, config.combo_list,
                         config.estimator_list, jobs)

    written = []

    summary_path = out.joinpath('summary.csv')
    write_summary(summary_path, result.rows)
    written.append(summary_path)

    if config.write_series:
        for run in result.runs:
            path = out.joinpath(_series_name(run))
            write_time_series(path, run)
            written.append(path)

    for run in result.runs:
        if run.aborted:
            logger.warning(f'Run {_series_name(run)} aborted: {run.aborted}')

    print(f'{"estimator":<14}{"combo":<9}{"full error (deg)":>22}'
          f'{"partial error (deg)":>24}')
    for row in result.rows:
        print(f'{row.estimator.value:<14}{row.combo.value:<9}'
              f'{row.full_mean:>13.2f} ± {row.full_sd:<6.2f}'
              f'{row.partial_mean:>15.2f} ± {row.partial_sd:<6.2f}')

    return written


def cmd_estimate(config: EstimateConfig,
                 settings: Settings) -> list[pathlib.Path]:
    out = _output_dir(config)

    log = ingest_log(config.log)
    run = run_streams(log.gyro, log.directions, Estimator(config.estimator),
                      config.gamma, config.kappa, config.ref, log.truth)

    series_path = out.joinpath('series.csv')
    states_path = out.joinpath('states.csv')
    write_time_series(series_path, run)
    write_states(states_path, run.states)
    written = [series_path, states_path]

    if run.aborted:
        raise RuntimeError(f'Estimation aborted: {run.aborted}')

    if run.final_report is not None:
        obs_path = out.joinpath('observability.csv')
        t_end = run.records[-1].t if run.records else 0.0
        write_observability(obs_path, [(t_end, run.final_report)])
        written.append(obs_path)
        _print_report(run.final_report)

    if run.records:
        last = run.records[-1]
        print(f'final full error = {last.full_error:.4g} deg, '
              f'partial error = {last.partial_error:.4g} deg')

    return written


def cmd_observability(config: ObservabilityConfig,
                      settings: Settings) -> list[pathlib.Path]:
    out = _output_dir(config)

    if config.parameter is not None:
        subject: MatrixFisher | np.ndarray = MatrixFisher(
            np.array(config.parameter))
    else:
        subject = np.array(config.moment)

    rep = report(subject, settings.zero_tolerance)

    path = out.joinpath('observability.csv')
    write_observability(path, [(0.0, rep)])
    _print_report(rep)

    return [path]


def cmd_density(config: DensityConfig,
                settings: Settings) -> list[pathlib.Path]:
    out = _output_dir(config)

    mf = MatrixFisher(np.array(config.parameter))
    grids = [sphere_density(mf, axis, config.level, config.grid)
             for axis in (1, 2, 3)]

    path = out.joinpath('density.csv')
    write_sphere_density(path, grids)

    return [path]


def run(config: CliConfig, settings: Settings) -> list[pathlib.Path]:
    match config:
        case SimulateConfig():
            return cmd_simulate(config, settings)
        case EstimateConfig():
            return cmd_estimate(config, settings)
        case ObservabilityConfig():
            return cmd_observability(config, settings)
        case DensityConfig():
            return cmd_density(config, settings)


def main(args: list[str] | None = None) -> None:
    parsed = parse_args(args)

    success, arg1, arg2 = validate_args(parsed)

    if not success:
        if arg2:
            print(f'--{arg1} is incompatible with --{arg2}', file=sys.stderr)
        else:
            print(f'--{arg1} is required', file=sys.stderr)

        sys.exit(EXIT_USAGE)

    verbosity = convert_verbosity(parsed.verbose)
    log_dir = pathlib.Path(parsed.log_dir) if parsed.log_dir else None
    configure_logging(True, log_dir, verbosity)

    logger = logging.getLogger('fisherattitude')

    try:
        if parsed.settings:
            settings = read_settings(pathlib.Path(parsed.settings))
        elif pathlib.Path('./config/fisherattitude.conf').exists():
            settings = read_settings()
        else:
            settings = Settings()
    except (ConfigNotExistsException, InvalidConfigFile):
        logger.error('fisherattitude.conf does not exist or is not formatted '
                     'correctly, copy it from the templates directory.')
        print('Invalid settings file', file=sys.stderr)

        sys.exit(EXIT_USAGE)

    try:
        config = config_from_args(parsed, settings)
    except (ConfigException, OSError) as e:
        print(f'Invalid configuration: {e}', file=sys.stderr)

        sys.exit(EXIT_USAGE)

    if isinstance(config, EstimateConfig) \
            and not pathlib.Path(config.log).is_file():
        print(f'Log file {config.log} does not exist', file=sys.stderr)

        sys.exit(EXIT_USAGE)

    try:
        run(config, settings)
    except (NotAMomentException, LogFileException) as e:
        print(f'Invalid input: {e}', file=sys.stderr)

        sys.exit(EXIT_USAGE)
    except (MatrixFisherException, MekfException, So3Exception,
            HarnessException, RuntimeError, OSError) as e:
        logger.error(f'{type(e).__name__}: {e}')
        print(f'Error: {e}', file=sys.stderr)

        sys.exit(EXIT_RUNTIME)

    sys.exit(EXIT_OK)


if __name__ == '__main__':
    main()
