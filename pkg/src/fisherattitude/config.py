"""JSON parameter documents for the command-line subcommands.

Every document carries a ``version`` string; documents with a different
major version are rejected, as are unknown keys.
"""
from fisherattitude.harness import (
    Combo, Estimator, HarnessException, Scenario, TruthModel)

from packaging.version import InvalidVersion, Version

import numpy as np
import numpy.typing as npt
import dataclasses
import json
import logging
import math
import pathlib

from dataclasses import dataclass, field
from typing import TypeVar

CONFIG_VERSION = '1.0'
SUPPORTED_MAJOR = 1


class ConfigException(Exception):
    pass


class InvalidConfigDocument(ConfigException):
    pass


class UnsupportedConfigVersion(ConfigException):
    pass


def _check_version(version: str) -> None:
    try:
        parsed = Version(str(version))
    except InvalidVersion as e:
        raise UnsupportedConfigVersion(f'Invalid version {version!r}') from e

    if parsed.major != SUPPORTED_MAJOR:
        raise UnsupportedConfigVersion(
            f'Version {version} is not supported, expected '
            f'{SUPPORTED_MAJOR}.x')


def _check_vector(name: str, value: npt.ArrayLike) -> None:
    try:
        vec = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidConfigDocument(f'{name} must be numeric') from e

    if vec.shape != (3,) or abs(np.linalg.norm(vec) - 1.0) > 1e-6:
        raise InvalidConfigDocument(f'{name} must be a unit 3-vector')


def _check_matrix(name: str, value: npt.ArrayLike) -> None:
    try:
        mat = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidConfigDocument(f'{name} must be numeric') from e

    if mat.shape != (3, 3) or not np.all(np.isfinite(mat)):
        raise InvalidConfigDocument(f'{name} must be a finite 3x3 matrix')


def _check_enum(enum_type: type, name: str, value: object) -> None:
    try:
        enum_type(value)
    except ValueError as e:
        allowed = ', '.join(member.value for member in enum_type)
        raise InvalidConfigDocument(
            f'{name}: {value!r} is not one of {allowed}') from e


@dataclass
class SimulateConfig:
    seed: int
    combos: list[str] = field(default_factory=lambda: [Combo.AVI_RVI.value])
    estimators: list[str] = field(
        default_factory=lambda: [Estimator.MATRIX_FISHER.value])
    runs: int = 10
    duration: float = 60.0
    gamma_deg: float = 10.0
    kappa: float = 200.0
    gyro_rate: float = 150.0
    meas_rate: float = 30.0
    ref: list[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])
    truth: str = TruthModel.SPIN_PRECESS.value
    random_initial_attitude: bool = True
    out: str = '.'
    jobs: int | None = None
    write_series: bool = True
    version: str = CONFIG_VERSION

    def __post_init__(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise InvalidConfigDocument('seed must be an integer')

        if not self.combos or not self.estimators:
            raise InvalidConfigDocument(
                'At least one combo and one estimator are required')

        for combo in self.combos:
            _check_enum(Combo, 'combo', combo)

        for estimator in self.estimators:
            _check_enum(Estimator, 'estimator', estimator)

        _check_enum(TruthModel, 'truth', self.truth)

        if self.truth == TruthModel.FILE.value:
            raise InvalidConfigDocument(
                'Use the estimate command for logged data')

        if self.runs < 1:
            raise InvalidConfigDocument('runs must be at least 1')

        if self.jobs is not None and self.jobs < 1:
            raise InvalidConfigDocument('jobs must be at least 1')

        _check_vector('ref', self.ref)

        # Scenario ranges are checked here so errors surface before running
        try:
            self.scenario()
        except (ValueError, HarnessException) as e:
            raise InvalidConfigDocument(str(e)) from e

    def scenario(self) -> Scenario:
        return Scenario(
            duration=float(self.duration),
            gyro_rate=float(self.gyro_rate),
            meas_rate=float(self.meas_rate),
            gamma=math.radians(self.gamma_deg),
            kappa=float(self.kappa),
            ref_vector=tuple(float(x) for x in  # type: ignore[arg-type]
                             np.asarray(self.ref) / np.linalg.norm(self.ref)),
            combo=Combo(self.combos[0]),
            truth=TruthModel(self.truth),
            seed=self.seed,
            random_initial_attitude=self.random_initial_attitude)

    @property
    def combo_list(self) -> list[Combo]:
        return [Combo(combo) for combo in self.combos]

    @property
    def estimator_list(self) -> list[Estimator]:
        return [Estimator(estimator) for estimator in self.estimators]


@dataclass
class EstimateConfig:
    log: str
    estimator: str = Estimator.MATRIX_FISHER.value
    gamma_deg: float = 10.0
    kappa: float = 200.0
    ref: list[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])
    out: str = '.'
    version: str = CONFIG_VERSION

    def __post_init__(self) -> None:
        if not self.log:
            raise InvalidConfigDocument('log path is required')

        _check_enum(Estimator, 'estimator', self.estimator)
        _check_vector('ref', self.ref)

        if self.gamma_deg < 0.0 or self.kappa <= 0.0:
            raise InvalidConfigDocument(
                'gamma_deg must be non-negative and kappa positive')

    @property
    def gamma(self) -> float:
        return math.radians(self.gamma_deg)


@dataclass
class ObservabilityConfig:
    parameter: list[list[float]] | None = None
    moment: list[list[float]] | None = None
    out: str = '.'
    version: str = CONFIG_VERSION

    def __post_init__(self) -> None:
        if (self.parameter is None) == (self.moment is None):
            raise InvalidConfigDocument(
                'Exactly one of parameter and moment is required')

        if self.parameter is not None:
            _check_matrix('parameter', self.parameter)

        if self.moment is not None:
            _check_matrix('moment', self.moment)


@dataclass
class DensityConfig:
    parameter: list[list[float]]
    level: int = 3
    grid: int = 360
    out: str = '.'
    version: str = CONFIG_VERSION

    def __post_init__(self) -> None:
        _check_matrix('parameter', self.parameter)

        if not 0 <= self.level <= 7:
            raise InvalidConfigDocument('level must be between 0 and 7')

        if self.grid < 8:
            raise InvalidConfigDocument('grid must be at least 8')


CliConfig = SimulateConfig | EstimateConfig | ObservabilityConfig | \
    DensityConfig

ConfigType = TypeVar('ConfigType', SimulateConfig, EstimateConfig,
                     ObservabilityConfig, DensityConfig)


def from_mapping(config_type: type[ConfigType],
                 data: dict[str, object]) -> ConfigType:
    """Builds and validates a document of the given type.

    Raises:
        InvalidConfigDocument: Unknown or missing keys, or invalid values.
        UnsupportedConfigVersion: The major version is not supported.
    """

    if not isinstance(data, dict):
        raise InvalidConfigDocument('Document must be a JSON object')

    known = {f.name for f in dataclasses.fields(config_type)}
    unknown = sorted(set(data) - known)

    if unknown:
        raise InvalidConfigDocument(f'Unknown keys: {", ".join(unknown)}')

    _check_version(data.get('version', CONFIG_VERSION))

    try:
        return config_type(**data)  # type: ignore[arg-type]
    except TypeError as e:
        raise InvalidConfigDocument(str(e)) from e


def load_config(path: str | pathlib.Path,
                config_type: type[ConfigType]) -> ConfigType:
    logger = logging.getLogger('fisherattitude.config')

    logger.info(f'Reading {config_type.__name__} from {path}')

    try:
        with open(path) as file:
            data = json.load(file)
    except json.JSONDecodeError as e:
        raise InvalidConfigDocument(f'{path}: {e}') from e

    return from_mapping(config_type, data)


def to_json(config: CliConfig) -> str:
    return json.dumps(dataclasses.asdict(config), indent=2)
