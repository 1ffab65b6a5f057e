"""Sensor log files and result tables as CSV."""
from fisherattitude.harness import (
    DirectionStream, GyroStream, RunResult, StateRecord, SummaryRow,
    TruthStream)
from fisherattitude.matrix_fisher import SphereDensity
from fisherattitude.measurement import ReferenceKind
from fisherattitude.observability import ObservabilityReport
from fisherattitude.propagation import Frame
from fisherattitude.so3 import NotARotationException, check_rotation, \
    project_to_so3
from fisherattitude.utils import FloatArray

import numpy as np
import csv
import logging
import pathlib

from typing import NamedTuple

UNIT_TOLERANCE = 1e-9
RENORMALIZE_WARNING = 1e-3

GYRO_COLUMNS = ['t', 'wx', 'wy', 'wz', 'w_frame']
DIRECTION_COLUMNS = ['dx', 'dy', 'dz', 'd_kind']
TRUTH_COLUMNS = [f'r{i}{j}' for i in range(1, 4) for j in range(1, 4)]

TIME_SERIES_COLUMNS = ['t', 'full_err_deg', 'partial_err_deg', 'rho',
                       'std1_deg', 'std2_deg', 'std3_deg']
SUMMARY_COLUMNS = ['estimator', 'combo', 'full_mean', 'full_sd',
                   'partial_mean', 'partial_sd']
STATE_COLUMNS = ['t', *TRUTH_COLUMNS, 'p11', 'p22', 'p33']
OBSERVABILITY_COLUMNS = ['t', 'd1', 'd2', 'd3', 'rho', 'fim1', 'fim2',
                         'fim3', 'case']
DENSITY_COLUMNS = ['axis_index', 'x', 'y', 'z', 'density']


class LogFileException(Exception):
    pass


class LogParseException(LogFileException):
    def __init__(self, line: int, msg: str):
        self.line = line
        self.msg = msg

        super().__init__(f'Line {line}: {msg}')


class LogSchemaException(LogFileException):
    def __init__(self, column: str):
        self.column = column

        super().__init__(f'Missing column: {column}')


class SensorLog(NamedTuple):
    gyro: GyroStream
    directions: DirectionStream
    truth: TruthStream | None


def _fmt(value: float) -> str:
    return repr(float(value))


def export_log(path: str | pathlib.Path, gyro: GyroStream,
               directions: DirectionStream,
               truth: TruthStream | None = None) -> None:
    """Writes a sensor log with one row per gyro sample.

    Direction readings and truth attitudes are written on the row with the
    same timestamp and left blank elsewhere. Floats are written with repr
    so that reading the file back gives identical values.

    Raises:
        LogFileException: A direction or truth timestamp has no gyro row.
    """

    logger = logging.getLogger('fisherattitude.logfile')

    row_of = {float(t): k for k, t in enumerate(gyro.times)}

    def rows_for(times: FloatArray, what: str) -> dict[int, int]:
        index = {}
        for j, t in enumerate(times):
            if float(t) not in row_of:
                raise LogFileException(f'{what} at t={t} has no gyro sample')
            index[row_of[float(t)]] = j
        return index

    direction_rows = rows_for(directions.times, 'Direction reading')
    truth_rows = rows_for(truth.times, 'Truth attitude') if truth else {}

    header = GYRO_COLUMNS + DIRECTION_COLUMNS
    if truth is not None:
        header += TRUTH_COLUMNS

    with open(path, 'w', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(header)

        for k, t in enumerate(gyro.times):
            row = [_fmt(t), *map(_fmt, gyro.rates[k]), gyro.frame.value]

            if k in direction_rows:
                j = direction_rows[k]
                row += [*map(_fmt, directions.readings[j]),
                        directions.kind.value]
            else:
                row += [''] * len(DIRECTION_COLUMNS)

            if truth is not None:
                if k in truth_rows:
                    row += map(_fmt, truth.rotations[truth_rows[k]].ravel())
                else:
                    row += [''] * len(TRUTH_COLUMNS)

            writer.writerow(row)

    logger.info(f'Wrote {len(gyro.times)} log rows to {path}')


def _parse_floats(record: dict[str, str], columns: list[str],
                  line: int) -> FloatArray:
    try:
        return np.array([float(record[col]) for col in columns])
    except (TypeError, ValueError) as e:
        raise LogParseException(line, f'Invalid number: {e}') from e


def _parse_tag(enum_type: type, value: str,
               line: int) -> Frame | ReferenceKind:
    try:
        return enum_type(value)
    except ValueError as e:
        raise LogParseException(line, f'Unknown tag {value!r}') from e


def _all_blank(record: dict[str, str], columns: list[str]) -> bool:
    return all(not (record.get(col) or '').strip() for col in columns)


def ingest_log(path: str | pathlib.Path) -> SensorLog:
    """Reads a sensor log written by ``export_log`` or a data logger.

    Direction readings whose norm deviates from one are renormalized, with
    a warning when the deviation exceeds 1e-3. Truth attitudes that are not
    rotations are projected onto SO(3) with a warning.

    Raises:
        FileNotFoundError: The file does not exist.
        LogSchemaException: A required column is missing.
        LogParseException: A row cannot be parsed.
    """

    logger = logging.getLogger('fisherattitude.logfile')

    with open(path, newline='') as file:
        reader = csv.DictReader(file)
        fields = reader.fieldnames or []

        for col in GYRO_COLUMNS + DIRECTION_COLUMNS:
            if col not in fields:
                raise LogSchemaException(col)

        has_truth = any(col in fields for col in TRUTH_COLUMNS)
        if has_truth:
            for col in TRUTH_COLUMNS:
                if col not in fields:
                    raise LogSchemaException(col)

        times: list[float] = []
        rates: list[FloatArray] = []
        frame: Frame | None = None

        dir_times: list[float] = []
        readings: list[FloatArray] = []
        kind: ReferenceKind | None = None

        truth_times: list[float] = []
        rotations: list[FloatArray] = []

        for record in reader:
            # Header is line 1
            line = reader.line_num

            t = _parse_floats(record, ['t'], line)[0]
            if times and t <= times[-1]:
                raise LogParseException(line, 'Timestamps must increase')

            row_frame = _parse_tag(Frame, record['w_frame'], line)
            if frame is not None and row_frame is not frame:
                raise LogParseException(line, 'Mixed angular velocity frames')
            frame = row_frame

            times.append(t)
            rates.append(_parse_floats(record, ['wx', 'wy', 'wz'], line))

            if not _all_blank(record, DIRECTION_COLUMNS):
                row_kind = _parse_tag(ReferenceKind, record['d_kind'], line)
                if kind is not None and row_kind is not kind:
                    raise LogParseException(line, 'Mixed reference kinds')
                kind = row_kind

                reading = _parse_floats(record, ['dx', 'dy', 'dz'], line)
                norm = float(np.linalg.norm(reading))

                if norm == 0.0 or not np.isfinite(norm):
                    raise LogParseException(line, 'Invalid direction reading')

                if abs(norm - 1.0) > RENORMALIZE_WARNING:
                    logger.warning(f'Line {line}: direction norm {norm}, '
                                   'renormalized')
                if abs(norm - 1.0) > UNIT_TOLERANCE:
                    reading = reading / norm

                dir_times.append(t)
                readings.append(reading)

            if has_truth and not _all_blank(record, TRUTH_COLUMNS):
                rot = _parse_floats(record, TRUTH_COLUMNS, line).reshape(3, 3)

                try:
                    check_rotation(rot)
                except NotARotationException:
                    logger.warning(f'Line {line}: truth attitude is not a '
                                   'rotation, projected onto SO(3)')
                    rot = project_to_so3(rot)

                truth_times.append(t)
                rotations.append(rot)

    if frame is None:
        raise LogParseException(1, 'Log contains no samples')

    if kind is None:
        raise LogParseException(1, 'Log contains no direction readings')

    gyro = GyroStream(np.array(times), np.array(rates), frame)
    directions = DirectionStream(np.array(dir_times), np.array(readings), kind)
    truth = (TruthStream(np.array(truth_times), np.array(rotations))
             if truth_times else None)

    logger.info(f'Read {len(times)} gyro and {len(dir_times)} direction '
                f'samples from {path}')

    return SensorLog(gyro, directions, truth)


def _write_rows(path: str | pathlib.Path, header: list[str],
                rows: list[list[object]]) -> None:
    logger = logging.getLogger('fisherattitude.logfile')

    with open(path, 'w', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(header)
        writer.writerows(rows)

    logger.info(f'Wrote {len(rows)} rows to {path}')


def write_time_series(path: str | pathlib.Path, result: RunResult) -> None:
    _write_rows(path, TIME_SERIES_COLUMNS,
                [[rec.t, rec.full_error, rec.partial_error, rec.rho,
                  *rec.std] for rec in result.records])


def write_summary(path: str | pathlib.Path, rows: list[SummaryRow]) -> None:
    _write_rows(path, SUMMARY_COLUMNS,
                [[row.estimator.value, row.combo.value, row.full_mean,
                  row.full_sd, row.partial_mean, row.partial_sd]
                 for row in rows])


def write_states(path: str | pathlib.Path,
                 states: list[StateRecord]) -> None:
    _write_rows(path, STATE_COLUMNS,
                [[state.t, *state.rotation.ravel(), *state.variances]
                 for state in states])


def write_observability(path: str | pathlib.Path,
                        reports: list[tuple[float, ObservabilityReport]]
                        ) -> None:
    _write_rows(path, OBSERVABILITY_COLUMNS,
                [rep.to_row(t) for t, rep in reports])


def write_sphere_density(path: str | pathlib.Path,
                         grids: list[SphereDensity]) -> None:
    """One row per axis and grid vertex."""

    rows: list[list[object]] = []
    for grid in grids:
        for vertex, value in zip(grid.vertices, grid.density):
            rows.append([grid.axis_index, *vertex, value])

    _write_rows(path, DENSITY_COLUMNS, rows)


def read_rows(path: str | pathlib.Path) -> list[dict[str, str]]:
    with open(path, newline='') as file:
        return list(csv.DictReader(file))
