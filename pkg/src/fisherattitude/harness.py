"""Simulation scenarios, filter runs and Monte-Carlo aggregation."""
from fisherattitude.matrix_fisher import (
    MatrixFisher, MatrixFisherException, dispersion, mean_attitude,
    uniform_rotations)
from fisherattitude.measurement import (
    DirectionMeasurement, ReferenceKind, sample_inertial, sample_body, update)
from fisherattitude.mekf import (
    MekfException, MekfState, export_cov, mekf_predict, mekf_update)
from fisherattitude.observability import (
    ObservabilityReport, ZERO_TOLERANCE, report)
from fisherattitude.propagation import (
    Frame, advect_left, advect_right, diffuse)
from fisherattitude.so3 import exp_so3, log_so3
from fisherattitude.utils import FloatArray, as_unit

import numpy as np
import numpy.typing as npt
import dataclasses
import enum
import logging
import math

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

SPIN_RATE = 6.0
PRECESSION_RATE = 1.0
FIXED_AXIS_RATE = (-math.pi / (2.0 * math.sqrt(3.0)),) * 3
TIME_EPS = 1e-9


class HarnessException(Exception):
    pass


class InvalidScenarioException(HarnessException):
    pass


class Combo(enum.Enum):
    AVI_RVI = 'AVI_RVI'
    AVI_RVB = 'AVI_RVB'
    AVB_RVI = 'AVB_RVI'
    AVB_RVB = 'AVB_RVB'

    @property
    def rate_frame(self) -> Frame:
        return Frame.INERTIAL if self.value.startswith('AVI') else Frame.BODY

    @property
    def reference_kind(self) -> ReferenceKind:
        return (ReferenceKind.INERTIAL_REF if self.value.endswith('RVI')
                else ReferenceKind.BODY_REF)

    @property
    def observable(self) -> bool:
        return self in (Combo.AVI_RVI, Combo.AVB_RVB)

    @classmethod
    def from_parts(cls, frame: Frame, kind: ReferenceKind) -> 'Combo':
        rate = 'AVI' if frame is Frame.INERTIAL else 'AVB'
        ref = 'RVI' if kind is ReferenceKind.INERTIAL_REF else 'RVB'
        return cls(f'{rate}_{ref}')


class Estimator(enum.Enum):
    MATRIX_FISHER = 'matrix_fisher'
    MEKF = 'mekf'


class TruthModel(enum.Enum):
    SPIN_PRECESS = 'spin_precess'
    FIXED_AXIS = 'fixed_axis'
    FILE = 'file'


@dataclass(frozen=True)
class Scenario:
    duration: float = 60.0
    gyro_rate: float = 150.0
    meas_rate: float = 30.0
    gamma: float = math.radians(10.0)
    kappa: float = 200.0
    ref_vector: tuple[float, float, float] = (1.0, 0.0, 0.0)
    combo: Combo = Combo.AVI_RVI
    truth: TruthModel = TruthModel.SPIN_PRECESS
    seed: int = 0
    random_initial_attitude: bool = True
    fixed_axis_rate: tuple[float, float, float] = FIXED_AXIS_RATE
    log_path: str | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise InvalidScenarioException('duration must be positive')

        if self.gyro_rate <= 0.0 or self.meas_rate <= 0.0:
            raise InvalidScenarioException('rates must be positive')

        if self.meas_rate > self.gyro_rate:
            raise InvalidScenarioException(
                'meas_rate must not exceed gyro_rate')

        if self.gamma < 0.0 or self.gamma**2 / self.gyro_rate >= 1.0:
            raise InvalidScenarioException(
                f'gamma {self.gamma} invalid for gyro rate {self.gyro_rate}')

        if self.kappa <= 0.0:
            raise InvalidScenarioException('kappa must be positive')

        if abs(np.linalg.norm(self.ref_vector) - 1.0) > 1e-9:
            raise InvalidScenarioException('ref_vector must be a unit vector')

        if self.truth is TruthModel.FILE and not self.log_path:
            raise InvalidScenarioException('file truth requires log_path')

    @property
    def step(self) -> float:
        return 1.0 / self.gyro_rate

    @property
    def reference(self) -> FloatArray:
        return np.array(self.ref_vector, dtype=np.float64)

    def replace(self, **changes: object) -> 'Scenario':
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]


class TruthSample(NamedTuple):
    rotation: FloatArray
    omega: FloatArray
    Omega: FloatArray


@dataclass(frozen=True, eq=False)
class GyroStream:
    times: FloatArray
    rates: FloatArray
    frame: Frame


@dataclass(frozen=True, eq=False)
class DirectionStream:
    times: FloatArray
    readings: FloatArray
    kind: ReferenceKind


@dataclass(frozen=True, eq=False)
class TruthStream:
    times: FloatArray
    rotations: FloatArray

    def at(self, t: float) -> FloatArray:
        idx = int(np.clip(np.searchsorted(self.times, t), 0,
                          len(self.times) - 1))
        if idx > 0 and abs(self.times[idx - 1] - t) < abs(self.times[idx] - t):
            idx -= 1
        return self.rotations[idx]


def generate_truth(scenario: Scenario, t: float,
                   r0: npt.ArrayLike | None = None) -> TruthSample:
    """True attitude and both angular velocities at time t.

    spin_precess spins about the third body axis while precessing about the
    second inertial axis; fixed_axis rotates at a constant body rate.
    """

    if not -TIME_EPS <= t <= scenario.duration + TIME_EPS:
        raise ValueError(f'Time {t} outside the scenario')

    rot0 = np.eye(3) if r0 is None else np.asarray(r0, dtype=np.float64)

    match scenario.truth:
        case TruthModel.SPIN_PRECESS:
            e2, e3 = np.eye(3)[1], np.eye(3)[2]
            rot = (exp_so3(PRECESSION_RATE * t * e2) @ rot0
                   @ exp_so3(SPIN_RATE * t * e3))
            omega = PRECESSION_RATE * e2 + rot @ (SPIN_RATE * e3)
            return TruthSample(rot, omega, rot.T @ omega)
        case TruthModel.FIXED_AXIS:
            body_rate = np.array(scenario.fixed_axis_rate, dtype=np.float64)
            rot = rot0 @ exp_so3(t * body_rate)
            return TruthSample(rot, rot @ body_rate, body_rate)
        case TruthModel.FILE:
            raise InvalidScenarioException(
                'File scenarios take their truth from the log')


def initial_attitude(scenario: Scenario,
                     rng: np.random.Generator) -> FloatArray:
    if scenario.random_initial_attitude:
        return uniform_rotations(rng, 1)[0]
    return np.eye(3)


def _sample_times(rate: float, duration: float) -> FloatArray:
    return np.arange(int(round(duration * rate))) / rate


def truth_stream(scenario: Scenario, times: npt.ArrayLike,
                 r0: npt.ArrayLike | None = None) -> TruthStream:
    stamps = np.asarray(times, dtype=np.float64)
    rots = np.array([generate_truth(scenario, float(t), r0).rotation
                     for t in stamps])
    return TruthStream(stamps, rots)


def synthesize_measurements(
    scenario: Scenario,
    rng: np.random.Generator,
    r0: npt.ArrayLike | None = None
) -> tuple[GyroStream, DirectionStream]:
    """Gyro and direction streams for a scenario.

    Gyro samples carry white noise of standard deviation gamma / sqrt(h),
    which integrates to a random walk of density gamma.
    """

    frame = scenario.combo.rate_frame
    kind = scenario.combo.reference_kind
    ref = scenario.reference

    gyro_times = _sample_times(scenario.gyro_rate, scenario.duration)
    truth = [generate_truth(scenario, float(t), r0) for t in gyro_times]
    true_rates = np.array([sample.omega if frame is Frame.INERTIAL
                           else sample.Omega for sample in truth])

    noise = rng.standard_normal(true_rates.shape)
    rates = true_rates + scenario.gamma / math.sqrt(scenario.step) * noise

    # Direction readings share the timestamp of a gyro sample
    nominal = _sample_times(scenario.meas_rate, scenario.duration)
    meas_times = gyro_times[np.searchsorted(gyro_times, nominal - TIME_EPS)]
    sampler = sample_inertial if kind is ReferenceKind.INERTIAL_REF \
        else sample_body
    readings = np.array([
        sampler(generate_truth(scenario, float(t), r0).rotation, ref,
                scenario.kappa, rng)
        for t in meas_times])

    return (GyroStream(gyro_times, rates, frame),
            DirectionStream(meas_times, readings, kind))


def full_error(r_est: npt.ArrayLike, r_true: npt.ArrayLike) -> float:
    """Angle between two attitudes in degrees."""

    est = np.asarray(r_est, dtype=np.float64)
    true = np.asarray(r_true, dtype=np.float64)

    return math.degrees(float(np.linalg.norm(log_so3(true.T @ est))))


def partial_error(r_est: npt.ArrayLike, r_true: npt.ArrayLike,
                  kind: ReferenceKind, ref: npt.ArrayLike) -> float:
    """Angle between the estimated and true images of the reference vector.

    The rotation about the reference vector is ignored.
    """

    est = np.asarray(r_est, dtype=np.float64)
    true = np.asarray(r_true, dtype=np.float64)
    refv = np.asarray(ref, dtype=np.float64)

    match kind:
        case ReferenceKind.INERTIAL_REF:
            cosine = (true.T @ refv) @ (est.T @ refv)
        case ReferenceKind.BODY_REF:
            cosine = (true @ refv) @ (est @ refv)

    return math.degrees(math.acos(float(np.clip(cosine, -1.0, 1.0))))


class StepRecord(NamedTuple):
    t: float
    full_error: float
    partial_error: float
    rho: float
    std: tuple[float, float, float]


class StateRecord(NamedTuple):
    t: float
    rotation: FloatArray
    variances: FloatArray


@dataclass
class RunResult:
    estimator: Estimator
    combo: Combo
    seed: int
    records: list[StepRecord] = field(default_factory=list)
    states: list[StateRecord] = field(default_factory=list)
    final_report: ObservabilityReport | None = None
    aborted: str | None = None

    def _window(self, start: float = 0.0) -> list[StepRecord]:
        return [rec for rec in self.records if rec.t >= start - TIME_EPS]

    def mean_full_error(self, start: float = 0.0) -> float:
        window = self._window(start)
        return (float(np.mean([rec.full_error for rec in window]))
                if window else math.nan)

    def mean_partial_error(self, start: float = 0.0) -> float:
        window = self._window(start)
        return (float(np.mean([rec.partial_error for rec in window]))
                if window else math.nan)


class MatrixFisherFilter:
    """Matrix Fisher filter for one rate frame and one reference kind.

    Gyro steps rotate the principal axes immediately; the dispersion
    shrinkage of consecutive steps is accumulated and applied once before
    the belief is used.
    """

    def __init__(self, frame: Frame, kind: ReferenceKind, gamma: float,
                 kappa: float, reference: npt.ArrayLike,
                 prior: MatrixFisher | None = None) -> None:
        self.logger = logging.getLogger('fisherattitude.harness.mf')

        self.frame = frame
        self.kind = kind
        self.gamma = gamma
        self.kappa = kappa
        self.reference = as_unit(reference)

        self._belief = prior if prior is not None else MatrixFisher.uniform()
        self._shrink = 1.0

    @property
    def belief(self) -> MatrixFisher:
        if self._shrink != 1.0:
            self._belief = diffuse(self._belief, self._shrink)
            self._shrink = 1.0

        return self._belief

    def predict(self, w: FloatArray, h: float) -> None:
        factor = 1.0 - h * self.gamma**2

        if factor <= 0.0:
            raise ValueError(f'Step {h} too large for noise level')

        rotation = exp_so3(h * w)

        if self.frame is Frame.INERTIAL:
            self._belief = advect_right(self._belief, rotation)
        else:
            self._belief = advect_left(self._belief, rotation)

        self._shrink *= factor

    def update(self, reading: FloatArray, t: float) -> None:
        meas = DirectionMeasurement(self.kind, self.reference, reading,
                                    self.kappa, t)
        self._belief = update(self.belief, meas)

    def estimate(self) -> FloatArray:
        return mean_attitude(self.belief)

    def std_deg(self) -> FloatArray:
        return dispersion(self.belief)

    def variances(self) -> FloatArray:
        return np.radians(self.std_deg())**2

    def rho(self) -> float:
        return self.report().rho

    def report(self) -> ObservabilityReport:
        return report(self.belief, ZERO_TOLERANCE)


class MekfFilter:
    def __init__(self, frame: Frame, kind: ReferenceKind, gamma: float,
                 kappa: float, reference: npt.ArrayLike,
                 state: MekfState | None = None) -> None:
        self.logger = logging.getLogger('fisherattitude.harness.mekf')

        self.frame = frame
        self.kind = kind
        self.gamma = gamma
        self.kappa = kappa
        self.reference = as_unit(reference)
        self.state = state if state is not None else MekfState.initial()

    @property
    def export_frame(self) -> Frame:
        return (Frame.INERTIAL if self.kind is ReferenceKind.INERTIAL_REF
                else Frame.BODY)

    def predict(self, w: FloatArray, h: float) -> None:
        self.state = mekf_predict(self.state, w, self.frame, h, self.gamma)

    def update(self, reading: FloatArray, t: float) -> None:
        meas = DirectionMeasurement(self.kind, self.reference, reading,
                                    self.kappa, t)
        self.state = mekf_update(self.state, meas)

    def estimate(self) -> FloatArray:
        return self.state.mean

    def variances(self) -> FloatArray:
        return np.diag(export_cov(self.state, self.export_frame)).copy()

    def std_deg(self) -> FloatArray:
        return np.degrees(np.sqrt(np.maximum(self.variances(), 0.0)))

    def rho(self) -> float:
        return math.nan

    def report(self) -> ObservabilityReport | None:
        return None


def make_filter(estimator: Estimator, frame: Frame, kind: ReferenceKind,
                gamma: float, kappa: float,
                reference: npt.ArrayLike) -> MatrixFisherFilter | MekfFilter:
    match estimator:
        case Estimator.MATRIX_FISHER:
            return MatrixFisherFilter(frame, kind, gamma, kappa, reference)
        case Estimator.MEKF:
            return MekfFilter(frame, kind, gamma, kappa, reference)


def run_streams(
    gyro: GyroStream,
    directions: DirectionStream,
    estimator: Estimator,
    gamma: float,
    kappa: float,
    reference: npt.ArrayLike,
    truth: TruthStream | None = None,
    seed: int = 0
) -> RunResult:
    """Runs one estimator over gyro and direction streams.

    Each gyro sample is held until the next one. A direction reading is
    applied once the prediction has reached its timestamp. A filter step is
    one such cycle of predictions followed by an update, so records are
    sampled at the direction timestamps, one per update; the gyro steps in
    between are not recorded. Errors are NaN without a truth stream.
    """

    logger = logging.getLogger('fisherattitude.harness')

    refv = as_unit(reference)
    combo = Combo.from_parts(gyro.frame, directions.kind)
    flt = make_filter(estimator, gyro.frame, directions.kind, gamma, kappa,
                      refv)
    result = RunResult(estimator, combo, seed)

    logger.info(f'Running {estimator.value} on {combo.value} '
                f'({len(gyro.times)} gyro, {len(directions.times)} '
                'direction samples)')

    j = 0
    n_dir = len(directions.times)

    try:
        for k, t_k in enumerate(gyro.times):
            if k > 0:
                flt.predict(gyro.rates[k - 1], float(t_k - gyro.times[k - 1]))

            while j < n_dir and directions.times[j] <= t_k + TIME_EPS:
                t_j = float(directions.times[j])
                flt.update(directions.readings[j], t_j)

                estimate = flt.estimate()
                std = flt.std_deg()

                if truth is not None:
                    r_true = truth.at(t_j)
                    full = full_error(estimate, r_true)
                    partial = partial_error(estimate, r_true,
                                            directions.kind, refv)
                else:
                    full = partial = math.nan

                result.records.append(StepRecord(
                    t_j, full, partial, flt.rho(),
                    (float(std[0]), float(std[1]), float(std[2]))))
                result.states.append(StateRecord(
                    t_j, estimate.copy(), flt.variances()))
                j += 1
    except (MatrixFisherException, MekfException) as e:
        logger.warning(f'Run aborted at direction sample {j}: {e}')
        result.aborted = f'{type(e).__name__}: {e}'

        return result

    if j < n_dir:
        logger.warning(f'{n_dir - j} direction samples after the last gyro '
                       'sample were ignored')

    result.final_report = flt.report()

    logger.info(f'Finished {estimator.value} on {combo.value}')

    return result


def run_filter(scenario: Scenario, estimator: Estimator) -> RunResult:
    """Simulates a scenario and runs one estimator on it.

    The generator is seeded with scenario.seed; the initial true attitude
    is drawn first, then the gyro noise, then the direction readings.
    """

    if scenario.truth is TruthModel.FILE:
        from fisherattitude.logfile import ingest_log

        logged = ingest_log(scenario.log_path)
        return run_streams(logged.gyro, logged.directions, estimator,
                           scenario.gamma, scenario.kappa, scenario.reference,
                           logged.truth, scenario.seed)

    rng = np.random.default_rng(scenario.seed)
    r0 = initial_attitude(scenario, rng)
    gyro, directions = synthesize_measurements(scenario, rng, r0)
    truth = truth_stream(scenario, directions.times, r0)

    return run_streams(gyro, directions, estimator, scenario.gamma,
                       scenario.kappa, scenario.reference, truth,
                       scenario.seed)


class SummaryRow(NamedTuple):
    estimator: Estimator
    combo: Combo
    full_mean: float
    full_sd: float
    partial_mean: float
    partial_sd: float


@dataclass
class MonteCarloResult:
    rows: list[SummaryRow]
    runs: list[RunResult]


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan

    if len(values) == 1:
        return values[0], 0.0

    return float(np.mean(values)), float(np.std(values, ddof=1))


def _run_task(task: tuple[Scenario, Estimator]) -> RunResult:
    scenario, estimator = task
    return run_filter(scenario, estimator)


def monte_carlo(
    scenario_template: Scenario,
    n_runs: int,
    combos: list[Combo] | None = None,
    estimators: list[Estimator] | None = None,
    jobs: int | None = None
) -> MonteCarloResult:
    """Repeats a scenario and summarizes the time-averaged errors.

    Run i uses seed template.seed + i for every combo and estimator. Runs
    are distributed over a process pool unless jobs == 1; results keep the
    task order, so the summary only depends on the base seed.
    """

    if n_runs < 1:
        raise ValueError('At least one run is required')

    logger = logging.getLogger('fisherattitude.harness')

    combo_list = combos if combos else [scenario_template.combo]
    estimator_list = estimators if estimators else [Estimator.MATRIX_FISHER]

    tasks = [(scenario_template.replace(combo=combo,
                                        seed=scenario_template.seed + i),
              estimator)
             for estimator in estimator_list
             for combo in combo_list
             for i in range(n_runs)]

    logger.info(f'Starting {len(tasks)} Monte-Carlo runs')

    if jobs == 1:
        runs = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_task, tasks))

    rows = []
    for estimator in estimator_list:
        for combo in combo_list:
            group = [run for run in runs
                     if run.estimator is estimator and run.combo is combo]
            completed = [run for run in group if run.aborted is None]

            if len(completed) < len(group):
                logger.warning(f'{len(group) - len(completed)} runs of '
                               f'{estimator.value}/{combo.value} aborted')

            full = _mean_sd([run.mean_full_error() for run in completed])
            partial = _mean_sd([run.mean_partial_error()
                                for run in completed])
            rows.append(SummaryRow(estimator, combo, *full, *partial))

    logger.info('Monte-Carlo runs finished')

    return MonteCarloResult(rows, runs)
