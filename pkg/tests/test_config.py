from fisherattitude.config import (
    DensityConfig, EstimateConfig, InvalidConfigDocument, ObservabilityConfig,
    SimulateConfig, UnsupportedConfigVersion, from_mapping, load_config,
    to_json)
from fisherattitude.harness import Combo, Estimator

import json
import math
import pathlib
import pytest

TEMPLATES = pathlib.Path(__file__).parent.parent / 'templates'


def test_simulate_defaults() -> None:
    config = from_mapping(SimulateConfig, {'seed': 4})
    scenario = config.scenario()

    assert config.combo_list == [Combo.AVI_RVI]
    assert config.estimator_list == [Estimator.MATRIX_FISHER]
    assert scenario.seed == 4
    assert scenario.gamma == pytest.approx(math.radians(10.0))
    assert scenario.duration == 60.0


def test_sweep_template() -> None:
    config = load_config(TEMPLATES / 'sweep.json', SimulateConfig)

    assert config.combo_list == list(Combo)
    assert config.estimator_list == [Estimator.MATRIX_FISHER, Estimator.MEKF]
    assert config.seed == 2024


@pytest.mark.parametrize('changes', [
    {'combos': ['AVX_RVI']},
    {'estimators': []},
    {'truth': 'file'},
    {'runs': 0},
    {'jobs': 0},
    {'ref': [1.0, 1.0, 0.0]},
    {'meas_rate': 500.0},
    {'gamma_deg': 1000.0},
    {'seed': 1.5},
    {'sigma': 3},
])
def test_simulate_invalid(changes: dict) -> None:
    with pytest.raises(InvalidConfigDocument):
        from_mapping(SimulateConfig, {'seed': 1, **changes})


def test_missing_required_key() -> None:
    with pytest.raises(InvalidConfigDocument):
        from_mapping(SimulateConfig, {'runs': 3})

    with pytest.raises(InvalidConfigDocument):
        from_mapping(EstimateConfig, {'estimator': 'mekf'})


@pytest.mark.parametrize('version', ['2.0', '0.9', 'latest'])
def test_unsupported_version(version: str) -> None:
    with pytest.raises(UnsupportedConfigVersion):
        from_mapping(SimulateConfig, {'seed': 1, 'version': version})


def test_minor_version_accepted() -> None:
    config = from_mapping(DensityConfig, {
        'parameter': [[1, 0, 0], [0, 1, 0], [0, 0, 0]],
        'version': '1.3'})

    assert config.level == 3


def test_estimate_config() -> None:
    config = from_mapping(EstimateConfig, {'log': 'flight.csv',
                                           'gamma_deg': 5.0})

    assert config.gamma == pytest.approx(math.radians(5.0))

    with pytest.raises(InvalidConfigDocument):
        from_mapping(EstimateConfig, {'log': 'flight.csv', 'kappa': 0.0})


def test_observability_config() -> None:
    identity = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]

    assert from_mapping(ObservabilityConfig,
                        {'moment': identity}).parameter is None

    with pytest.raises(InvalidConfigDocument):
        from_mapping(ObservabilityConfig, {})

    with pytest.raises(InvalidConfigDocument):
        from_mapping(ObservabilityConfig, {'parameter': identity,
                                           'moment': identity})

    with pytest.raises(InvalidConfigDocument):
        from_mapping(ObservabilityConfig, {'parameter': [[1, 2], [3, 4]]})


def test_density_config_ranges() -> None:
    parameter = [[5, 0, 0], [0, 1, 0], [0, 0, 0]]

    with pytest.raises(InvalidConfigDocument):
        from_mapping(DensityConfig, {'parameter': parameter, 'level': 8})

    with pytest.raises(InvalidConfigDocument):
        from_mapping(DensityConfig, {'parameter': parameter, 'grid': 4})


def test_load_config_errors(tmp_path: pathlib.Path) -> None:
    broken = tmp_path / 'broken.json'
    broken.write_text('{"seed": ')

    with pytest.raises(InvalidConfigDocument):
        load_config(broken, SimulateConfig)

    listed = tmp_path / 'list.json'
    listed.write_text('[1, 2]')

    with pytest.raises(InvalidConfigDocument):
        load_config(listed, SimulateConfig)


def test_to_json_reloads(tmp_path: pathlib.Path) -> None:
    config = from_mapping(SimulateConfig, {'seed': 8, 'runs': 2,
                                           'combos': ['AVB_RVB']})
    path = tmp_path / 'simulate.json'
    path.write_text(to_json(config))

    assert json.loads(path.read_text())['version'] == '1.0'
    assert load_config(path, SimulateConfig) == config
