import pathlib

import pytest

from uavrelay.harness.config import ExperimentConfig, load_config, resolve_r_bar

REPO = pathlib.Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


@pytest.fixture(scope="session")
def tiny_config() -> ExperimentConfig:
    return load_config(str(CONFIGS / "tiny_oracle.yaml"))


@pytest.fixture(scope="session")
def tiny_resolved(tiny_config) -> ExperimentConfig:
    return resolve_r_bar(tiny_config)


@pytest.fixture(scope="session")
def default_config() -> ExperimentConfig:
    return load_config(str(CONFIGS / "default.yaml"))
