import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from polytrack import (PolytopicModel, RobustMpcConfig, SwitchedSynthConfig,
                       VehicleParams, build_polytope)

TS = 0.01


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def neutral_params():
    # lf == lr with Cf == Cr makes lf*Cf == lr*Cr hold exactly in floats
    return VehicleParams(lf=1.3, lr=1.3)


@pytest.fixture(scope="session")
def model16(params):
    return build_polytope(params, (5.0, 25.0), TS)


@pytest.fixture(scope="session")
def model_nominal(params):
    return build_polytope(params, (5.0, 25.0), TS, uncertainty_enabled=False)


@pytest.fixture(scope="session")
def single_vertex_model(params):
    """Frozen nominal model at 15 m/s, no uncertainty, no disturbance."""
    return build_polytope(params, (15.0, 15.0), TS, uncertainty_enabled=False,
                          wind_force=0.0)


@pytest.fixture(scope="session")
def mpc_cfg():
    return RobustMpcConfig()


@pytest.fixture(scope="session")
def mpc_cfg_nodist():
    return RobustMpcConfig(w_max=0.0)


@pytest.fixture(scope="session")
def schedule(params):
    """Synthesized default gain schedule, shared across tests."""
    from polytrack import synthesize_schedule
    return synthesize_schedule(params, SwitchedSynthConfig())


@pytest.fixture(scope="session")
def default_config_path():
    return os.path.join(os.path.dirname(__file__), os.pardir, "configs",
                        "default.toml")
