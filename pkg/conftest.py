import math

import numpy as np
import pytest

from dynamics import ScenarioConfig, Variant
from material import MaterialParams
from mesh import build_unit_square

ALPHA_UNIT_ROOT = 2.0 - 2.0 * math.log(2.0)


@pytest.fixture(autouse=True)
def testing_env(monkeypatch, tmp_path):
    monkeypatch.setenv("GELSIM_ENV", "testing")
    monkeypatch.setenv("GELSIM_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("GELSIM_OUTPUT_DIR", str(tmp_path / "output"))


@pytest.fixture
def unit_params():
    """Unit coefficients with alpha chosen so the spherical root is phi0 = phi_I = 0.5, f0 = 1"""
    return MaterialParams(a=1.0, b=1.0, c=0.0, chi=0.0, fh_scale=1.0, mu_E=1.0,
                          a1=1.0, a3=1.0, alpha=ALPHA_UNIT_ROOT, s=1.0, q_exp=1.0, r=1.0, phi_I=0.5)


@pytest.fixture
def stretched_params():
    """Hadamard parameters under which F0 = diag(1.1, 0.95, 1.0) satisfies the general hypotheses"""
    return MaterialParams(a1=1.0, a3=0.5, alpha=2.0, s=2.0, q_exp=1.0, r=1.0, mu_E=1.0, phi_I=0.5)


@pytest.fixture
def stretched_F0():
    return np.diag([1.1, 0.95, 1.0])


@pytest.fixture
def unit_config_json():
    """Dimensional inputs reproducing unit_params after nondimensionalization"""
    return {
        "a": 1.0, "b": 1.0, "c": 0.0, "chi": 0.0, "fh_scale": 1.0, "mu_E": 1.0, "eta1": 1.0,
        "a1": 1.0, "a3": 1.0, "alpha": ALPHA_UNIT_ROOT, "s": 1.0, "q_exp": 1.0, "r": 1.0, "phi_I": 0.5,
        "P0": 0.0,
    }


@pytest.fixture(scope="session")
def mesh2():
    return build_unit_square(2)


@pytest.fixture(scope="session")
def mesh3():
    return build_unit_square(3)


@pytest.fixture
def make_config(unit_params):
    def factory(variant, **overrides):
        values = dict(variant=Variant.parse(variant), params=unit_params, level=2, dt=0.05,
                      n_steps=10, P0=0.0, f0_override=0.9)
        values.update(overrides)
        return ScenarioConfig(**values)

    return factory
