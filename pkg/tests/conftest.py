import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tunnelguide.geometry import CrossSectionSpec, NarrowSpec, NeckProfile, SolenoidSpec, WaveguideSpec
from tunnelguide.pipeline import CoefficientCache, Coefficients, load_config, reference_config

settings.register_profile("tunnelguide", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("tunnelguide")

THETA = np.pi / 3
D = 7.0


def reference_spec(eps=0.2, solenoid=None, channel_length=8.0, profile=NeckProfile()):
    narrows = (NarrowSpec(0.0, THETA, profile), NarrowSpec(D, THETA, profile))
    return WaveguideSpec(CrossSectionSpec(), narrows, eps, solenoid, channel_length)


def reference_solenoid(field=1.0, band=(0.5, 1.5), spin="plus"):
    return SolenoidSpec((3.5, 0.0), 0.3, (field,), spin, band)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    """Coefficient cache shared by the session; pipeline tests hit it instead of recomputing."""
    return tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def coefficients(cache_dir):
    """Limit-problem coefficients of the reference geometry, computed once per session."""
    coef = Coefficients(load_config(reference_config()), CoefficientCache(cache_dir))
    coef.prefetch(["modes", "cap", "junction", "resonator", "channel", "expansion"])
    return coef


@pytest.fixture(scope="session")
def cap(coefficients):
    return coefficients._cap()


@pytest.fixture(scope="session")
def modes(coefficients):
    return coefficients._modes()


@pytest.fixture(scope="session")
def spectrum(coefficients):
    return coefficients._spectrum()


@pytest.fixture(scope="session")
def model(coefficients):
    return coefficients.model("plus", expansion="full")
