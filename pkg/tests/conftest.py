import numpy as np
import pytest
from fastapi.testclient import TestClient
from app.config import get_settings
from app.main import app
from app.services.fourier_model import BoxDomain, FourierBasis, WeightMode
from app.services.geometry import sample_surface
from app.services.surfaces import sphere

@pytest.fixture(scope="session")
def client():
    return TestClient(app)

@pytest.fixture
def settings_env(monkeypatch):
    """Set MESHFREE_* variables for one test and rebuild the cached settings."""
    def apply(**values):
        for key, value in values.items():
            monkeypatch.setenv(f"MESHFREE_{key}", str(value))
        get_settings.cache_clear()
    yield apply
    get_settings.cache_clear()

@pytest.fixture(scope="session")
def unit_sphere():
    return sphere(1.0)

@pytest.fixture(scope="session")
def sphere_cloud(unit_sphere):
    return sample_surface(unit_sphere, 40, seed=11)

@pytest.fixture(scope="session")
def small_basis():
    return FourierBasis(BoxDomain(np.zeros(3), np.full(3, 4.0)), 4, 2.0, 10.0, WeightMode.SEPARABLE)

@pytest.fixture(scope="session")
def plane_basis():
    return FourierBasis(BoxDomain(np.zeros(2), np.full(2, 4.0)), 8, 2.0, 10.0, WeightMode.JOINT)
