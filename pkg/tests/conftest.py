import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("qdm", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "qdm"))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.delenv("QDM_OUTPUT_DIR", raising=False)
    return tmp_path
