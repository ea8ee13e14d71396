import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from probdepth.config import load_config
from probdepth.pipeline import load_scene, run_pipeline, write_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# acceptance criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}
_SESSION_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
    terminalreporter.write_line(f"suite wall time {time.perf_counter() - _SESSION_START:.1f} s")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reference_config():
    return load_config(CONFIGS / "reference_dynamic.toml")


@pytest.fixture(scope="session")
def reference_scene_dir(tmp_path_factory, reference_config):
    out = tmp_path_factory.mktemp("reference_scene")
    write_scene(reference_config, out)
    return out


@pytest.fixture(scope="session")
def reference_scene(reference_scene_dir):
    return load_scene(reference_scene_dir)


@pytest.fixture(scope="session")
def reference_runs(reference_config, reference_scene):
    """Pipeline results on the reference dynamic scene for every fusion method."""
    return {m: run_pipeline(reference_config.with_fusion(m), reference_scene) for m in ("wgm", "wam", "none")}
