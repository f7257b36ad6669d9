import math

import numpy as np
import pytest

from lipase.config import CcConfig, CfarConfig, RadioConfig
from lipase.geometry import Geometry

# Small radio so that signal-level tests run in milliseconds: N = 10 000,
# 20 Hz Doppler bins, 1.5 km range bins.
SMALL_RADIO = RadioConfig(
    carrier_freq=2.123e9,
    sample_rate=200e3,
    bandwidth=100e3,
    cit=0.05,
    ref_array_size=4,
    sur_array_size=8,
    element_spacing=0.5,
    oversample=4,
)


@pytest.fixture
def radio():
    return SMALL_RADIO


@pytest.fixture
def geometry():
    return Geometry((255.0, 0.0), (0.0, 0.0), sur_broadside=math.radians(70.0))


@pytest.fixture
def cc():
    return CcConfig(max_doppler_bins=0, max_delay_samples=20)


@pytest.fixture
def cfar_cfg():
    return CfarConfig(guard=(4, 1), train=(16, 1), threshold_db=15.0, doppler_window=500.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_run():
    """Simulated reference scene and its clean detections, computed once per session."""
    import time

    from lipase.config import load_scenario
    from lipase.pipeline import detect_scene
    from lipase.simulate import simulate_scene

    t0 = time.perf_counter()
    scenario = load_scenario("reference")
    scene = simulate_scene(scenario)
    detections = detect_scene(scenario, scene)
    return {
        "scenario": scenario,
        "truth": scene.truth,
        "detections": detections,
        "elapsed": time.perf_counter() - t0,
    }
