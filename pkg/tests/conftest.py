import numpy as np
import pytest

from surfnerf.synth import SynthSpec, synth_scene


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """Default synthetic scene written once per session."""
    out = tmp_path_factory.mktemp("synth")
    synth_scene(SynthSpec(), out)
    return out


@pytest.fixture(scope="session")
def manifest(synth_dir):
    from surfnerf.scene_io import load_manifest
    return load_manifest(synth_dir / "scene.json")


# small network/batch used wherever training just has to run
TINY = dict(depth=2, width=16, skip=1, color_width=16, batch_size=64, n_coarse=8, n_fine=8,
            sun_depth=1, sun_width=8, sky_width=8, solar_batch=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, printed together at the end of the run
_ACCEPTANCE = {}


def acceptance_report(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
