import numpy as np
import pytest
from hypothesis import settings

from rloc import pipeline
from rloc.config import ExperimentConfig
from rloc.lqr import build_controller_bank
from rloc.plants import make_plant
from rloc.policy import default_feature_map

# compiled kernels load lazily, so the first example of a test can be slow
settings.register_profile("rloc", deadline=None)
settings.load_profile("rloc")


@pytest.fixture(scope="session")
def cp_cfg():
    return ExperimentConfig.default("cartpole")


@pytest.fixture(scope="session")
def cp_experience(cp_cfg):
    return pipeline.collect(cp_cfg)


@pytest.fixture(scope="session")
def cp_target_model(cp_cfg, cp_experience):
    p = cp_cfg.make_plant()
    return pipeline.fit_models(cp_cfg, cp_experience, [np.asarray(p.target)])[0]


@pytest.fixture(scope="session")
def cp_target_controller(cp_cfg, cp_target_model):
    p = cp_cfg.make_plant()
    return build_controller_bank([cp_target_model], cp_cfg.weights(), p.target)[0]


@pytest.fixture
def cartpole():
    return make_plant("cartpole")


@pytest.fixture
def arm():
    return make_plant("arm")


@pytest.fixture
def cp_fm(cartpole):
    return default_feature_map(cartpole)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the final summary."""
    log = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        log[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for n in sorted(log):
            terminalreporter.write_line(log[n])
