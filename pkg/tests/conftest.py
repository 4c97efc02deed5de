"""Session fixtures that train each model once and share it across test files."""
import numpy as np
import pytest

from cobotmimic.fill import default_train_config, train_predictor
from cobotmimic.world import NoiseConfig, TaskConfig, generate_demonstration

TRAIN_NOISE = NoiseConfig(keypoint_noise_std=0.005)

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def fill_demos():
    return [generate_demonstration(TaskConfig(), TRAIN_NOISE, s) for s in range(1000, 1120)]


@pytest.fixture(scope="session")
def keypoint_model(fill_demos):
    return train_predictor("keypoint", fill_demos, default_train_config(0))


@pytest.fixture(scope="session")
def object_model(fill_demos):
    return train_predictor("object", fill_demos, default_train_config(0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sawyer():
    from cobotmimic.arms import load_robot
    return load_robot("sawyer_like")


@pytest.fixture(scope="session")
def kuka():
    from cobotmimic.arms import load_robot
    return load_robot("kuka_like")


@pytest.fixture(scope="session")
def fk_sawyer(sawyer):
    from cobotmimic.retarget import train_restricted_fk
    return train_restricted_fk(sawyer, 20000, seed=0)


@pytest.fixture(scope="session")
def fk_kuka(kuka):
    from cobotmimic.retarget import train_restricted_fk
    return train_restricted_fk(kuka, 20000, seed=0)


@pytest.fixture(scope="session")
def human_ik_model(fill_demos):
    from cobotmimic.retarget import human_ik_pairs, train_human_ik
    w, t = human_ik_pairs(fill_demos)
    return train_human_ik(w, t, seed=0)


@pytest.fixture(scope="session")
def sawyer_pipeline(sawyer, fk_sawyer, human_ik_model):
    from cobotmimic.retarget import Retargeter, SymbolicJointMap
    return Retargeter(human_ik_model, SymbolicJointMap.default(sawyer), fk_sawyer.model, sawyer)


@pytest.fixture(scope="session")
def irl_demos():
    from cobotmimic.irl import trajectories_from_demos
    return trajectories_from_demos([generate_demonstration(TaskConfig(), NoiseConfig(), s)
                                    for s in range(10)])


@pytest.fixture(scope="session")
def irl_heldout_pairs():
    from cobotmimic.irl import trajectories_from_demos
    return trajectories_from_demos([generate_demonstration(TaskConfig(), NoiseConfig(), s)
                                    for s in range(500, 540)]).pairs()


@pytest.fixture(scope="session")
def airl_result(irl_demos):
    from cobotmimic.irl import AirlConfig, SortingMdp, train_airl
    return train_airl(irl_demos, SortingMdp(), AirlConfig(seed=0))


@pytest.fixture(scope="session")
def sorting_benchmark(sawyer_pipeline, airl_result):
    from cobotmimic.irl import SortingMdp
    from cobotmimic.pipeline import run_benchmark
    return run_benchmark(sawyer_pipeline, airl_result.policy, SortingMdp(), range(100, 110))
