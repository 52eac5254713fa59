import logging
from pathlib import Path

import numpy as np
import pytest

from stratah.models import Dataset
from stratah.sim_harness import generate_trial, load_scenario

DATA_DIR = Path(__file__).parent / "data"


def make_dataset(rows, arm_labels=("0", "1")) -> Dataset:
    """Dataset from (time, event, arm, stratum) tuples."""
    times, events, arms, strata = zip(*rows)
    return Dataset(
        times=np.asarray(times, dtype=float),
        events=np.asarray(events, dtype=bool),
        arms=np.asarray(arms, dtype=int),
        strata=np.asarray(strata, dtype=object),
        stratum_labels=tuple(set(strata)),
        arm_labels=arm_labels,
    )


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def pattern1_scenario():
    return load_scenario("paper_pattern1_n700")


@pytest.fixture(scope="session")
def pattern2_scenario():
    return load_scenario("paper_pattern2_n1400")


@pytest.fixture(scope="session")
def simulated_trial(pattern1_scenario) -> Dataset:
    """One pattern-I trial with 300 subjects per arm."""
    scenario = pattern1_scenario.model_copy(update={"n_per_arm": 300})
    return generate_trial(scenario, np.random.default_rng(20240607))


@pytest.fixture(scope="session")
def single_stratum_trial(pattern1_scenario) -> Dataset:
    scenario = pattern1_scenario.model_copy(
        update={"n_per_arm": 250, "stratum_labels": ("A",), "stratum_fractions": (1.0,), "weights": (1.0,)}
    )
    return generate_trial(scenario, np.random.default_rng(11))


@pytest.fixture(autouse=True)
def _drop_cli_log_handler():
    """main() binds a handler to the captured stderr of the running test."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_stratah_handler", False):
            root.removeHandler(handler)
