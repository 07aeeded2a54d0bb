import numpy as np
import pytest

from lite_nvist.common import UsageError
from lite_nvist.verify import SUITES, run_suites, suite_pipeline, suite_pose

FAST_SUITES = ["ops", "vm", "render", "pose", "oracle", "losses", "tokens"]


@pytest.mark.parametrize("name", FAST_SUITES)
def test_suite_passes(name):
    (result,) = run_suites([name], seed=0)
    assert result.name == name
    assert result.passed, result.detail
    assert result.max_error <= result.tolerance


def test_sampled_pipeline_gradients_match(float64):
    # one coordinate per parameter tensor; the slow test below checks all of them
    err, tol, detail = suite_pipeline(np.random.default_rng(2), coords_per_tensor=1)
    assert err <= tol, detail


@pytest.mark.slow
def test_end_to_end_gradient_suite_passes():
    (result,) = run_suites(["pipeline"], seed=0)
    assert result.passed, result.detail


def test_every_suite_is_registered():
    assert set(SUITES) == set(FAST_SUITES) | {"pipeline"}


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(UsageError):
        run_suites(["ops", "everything"])


def test_suites_are_seeded(float64):
    a = suite_pose(np.random.default_rng(4), trials=50)
    b = suite_pose(np.random.default_rng(4), trials=50)
    assert a == b
