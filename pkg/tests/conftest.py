import pytest

from src.services.kernel_builder_service import build_kernel
from src.services.policy_evaluator_service import PolicyEvaluatorService
from src.utils.state_space import ModelParams


@pytest.fixture
def small_params() -> ModelParams:
    return ModelParams(p=0.5, gamma=0.3, gamma_max=0.3, delta_max=6, l_max=2)


@pytest.fixture
def small_kernel(small_params):
    return build_kernel(small_params)


@pytest.fixture
def medium_params() -> ModelParams:
    """Large enough that stationary mass at the truncation bound is negligible for useful policies."""
    return ModelParams(p=0.5, gamma=0.3, gamma_max=0.3, delta_max=60, l_max=4)


@pytest.fixture
def medium_kernel(medium_params):
    return build_kernel(medium_params)


@pytest.fixture
def evaluator() -> PolicyEvaluatorService:
    return PolicyEvaluatorService()
