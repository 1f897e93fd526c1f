import pytest

from ewtreg.scenario import ScenarioConfig, SolverConfig, canonical_scenario, generate_scenario
from ewtreg.solver import e_dp


@pytest.fixture(scope="session")
def small_config() -> ScenarioConfig:
    return ScenarioConfig(n_initial=2, n_sequential=3, seed=7)


@pytest.fixture(scope="session")
def small_scenario(small_config):
    return generate_scenario(small_config)


@pytest.fixture(scope="session")
def small_solution(small_scenario):
    """(policy, tree) of the exact solve; do not mutate the tree."""
    return e_dp(small_scenario, SolverConfig())


@pytest.fixture(scope="session")
def canonical():
    return canonical_scenario()


@pytest.fixture(scope="session")
def canonical_solution(canonical):
    return e_dp(canonical, SolverConfig())


@pytest.fixture
def config_file(tmp_path):
    """Write a YAML config and return its path."""

    def _write(text: str, name: str = "config.yaml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write
