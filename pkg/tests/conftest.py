import numpy as np
import pytest

from meanfield import bundled_config, build_lifted_mdp, load_config, solve_discounted


@pytest.fixture(scope="session")
def smartgrid():
    """The bundled 100-device model, its lifted tables, and the solved policy."""
    loaded = load_config(str(bundled_config()))
    lifted = build_lifted_mdp(loaded.model)
    result = solve_discounted(loaded.model, lifted, tol=1e-8)
    return loaded, lifted, result


@pytest.fixture()
def rng():
    return np.random.default_rng(20140901)
