import os

import numpy as np
import pytest

from dartvae.model import Batch, ModelConfig, ModelParams
from dartvae.rules import load_ruleset

DATA = os.path.join(os.path.dirname(__file__), os.pardir, "src", "dartvae", "data")
AIRCRAFT_RULES = os.path.abspath(os.path.join(DATA, "aircraft_rules.json"))
VEHICLE_RULES = os.path.abspath(os.path.join(DATA, "vehicle_rules.json"))

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def aircraft():
    return load_ruleset(AIRCRAFT_RULES)


@pytest.fixture(scope="session")
def vehicle():
    return load_ruleset(VEHICLE_RULES)


def aircraft_rows(schema, **columns):
    """Attribute matrix where each keyword gives one column's values; others are 0."""
    n = len(next(iter(columns.values())))
    A = np.zeros((n, len(schema)))
    for name, values in columns.items():
        A[:, schema.index(name)] = values
    return A


def small_config(n_rules=4, attr_dim=10, visual_dim=16):
    return ModelConfig(visual_dim=visual_dim, semantic_raw_dim=6, attr_dim=attr_dim, n_rules=n_rules,
                       semantic_dim=5, semantic_hidden=7, rule_dim=4, rule_hidden=6,
                       hidden1=9, hidden2=7, latent_dim=3, predictor_hidden=5)


@pytest.fixture
def tiny_problem(aircraft):
    """10-sample, Dv=16 network with random inputs and a mixed violation target."""
    rng = np.random.default_rng(7)
    config = small_config()
    params = ModelParams.init(config, rng)
    for name in params.arrays:
        if name.endswith("bias"):
            params.arrays[name] += 0.1 * rng.standard_normal(params.arrays[name].shape)
    attrs = (rng.random((10, 10)) < 0.5).astype(float)
    batch = Batch(rng.standard_normal((10, 16)), rng.standard_normal((10, 6)), attrs)
    targets = (rng.random((10, 4)) < 0.4).astype(float)
    eps = rng.standard_normal((10, config.latent_dim))
    return params, batch, targets, eps
