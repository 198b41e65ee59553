"""
The full finite-difference suite: every differentiable component over 100
seeds at float64.
"""

import pytest

from core.validation import CASES, DEFAULT_TOLERANCE, GradientValidator

pytestmark = [pytest.mark.integration, pytest.mark.slow]

SEEDS = range(100)


@pytest.mark.parametrize("name", sorted(CASES))
def test_component_gradients(name):
    report = GradientValidator().run(SEEDS, cases=[name])[name]
    assert report["seeds"] == 100
    assert report["valid"], report["errors"][:5]
    assert report["max_relative_error"] < DEFAULT_TOLERANCE
