"""
Tests for the gradient validation suite: case lookup and a single-seed pass
over the cheaper cases. The many-seed run lives in the integration tests.
"""

import pytest

from core.errors import ConfigError
from core.validation import CASES, DEFAULT_TOLERANCE, GradientValidator

pytestmark = pytest.mark.unit


class TestGradientValidator:

    def test_default_tolerance(self):
        assert DEFAULT_TOLERANCE == 1e-4
        assert GradientValidator().tolerance == DEFAULT_TOLERANCE

    def test_every_component_has_a_case(self):
        assert {
            "elementwise", "reductions", "image_encoder", "text_encoder", "qqformer", "vtc_loss",
            "selective_scan", "mamba_block", "cmm", "classifier", "aux_decoder",
        } == set(CASES)

    def test_unknown_case(self):
        with pytest.raises(ConfigError, match="unknown gradient case"):
            GradientValidator().validate_case("conv2d", seed=0)

    @pytest.mark.parametrize("name", ["elementwise", "reductions", "vtc_loss", "selective_scan", "classifier"])
    def test_case_passes(self, name):
        result = GradientValidator().validate_case(name, seed=0)
        assert result["valid"], result["errors"]
        assert result["max_relative_error"] < DEFAULT_TOLERANCE

    def test_failures_name_the_parameter(self):
        result = GradientValidator(tolerance=-1.0).validate_case("vtc_loss", seed=0)
        assert not result["valid"]
        assert {error.split(":")[0] for error in result["errors"]} == {"z", "t"}

    def test_run_aggregates_seeds(self):
        report = GradientValidator().run(seeds=[0, 1], cases=["vtc_loss"])
        assert report["vtc_loss"]["seeds"] == 2
        assert report["vtc_loss"]["valid"]
