"""
Tests for the gradient-check suite.
"""

import pytest

from avconf.core.errors import UsageError
from avconf.diagnostics import CHECKS, MODULES, GradCheckResult, run_suite


def test_every_module_has_checks():
    """Test that each module group registers at least one check."""
    assert set(CHECKS) == set(MODULES)
    assert all(CHECKS[module] for module in MODULES)


@pytest.mark.parametrize("module", ["numerics", "audio", "attention", "backend", "ctc"])
def test_module_checks_pass(module):
    """Test analytic against numeric gradients for one module group."""
    results = run_suite([module])
    assert len(results) == len(CHECKS[module])
    failed = [(r.name, r.max_error) for r in results if not r.passed]
    assert failed == []


@pytest.mark.slow
@pytest.mark.parametrize("module", ["video", "model"])
def test_heavy_module_checks_pass(module):
    """Test the convolutional front-end and the end-to-end model."""
    assert all(r.passed for r in run_suite([module], trials=2))


def test_trials_use_independent_instances():
    """Test one result per trial with distinct random draws."""
    results = run_suite(["ctc"], trials=2, seed=5)
    assert [r.trial for r in results if r.name == "ctc_loss"] == [0, 1]
    errors = [r.errors["logits"] for r in results if r.name == "ctc_loss"]
    assert errors[0] != errors[1]


def test_suite_usage_errors():
    """Test invalid trial counts and module names."""
    with pytest.raises(UsageError):
        run_suite(["numerics"], trials=0)
    with pytest.raises(UsageError):
        run_suite(["optics"])


def test_result_threshold():
    """Test pass/fail against the tolerance."""
    result = GradCheckResult("m", "c", 0, {"a": 1e-5, "b": 2e-3}, 1e-3)
    assert result.max_error == 2e-3 and not result.passed
    assert result.to_dict()["passed"] is False
    assert GradCheckResult("m", "c", 0, {}, 1e-3).passed
