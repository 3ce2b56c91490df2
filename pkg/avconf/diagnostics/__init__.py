"""Finite-difference gradient checks of every differentiable component."""

from avconf.diagnostics.gradcheck_suite import CHECKS, MODULES, GradCheckResult, run_suite

__all__ = ["CHECKS", "MODULES", "GradCheckResult", "run_suite"]
