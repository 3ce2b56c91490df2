"""Analytic complexity accounting."""

from avconf.resources.profiler import CostRecord, CostReport, cross_check, profile, sweep

__all__ = ["CostRecord", "CostReport", "cross_check", "profile", "sweep"]
