"""
Tests for analytic parameter and FLOP accounting.
"""

import pytest

from avconf.attention.complexity import FLOP_CONVENTION, FLOP_CONVENTION_VERSION
from avconf.backend.config import ModelConfig
from avconf.core.errors import ParameterError
from avconf.resources.profiler import cross_check, parse_variant, profile, sweep, sweep_to_text


def test_convention_version_guard():
    """Test that the counting convention only changes deliberately."""
    assert FLOP_CONVENTION_VERSION == 1
    assert FLOP_CONVENTION.startswith("flops-v1: 1 multiply-add = 1 FLOP")


def test_totals_equal_record_sums():
    """Test totals, subtotals and the convention header."""
    report = profile(ModelConfig.desk(), 2.0)
    assert report.total_params == sum(r.params for r in report.records)
    assert report.total_flops == sum(r.flops for r in report.records)
    sub = report.subtotals()
    assert sub["frontend"]["flops"] + sub["backend"]["flops"] == report.total_flops
    assert report.to_table().startswith(f"# {FLOP_CONVENTION}")
    assert report.to_text().splitlines()[-1].startswith("total\t")
    with pytest.raises(ParameterError):
        profile(ModelConfig.desk(), 0.0)


@pytest.mark.parametrize("kind", ["audio", "visual", "audio_visual"])
def test_cross_check_desk(kind):
    """Test analytic parameter counts against an instantiated model."""
    assert cross_check(ModelConfig.desk(kind)) == {}


def test_full_parameter_counts():
    """Test branch sizes of the full configuration against the reference sizes."""
    groups = profile(ModelConfig.full(), 10.0).by_group()
    params = {name: value[0] for name, value in groups.items()}
    assert abs(params["audio_backend"] - 17.9e6) / 17.9e6 < 0.05
    assert abs(params["visual_backend"] - 13.6e6) / 13.6e6 < 0.05
    assert params["av_backend"] + params["head"] == 15_910_352
    assert abs(params["video_frontend"] - 11.3e6) / 11.3e6 < 0.02


@pytest.mark.slow
def test_cross_check_full():
    """Test analytic counts against the full-size model."""
    assert cross_check(ModelConfig.full()) == {}


def test_patch_attention_reduces_flops():
    """Test that patch(3) in audio stage 1 costs less than regular attention."""
    patched = ModelConfig.full("audio")
    regular = patched.model_copy(deep=True)
    regular.audio.stage_attention = ["regular", "patch", "patch"]
    assert profile(patched).total_flops < profile(regular).total_flops
    assert profile(patched).total_params == profile(regular).total_params


def test_doubling_duration():
    """Test exact doubling of linear layers and super-linear attention growth."""
    config = ModelConfig.full()
    short, long = profile(config, 10.0), profile(config, 20.0)
    proj = "video_frontend.proj"
    assert long.record(proj).flops == 2 * short.record(proj).flops
    mhsa = "audio_backend.stage1.block1.mhsa"
    regular = ModelConfig.full("audio")
    regular.audio.stage_attention = ["regular", "patch", "patch"]
    assert profile(regular, 20.0).record(mhsa).flops > 2 * profile(regular, 10.0).record(mhsa).flops


def test_sweep_records():
    """Test record count, ordering of variants and the k=1 identity."""
    n_range = list(range(50, 1001, 50))
    records = sweep(180, ["regular", "grouped:3", "patch:3", "patch:1"], n_range)
    assert len(records) == 4 * len(n_range)
    by = {(r["variant"], r["n"]): r["flops"] for r in records}
    for n in n_range:
        assert by[("patch:3", n)] <= by[("grouped:3", n)] <= by[("regular", n)]
        assert by[("patch:1", n)] == by[("regular", n)]
    assert sweep_to_text(records).splitlines()[1] == "variant\tn\tflops"
    with pytest.raises(ParameterError):
        sweep(180, ["regular"], [])


def test_parse_variant():
    """Test variant specs."""
    assert parse_variant("patch:3") == ("patch", 3)
    assert parse_variant("regular") == ("regular", 1)
    with pytest.raises(ParameterError):
        parse_variant("sparse:2")
