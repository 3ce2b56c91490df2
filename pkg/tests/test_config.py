"""
Tests for the config file format and run configuration.
"""

import hashlib
import math
from pathlib import Path

import pytest

from avconf.config.parser import parse, parse_file, parse_value
from avconf.config.run_config import RESOLVED_NAME, RunConfig, load, loads
from avconf.core.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

AUDIO_RUN = """
seed = 3            # copied into [train]
out_dir = "runs/test"

[model]
base = desk
kind = audio
interctc_weight = 0.3

[model.audio]
interctc_blocks = []

[train]
steps = 5
noise_snr_range = -5, 20

[decode]
use_lm = false
"""


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("1", 1),
        ("-2.5", -2.5),
        ("true", True),
        ("False", False),
        ("none", None),
        ("desk", "desk"),
        ('"a, b # c"', "a, b # c"),
        ("5, 6, 1", [5, 6, 1]),
        ("8,", [8]),
        ("[]", []),
        ("[regular, 3]", ["regular", 3]),
    ],
)
def test_parse_value(raw, expected):
    """Test value typing."""
    assert parse_value(raw) == expected


def test_parse_value_infinity_and_errors():
    """Test infinite floats and empty elements."""
    assert parse_value("inf") == math.inf
    assert parse_value("-inf, 0") == [-math.inf, 0]
    with pytest.raises(ValueError):
        parse_value("")
    with pytest.raises(ValueError):
        parse_value("1,,2")
    with pytest.raises(ValueError):
        parse_value('"open')


def test_parse_sections_comments_and_lines():
    """Test nesting, comments and recorded line numbers."""
    parsed = parse('a = 1  # one\n\n[x]\nb = "#"\n[x.y]\nc = 2, 3\n')
    assert parsed.data == {"a": 1, "x": {"b": "#", "y": {"c": [2, 3]}}}
    assert parsed.line_of(("x", "y", "c")) == 6
    assert parsed.line_of(("x", "missing")) == 3
    assert parsed.line_of(("nothing",)) is None


@pytest.mark.parametrize(
    "text,line",
    [
        ("a = 1\na = 2\n", 2),
        ("[x]\nb = 1\n[x]\n", 3),
        ("a = 1\n[bad section\n", 2),
        ("a = 1\nb = 2\njust words\n", 3),
        ("a = 1\n[a]\n", 2),
        ("[x]\n[x.y]\n[x]\n", 3),
        ("a = 1\nb =\n", 2),
    ],
)
def test_parse_errors_name_the_line(text, line):
    """Test that every syntax error carries its line number."""
    with pytest.raises(ConfigError) as info:
        parse(text, "t.cfg")
    assert info.value.line == line
    assert "t.cfg" in str(info.value)


def test_parse_file_missing(tmp_path):
    """Test a missing config file."""
    with pytest.raises(ConfigError):
        parse_file(tmp_path / "absent.cfg")


def test_run_config_overrides():
    """Test preset selection and field-by-field overrides."""
    config = loads(AUDIO_RUN)
    assert config.model.kind == "audio"
    assert config.model.audio.interctc_blocks == []
    assert config.model.audio.blocks_per_stage == [1, 1, 1]
    assert config.model.interctc_weight == 0.3
    assert config.train.steps == 5 and config.train.seed == 3
    assert config.train.noise_snr_range == (-5.0, 20.0)
    assert config.task.vocab_size == config.model.vocab_size
    assert not config.decode.use_lm
    assert config.out_dir == "runs/test"


def test_run_config_errors_name_the_line():
    """Test unknown sections, unknown keys and bad presets."""
    with pytest.raises(ConfigError) as info:
        loads("[model]\nkind = audio\n[optim]\nlr = 1\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError) as info:
        loads("[model]\nkind = audio\n[train]\nsteps = 1\nlearning_rate = 2\n")
    assert info.value.line == 5
    with pytest.raises(ConfigError) as info:
        loads("[model]\nbase = huge\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError) as info:
        loads("[train]\nsteps = -1\n")
    assert info.value.line == 2


def test_vocab_mismatch():
    """Test that task and model vocabularies must agree."""
    with pytest.raises(ConfigError, match="vocab_size"):
        loads("[model]\nkind = audio\n[task]\nvocab_size = 10\n")


def test_resolved_config_and_hash(tmp_path):
    """Test the echoed config file and its hash."""
    config = loads(AUDIO_RUN)
    config_hash = config.write_resolved(tmp_path / "out")
    written = (tmp_path / "out" / RESOLVED_NAME).read_text()
    assert hashlib.sha256(written.rstrip("\n").encode()).hexdigest() == config_hash
    assert loads(AUDIO_RUN).config_hash() == config_hash
    assert RunConfig.default("audio").config_hash() != config_hash


@pytest.mark.parametrize("name", ["desk_ao", "desk_vo", "desk_av", "full_av"])
def test_shipped_configs_load(name):
    """Test every config in the repository."""
    config = load(CONFIG_DIR / f"{name}.cfg")
    assert config.out_dir == f"runs/{name}"
    assert config.model.vocab_size == config.task.vocab_size
