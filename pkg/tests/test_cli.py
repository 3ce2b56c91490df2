"""
Tests for the command-line interface.
"""

import json
from pathlib import Path

import numpy as np
import pytest

import avconf
from avconf import THREAD_ENV
from avconf.cli import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    main,
    parse_floats,
    pinned_threads,
    thread_count,
)
from avconf.core.errors import UsageError
from avconf.core.rng import Rng
from avconf.core.serialization import Checkpoint, save_tensor
from avconf.frontends.audio import Waveform, read_wav, write_wav

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _one_hot(path, vocab=12):
    return np.eye(vocab)[path]


def _last_json(text: str):
    start = text.index("{")
    return json.loads(text[start:])


def test_wer_command(tmp_path, capsys):
    """Test corpus WER of two transcript files."""
    (tmp_path / "ref.txt").write_text("a b c\nd e\n")
    (tmp_path / "hyp.txt").write_text("a x c\nd e\n")
    code = main(["wer", "--ref", str(tmp_path / "ref.txt"), "--hyp", str(tmp_path / "hyp.txt")])
    assert code == EXIT_OK
    counts = _last_json(capsys.readouterr().out)
    assert counts["errors"] == 1 and counts["rate"] == pytest.approx(0.2)


def test_wer_line_mismatch(tmp_path):
    """Test transcripts of different lengths."""
    (tmp_path / "ref.txt").write_text("a\nb\n")
    (tmp_path / "hyp.txt").write_text("a\n")
    code = main(["wer", "--ref", str(tmp_path / "ref.txt"), "--hyp", str(tmp_path / "hyp.txt")])
    assert code == EXIT_USAGE


def test_decode_posteriors(tmp_path, capsys):
    """Test greedy decoding of posterior dumps against references."""
    paths = []
    for i, path in enumerate([[0, 3, 3, 0, 5], [1, 0, 1]]):
        paths.append(tmp_path / f"post{i}.bin")
        save_tensor(paths[-1], _one_hot(path))
    (tmp_path / "ref.txt").write_text("t3 t5\nt1 t2\n")
    code = main(
        ["decode", "--posteriors", *map(str, paths), "--greedy"]
        + ["--reference", str(tmp_path / "ref.txt"), "--output", str(tmp_path / "hyp.txt")]
    )
    assert code == EXIT_OK
    assert (tmp_path / "hyp.txt").read_text() == "t3 t5\nt1 t1\n"
    assert _last_json(capsys.readouterr().out)["errors"] == 1


def test_decode_needs_inputs():
    """Test the usage error without posteriors or a checkpoint."""
    assert main(["decode", "--greedy"]) == EXIT_USAGE


def test_grad_check_command(tmp_path, capsys):
    """Test one module group and the results file."""
    output = tmp_path / "grad.json"
    code = main(["grad-check", "--module", "numerics", "--output", str(output)])
    assert code == EXIT_OK
    results = json.loads(output.read_text())
    assert results and all(r["passed"] for r in results)
    assert capsys.readouterr().out.startswith("ok")
    assert main(["grad-check", "--trials", "0"]) == EXIT_USAGE


def test_missing_config(tmp_path):
    """Test that a missing config file is a usage error."""
    assert main(["profile", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_unknown_argument():
    """Test argparse rejection of unknown options."""
    with pytest.raises(SystemExit) as info:
        main(["wer", "--ref", "a", "--hyp", "b", "--bogus"])
    assert info.value.code == EXIT_USAGE


def test_profile_command(tmp_path, capsys):
    """Test the report, the parameter cross-check, the sweep and the figures."""
    out = tmp_path / "profile"
    code = main(
        ["profile", "--out", str(out), "--seconds", "2", "--check-params", "--plot"]
        + ["--sweep", "regular,patch:3", "--n-min", "50", "--n-max", "150"]
    )
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("# flops-v1")
    assert (out / "profile.txt").read_text().splitlines()[-1].startswith("total\t")
    assert len((out / "flops_sweep.tsv").read_text().splitlines()) == 2 + 2 * 3
    for name in ("cost_breakdown.html", "flops_vs_n.html", "resolved_config.json"):
        assert (out / name).is_file()


def test_mix_noise_command(tmp_path, capsys):
    """Test mixing white noise into a WAV file."""
    source = tmp_path / "clean.wav"
    write_wav(source, Waveform(Rng(0).uniform(-0.1, 0.1, (4000,))))
    target = tmp_path / "noisy.wav"
    code = main(["mix-noise", "--input", str(source), "--output", str(target), "--snr", "10"])
    assert code == EXIT_OK
    assert len(read_wav(target)) == 4000
    assert _last_json(capsys.readouterr().out)["snr_db"] == 10.0
    args = ["mix-noise", "--input", str(source), "--output", str(target), "--snr", "0"]
    code = main(args + ["--source", "file"])
    assert code == EXIT_USAGE


def test_train_then_eval(tmp_path, capsys):
    """Test a zero-step run and a greedy evaluation of its checkpoint."""
    out = tmp_path / "run"
    config = str(CONFIG_DIR / "desk_ao.cfg")
    assert main(["train", "--config", config, "--steps", "0", "--out", str(out)]) == EXIT_OK
    result = _last_json(capsys.readouterr().out)
    checkpoint = Path(result["checkpoints"][0])
    assert Checkpoint.load(checkpoint).metadata["step"] == 0
    assert (out / "lm.txt").is_file()
    code = main(
        ["eval", "--config", config, "--out", str(out), "--checkpoint", str(checkpoint)]
        + ["--greedy", "--utterances", "2"]
    )
    assert code == EXIT_OK
    report = json.loads((out / "eval_report.json").read_text())
    assert len(report["config_hash"]) == len(result["config_hash"]) == 64
    assert report["reports"][0]["mode"] == "ao"


def test_thread_count(monkeypatch):
    """Test the flag, the environment variable and invalid values."""
    monkeypatch.setenv(THREAD_ENV, "3")
    assert thread_count() == 3
    assert thread_count(2) == 2
    with pytest.raises(UsageError):
        thread_count(0)
    monkeypatch.setenv(THREAD_ENV, "many")
    with pytest.raises(UsageError):
        thread_count()


def test_threads_must_match_blas(monkeypatch, tmp_path):
    """Test that a requested thread count must equal the one BLAS started with."""
    monkeypatch.delenv(THREAD_ENV, raising=False)
    monkeypatch.setattr(avconf, "BLAS_THREADS", 2)
    assert pinned_threads(None) == 2
    assert pinned_threads(2) == 2
    with pytest.raises(UsageError):
        pinned_threads(3)
    config = str(CONFIG_DIR / "desk_ao.cfg")
    args = ["train", "--config", config, "--steps", "0", "--out", str(tmp_path / "run")]
    assert main(args + ["--threads", "3"]) == EXIT_USAGE
    assert main(args + ["--threads", "2"]) == EXIT_OK
    checkpoint = Checkpoint.load(tmp_path / "run" / "ckpt_000000.avck")
    assert checkpoint.metadata["thread_count"] == 2


def test_unpinned_threads(monkeypatch, tmp_path):
    """Test runs without a pinned count and requests that cannot be honoured."""
    monkeypatch.delenv(THREAD_ENV, raising=False)
    monkeypatch.setattr(avconf, "BLAS_THREADS", None)
    assert pinned_threads(None) is None
    with pytest.raises(UsageError):
        pinned_threads(1)
    config = tmp_path / "pinned.cfg"
    config.write_text("threads = 4\n[model]\nkind = audio\n")
    assert main(["profile", "--config", str(config), "--out", str(tmp_path / "p")]) == EXIT_USAGE


def test_parse_floats():
    """Test SNR lists."""
    assert parse_floats("-5,0, 5") == [-5.0, 0.0, 5.0]
    assert parse_floats("inf") == [float("inf")]
    with pytest.raises(UsageError):
        parse_floats("5,loud")


def test_exit_code_constants():
    """Test the documented exit codes."""
    assert (EXIT_OK, EXIT_FAILURE, EXIT_USAGE) == (0, 1, 2)
