"""
Command-line interface.

Subcommands: train, eval, decode, profile, mix-noise, wer, grad-check.
Exit codes: 0 success, 1 quality failure (failed check, diverged run, parameter
mismatch), 2 usage or configuration error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import avconf
from avconf import THREAD_ENV
from avconf.backend.model import MODES
from avconf.config.run_config import RunConfig, load
from avconf.core.errors import (
    AvconfError,
    DivergenceError,
    InputError,
    NumericalError,
    UsageError,
)
from avconf.core.rng import Rng
from avconf.core.serialization import read_tensor
from avconf.ctc.decoding import beam_search, greedy_decode
from avconf.ctc.lm import NgramLM
from avconf.ctc.vocab import Vocab
from avconf.diagnostics.gradcheck_suite import MODULES, run_suite
from avconf.frontends.audio import read_wav, write_wav
from avconf.frontends.video import read_clip
from avconf.metrics.wer import corpus_counts
from avconf.noise.mixing import NoiseMixSpec, make_source, mix_noise
from avconf.resources.profiler import cross_check, profile, sweep
from avconf.resources.profiler import sweep_to_text as flops_sweep_text
from avconf.training.evaluation import evaluate, run_model, snr_sweep
from avconf.training.evaluation import sweep_to_text as snr_sweep_text
from avconf.training.toy import ToyDataset, ToyUtterance, babble_pool
from avconf.training.trainer import Trainer, load_model

logger = logging.getLogger("avconf.cli")

LOG_FORMAT = "time=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def configure_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def thread_count(explicit: Optional[int] = None) -> int:
    """``--threads``, else ``AVCONF_THREADS``, else 1."""
    if explicit is not None:
        value = explicit
    else:
        raw = os.environ.get(THREAD_ENV, "1")
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"{THREAD_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise UsageError(f"thread count must be >= 1, got {value}")
    return value


def pinned_threads(requested: Optional[int]) -> Optional[int]:
    """
    The BLAS thread count this process runs with, checked against a requested count.

    BLAS sizes its pool when numpy loads, before arguments are parsed, so a request can
    only confirm the count pinned through ``AVCONF_THREADS`` or the BLAS variables.

    Raises:
        UsageError: the request differs from the pinned count, or nothing is pinned
    """
    started = avconf.BLAS_THREADS
    if requested is not None and requested != started:
        pinned = "no thread count" if started is None else f"{started} threads"
        raise UsageError(
            f"requested {requested} threads but BLAS started with {pinned}; "
            f"set {THREAD_ENV}={requested} before launching"
        )
    return started


def parse_floats(text: str) -> List[float]:
    """``"-5,0,5"`` -> ``[-5.0, 0.0, 5.0]`` (``inf`` allowed)."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load(args.config) if args.config else RunConfig.default()
    if getattr(args, "out", None):
        config.out_dir = str(args.out)
    if args.seed is not None:
        config.seed = args.seed
        config.train.seed = args.seed
    requested = config.threads
    if args.threads is not None or os.environ.get(THREAD_ENV):
        requested = thread_count(args.threads)
    threads = pinned_threads(requested)
    config.threads = threads
    config.train.threads = threads
    return config


def _emit(payload, output: Optional[Path] = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if output is not None:
        Path(output).write_text(text + "\n")
    print(text)


def _language_model(config: RunConfig, path: Optional[str]) -> Optional[NgramLM]:
    if not config.decode.use_lm:
        return None
    if path:
        return NgramLM.load(path)
    corpus = ToyDataset(config.task, "train", config.train.dataset_size).corpus()
    return NgramLM.train(corpus, config.decode.lm_order, config.model.vocab_size)


# ---------------------------------------------------------------------- commands


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    if args.steps is not None:
        config.train.steps = args.steps
    if args.mode:
        config.train.mode = args.mode
    out = Path(config.out_dir)
    config_hash = config.write_resolved(out)
    result = Trainer(config.model, config.train, config.task, out).run()
    lm = _language_model(config, None)
    if lm is not None:
        lm.save(out / "lm.txt")
    payload = result.to_dict()
    payload["config_hash"] = config_hash
    _emit(payload)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = Path(config.out_dir)
    config_hash = config.write_resolved(out)
    model = load_model(config.model, args.checkpoint)
    utterances = ToyDataset(config.task, "test", args.utterances).batch(range(args.utterances))
    decode = None if args.greedy else config.decode
    lm = None if args.greedy else _language_model(config, args.lm)
    modes = args.mode or [config.train.mode or model.modes[0]]
    pool = babble_pool(config.task)

    if args.snr:
        snrs = parse_floats(args.snr)
        records = snr_sweep(
            model, utterances, snrs, modes, args.noise, decode, lm, config.seed, pool
        )
        (out / "snr_sweep.tsv").write_text(snr_sweep_text(records, config_hash))
        if args.plot:
            from avconf.visualization.curves import plot_wer_vs_snr, write_figure

            write_figure(plot_wer_vs_snr(records), out / "wer_vs_snr.html")
        _emit({"config_hash": config_hash, "records": records})
        return EXIT_OK

    reports = [evaluate(model, utterances, mode, None, decode, lm).to_dict() for mode in modes]
    _emit({"config_hash": config_hash, "reports": reports}, out / "eval_report.json")
    return EXIT_OK


def _decode_one(posteriors, config: RunConfig, lm, greedy: bool) -> List[int]:
    if greedy:
        return greedy_decode(posteriors)
    decode = config.decode
    best = beam_search(
        posteriors,
        decode.beam_width,
        lm,
        decode.lm_weight if lm is not None else 0.0,
        decode.length_bonus,
    )[0]
    return list(best.tokens)


def cmd_decode(args: argparse.Namespace) -> int:
    config = _run_config(args)
    vocab = Vocab.toy(config.model.vocab_size)
    lm = None if args.greedy else _language_model(config, args.lm)
    posteriors = []
    if args.posteriors:
        posteriors = [read_tensor(path) for path in args.posteriors]
    else:
        if not args.checkpoint:
            raise UsageError("decode needs --posteriors, or --checkpoint with --audio/--video")
        if not args.audio and not args.video:
            raise UsageError("decode needs --audio and/or --video inputs")
        if args.audio and args.video and len(args.audio) != len(args.video):
            raise UsageError(f"{len(args.audio)} audio files but {len(args.video)} clips")
        model = load_model(config.model, args.checkpoint)
        mode = args.mode or config.train.mode or model.modes[0]
        count = max(len(args.audio or []), len(args.video or []))
        for i in range(count):
            waveform = read_wav(args.audio[i]) if args.audio else None
            clip = read_clip(args.video[i]) if args.video else None
            posteriors.append(run_model(model, ToyUtterance(waveform, clip, []), mode).posteriors)

    hypotheses = [_decode_one(p, config, lm, args.greedy) for p in posteriors]
    lines = [vocab.to_text(h) for h in hypotheses]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)

    if args.reference:
        references = Path(args.reference).read_text().splitlines()
        if len(references) != len(lines):
            raise InputError(
                f"{args.reference} has {len(references)} lines for {len(lines)} hypotheses"
            )
        counts = corpus_counts(references, lines)
        logger.info("decoded utterances=%d wer=%.4f", len(lines), counts.rate)
        print(json.dumps(counts.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = Path(config.out_dir)
    config.write_resolved(out)
    model_config = config.model
    report = profile(model_config, args.seconds)
    (out / "profile.txt").write_text(report.to_text())
    print(report.to_table())

    if args.sweep:
        branches = [model_config.audio, model_config.visual, model_config.audio_visual]
        d_model = args.d_model or max(b.output_dim for b in branches if b is not None)
        lengths = range(args.n_min, args.n_max + 1, args.n_step)
        records = sweep(d_model, args.sweep.split(","), lengths, args.heads)
        (out / "flops_sweep.tsv").write_text(flops_sweep_text(records))
        if args.plot:
            from avconf.visualization.curves import plot_flops_vs_length, write_figure

            write_figure(plot_flops_vs_length(records), out / "flops_vs_n.html")
    if args.plot:
        from avconf.visualization.curves import plot_cost_breakdown, write_figure

        write_figure(plot_cost_breakdown(report), out / "cost_breakdown.html")

    if args.check_params:
        mismatches = cross_check(model_config, report)
        if mismatches:
            for group, (analytic, built) in sorted(mismatches.items()):
                logger.error("param mismatch group=%s analytic=%d built=%d", group, analytic, built)
            return EXIT_FAILURE
        logger.info("param cross-check passed groups=%d", len(report.by_group()))
    return EXIT_OK


def cmd_mix_noise(args: argparse.Namespace) -> int:
    spec = NoiseMixSpec(source=args.source, snr_db=args.snr, path=args.noise)
    signal = read_wav(args.input)
    babble = None
    if spec.source == "babble":
        babble = babble_pool(load(args.config).task if args.config else RunConfig.default().task)
    result = mix_noise(signal, spec, Rng(args.seed or 0), make_source(spec, babble))
    write_wav(args.output, result.waveform)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_wer(args: argparse.Namespace) -> int:
    references = Path(args.ref).read_text().splitlines()
    hypotheses = Path(args.hyp).read_text().splitlines()
    if len(references) != len(hypotheses):
        raise InputError(
            f"{args.ref} has {len(references)} lines but {args.hyp} has {len(hypotheses)}"
        )
    _emit(corpus_counts(references, hypotheses).to_dict())
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    results = run_suite(args.module, args.trials, args.seed or 0)
    failed = [r for r in results if not r.passed]
    for result in results:
        status = "ok" if result.passed else "FAIL"
        name = f"{result.module}.{result.name}[{result.trial}]"
        print(f"{status:4s} {name} max_error={result.max_error:.2e}")
    if args.output:
        Path(args.output).write_text(
            json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n"
        )
    logger.info("grad check checks=%d failed=%d", len(results), len(failed))
    return EXIT_FAILURE if failed else EXIT_OK


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avconf", description="Audio-visual efficient Conformer toolkit"
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help: str, config: bool = True) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.set_defaults(handler=handler)
        if config:
            sub.add_argument("--config", help="run config file (default: desk AV model)")
            sub.add_argument("--out", help="output directory (overrides out_dir)")
            sub.add_argument(
                "--threads", type=int, help=f"thread count pinned by ${THREAD_ENV}"
            )
        sub.add_argument("--seed", type=int)
        return sub

    train = command("train", cmd_train, "train on the toy task")
    train.add_argument("--steps", type=int)
    train.add_argument("--mode", choices=MODES)

    ev = command("eval", cmd_eval, "evaluate a checkpoint on the toy test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--mode", choices=MODES, action="append")
    ev.add_argument("--snr", help='comma-separated SNR sweep in dB, e.g. "-5,0,5"')
    ev.add_argument("--noise", choices=["white", "babble"], default="babble")
    ev.add_argument("--utterances", type=int, default=100)
    ev.add_argument("--lm", help="n-gram LM file (default: train one on the toy corpus)")
    ev.add_argument("--greedy", action="store_true", help="greedy decoding only")
    ev.add_argument("--plot", action="store_true")

    dec = command("decode", cmd_decode, "decode posteriors dumps or audio/video files")
    dec.add_argument("--posteriors", nargs="+", help="(T, V) posteriors tensor dumps")
    dec.add_argument("--checkpoint")
    dec.add_argument("--audio", nargs="+", help="16 kHz mono WAV files")
    dec.add_argument("--video", nargs="+", help="clip files")
    dec.add_argument("--mode", choices=MODES)
    dec.add_argument("--lm")
    dec.add_argument("--greedy", action="store_true")
    dec.add_argument("--reference", help="line-aligned reference transcripts")
    dec.add_argument("--output", help="transcript file (default stdout)")

    prof = command("profile", cmd_profile, "parameter and FLOP report")
    prof.add_argument("--seconds", type=float, default=10.0)
    prof.add_argument("--sweep", help='attention variants, e.g. "regular,grouped:3,patch:3"')
    prof.add_argument("--d-model", type=int)
    prof.add_argument("--heads", type=int, default=4)
    prof.add_argument("--n-min", type=int, default=50)
    prof.add_argument("--n-max", type=int, default=1000)
    prof.add_argument("--n-step", type=int, default=50)
    prof.add_argument("--check-params", action="store_true")
    prof.add_argument("--plot", action="store_true")

    mix = command("mix-noise", cmd_mix_noise, "mix noise into a WAV file", config=False)
    mix.add_argument("--input", required=True)
    mix.add_argument("--output", required=True)
    mix.add_argument("--snr", type=float, required=True)
    mix.add_argument("--source", choices=["white", "babble", "file"], default="white")
    mix.add_argument("--noise", help="noise WAV for --source file")
    mix.add_argument("--config", help="run config whose toy task supplies babble talkers")

    wer = command("wer", cmd_wer, "word error rate of line-aligned transcripts", config=False)
    wer.add_argument("--ref", required=True)
    wer.add_argument("--hyp", required=True)

    grad = command(
        "grad-check", cmd_grad_check, "finite-difference gradient checks", config=False
    )
    grad.add_argument("--module", choices=MODULES, action="append")
    grad.add_argument("--trials", type=int, default=1)
    grad.add_argument("--output", help="JSON results file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (DivergenceError, NumericalError) as e:
        logger.error("run failed error=%s", e)
        return EXIT_FAILURE
    except AvconfError as e:
        logger.error("%s error=%s", type(e).__name__, e)
        print(f"avconf {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as e:
        print(f"avconf {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
