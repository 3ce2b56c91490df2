"""CTC loss, exhaustive reference, decoders and n-gram language model."""

from avconf.ctc.decoding import Hypothesis, beam_search, greedy_decode, rescore
from avconf.ctc.lm import NgramLM
from avconf.ctc.loss import ctc_log_likelihood, ctc_loss, joint_loss
from avconf.ctc.oracle import collapse, ctc_brute_force, sequence_distribution
from avconf.ctc.vocab import BLANK_ID, Vocab

__all__ = [
    "BLANK_ID",
    "Hypothesis",
    "NgramLM",
    "Vocab",
    "beam_search",
    "collapse",
    "ctc_brute_force",
    "ctc_log_likelihood",
    "ctc_loss",
    "greedy_decode",
    "joint_loss",
    "rescore",
    "sequence_distribution",
]
