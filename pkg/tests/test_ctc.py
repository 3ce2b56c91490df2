"""
Tests for the CTC loss, the exhaustive reference, decoders and the n-gram language model.
"""

import itertools
import math

import numpy as np
import pytest

from avconf.core import ops
from avconf.core.errors import (
    InfeasibleAlignmentError,
    InputError,
    InstanceTooLargeError,
    ParameterError,
)
from avconf.core.gradcheck import check_gradients
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.ctc.decoding import beam_search, greedy_decode, rescore
from avconf.ctc.lm import NgramLM
from avconf.ctc.loss import ctc_loss, interleave, joint_loss, min_frames
from avconf.ctc.oracle import collapse, ctc_brute_force, sequence_distribution
from avconf.ctc.vocab import BLANK, Vocab


def _random_probs(rng, frames, vocab):
    logits = rng.normal((frames, vocab))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _loss(probs, labels):
    return ctc_loss(Tensor(np.log(probs), dtype=np.float64), labels).item()


def _one_hot(path, vocab):
    return np.eye(vocab)[list(path)]


def test_interleave_and_min_frames():
    """Test the blank-interleaved target and the shortest alignment."""
    assert list(interleave([1, 2])) == [0, 1, 0, 2, 0]
    assert min_frames([1, 1, 2]) == 4
    assert min_frames([]) == 0


def test_single_path_loss():
    """Test T=1 with one label."""
    assert np.isclose(_loss(np.array([[0.3, 0.7]]), [1]), -math.log(0.7))


def test_two_frame_loss():
    """Test the three paths of one label over two uniform frames."""
    assert np.isclose(_loss(np.full((2, 2), 0.5), [1]), -math.log(0.75))


def test_empty_target_is_all_blank():
    """Test that an empty target scores only the all-blank path."""
    probs = _random_probs(Rng(0), 4, 3)
    assert np.isclose(_loss(probs, []), -np.log(probs[:, 0]).sum())


def test_infeasible_alignment():
    """Test targets that need more frames than available."""
    with pytest.raises(InfeasibleAlignmentError) as info:
        _loss(np.full((2, 3), 1 / 3), [1, 1])
    assert info.value.required == 3 and info.value.num_frames == 2
    assert math.isinf(info.value.loss)
    assert ctc_brute_force(np.full((2, 3), 1 / 3), [1, 1]) == 0.0
    with pytest.raises(InputError):
        _loss(np.full((2, 3), 1 / 3), [3])


@pytest.mark.parametrize("frames", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("vocab", [2, 3, 4])
def test_loss_matches_brute_force(frames, vocab):
    """Test the forward recursion against path enumeration for 50 posteriors per shape."""
    rng = Rng(100 * frames + vocab)
    for _ in range(50):
        probs = _random_probs(rng, frames, vocab)
        for size in range(4):
            for labels in itertools.product(range(1, vocab), repeat=size):
                expected = ctc_brute_force(probs, labels)
                if min_frames(labels) > frames:
                    assert expected == 0.0
                    continue
                likelihood = math.exp(-_loss(probs, list(labels)))
                assert np.isclose(likelihood, expected, rtol=1e-10, atol=0)


def test_brute_force_one_hot_alignment():
    """Test probability 1 for a one-hot valid alignment."""
    probs = _one_hot([0, 1, 1, 0, 2], 3)
    assert ctc_brute_force(probs, [1, 2]) == 1.0
    assert ctc_brute_force(probs, [2, 1]) == 0.0


def test_brute_force_refuses_large_instances():
    """Test the enumeration limit."""
    with pytest.raises(InstanceTooLargeError):
        ctc_brute_force(np.full((12, 5), 0.2), [1])


@pytest.mark.parametrize("frames", [1, 2, 3, 4])
@pytest.mark.parametrize("vocab", [2, 3])
def test_sequence_distribution_sums_to_one(frames, vocab):
    """Test that collapsed sequences form a probability distribution."""
    rng = Rng(10 * frames + vocab)
    for _ in range(10):
        dist = sequence_distribution(_random_probs(rng, frames, vocab))
        assert abs(sum(dist.values()) - 1.0) < 1e-9


def test_collapse():
    """Test repeat merging before blank removal."""
    assert collapse([0, 1, 1, 0, 2]) == (1, 2)
    assert collapse([1, 0, 1]) == (1, 1)
    assert collapse([0, 0]) == ()


def test_ctc_gradient():
    """Test the loss gradient through log_softmax against finite differences."""
    rng = Rng(3)
    logits = Tensor(rng.normal((5, 4)), requires_grad=True, dtype=np.float64)
    errors = check_gradients(
        lambda: ctc_loss(ops.log_softmax(logits, axis=-1), [1, 3, 3]), {"logits": logits}
    )
    assert errors["logits"] < 1e-3


def test_joint_loss():
    """Test the weighted combination and its edge cases."""
    assert joint_loss(2.0, [4.0, 6.0], 0.5) == 3.5
    assert joint_loss(2.0, [4.0, 6.0], 0.0) == 2.0
    assert joint_loss(2.0, [], 0.5) == 2.0
    with pytest.raises(ParameterError):
        joint_loss(2.0, [1.0], 1.5)


def test_greedy_decode():
    """Test collapse of the per-frame argmax."""
    assert greedy_decode(_one_hot([0, 1, 1, 0, 2], 3)) == [1, 2]
    assert greedy_decode(_one_hot([0, 0, 0], 3)) == []
    assert greedy_decode(_one_hot([1, 0, 1], 3)) == [1, 1]


def test_beam_one_hot_alignment():
    """Test a single certain hypothesis with log score 0."""
    best = beam_search(_one_hot([0, 2, 2, 0, 1, 1], 3), 4, lm_weight=0.0, length_bonus=0.0)[0]
    assert list(best.tokens) == [2, 1]
    assert abs(best.log_score) < 1e-9


def test_beam_width_one_is_greedy():
    """Test width-1 search on one-hot posteriors against greedy decoding."""
    rng = Rng(4)
    for _ in range(20):
        path = rng.integers(0, 3, (6,))
        probs = _one_hot(path, 4)
        best = beam_search(probs, 1, lm_weight=0.0, length_bonus=0.0)[0]
        assert list(best.tokens) == greedy_decode(probs)


@pytest.mark.parametrize("frames,vocab", [(2, 3), (3, 3), (4, 2), (4, 3)])
def test_beam_exact_on_tiny_instances(frames, vocab):
    """Test that a wide beam finds the most probable collapsed sequence."""
    rng = Rng(10 * frames + vocab)
    for _ in range(5):
        probs = _random_probs(rng, frames, vocab)
        dist = sequence_distribution(probs)
        hypotheses = beam_search(probs, vocab**frames, lm_weight=0.0, length_bonus=0.0)
        assert hypotheses[0].tokens == max(dist, key=dist.get)
        assert np.isclose(math.exp(hypotheses[0].acoustic), max(dist.values()))
        scores = [h.log_score for h in hypotheses]
        assert scores == sorted(scores, reverse=True)


def test_beam_with_language_model():
    """Test that LM fusion can flip an acoustically close decision."""
    probs = np.array([[0.1, 0.46, 0.44], [0.9, 0.05, 0.05]])
    lm = NgramLM.train([[2]] * 20, order=1, vocab_size=3)
    plain = beam_search(probs, 4, lm_weight=0.0, length_bonus=0.0)[0]
    fused = beam_search(probs, 4, lm=lm, lm_weight=1.0, length_bonus=0.0)[0]
    assert plain.tokens == (1,) and fused.tokens == (2,)
    assert fused.lm == pytest.approx(lm.score_sequence([2]))
    rescored = rescore([plain, fused], lm, 1.0)
    assert rescored[0].tokens == (2,)
    with pytest.raises(ParameterError):
        beam_search(probs, 0)


def test_lm_unigram_smoothing():
    """Test the documented order-1 formula and unseen tokens."""
    lm = NgramLM.train([[1, 1, 2]], order=1, vocab_size=4)
    assert np.isclose(lm.prob(1), (2 + 0.1) / (3 + 0.1 * 3))
    assert lm.prob(3) > 0
    assert np.isclose(sum(lm.prob(t) for t in (1, 2, 3)), 1.0)


def test_lm_conditional_distribution():
    """Test normalization of a higher-order conditional."""
    lm = NgramLM.train([[1, 2, 3], [1, 2, 2], [3, 1]], order=3, vocab_size=4)
    for history in ([], [1], [1, 2], [3, 3]):
        assert np.isclose(sum(lm.prob(t, history) for t in (1, 2, 3)), 1.0)


def test_lm_perplexity_beats_uniform():
    """Test training-corpus perplexity against the uniform model."""
    rng = Rng(5)
    corpus = [list(rng.integers(1, 2, (6,))) + [3, 4] for _ in range(30)]
    lm = NgramLM.train(corpus, order=3, vocab_size=6)
    assert lm.perplexity(corpus) <= 5.0


def test_lm_errors_and_round_trip(tmp_path):
    """Test the empty corpus, bad tokens and the text format."""
    with pytest.raises(InputError):
        NgramLM.train([[]])
    with pytest.raises(ParameterError):
        NgramLM(0, 5)
    lm = NgramLM.train([[1, 2, 1], [2, 2]], order=2, vocab_size=3)
    with pytest.raises(InputError):
        lm.prob(0)
    path = tmp_path / "lm.txt"
    lm.save(path)
    loaded = NgramLM.load(path)
    assert loaded.counts == lm.counts
    assert loaded.prob(1, [2]) == lm.prob(1, [2])
    path.write_text("order=2 vocab_size=3 delta=0.1\n1 2 x\n")
    with pytest.raises(InputError, match="line 2"):
        NgramLM.load(path)


def test_vocab():
    """Test blank placement, encoding and validation."""
    vocab = Vocab(["a", "b"])
    assert vocab.tokens == [BLANK, "a", "b"]
    assert vocab.encode(["b", "a"]) == [2, 1]
    assert vocab.to_text([0, 2, 1]) == "b a"
    assert len(Vocab.toy(5)) == 5
    with pytest.raises(InputError):
        vocab.encode(["c"])
    with pytest.raises(InputError):
        vocab.encode([BLANK])
    with pytest.raises(ParameterError):
        Vocab(["a", "a"])
    with pytest.raises(ParameterError):
        Vocab([])
