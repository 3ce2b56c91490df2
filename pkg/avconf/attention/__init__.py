"""Self-attention variants and their closed-form cost."""

from avconf.attention.complexity import FLOP_CONVENTION, attention_flops
from avconf.attention.mhsa import MultiHeadSelfAttention, rel_scores, sinusoidal_encoding

__all__ = [
    "FLOP_CONVENTION",
    "MultiHeadSelfAttention",
    "attention_flops",
    "rel_scores",
    "sinusoidal_encoding",
]
