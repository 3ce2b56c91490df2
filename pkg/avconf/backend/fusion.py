"""Early audio-visual fusion."""

from typing import Tuple

from avconf.core import ops
from avconf.core.errors import InputError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import Linear
from avconf.nn.module import Module

ALIGNMENT_TOLERANCE = 2


def align(
    audio: Tensor, video: Tensor, tolerance: int = ALIGNMENT_TOLERANCE
) -> Tuple[Tensor, Tensor]:
    """
    Truncate both streams to the shorter length.

    The two downsampling chains can disagree by a frame (126 audio vs 125 video frames
    for 10 s of input).

    Raises:
        InputError: lengths differ by more than ``tolerance`` frames
    """
    n_a, n_v = audio.shape[0], video.shape[0]
    if abs(n_a - n_v) > tolerance:
        raise InputError(
            f"audio ({n_a}) and video ({n_v}) frame counts differ by more than {tolerance}"
        )
    n = min(n_a, n_v)
    if n_a > n:
        audio = audio[:n]
    if n_v > n:
        video = video[:n]
    return audio, video


class Fusion(Module):
    """Concatenate -> linear 2d->e*d -> swish -> linear e*d->d."""

    def __init__(self, d: int, rng: Rng, expansion: int = 4):
        super().__init__()
        self.expand = Linear(2 * d, expansion * d, rng.spawn("expand"))
        self.project = Linear(expansion * d, d, rng.spawn("project"))

    def forward(self, audio: Tensor, video: Tensor) -> Tensor:
        if audio.shape[0] != video.shape[0]:
            raise InputError(
                f"fusion needs equal lengths, got audio {audio.shape} and video {video.shape}"
            )
        joint = ops.concat([audio, video], axis=1)
        return self.project(ops.swish(self.expand(joint)))
