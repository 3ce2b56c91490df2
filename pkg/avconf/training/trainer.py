"""
Training loop.

Each step draws ``batch_size * accumulation`` utterance indices, runs forward and
backward one utterance at a time (gradients accumulate in the parameters), then takes
one Adam step on the averaged gradient with the Noam learning rate. Utterances are
never padded together; batch norm normalizes each utterance over its own frames.
The joint loss mixes the final CTC loss with the mean of the Inter-CTC losses.
"""

import json
import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from avconf.backend.config import ModelConfig
from avconf.backend.model import AVConformer, ModelOutput, check_mode
from avconf.core.errors import DivergenceError, InfeasibleAlignmentError, NumericalError
from avconf.core.rng import Rng
from avconf.core.serialization import Checkpoint
from avconf.core.tensor import Tensor, backward
from avconf.ctc.loss import ctc_loss, joint_loss
from avconf.noise.mixing import NoiseMixSpec, make_source, mix_noise
from avconf.training.optim import Adam, noam_lr
from avconf.training.swa import recalibrate_batch_norm, swa_average
from avconf.training.toy import ToyDataset, ToyTaskSpec, ToyUtterance, babble_pool

logger = logging.getLogger(__name__)

CHECKPOINT_PATTERN = "ckpt_{step:06d}.avck"


class TrainConfig(BaseModel):
    """Step budget, optimizer settings and data options of one training run."""

    model_config = ConfigDict(extra="forbid")

    steps: int = Field(3000, ge=0)
    batch_size: int = Field(4, ge=1)
    accumulation: int = Field(1, ge=1)
    warmup: int = Field(500, ge=1)
    peak_lr: float = Field(1e-3, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    weight_decay: float = 1e-6
    seed: int = 0
    threads: Optional[int] = Field(None, ge=1)
    mode: Optional[str] = None
    dataset_size: int = Field(2000, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    log_every: int = Field(50, ge=1)
    swa_last: int = Field(0, ge=0)
    swa_passes: int = Field(32, ge=1)
    noise_source: Literal["white", "babble", "file"] = "babble"
    noise_path: Optional[str] = None
    noise_snr_range: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _check_range(self) -> "TrainConfig":
        if self.noise_snr_range is not None and self.noise_snr_range[0] > self.noise_snr_range[1]:
            raise ValueError(f"noise_snr_range {self.noise_snr_range} is not increasing")
        if self.noise_source == "file" and self.noise_path is None:
            raise ValueError("noise_source = file needs noise_path")
        return self


class UtteranceLoss:
    """Joint loss tensor and its parts as floats."""

    def __init__(self, total: Tensor, final: float, inters: Dict[str, float]):
        self.total = total
        self.final = final
        self.inters = inters


def utterance_loss(
    output: ModelOutput, labels: List[int], interctc_weight: float
) -> UtteranceLoss:
    """
    Final and Inter-CTC losses of one model output.

    Raises:
        InfeasibleAlignmentError: the output is too short for ``labels``
    """
    final = ctc_loss(output.log_probs, labels)
    inters = {tag: ctc_loss(log_z, labels) for tag, log_z in output.inters}
    total = joint_loss(final, list(inters.values()), interctc_weight)
    return UtteranceLoss(total, final.item(), {tag: loss.item() for tag, loss in inters.items()})


def noisy(
    utterance: ToyUtterance, spec: Optional[NoiseMixSpec], rng: Rng, pool=None
) -> ToyUtterance:
    """
    The utterance with noise mixed into its audio (unchanged when ``spec`` is None).

    Raises:
        InputError: babble noise without a pool, or file noise without a readable path
    """
    if spec is None or spec.snr_db == math.inf:
        return utterance
    source = make_source(spec, pool)
    mixed = mix_noise(utterance.waveform, spec, rng, source)
    return ToyUtterance(mixed.waveform, utterance.clip, utterance.labels)


def model_checkpoint(
    model: AVConformer, optimizer: Optional[Adam], step: int, threads: Optional[int]
):
    tensors = model.state_dict()
    metadata = {"config_hash": model.config.config_hash(), "step": step, "thread_count": threads}
    if optimizer is not None:
        tensors.update(optimizer.state.tensors())
        metadata["optimizer"] = optimizer.hyper_parameters()
    return Checkpoint(tensors, metadata)


def load_model(config: ModelConfig, checkpoint: Union[str, Path, Checkpoint]) -> AVConformer:
    """
    Build a model and copy a checkpoint's parameters and buffers into it.

    Raises:
        ManifestMismatchError: the checkpoint does not fit the configuration
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    model = AVConformer(config, Rng(0))
    state = {n: (k, a) for n, (k, a) in checkpoint.tensors.items() if k != "optim"}
    model.load_state_dict(state)
    return model.eval()


class TrainResult:
    """Checkpoint paths, the final checkpoint and the metrics log location."""

    def __init__(self, checkpoints: List[Path], final: Checkpoint, metrics_path: Path):
        self.checkpoints = checkpoints
        self.final = final
        self.metrics_path = metrics_path
        self.swa: Optional[Path] = None

    def to_dict(self) -> Dict:
        return {
            "checkpoints": [str(p) for p in self.checkpoints],
            "metrics": str(self.metrics_path),
            "swa": str(self.swa) if self.swa else None,
            "step": self.final.metadata.get("step"),
        }


class Trainer:
    """Runs a ``TrainConfig`` on the toy task and writes checkpoints and metrics."""

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        task: ToyTaskSpec,
        out_dir: Union[str, Path],
    ):
        self.model_config = model_config
        self.config = train_config
        self.task = task
        self.out_dir = Path(out_dir)
        rng = Rng(train_config.seed)
        self.model = AVConformer(model_config, rng.spawn("init"))
        self.mode = train_config.mode or self.model.modes[0]
        check_mode(self.model.kind, self.mode)
        self.optimizer = Adam(
            list(self.model.named_parameters()),
            train_config.betas,
            train_config.eps,
            train_config.weight_decay,
        )
        self.data_rng = rng.spawn("data")
        self.augment_rng = rng.spawn("augment")
        self.noise_rng = rng.spawn("noise")
        self.dataset = ToyDataset(task, "train", train_config.dataset_size)
        self.pool = None
        if train_config.noise_snr_range and train_config.noise_source == "babble":
            self.pool = babble_pool(task)

    def _sample_noise(self) -> Optional[NoiseMixSpec]:
        cfg = self.config
        if cfg.noise_snr_range is None:
            return None
        low, high = cfg.noise_snr_range
        snr = float(self.noise_rng.uniform(low, high))
        return NoiseMixSpec(source=cfg.noise_source, snr_db=snr, path=cfg.noise_path)

    def _forward(self, utterance: ToyUtterance, rng: Optional[Rng]) -> ModelOutput:
        return self.model.encode(utterance.waveform, utterance.clip, self.mode, rng)

    def train_step(self, step: int) -> Dict:
        """One optimizer step over ``batch_size * accumulation`` utterances."""
        cfg = self.config
        self.model.train()
        self.optimizer.zero_grad()
        count = cfg.batch_size * cfg.accumulation
        indices = self.data_rng.integers(0, cfg.dataset_size - 1, (count,))
        total = 0.0
        used = 0
        inters: Dict[str, float] = {}
        for index in indices:
            utterance = noisy(
                self.dataset.utterance(int(index)), self._sample_noise(), self.noise_rng, self.pool
            )
            try:
                output = self._forward(utterance, self.augment_rng)
                loss = utterance_loss(output, utterance.labels, self.model_config.interctc_weight)
            except NumericalError as e:
                raise DivergenceError(step, math.nan) from e
            except InfeasibleAlignmentError as e:
                logger.warning("skipped utterance index=%d reason=%s", index, e)
                continue
            backward(loss.total)
            total += loss.total.item()
            used += 1
            for tag, value in loss.inters.items():
                inters[tag] = inters.get(tag, 0.0) + value
        lr = noam_lr(step, cfg.warmup, cfg.peak_lr)
        if used == 0:
            return {"step": step, "lr": lr, "loss": None, "inter": {}, "skipped": count}
        mean_loss = total / used
        if not math.isfinite(mean_loss):
            raise DivergenceError(step, mean_loss)
        self.optimizer.step(lr, scale=1.0 / used)
        return {
            "step": step,
            "lr": lr,
            "loss": mean_loss,
            "inter": {tag: value / used for tag, value in sorted(inters.items())},
            "skipped": count - used,
        }

    def _save(self, step: int) -> Path:
        path = self.out_dir / CHECKPOINT_PATTERN.format(step=step)
        model_checkpoint(self.model, self.optimizer, step, self.config.threads).save(path)
        return path

    def run(self) -> TrainResult:
        """
        Train for ``steps`` steps.

        Checkpoints are written every ``checkpoint_every`` steps and after the last step
        (after step 0 when ``steps == 0``).

        Raises:
            DivergenceError: the loss became NaN or infinite
        """
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.out_dir / "metrics.jsonl"
        metrics_path.write_text("")
        checkpoints: List[Path] = []
        start = time.perf_counter()
        logger.info(
            "training mode=%s steps=%d params=%d",
            self.mode,
            cfg.steps,
            self.model.num_parameters(),
        )
        with metrics_path.open("a") as log:
            for step in range(1, cfg.steps + 1):
                record = self.train_step(step)
                record["wall_time"] = round(time.perf_counter() - start, 3)
                log.write(json.dumps(record, sort_keys=True) + "\n")
                if step % cfg.log_every == 0 or step == cfg.steps:
                    logger.info("step=%d loss=%s lr=%.2e", step, record["loss"], record["lr"])
                if step % cfg.checkpoint_every == 0 and step != cfg.steps:
                    checkpoints.append(self._save(step))
        checkpoints.append(self._save(cfg.steps))
        final = Checkpoint.load(checkpoints[-1])
        result = TrainResult(checkpoints, final, metrics_path)
        if cfg.swa_last > 0:
            result.swa = self.average(checkpoints[-cfg.swa_last :])
        return result

    def average(self, paths: List[Path]) -> Path:
        """Average checkpoints, recalibrate batch norm on training data and save ``swa.avck``."""
        averaged = swa_average([Checkpoint.load(p) for p in paths])
        model = load_model(self.model_config, averaged)
        utterances = self.dataset.batch(range(self.config.swa_passes))
        passes = [
            lambda u=u: model.forward(_mel(model, u), _frames(model, u), self.mode)
            for u in utterances
        ]
        recalibrate_batch_norm(model, passes)
        path = self.out_dir / "swa.avck"
        step = int(averaged.metadata.get("step", 0))
        checkpoint = model_checkpoint(model, None, step, self.config.threads)
        checkpoint.metadata["swa_count"] = averaged.metadata["swa_count"]
        checkpoint.save(path)
        return path


def _mel(model: AVConformer, utterance: ToyUtterance):
    if not hasattr(model, "audio_frontend"):
        return None
    return model.audio_frontend.featurize(utterance.waveform)


def _frames(model: AVConformer, utterance: ToyUtterance):
    if not hasattr(model, "video_frontend"):
        return None
    return model.video_frontend.featurize(utterance.clip)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    task: ToyTaskSpec,
    out_dir: Union[str, Path],
) -> TrainResult:
    return Trainer(model_config, train_config, task, out_dir).run()

