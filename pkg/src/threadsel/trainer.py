"""Training loop: in-batch negatives, Adamax, reduce-on-plateau decay,
periodic validation and early stopping on validation hits@1."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import numeric as nm
from .corpus import Dialogue, Tokenizer, augment, build_vocab, filter_unanswerable
from .dependency import DependencyForest, forest_for
from .encoder import EncoderConfig
from .evaluation import evaluate
from .extraction import MODES, ExtractionConfig
from .matching import batch_loss, batch_scores
from .model import ThreadEncoderModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    lr_decay: float = 0.4
    batch: int = 32
    eval_interval: float = 0.5  # epochs between validations
    patience: float = 1.5  # epochs without valid hits@1 gain before stopping
    max_threads: int = 4
    threshold: float = 0.2
    seed: int = 0
    mode: str = "dep-extr"
    max_epochs: int = 100
    min_lr: float = 1e-9
    augment: bool = False
    min_context: int = 1
    vocab_size: int = 30000
    min_freq: int = 1

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError("in-batch negatives require batch >= 2")
        if self.mode not in MODES:
            raise ValueError(f"unknown thread mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.eval_interval <= 0 or self.patience <= 0:
            raise ValueError("eval_interval and patience must be positive")
        if not 0.0 <= self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in [0, 1]")

    @property
    def patience_checkpoints(self) -> int:
        return max(1, round(self.patience / self.eval_interval))

    @property
    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(self.threshold, self.max_threads)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class CheckpointRecord:
    step: int
    epoch: float
    lr: float
    train_loss: float
    valid_hits1: float
    valid_mrr: float


@dataclass
class TrainReport:
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    best: int = -1
    stop_reason: str = ""

    @property
    def best_record(self) -> CheckpointRecord:
        return self.checkpoints[self.best]

    def to_dict(self) -> dict:
        return {
            "checkpoints": [asdict(c) for c in self.checkpoints],
            "best": self.best,
            "stop_reason": self.stop_reason,
        }

    def table(self) -> str:
        lines = [f"{'ckpt':>4}  {'step':>6}  {'epoch':>6}  {'lr':>10}  {'loss':>8}  {'hits@1':>7}  {'MRR':>7}"]
        for i, c in enumerate(self.checkpoints):
            mark = " *" if i == self.best else ""
            lines.append(
                f"{i:>4}  {c.step:>6}  {c.epoch:>6.2f}  {c.lr:>10.3g}  {c.train_loss:>8.4f}  "
                f"{c.valid_hits1:>7.3f}  {c.valid_mrr:>7.3f}{mark}"
            )
        return "\n".join(lines)


@dataclass
class _Example:
    threads: list[np.ndarray]
    response: np.ndarray


def prepare_examples(model: ThreadEncoderModel, dialogues: Sequence[Dialogue],
                     forests: dict[str, DependencyForest] | None, config: TrainConfig) -> list[_Example]:
    out = []
    for d in dialogues:
        threads = model.thread_inputs(d, forest_for(d, forests), config.mode, config.extraction)
        out.append(_Example(threads, model.candidate_input(d.response)))
    return out


def training_samples(dialogues: Sequence[Dialogue], config: TrainConfig) -> list[Dialogue]:
    labeled = filter_unanswerable(dialogues)
    if config.augment:
        labeled = labeled + augment(labeled, config.min_context)
    return labeled


def train_step(model: ThreadEncoderModel, batch: Sequence[_Example], optimizer: nm.Adamax) -> float:
    params = model.parameters()
    optimizer.zero_grad(params)
    ctx, mask = model.embed_contexts([ex.threads for ex in batch])
    resp = model.embed_candidates([ex.response for ex in batch])
    loss = batch_loss(batch_scores(ctx, resp, mask))
    loss.backward()
    optimizer.step(params)
    return loss.item()


def train(
    train_set: Sequence[Dialogue],
    valid_set: Sequence[Dialogue],
    config: TrainConfig = TrainConfig(),
    encoder_config: EncoderConfig = EncoderConfig(),
    forests: dict[str, DependencyForest] | None = None,
    valid_forests: dict[str, DependencyForest] | None = None,
    tokenizer: Tokenizer | None = None,
) -> tuple[ThreadEncoderModel, TrainReport]:
    """Train a thread-encoder model and return it at its best validation checkpoint.

    Without forests, dependency threads come from the chain fallback parser.
    """
    samples = training_samples(train_set, config)
    if len(samples) < 2:
        raise ValueError("need at least two labeled training samples")
    valid = filter_unanswerable(valid_set)
    if not valid:
        raise ValueError("validation set has no labeled dialogues")
    if tokenizer is None:
        tokenizer = build_vocab(train_set, config.vocab_size, config.min_freq)
    model = ThreadEncoderModel(encoder_config, tokenizer, seed=config.seed)
    examples = prepare_examples(model, samples, forests, config)

    rng = np.random.default_rng([config.seed, 1])
    optimizer = nm.Adamax(lr=config.lr)
    steps_per_epoch = math.ceil(len(examples) / config.batch)
    eval_every = max(1, round(config.eval_interval * steps_per_epoch))
    report = TrainReport()
    best_hits, best_state = -1.0, None
    stale = 0
    step = 0
    losses: list[float] = []
    started = time.perf_counter()

    def checkpoint() -> bool:
        nonlocal best_hits, best_state, stale
        m = evaluate(model, valid, valid_forests, config.mode, config.extraction, ks=(1,))
        rec = CheckpointRecord(step, step / steps_per_epoch, optimizer.lr,
                               float(np.mean(losses)) if losses else float("nan"), m.hits[1], m.mrr)
        report.checkpoints.append(rec)
        losses.clear()
        log.info("step %d epoch %.2f lr %.3g loss %.4f valid hits@1 %.3f mrr %.3f (%.0fs)",
                 rec.step, rec.epoch, rec.lr, rec.train_loss, rec.valid_hits1, rec.valid_mrr,
                 time.perf_counter() - started)
        if m.hits[1] > best_hits:
            best_hits, best_state, stale = m.hits[1], model.state_dict(), 0
            report.best = len(report.checkpoints) - 1
            return False
        stale += 1
        optimizer.lr *= config.lr_decay
        if optimizer.lr < config.min_lr:
            report.stop_reason = "learning rate reached zero"
            return True
        if stale >= config.patience_checkpoints:
            report.stop_reason = f"no valid hits@1 gain in {stale} checkpoints"
            return True
        return False

    stop = False
    for _epoch in range(config.max_epochs):
        perm = rng.permutation(len(examples))
        for start in range(0, len(perm), config.batch):
            batch = [examples[i] for i in perm[start:start + config.batch]]
            losses.append(train_step(model, batch, optimizer))
            step += 1
            if step % eval_every == 0 and checkpoint():
                stop = True
                break
        if stop:
            break
    if not stop:
        report.stop_reason = "max epochs reached"
        if step % eval_every:
            checkpoint()
    model.load_state_dict(best_state)
    return model, report
