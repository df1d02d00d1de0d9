"""The two-encoder retrieval model: thread encoder, candidate encoder and
optional code vectors, with batched context/candidate embedding."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import numeric as nm
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import Dialogue, Tokenizer
from .dependency import DependencyForest
from .encoder import (
    INIT_STD,
    EncoderConfig,
    TransformerEncoder,
    aggregate_average,
    aggregate_codes,
    pad_batch,
    prepare_candidate_input,
    prepare_thread_input,
)
from .extraction import ExtractionConfig, build_threads
from .matching import batch_scores
from .numeric import Parameter, Tensor

# cap on batch * T^2 per encoder call, bounds attention memory
ATTENTION_BUDGET = 1_500_000
MAX_BUCKET = 64


class ThreadEncoderModel:
    def __init__(self, config: EncoderConfig, tokenizer: Tokenizer, seed: int = 0,
                 init_std: float = INIT_STD):
        if config.vocab_size != len(tokenizer):
            config = replace(config, vocab_size=len(tokenizer))
        self.config = config
        self.tokenizer = tokenizer
        rng = np.random.default_rng(seed)
        self.thread_encoder = TransformerEncoder(config, rng, "t1", init_std)
        self.candidate_encoder = TransformerEncoder(config, rng, "t2", init_std)
        self.codes: Parameter | None = None
        if config.num_codes > 1:
            self.codes = Parameter("t1.codes", rng.normal(0.0, init_std, size=(config.num_codes, config.dim)))

    def parameters(self) -> dict[str, Parameter]:
        params = dict(self.thread_encoder.params)
        if self.codes is not None:
            params[self.codes.name] = self.codes
        params.update(self.candidate_encoder.params)
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) ^ set(state))
            raise ValueError(f"parameter names do not match: {missing[:5]}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data[...] = state[name]

    # -- inputs

    def thread_inputs(self, dialogue: Dialogue, forest: DependencyForest, mode: str,
                      extraction: ExtractionConfig) -> list[np.ndarray]:
        threads = build_threads(forest, mode, extraction)
        return [prepare_thread_input(t, dialogue, self.tokenizer) for t in threads.threads]

    def candidate_input(self, text: str) -> np.ndarray:
        return prepare_candidate_input(text, self.tokenizer)

    # -- embedding

    def _encode_all(self, encoder: TransformerEncoder, seqs: list[np.ndarray], pool) -> Tensor:
        """Encode variable-length sequences in length-sorted buckets and pool
        each; rows come back in input order."""
        order = sorted(range(len(seqs)), key=lambda i: (len(seqs[i]), i))
        outs = []
        start = 0
        while start < len(order):
            stop = start + 1
            while stop < len(order) and stop - start < MAX_BUCKET:
                T = len(seqs[order[stop]])
                if (stop - start + 1) * T * T > ATTENTION_BUDGET:
                    break
                stop += 1
            ids, mask = pad_batch([seqs[i] for i in order[start:stop]], self.tokenizer.pad_id)
            outs.append(pool(encoder.forward(ids, mask), mask))
            start = stop
        stacked = outs[0] if len(outs) == 1 else nm.concat(outs, axis=0)
        inverse = np.argsort(np.array(order))
        if np.array_equal(inverse, np.arange(len(order))):
            return stacked
        return stacked[inverse]

    def _pool_thread(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if self.codes is None:
            out = aggregate_average(x, mask)
            return nm.reshape(out, (out.shape[0], 1, out.shape[1]))
        return aggregate_codes(x, self.codes, mask)

    def embed_contexts(self, thread_inputs: list[list[np.ndarray]]) -> tuple[Tensor, np.ndarray]:
        """Context vectors for a batch of examples.

        Returns an (A, M*K, d) tensor and an (A, M*K) mask; examples with
        fewer than M threads are padded.
        """
        flat = [s for seqs in thread_inputs for s in seqs]
        if any(len(seqs) == 0 for seqs in thread_inputs):
            raise ValueError("every context needs at least one thread")
        enc = self._encode_all(self.thread_encoder, flat, self._pool_thread)  # (N, K, d)
        A = len(thread_inputs)
        M = max(len(seqs) for seqs in thread_inputs)
        K, d = enc.shape[1], enc.shape[2]
        index = np.zeros((A, M), dtype=np.int64)
        mask = np.zeros((A, M), dtype=bool)
        pos = 0
        for a, seqs in enumerate(thread_inputs):
            index[a, : len(seqs)] = np.arange(pos, pos + len(seqs))
            mask[a, : len(seqs)] = True
            pos += len(seqs)
        gathered = enc[index]  # (A, M, K, d)
        return nm.reshape(gathered, (A, M * K, d)), np.repeat(mask, K, axis=1)

    def embed_candidates(self, candidate_inputs: list[np.ndarray]) -> Tensor:
        return self._encode_all(self.candidate_encoder, candidate_inputs, aggregate_average)

    def score(self, thread_inputs: list[np.ndarray], candidate_inputs: list[np.ndarray]) -> np.ndarray:
        """Raw matching scores of one context against each candidate."""
        ctx, mask = self.embed_contexts([thread_inputs])
        cands = self.embed_candidates(candidate_inputs)
        return batch_scores(ctx, cands, mask).data[0]


def save_model(model: ThreadEncoderModel, path, extra: dict | None = None) -> None:
    meta = {"encoder": model.config.to_dict(), "tokenizer": model.tokenizer.to_dict()}
    if extra:
        meta.update(extra)
    save_checkpoint(model.state_dict(), path, meta)


def load_model(path) -> tuple[ThreadEncoderModel, dict]:
    """Rebuild a model from a checkpoint; returns it with the checkpoint metadata."""
    tensors, meta = load_checkpoint(path)
    try:
        config = EncoderConfig(**meta["encoder"])
        tokenizer = Tokenizer.from_dict(meta["tokenizer"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: incomplete metadata ({exc})") from exc
    model = ThreadEncoderModel(config, tokenizer)
    try:
        model.load_state_dict(tensors)
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return model, meta
