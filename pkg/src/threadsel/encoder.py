"""BERT-style post-norm transformer encoder and the pooling aggregators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .corpus import Dialogue, Tokenizer, truncate_candidate, truncate_thread
from .numeric import Parameter, Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int = 256
    max_len: int = 362
    vocab_size: int = 30000
    num_codes: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.max_len < 362:
            raise ValueError("max_len must be >= 362 to hold a truncated thread and two [S] tokens")
        if self.num_codes < 1:
            raise ValueError("num_codes must be >= 1")
        if self.dropout != 0.0:
            raise ValueError("dropout is not supported")

    @property
    def aggregator(self) -> str:
        return "average" if self.num_codes == 1 else "codes"

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": dict(layers=2, heads=4, dim=64, ffn_dim=256, max_len=362),
    "paper-scale": dict(layers=12, heads=12, dim=768, ffn_dim=3072, max_len=512),
    # tiny shape used by gradient checks
    "toy": dict(layers=1, heads=2, dim=8, ffn_dim=16, max_len=362),
}


class TransformerEncoder:
    """Token + position embeddings followed by ``layers`` post-norm blocks."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, prefix: str = "enc",
                 init_std: float = INIT_STD):
        self.config = config
        self.prefix = prefix
        d, f = config.dim, config.ffn_dim
        self.params: dict[str, Parameter] = {}

        def normal(name, *shape):
            self._add(name, rng.normal(0.0, init_std, size=shape))

        normal("tok_emb", config.vocab_size, d)
        normal("pos_emb", config.max_len, d)
        for i in range(config.layers):
            normal(f"l{i}.w_q", d, d)
            normal(f"l{i}.w_k", d, d)
            normal(f"l{i}.w_v", d, d)
            # no key bias: it shifts every attention logit in a row equally
            self._add(f"l{i}.b_q", np.zeros(d))
            self._add(f"l{i}.b_v", np.zeros(d))
            normal(f"l{i}.w_o", d, d)
            self._add(f"l{i}.b_o", np.zeros(d))
            self._add(f"l{i}.ln1_g", np.ones(d))
            self._add(f"l{i}.ln1_b", np.zeros(d))
            normal(f"l{i}.w_1", d, f)
            self._add(f"l{i}.b_1", np.zeros(f))
            normal(f"l{i}.w_2", f, d)
            self._add(f"l{i}.b_2", np.zeros(d))
            self._add(f"l{i}.ln2_g", np.ones(d))
            self._add(f"l{i}.ln2_b", np.zeros(d))

    def _add(self, name: str, value: np.ndarray) -> None:
        full = f"{self.prefix}.{name}"
        self.params[full] = Parameter(full, value)

    def p(self, name: str) -> Parameter:
        return self.params[f"{self.prefix}.{name}"]

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Encode a padded batch ``ids`` of shape (B, T); ``mask`` marks real tokens."""
        cfg = self.config
        B, T = ids.shape
        if T > cfg.max_len:
            raise ValueError(f"input length {T} exceeds max_len {cfg.max_len}; truncate first")
        h, dk = cfg.heads, cfg.dim // cfg.heads
        key_mask = mask[:, None, None, :]
        x = nm.embedding(self.p("tok_emb"), ids) + self.p("pos_emb")[:T]
        for i in range(cfg.layers):

            def heads(t):
                return nm.transpose(nm.reshape(t, (B, T, h, dk)), (0, 2, 1, 3))

            q = heads(nm.scale(nm.matmul(x, self.p(f"l{i}.w_q")) + self.p(f"l{i}.b_q"), 1.0 / math.sqrt(dk)))
            k_t = nm.transpose(nm.reshape(nm.matmul(x, self.p(f"l{i}.w_k")), (B, T, h, dk)), (0, 2, 3, 1))
            v = heads(nm.matmul(x, self.p(f"l{i}.w_v")) + self.p(f"l{i}.b_v"))
            att = nm.softmax(nm.matmul(q, k_t), mask=key_mask)
            ctx = nm.reshape(nm.transpose(nm.matmul(att, v), (0, 2, 1, 3)), (B, T, cfg.dim))
            out = nm.matmul(ctx, self.p(f"l{i}.w_o")) + self.p(f"l{i}.b_o")
            x = nm.layer_norm(x + out) * self.p(f"l{i}.ln1_g") + self.p(f"l{i}.ln1_b")
            ff = nm.gelu(nm.matmul(x, self.p(f"l{i}.w_1")) + self.p(f"l{i}.b_1"))
            ff = nm.matmul(ff, self.p(f"l{i}.w_2")) + self.p(f"l{i}.b_2")
            x = nm.layer_norm(x + ff) * self.p(f"l{i}.ln2_g") + self.p(f"l{i}.ln2_b")
        return x

    def encode(self, ids) -> Tensor:
        """Encode one sequence; returns a (T, dim) tensor."""
        ids = np.asarray(ids, dtype=np.int64)
        out = self.forward(ids[None, :], np.ones((1, len(ids)), dtype=bool))
        return nm.reshape(out, (len(ids), self.config.dim))


def pad_batch(seqs, pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def _as_batch(vectors, mask):
    x = nm.as_tensor(vectors)
    single = x.ndim == 2
    if single:
        x = nm.reshape(x, (1,) + x.shape)
    if x.shape[1] == 0:
        raise ValueError("cannot aggregate an empty matrix")
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    return x, np.asarray(mask, dtype=bool), single


def aggregate_average(vectors, mask: np.ndarray | None = None) -> Tensor:
    """Mean over rows: (T, d) -> (d,), or (B, T, d) -> (B, d) over unmasked rows."""
    x, mask, single = _as_batch(vectors, mask)
    weights = mask / mask.sum(axis=1, keepdims=True)
    # same weighted-sum arithmetic as aggregate_codes, so a zero code reproduces it bit for bit
    out = nm.reshape(nm.matmul(nm.Tensor(weights[:, None, :]), x), (x.shape[0], x.shape[2]))
    return nm.reshape(out, (x.shape[2],)) if single else out


def aggregate_codes(vectors, codes, mask: np.ndarray | None = None, return_weights: bool = False):
    """Attend over rows once per code vector: (T, d) -> (K, d), or batched (B, T, d) -> (B, K, d)."""
    x, mask, single = _as_batch(vectors, mask)
    codes = nm.as_tensor(codes)
    if codes.ndim != 2 or codes.shape[1] != x.shape[2]:
        raise nm.ShapeError(f"aggregate_codes: incompatible shapes {x.shape} and {codes.shape}")
    scores = nm.transpose(nm.matmul(x, nm.transpose(codes)), (0, 2, 1))
    w = nm.softmax(scores, mask=mask[:, None, :])
    out = nm.matmul(w, x)
    if single:
        out = nm.reshape(out, out.shape[1:])
        w = nm.reshape(w, w.shape[1:])
    return (out, w) if return_weights else out


def prepare_thread_input(thread, dialogue: Dialogue, tokenizer: Tokenizer, limit: int = 360) -> np.ndarray:
    """``[S]`` + thread turns newest-first + ``[S]``.

    The token budget keeps the ``limit`` tokens nearest the response, then
    the surviving turns are laid out in reverse chronological order.
    """
    pieces = [tokenizer.encode(dialogue.turns[i - 1].text) for i in thread]
    lengths = [len(p) for p in pieces]
    flat = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    kept = truncate_thread(flat, limit)
    drop = len(flat) - len(kept)
    turns = []
    pos = 0
    for n_tok in lengths:
        lo, hi = max(pos, drop), pos + n_tok
        if hi > lo:
            turns.append(flat[lo:hi])
        pos += n_tok
    body = np.concatenate(turns[::-1]) if turns else np.zeros(0, dtype=np.int64)
    sep = np.array([tokenizer.sep_id], dtype=np.int64)
    return np.concatenate([sep, body, sep])


def prepare_candidate_input(text: str, tokenizer: Tokenizer) -> np.ndarray:
    sep = np.array([tokenizer.sep_id], dtype=np.int64)
    return np.concatenate([sep, truncate_candidate(tokenizer.encode(text)), sep])


def embed_candidate(encoder: TransformerEncoder, text: str, tokenizer: Tokenizer) -> np.ndarray:
    """Candidate vector: encode with the candidate encoder, then average."""
    return aggregate_average(encoder.encode(prepare_candidate_input(text, tokenizer))).data
