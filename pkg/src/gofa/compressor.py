"""Decoder-only transformer layers processing text tokens plus trailing
memory slots.

Each input sequence is a node or edge text appended with K shared memory
tokens; causal attention lets the memory positions read the whole text, so
their final states compress the sentence into K fixed-size vectors. The
same layer machinery also powers the separate decoder stack that generates
target text from a memory prefix.

Sequences are grouped into length buckets; text tokens are left-padded so
memory slots always occupy the trailing K columns of a bucket. Padding
columns are masked out of attention and contribute exact zeros, so a
single-sequence call is arithmetically identical however it is routed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tokenizer
from .autodiff import Tensor, concat, gather_rows, rms_norm, softmax

log = logging.getLogger("gofa")

MASK_VALUE = -1e30

_BUCKET_STEPS = (0, 4, 8, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512)


@dataclass
class ModelConfig:
    vocab_size: int = tokenizer.VOCAB_SIZE
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 6
    memory_tokens: int = 4
    gnn_layers: tuple[int, ...] = (3, 4, 5)
    max_seq_len: int = 128
    ff_mult: int = 4
    rope_base: float = 10000.0
    init_std: float | None = None  # interior projections; default 1/sqrt(d_model)
    embed_std: float = 0.02  # kept small so untrained logits stay near-uniform
    precision: str = "float64"

    def __post_init__(self):
        self.gnn_layers = tuple(sorted(self.gnn_layers))
        if self.init_std is None:
            self.init_std = float(self.d_model) ** -0.5
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError("head dimension must be even for rotary positions")
        bad = [t for t in self.gnn_layers if not 1 <= t <= self.n_layers - 1]
        if bad:
            raise ValueError(
                f"gnn_layers {bad} outside [1, {self.n_layers - 1}]; "
                "first and last layers must be transformer layers"
            )
        if self.memory_tokens < 1:
            raise ValueError("memory_tokens must be >= 1")
        if self.max_seq_len <= self.memory_tokens:
            raise ValueError("max_seq_len must exceed memory_tokens")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "memory_tokens": self.memory_tokens,
            "gnn_layers": list(self.gnn_layers),
            "max_seq_len": self.max_seq_len,
            "ff_mult": self.ff_mult,
            "rope_base": self.rope_base,
            "init_std": self.init_std,
            "embed_std": self.embed_std,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["gnn_layers"] = tuple(obj.get("gnn_layers", ()))
        return cls(**obj)


class ParamStore:
    """Flat name -> Tensor registry; names must be unique."""

    def __init__(self, dtype=np.float64):
        self.params: dict[str, Tensor] = {}
        self.dtype = dtype

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def named(self) -> dict[str, Tensor]:
        return dict(self.params)


class TransformerStack:
    """Embedding plus n_layers of pre-norm attention/feed-forward blocks."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig, rng, with_final_norm: bool):
        d, ff = cfg.d_model, cfg.d_model * cfg.ff_mult
        self.cfg = cfg
        self.prefix = prefix
        self.embed = store.add(f"{prefix}.embed", rng.normal(0.0, cfg.embed_std, (cfg.vocab_size, d)))
        self.layers = []
        for i in range(cfg.n_layers):
            p = f"{prefix}.layers.{i}"
            self.layers.append(
                {
                    "attn_norm": store.add(f"{p}.attn_norm", np.ones(d)),
                    "wq": store.add(f"{p}.wq", rng.normal(0.0, cfg.init_std, (d, d))),
                    "wk": store.add(f"{p}.wk", rng.normal(0.0, cfg.init_std, (d, d))),
                    "wv": store.add(f"{p}.wv", rng.normal(0.0, cfg.init_std, (d, d))),
                    "wo": store.add(f"{p}.wo", rng.normal(0.0, cfg.init_std, (d, d))),
                    "ff_norm": store.add(f"{p}.ff_norm", np.ones(d)),
                    "ff1": store.add(f"{p}.ff1", rng.normal(0.0, cfg.init_std, (d, ff))),
                    "ff2": store.add(f"{p}.ff2", rng.normal(0.0, cfg.init_std, (ff, d))),
                }
            )
        self.final_norm = store.add(f"{prefix}.final_norm", np.ones(d)) if with_final_norm else None


def _rope_tables(n_pos: int, half: int, base: float, dtype) -> tuple[np.ndarray, np.ndarray]:
    inv = base ** (-np.arange(half, dtype=np.float64) * 2.0 / (2 * half))
    angles = np.arange(n_pos, dtype=np.float64)[:, None] * inv[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _apply_rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    # x: [S, H, L, dh]; cos/sin: [S, 1, L, dh/2] constants
    half = x.shape[-1] // 2
    a = x[..., :half]
    b = x[..., half:]
    cos_t = Tensor(cos, dtype=cos.dtype)
    sin_t = Tensor(sin, dtype=sin.dtype)
    return concat([a * cos_t - b * sin_t, b * cos_t + a * sin_t], axis=-1)


def layer_forward(x: Tensor, p: dict, cfg: ModelConfig, mask: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """One pre-norm transformer block over [S, L, d]."""
    s, seq_len, d = x.shape
    h, dh = cfg.n_heads, cfg.head_dim

    def heads(t: Tensor) -> Tensor:
        return t.reshape(s, seq_len, h, dh).transpose(0, 2, 1, 3)

    xn = rms_norm(x, p["attn_norm"])
    q = _apply_rope(heads(xn @ p["wq"]), cos, sin)
    k = _apply_rope(heads(xn @ p["wk"]), cos, sin)
    v = heads(xn @ p["wv"])
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh)) + Tensor(mask, dtype=mask.dtype)
    att = softmax(scores, axis=-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(s, seq_len, d)
    x = x + ctx @ p["wo"]
    xn2 = rms_norm(x, p["ff_norm"])
    return x + (xn2 @ p["ff1"]).silu() @ p["ff2"]


# -- sequence bucketing -------------------------------------------------------


def _bucket_len(n: int) -> int:
    for step in _BUCKET_STEPS:
        if n <= step:
            return step
    return n


@dataclass
class _Bucket:
    indices: list[int]
    ids: np.ndarray  # [Sb, Lb] left-padded token ids
    pos: np.ndarray  # [Sb, Lb + K] rotary position ids
    mask: np.ndarray  # [Sb, 1, L, L] additive attention mask
    text_len: int  # Lb


def _truncate_left(seq: list[int], limit: int, what: str) -> list[int]:
    if len(seq) > limit:
        log.warning("%s length %d exceeds %d tokens; truncating from the left", what, len(seq), limit)
        return seq[-limit:]
    return seq


def make_compress_buckets(sequences: list[list[int]], cfg: ModelConfig, dtype) -> list[_Bucket]:
    """Group sequences by padded text length; memory slots trail the text."""
    k = cfg.memory_tokens
    limit = cfg.max_seq_len - k
    groups: dict[int, list[int]] = {}
    seqs = [_truncate_left(list(s), limit, "node/edge text") for s in sequences]
    for i, s in enumerate(seqs):
        groups.setdefault(_bucket_len(len(s)), []).append(i)
    buckets = []
    for lb in sorted(groups):
        idxs = groups[lb]
        sb = len(idxs)
        total = lb + k
        ids = np.full((sb, lb), tokenizer.PAD_ID, dtype=np.int64)
        pos = np.zeros((sb, total), dtype=np.int64)
        mask = np.full((sb, total, total), MASK_VALUE, dtype=dtype)
        causal = np.tril(np.ones((total, total), dtype=bool))
        for row, i in enumerate(idxs):
            s = seqs[i]
            n = len(s)
            ids[row, lb - n :] = s
            pos[row, lb - n : lb] = np.arange(n)
            pos[row, lb:] = np.arange(n, n + k)
            real = np.zeros(total, dtype=bool)
            real[lb - n :] = True
            allowed = causal & real[None, :]
            mask[row][allowed] = 0.0
        buckets.append(_Bucket(idxs, ids, pos, mask[:, None, :, :], lb))
    return buckets


def make_decode_buckets(targets: list[list[int]], cfg: ModelConfig, dtype) -> list[_Bucket]:
    """Right-padded buckets for [K memory rows ; target tokens]."""
    k = cfg.memory_tokens
    limit = cfg.max_seq_len - k
    groups: dict[int, list[int]] = {}
    seqs = []
    for s in targets:
        s = list(s)
        if len(s) > limit:
            log.warning("target length %d exceeds %d tokens; truncating from the left", len(s), limit)
            s = s[-limit:]
        seqs.append(s)
    for i, s in enumerate(seqs):
        groups.setdefault(_bucket_len(max(len(s), 1)), []).append(i)
    buckets = []
    for lb in sorted(groups):
        idxs = groups[lb]
        sb = len(idxs)
        total = k + lb
        ids = np.full((sb, lb), tokenizer.PAD_ID, dtype=np.int64)
        pos = np.tile(np.arange(total, dtype=np.int64), (sb, 1))
        mask = np.full((sb, total, total), MASK_VALUE, dtype=dtype)
        causal = np.tril(np.ones((total, total), dtype=bool))
        for row, i in enumerate(idxs):
            s = seqs[i]
            ids[row, : len(s)] = s
            real = np.zeros(total, dtype=bool)
            real[: k + len(s)] = True
            allowed = causal & real[None, :]
            mask[row][allowed] = 0.0
        buckets.append(_Bucket(idxs, ids, pos, mask[:, None, :, :], lb))
    return buckets


def _bucket_consts(bucket: _Bucket, cfg: ModelConfig, dtype):
    half = cfg.head_dim // 2
    n_pos = int(bucket.pos.max()) + 1
    cos_tab, sin_tab = _rope_tables(n_pos, half, cfg.rope_base, dtype)
    cos = cos_tab[bucket.pos][:, None, :, :]
    sin = sin_tab[bucket.pos][:, None, :, :]
    return bucket.mask, cos, sin


def gather_in_order(per_bucket: list[Tensor], buckets: list[_Bucket]) -> Tensor:
    """Stack per-bucket rows back into original sequence order."""
    stacked = concat(per_bucket, axis=0) if len(per_bucket) > 1 else per_bucket[0]
    order = [i for b in buckets for i in b.indices]
    inverse = np.argsort(np.asarray(order, dtype=np.int64))
    return gather_rows(stacked, inverse)


class Compressor:
    """Runs the transformer stack over node/edge texts, yielding memory
    embeddings; an optional hook rewrites the memory states after the
    configured interleave layers (this is where graph message passing
    plugs in)."""

    def __init__(self, stack: TransformerStack, memory_embedding: Tensor):
        self.stack = stack
        self.memory = memory_embedding

    def run(self, sequences: list[list[int]], memory_hook=None) -> Tensor:
        """Compress token sequences to a [S, K, d] memory tensor.

        ``memory_hook(mems, layer_idx)`` may return a replacement [S, K, d]
        tensor after each layer listed in ``cfg.gnn_layers``.
        """
        cfg = self.stack.cfg
        k, d = cfg.memory_tokens, cfg.d_model
        dtype = cfg.dtype
        buckets = make_compress_buckets(sequences, cfg, dtype)
        consts = [_bucket_consts(b, cfg, dtype) for b in buckets]
        xs = []
        for b in buckets:
            sb, lb = b.ids.shape
            emb = gather_rows(self.stack.embed, b.ids.reshape(-1)).reshape(sb, lb, d)
            mem = self.memory.reshape(1, k, d).broadcast_to((sb, k, d))
            xs.append(concat([emb, mem], axis=1) if lb else mem)
        for t in range(1, cfg.n_layers + 1):
            layer = self.stack.layers[t - 1]
            xs = [layer_forward(x, layer, cfg, *c) for x, c in zip(xs, consts)]
            if memory_hook is not None and t in cfg.gnn_layers:
                mems = gather_in_order([x[:, -k:, :] for x in xs], buckets)
                new_mems = memory_hook(mems, t)
                if new_mems is not mems:
                    xs = [
                        concat([x[:, : b.text_len, :], gather_rows(new_mems, b.indices)], axis=1)
                        if b.text_len
                        else gather_rows(new_mems, b.indices)
                        for x, b in zip(xs, buckets)
                    ]
        return gather_in_order([x[:, -k:, :] for x in xs], buckets)


class Decoder:
    """Generates target text conditioned on a K-slot memory prefix."""

    def __init__(self, stack: TransformerStack):
        self.stack = stack
        if stack.final_norm is None:
            raise ValueError("decoder stack requires a final norm")

    def _forward_bucket(self, mem_rows: Tensor, bucket: _Bucket, cfg: ModelConfig):
        d = cfg.d_model
        dtype = cfg.dtype
        sb, lb = bucket.ids.shape
        emb = gather_rows(self.stack.embed, bucket.ids.reshape(-1)).reshape(sb, lb, d)
        x = concat([mem_rows, emb], axis=1) if lb else mem_rows
        mask, cos, sin = _bucket_consts(bucket, cfg, dtype)
        for layer in self.stack.layers:
            x = layer_forward(x, layer, cfg, mask, cos, sin)
        xn = rms_norm(x, self.stack.final_norm)
        return xn @ self.stack.embed.swapaxes(0, 1)

    def next_logits(self, memory: Tensor, prefix: list[int]) -> np.ndarray:
        """Logits for the next token given one memory block and generated ids."""
        cfg = self.stack.cfg
        bucket = make_decode_buckets([prefix], cfg, cfg.dtype)[0]
        logits = self._forward_bucket(memory.reshape(1, cfg.memory_tokens, cfg.d_model), bucket, cfg)
        pos = cfg.memory_tokens + min(len(prefix), cfg.max_seq_len - cfg.memory_tokens) - 1
        return logits.data[0, pos]
