"""Byte-level tokenizer: 256 byte values plus a few special ids.

Desk-scale stand-in for a subword vocabulary; any UTF-8 string round-trips
losslessly through encode/decode.
"""

from __future__ import annotations

N_BYTES = 256
PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
UNK_ID = 259

VOCAB_SIZE = 260


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids) -> str:
    return bytes(i for i in ids if 0 <= i < N_BYTES).decode("utf-8", errors="replace")
