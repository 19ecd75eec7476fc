"""SPECK32/64 key schedule and encryption.

All functions accept plain ints or numpy arrays of words and are pure, so
they can be called from any number of workers. Words are masked to 16 bits
explicitly, which makes the code independent of the array dtype (uint32 or
wider recommended so shifts cannot drop bits).
"""

from __future__ import annotations

WORD_SIZE = 16
MASK = (1 << WORD_SIZE) - 1
ALPHA = 7
BETA = 2
KEY_WORDS = 4
FULL_ROUNDS = 22


def rol(x, r):
    return ((x << r) | (x >> (WORD_SIZE - r))) & MASK


def ror(x, r):
    return ((x >> r) | (x << (WORD_SIZE - r))) & MASK


def enc_one_round(block, k):
    x, y = block
    x = ((ror(x, ALPHA) + y) & MASK) ^ k
    y = rol(y, BETA) ^ x
    return x, y


def key_schedule(key, rounds):
    """Expand a 4-word master key into `rounds` round keys.

    `key` is (w0, w1, w2, w3); w3 is the first round key and the remaining
    words feed the schedule in reverse order, per the SPECK definition.
    """
    if len(key) != KEY_WORDS:
        raise ValueError(f"SPECK32/64 master key has {KEY_WORDS} words, got {len(key)}")
    if rounds < 0:
        raise ValueError("round count must be >= 0")
    if rounds == 0:
        return []
    ks = [key[-1] & MASK]
    l = [w & MASK for w in reversed(key[:-1])]
    for i in range(rounds - 1):
        l[i % 3], nxt = enc_one_round((l[i % 3], ks[i]), i)
        ks.append(nxt)
    return ks


def encrypt(block, round_keys):
    """Apply one SPECK32 round per round key, in order. Zero keys: identity."""
    x, y = block
    x, y = x & MASK, y & MASK
    for k in round_keys:
        x, y = enc_one_round((x, y), k)
    return x, y
