"""Seeded random streams keyed by (seed, agent, iteration, purpose).

Every agent gets a private stream per iteration and purpose, so the order in
which agents are processed never changes what any one of them draws.
"""
from __future__ import annotations

import hashlib
import random
import struct


def derive_seed(seed: int, agent: int, iteration: int, purpose: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QqQ", seed & 0xFFFFFFFFFFFFFFFF, agent, iteration))
    h.update(purpose.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, agent: int, iteration: int, purpose: str) -> random.Random:
    return random.Random(derive_seed(seed, agent, iteration, purpose))
