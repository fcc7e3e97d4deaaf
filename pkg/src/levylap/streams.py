"""Counter-based random streams.

A stream is identified by ``(seed, stream_id)`` and backed by a Philox
generator keyed on that pair, so a stream's draws never depend on what
other streams did or on which worker consumed them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RandomStream":
        """Stream for a sub-task, keyed by this stream and ``labels``."""
        return RandomStream(self.seed, derive_stream_id(self.seed, self.stream_id, *labels))


def derive_stream_id(seed: int, *labels) -> int:
    """Stable 64-bit id from a seed and arbitrary labels (task kind, index, ...)."""
    text = "\x1f".join([str(int(seed))] + [str(label) for label in labels])
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def task_stream(seed: int, kind: str, index: int) -> RandomStream:
    return RandomStream(seed, derive_stream_id(seed, kind, index))


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomStream, a Generator, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
