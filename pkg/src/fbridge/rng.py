"""Counter-based random streams built on the Philox bit generator.

A stream is addressed by (seed, stream_id). Identical addresses reproduce
identical sequences; distinct stream ids give statistically independent
sequences, so parallel trajectory sampling stays reproducible regardless of
scheduling. The full generator state is JSON-serializable for checkpoints.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """Seedable, splittable random stream."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.Philox(key=[self.seed, self.stream_id])
        self._gen = np.random.Generator(self._bitgen)

    def split(self, stream_id: int) -> "RngStream":
        """Derive the independent stream (seed, stream_id)."""
        return RngStream(self.seed, stream_id)

    def substream(self, offset: int) -> "RngStream":
        """Derive the stream with id = own id + 1 + offset."""
        return RngStream(self.seed, self.stream_id + 1 + offset)

    # -- drawing ------------------------------------------------------------

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        return self._gen.normal(loc=loc, scale=scale, size=size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low=low, high=high, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace: bool = True):
        return self._gen.choice(n, size=size, replace=replace)

    # -- state --------------------------------------------------------------

    @property
    def counter(self) -> list[int]:
        return [int(c) for c in self._bitgen.state["state"]["counter"]]

    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "stream_id": self.stream_id,
            "counter": [int(c) for c in st["state"]["counter"]],
            "key": [int(k) for k in st["state"]["key"]],
            "buffer": [int(b) for b in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        rs = cls(state["seed"], state["stream_id"])
        rs._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        return rs

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
