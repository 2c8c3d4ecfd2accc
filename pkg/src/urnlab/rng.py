"""Reproducible per-replica random streams.

Each replica gets its own Philox-4x64 counter-based generator whose 128-bit
key is the BLAKE2b-128 digest of ``(master_seed, replica_index)``.  Streams
therefore never depend on how many replicas exist or in which order they run.
Uniforms are ``(raw >> 11) * 2**-53`` of the raw 64-bit outputs, i.e. doubles
on the grid ``k / 2**53`` in ``[0, 1)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"urnlab/rng/v1"
_MASK64 = (1 << 64) - 1


def derive_key(master_seed: int, replica_index: int) -> int:
    """128-bit Philox key for one replica."""
    if not 0 <= master_seed <= _MASK64:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    if not 0 <= replica_index <= _MASK64:
        raise ValueError(f"replica_index out of range: {replica_index}")
    h = hashlib.blake2b(digest_size=16)
    h.update(_DOMAIN)
    h.update(master_seed.to_bytes(8, "little"))
    h.update(replica_index.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Uniform variates for replica ``replica_index`` of run ``master_seed``."""

    def __init__(self, master_seed: int, replica_index: int = 0):
        self.master_seed = int(master_seed)
        self.replica_index = int(replica_index)
        self._bitgen = np.random.Philox(key=derive_key(self.master_seed, self.replica_index))
        self.consumed = 0

    def raw(self, size: int) -> np.ndarray:
        out = self._bitgen.random_raw(size)
        self.consumed += size
        return out

    def uniforms(self, size: int) -> np.ndarray:
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def __repr__(self):
        return (
            f"RngStream(master_seed={self.master_seed}, "
            f"replica_index={self.replica_index}, consumed={self.consumed})"
        )


def sub_seed(master_seed: int, label: str) -> int:
    """Independent 64-bit seed for a named sub-experiment of one run."""
    h = hashlib.blake2b(digest_size=8)
    h.update(_DOMAIN + b"/sub")
    h.update(int(master_seed).to_bytes(8, "little"))
    h.update(label.encode())
    return int.from_bytes(h.digest(), "little")
