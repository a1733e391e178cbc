"""Deterministic seed derivation for every random stream in a run.

All randomness flows from one master seed. A child stream is named by a
path of segments and its seed is derived by a counter-free hash, so any
implementation that follows the same recipe reproduces the same 64-bit
seeds:

    text  = "{master}/{seg0}/{seg1}/..."       (segments as decimal/ASCII)
    child = big-endian integer of the first 8 bytes of SHA-256(text)

The child integer seeds a numpy PCG64 generator. Paths used by the
simulator are listed in the README config reference.
"""
from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master: int, *path: int | str) -> int:
    """Derive the 64-bit seed for the stream named by ``path``."""
    text = "/".join([str(int(master))] + [str(p) for p in path])
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(master: int, *path: int | str) -> np.random.Generator:
    """A fresh PCG64 generator for the stream named by ``path``."""
    return np.random.Generator(np.random.PCG64(child_seed(master, *path)))
