"""Payload sources.

The counted test pattern is a PRBS-23 keyed by (src, dst, seq), so a
receiver can regenerate the exact transmitted bits from the header alone
and count bit errors without any side channel. File and synthetic-video
sources carry arbitrary bytes; links using them report frame errors from
the CRC instead of bit errors.
"""

from __future__ import annotations

import os
from typing import Protocol

import numpy as np
from numba import njit

PRBS_MASK = 0x7FFFFF  # 23-bit register, taps at bits 23 and 18


@njit(cache=True)
def _prbs_bytes(state: np.uint32, out: np.ndarray) -> np.uint32:
    s = np.uint32(state)
    for i in range(out.shape[0]):
        byte = np.uint32(0)
        for _ in range(8):
            newbit = ((s >> np.uint32(22)) ^ (s >> np.uint32(17))) & np.uint32(1)
            s = ((s << np.uint32(1)) | newbit) & np.uint32(PRBS_MASK)
            byte = (byte << np.uint32(1)) | newbit
        out[i] = byte
    return s


def prbs_state(src: int, dst: int, seq: int) -> int:
    """Nonzero 23-bit start state derived from the frame identity."""
    mix = (src * 0x9E3779B1 + dst * 0x85EBCA77 + seq * 0xC2B2AE3D + 0x1B873593) & 0xFFFFFFFF
    mix ^= mix >> 9
    state = mix & PRBS_MASK
    return state if state else 0x5A5A5A


def counted_payload(src: int, dst: int, seq: int, nbytes: int) -> bytes:
    """The test payload both ends can compute independently."""
    if nbytes < 0:
        raise ValueError("nbytes must be nonnegative")
    out = np.empty(nbytes, dtype=np.uint8)
    _prbs_bytes(np.uint32(prbs_state(src, dst, seq)), out)
    return out.tobytes()


class PayloadSource(Protocol):
    counted: bool

    def payload_for(self, src: int, dst: int, seq: int, nbytes: int) -> bytes: ...


class CountedSource:
    """PRBS-23 test pattern; enables exact bit-error counting."""

    counted = True

    def payload_for(self, src: int, dst: int, seq: int, nbytes: int) -> bytes:
        return counted_payload(src, dst, seq, nbytes)


class FileSource:
    """Cycles through a file's bytes, one contiguous slice per frame."""

    counted = False

    def __init__(self, path: str | os.PathLike):
        with open(path, "rb") as f:
            self._data = f.read()
        if not self._data:
            raise ValueError(f"payload file is empty: {path}")

    def payload_for(self, src: int, dst: int, seq: int, nbytes: int) -> bytes:
        n = len(self._data)
        start = (seq * nbytes) % n
        chunk = (self._data * (nbytes // n + 2))[start : start + nbytes]
        return chunk


class SyntheticVideoSource:
    """Deterministic stand-in for a camera feed: runs of near-constant
    blocks with bursts of high-entropy bytes, keyed per frame."""

    counted = False

    def __init__(self, seed: int = 0):
        self._seed = seed

    def payload_for(self, src: int, dst: int, seq: int, nbytes: int) -> bytes:
        rng = np.random.default_rng(
            np.random.SeedSequence(self._seed, spawn_key=(src, dst, seq))
        )
        out = np.empty(nbytes, dtype=np.uint8)
        pos = 0
        while pos < nbytes:
            run = int(rng.integers(16, 256))
            run = min(run, nbytes - pos)
            if rng.random() < 0.7:
                out[pos : pos + run] = rng.integers(0, 256)
            else:
                out[pos : pos + run] = rng.integers(0, 256, size=run)
            pos += run
        return out.tobytes()


SOURCES = {
    "PRBS23": CountedSource,
    "FILE": FileSource,
    "SYNTHETIC_VIDEO": SyntheticVideoSource,
}


def make_source(name: str, **kwargs) -> PayloadSource:
    if name not in SOURCES:
        raise ValueError(f"unknown payload source {name!r}; expected one of {sorted(SOURCES)}")
    return SOURCES[name](**kwargs)
