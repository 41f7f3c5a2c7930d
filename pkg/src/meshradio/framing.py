"""Frame format: preamble, training, header, payload segmentation, CRCs.

The over-the-air frame is a fixed sequence of symbol-level sections:

    preamble | training_a | training_b | header | body

where the body interleaves payload symbols with periodic pilots and ends
with a 32-bit payload CRC (and one pad pilot when needed to keep the body
length even). The 16-byte header is always QPSK and protected by its own
CRC-16. Multi-byte header fields are little-endian; bytes map to bits
most-significant-bit first.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .dsp import golay_pair

HEADER_VERSION = 1
HEADER_BYTES = 16
HEADER_CRC_SPAN = 11  # bytes covered by the header CRC-16
PREAMBLE_CHIPS = 512  # 64 bytes of BPSK chips
TRAINING_SYMBOLS = 64  # per transmit antenna
HEADER_SYMBOLS = 64  # 16 bytes at QPSK
CRC_BYTES = 4
MAX_PAYLOAD_BYTES = 8192
DEFAULT_PAYLOAD_BYTES = 4992
PILOT_PERIOD = 32  # payload symbols between pilots
TRAINING_SEED = 0x54524E
PILOT_SYMBOL = complex(1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))

FLAG_SINGLE_TX = 0x01  # diversity: set for single-antenna transmit
FLAG_COUNTED_PAYLOAD = 0x02  # payload is a reconstructible test pattern


class Modulation(IntEnum):
    QPSK = 1
    QAM16 = 2

    @property
    def bits_per_symbol(self) -> int:
        return {Modulation.QPSK: 2, Modulation.QAM16: 4}[self]


class DiversityMode(IntEnum):
    ALAMOUTI = 0
    SINGLE_TX_MRC = 1


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    """CRC-16 with polynomial 0x1021, nonzero init, no reflection."""
    crc = init
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def crc32(data: bytes) -> int:
    """Standard reflected CRC-32 (polynomial 0x04C11DB7)."""
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class FrameLayout:
    """Fixed symbol-level frame structure. Defaults match the radio."""

    preamble_chips: int = PREAMBLE_CHIPS
    training_symbols: int = TRAINING_SYMBOLS
    header_symbols: int = HEADER_SYMBOLS
    pilot_period: int = PILOT_PERIOD
    max_payload_bytes: int = MAX_PAYLOAD_BYTES

    @property
    def body_offset(self) -> int:
        return (
            self.preamble_chips
            + 2 * self.training_symbols
            + self.header_symbols
        )

    def training_a_slice(self) -> slice:
        start = self.preamble_chips
        return slice(start, start + self.training_symbols)

    def training_b_slice(self) -> slice:
        start = self.preamble_chips + self.training_symbols
        return slice(start, start + self.training_symbols)

    def header_slice(self) -> slice:
        start = self.preamble_chips + 2 * self.training_symbols
        return slice(start, start + self.header_symbols)


@dataclass(frozen=True)
class FrameGeometry:
    """Symbol counts and pilot placement for one frame's body."""

    payload_bytes: int
    modulation: Modulation
    n_payload_symbols: int
    n_pilots: int
    n_crc_symbols: int
    n_pad: int
    body_symbols: int
    frame_symbols: int
    pilot_positions: np.ndarray  # body-relative indices, pads included
    payload_positions: np.ndarray  # body-relative indices of payload symbols
    crc_positions: np.ndarray


def frame_geometry(
    payload_bytes: int, modulation: Modulation, layout: FrameLayout | None = None
) -> FrameGeometry:
    """Work out the body composition for a payload size and modulation.

    The body is payload symbols with a pilot after every full
    ``pilot_period`` group, then the payload CRC, then one pad pilot if
    required to make the body length even (space-time pairing needs it).
    """
    layout = layout or FrameLayout()
    if not 0 <= payload_bytes <= layout.max_payload_bytes:
        raise ValueError(
            f"payload_bytes must be in [0, {layout.max_payload_bytes}], got {payload_bytes}"
        )
    bps = modulation.bits_per_symbol
    n_payload = payload_bytes * 8 // bps
    n_pilots = n_payload // layout.pilot_period
    n_crc = CRC_BYTES * 8 // bps
    total = n_payload + n_pilots + n_crc
    n_pad = total % 2
    body = total + n_pad

    pilot_pos = []
    payload_pos = []
    pos = 0
    for k in range(n_payload):
        payload_pos.append(pos)
        pos += 1
        if (k + 1) % layout.pilot_period == 0:
            pilot_pos.append(pos)
            pos += 1
    crc_pos = np.arange(pos, pos + n_crc)
    pos += n_crc
    if n_pad:
        pilot_pos.append(pos)
        pos += 1
    assert pos == body

    return FrameGeometry(
        payload_bytes=payload_bytes,
        modulation=modulation,
        n_payload_symbols=n_payload,
        n_pilots=n_pilots + n_pad,
        n_crc_symbols=n_crc,
        n_pad=n_pad,
        body_symbols=body,
        frame_symbols=layout.body_offset + body,
        pilot_positions=np.asarray(pilot_pos, dtype=np.int64),
        payload_positions=np.asarray(payload_pos, dtype=np.int64),
        crc_positions=crc_pos,
    )


@dataclass(frozen=True)
class FrameDescriptor:
    """Addressing and format information carried in the frame header."""

    src: int
    dst: int
    seq: int
    payload_bytes: int
    modulation: Modulation = Modulation.QAM16
    diversity: DiversityMode = DiversityMode.ALAMOUTI
    counted_payload: bool = True

    def flags(self) -> int:
        f = 0
        if self.diversity == DiversityMode.SINGLE_TX_MRC:
            f |= FLAG_SINGLE_TX
        if self.counted_payload:
            f |= FLAG_COUNTED_PAYLOAD
        return f


@dataclass(frozen=True)
class HeaderInfo:
    """Decoded header fields plus the CRC verdict."""

    version: int
    src: int
    dst: int
    seq: int
    payload_bytes: int
    modulation: Modulation | None
    diversity: DiversityMode
    counted_payload: bool
    crc_ok: bool


def encode_header(desc: FrameDescriptor) -> bytes:
    """Pack the 16-byte header: fields, CRC-16, zero padding."""
    if not 0 <= desc.src <= 255 or not 0 <= desc.dst <= 255:
        raise ValueError("src and dst must fit one byte")
    if not 0 <= desc.seq < 2**32:
        raise ValueError("seq must fit 32 bits")
    if not 0 <= desc.payload_bytes <= 0xFFFF:
        raise ValueError("payload_bytes must fit 16 bits")
    head = struct.pack(
        "<BBBIHBB",
        HEADER_VERSION,
        desc.src,
        desc.dst,
        desc.seq,
        desc.payload_bytes,
        int(desc.modulation),
        desc.flags(),
    )
    assert len(head) == HEADER_CRC_SPAN
    crc = crc16_ccitt(head)
    return head + struct.pack("<H", crc) + b"\x00\x00\x00"


def decode_header(raw: bytes) -> HeaderInfo:
    """Unpack and CRC-check a 16-byte header."""
    if len(raw) != HEADER_BYTES:
        raise ValueError(f"header must be {HEADER_BYTES} bytes, got {len(raw)}")
    version, src, dst, seq, payload_bytes, mod_byte, flags = struct.unpack(
        "<BBBIHBB", raw[:HEADER_CRC_SPAN]
    )
    (crc_rx,) = struct.unpack("<H", raw[HEADER_CRC_SPAN : HEADER_CRC_SPAN + 2])
    crc_ok = crc_rx == crc16_ccitt(raw[:HEADER_CRC_SPAN]) and version == HEADER_VERSION
    try:
        modulation = Modulation(mod_byte)
    except ValueError:
        modulation = None
        crc_ok = False
    diversity = (
        DiversityMode.SINGLE_TX_MRC if flags & FLAG_SINGLE_TX else DiversityMode.ALAMOUTI
    )
    return HeaderInfo(
        version=version,
        src=src,
        dst=dst,
        seq=seq,
        payload_bytes=payload_bytes,
        modulation=modulation,
        diversity=diversity,
        counted_payload=bool(flags & FLAG_COUNTED_PAYLOAD),
        crc_ok=crc_ok,
    )


def build_preamble() -> np.ndarray:
    """512 BPSK chips: the two halves of a length-256 complementary pair.

    A sliding correlator that sums the magnitudes of the two half
    correlations peaks at exactly 512 times the received amplitude when
    aligned.
    """
    pair = golay_pair(8)
    chips = np.concatenate([pair.a, pair.b]).astype(np.complex128)
    assert chips.shape[0] == PREAMBLE_CHIPS
    return chips


def training_sequences(seed: int = TRAINING_SEED) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic unit-power QPSK training, one sequence per antenna."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    bits = rng.integers(0, 2, size=(2, TRAINING_SYMBOLS, 2))
    scale = 1.0 / np.sqrt(2.0)
    seqs = (1 - 2 * bits[..., 0]) * scale + 1j * (1 - 2 * bits[..., 1]) * scale
    return seqs[0].astype(np.complex128), seqs[1].astype(np.complex128)


def payload_bits(payload: bytes) -> np.ndarray:
    """Bytes to bits, MSB first, as uint8 zeros and ones."""
    return np.unpackbits(np.frombuffer(payload, dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    if len(bits) % 8 != 0:
        raise ValueError("bit count must be a multiple of 8")
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def body_bits(payload: bytes) -> np.ndarray:
    """Payload bits followed by the 32-bit payload CRC, MSB first."""
    crc = struct.pack("<I", crc32(payload))
    return np.unpackbits(np.frombuffer(payload + crc, dtype=np.uint8))


def check_body(payload: bytes, crc_field: bytes) -> bool:
    return struct.unpack("<I", crc_field)[0] == crc32(payload)
