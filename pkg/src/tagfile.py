"""
Time-tag stream container and its binary file format

File layout (little-endian):
    header  b"TTAG" | u8 version (1) | u64 tick resolution in femtoseconds
    records (u8 channel, u64 tick) packed, 9 bytes each, in arrival order
"""

import struct
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct('<4sBQ')
TAG_DTYPE = np.dtype([('channel', 'u1'), ('tick', '<u8')])

DEFAULT_TICK_NS = 0.156


class TagFileError(ValueError):
    """Malformed tag file; the message names the byte offset"""


@dataclass
class TagStream:
    """Detector time tags: channel ids and integer ticks of tick_ns each"""
    channels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    ticks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tick_ns: float = DEFAULT_TICK_NS

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.ticks = np.asarray(self.ticks, dtype=np.int64)
        if self.channels.shape != self.ticks.shape:
            raise ValueError(f"channels and ticks differ in length ({self.channels.size} vs {self.ticks.size})")
        if self.tick_ns <= 0:
            raise ValueError(f"tick_ns must be positive, got {self.tick_ns}")

    @classmethod
    def from_records(cls, records: Iterable[Tuple[int, int]], tick_ns: float = DEFAULT_TICK_NS) -> 'TagStream':
        records = list(records)
        channels = np.array([r[0] for r in records], dtype=np.uint8)
        ticks = np.array([r[1] for r in records], dtype=np.int64)
        return cls(channels, ticks, tick_ns)

    def __len__(self) -> int:
        return int(self.ticks.size)

    def channel_ticks(self, channel: int) -> np.ndarray:
        return self.ticks[self.channels == channel]

    def counts_per_channel(self) -> dict:
        values, counts = np.unique(self.channels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.ticks) >= 0))

    @property
    def tick_fs(self) -> int:
        return int(round(self.tick_ns * 1e6))

    def sorted(self) -> 'TagStream':
        """Copy ordered by (tick, channel)"""
        order = np.lexsort((self.channels, self.ticks))
        return TagStream(self.channels[order], self.ticks[order], self.tick_ns)


def encode_tags(stream: TagStream) -> bytes:
    """Serialize a stream to the TTAG byte layout"""
    if np.any(stream.ticks < 0):
        raise TagFileError("negative ticks cannot be written")
    records = np.empty(len(stream), dtype=TAG_DTYPE)
    records['channel'] = stream.channels
    records['tick'] = stream.ticks.astype(np.uint64)
    return HEADER.pack(MAGIC, VERSION, stream.tick_fs) + records.tobytes()


def decode_tags(data: bytes) -> TagStream:
    """Parse TTAG bytes; an empty buffer yields an empty stream"""
    if len(data) == 0:
        logging.warning("Tag data is empty; returning an empty stream")
        return TagStream()

    if len(data) < HEADER.size:
        raise TagFileError(f"truncated header at offset {len(data)}: expected {HEADER.size} bytes")

    magic, version, tick_fs = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TagFileError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise TagFileError(f"unsupported version {version} at offset 4")
    if tick_fs == 0:
        raise TagFileError("zero tick resolution at offset 5")

    body = len(data) - HEADER.size
    complete = body // TAG_DTYPE.itemsize
    if body % TAG_DTYPE.itemsize:
        offset = HEADER.size + complete * TAG_DTYPE.itemsize
        raise TagFileError(
            f"trailing partial record at offset {offset} "
            f"({body % TAG_DTYPE.itemsize} of {TAG_DTYPE.itemsize} bytes)"
        )

    records = np.frombuffer(data, dtype=TAG_DTYPE, count=complete, offset=HEADER.size)
    ticks = records['tick']
    if complete and int(ticks.max()) > np.iinfo(np.int64).max:
        raise TagFileError("tick value exceeds the signed 64-bit range")

    return TagStream(records['channel'].copy(), ticks.astype(np.int64), tick_fs / 1e6)


def write_tags(stream: TagStream, filepath: str) -> bool:
    """Write a stream to a TTAG file"""
    try:
        Path(filepath).write_bytes(encode_tags(stream))
        logging.info(f"{len(stream)} tags saved to {filepath}")
        return True

    except Exception as e:
        logging.error(f"Error saving tag file: {e}")
        return False


def read_tags(filepath: str) -> TagStream:
    """Read a TTAG file; raises TagFileError on malformed content"""
    data = Path(filepath).read_bytes()
    stream = decode_tags(data)
    logging.info(f"Read {len(stream)} tags from {filepath} (tick {stream.tick_ns:g} ns)")
    return stream
