#!/usr/bin/env python3
"""
Tests for the TTAG time-tag file format
"""

import sys
import struct

import numpy as np
import pytest

# Add src to path
sys.path.append('src')

from tagfile import (
    TagStream, TagFileError, encode_tags, decode_tags, write_tags, read_tags, HEADER, TAG_DTYPE
)


def sample_stream() -> TagStream:
    return TagStream.from_records([(1, 1000), (2, 1002), (3, 1003), (1, 2 ** 40)])


def test_layout_is_bit_exact():
    data = encode_tags(TagStream.from_records([(2, 1)]))
    assert data[:4] == b"TTAG"
    assert data[4] == 1
    assert struct.unpack('<Q', data[5:13])[0] == 156000
    assert data[13:] == bytes([2]) + (1).to_bytes(8, 'little')
    assert HEADER.size == 13 and TAG_DTYPE.itemsize == 9


def test_file_round_trip(tmp_path):
    stream = sample_stream()
    path = tmp_path / "tags.ttag"
    assert write_tags(stream, str(path))
    loaded = read_tags(str(path))
    assert np.array_equal(loaded.channels, stream.channels)
    assert np.array_equal(loaded.ticks, stream.ticks)
    assert loaded.tick_ns == pytest.approx(0.156)


def test_empty_file_gives_empty_stream(tmp_path):
    path = tmp_path / "empty.ttag"
    path.write_bytes(b"")
    assert len(read_tags(str(path))) == 0


def test_header_only_gives_empty_stream():
    assert len(decode_tags(encode_tags(TagStream()))) == 0


def test_bad_magic_names_offset():
    data = b"XTAG" + encode_tags(sample_stream())[4:]
    with pytest.raises(TagFileError, match="offset 0"):
        decode_tags(data)


def test_bad_version_names_offset():
    data = bytearray(encode_tags(sample_stream()))
    data[4] = 9
    with pytest.raises(TagFileError, match="offset 4"):
        decode_tags(bytes(data))


def test_truncated_header():
    with pytest.raises(TagFileError, match="offset 7"):
        decode_tags(b"TTAG\x01\x00\x00")


def test_partial_record_names_offset():
    data = encode_tags(sample_stream())
    with pytest.raises(TagFileError, match=f"offset {13 + 3 * 9}"):
        decode_tags(data[:-4])


def test_stream_helpers():
    stream = TagStream.from_records([(2, 5), (1, 5), (1, 3)])
    assert not stream.is_sorted()
    ordered = stream.sorted()
    assert ordered.ticks.tolist() == [3, 5, 5]
    assert ordered.channels.tolist() == [1, 1, 2]
    assert ordered.counts_per_channel() == {1: 2, 2: 1}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
