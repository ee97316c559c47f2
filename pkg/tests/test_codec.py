import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framedag.framestore.codec import (
    DELTA,
    HEADER,
    KEYFRAME,
    CorruptRecord,
    Decoder,
    encode_record,
    read_header,
    rle_decode,
    rle_encode,
)

byte_arrays = st.binary(max_size=700).map(lambda b: np.frombuffer(b, dtype=np.uint8))


def test_rle_layout_is_count_value_pairs():
    assert rle_encode(np.array([7, 7, 7, 1], dtype=np.uint8)) == bytes([3, 7, 1, 1])
    assert rle_encode(np.array([], dtype=np.uint8)) == b""


def test_long_runs_split_at_255():
    data = np.zeros(600, dtype=np.uint8)
    assert rle_encode(data) == bytes([255, 0, 255, 0, 90, 0])


def test_record_header_and_delta_body():
    prev = np.array([10, 10, 250], dtype=np.uint8)
    cur = np.array([12, 12, 4], dtype=np.uint8)
    rec = encode_record(cur, prev)
    flag, n = HEADER.unpack_from(rec, 0)
    assert flag == DELTA == 0x44
    assert n == len(rec) - 5
    # (4 - 250) mod 256 == 10
    assert rec[5:] == bytes([2, 2, 1, 10])
    key = encode_record(cur, None)
    assert key[0] == KEYFRAME == 0x4B


@given(byte_arrays)
def test_rle_roundtrip(data):
    assert np.array_equal(rle_decode(rle_encode(data), data.size), data)


@given(st.lists(st.binary(min_size=16, max_size=16), min_size=1, max_size=20))
def test_decoder_roundtrip(frames):
    dec = Decoder(16)
    prev = None
    for f in frames:
        arr = np.frombuffer(f, dtype=np.uint8)
        rec = encode_record(arr, prev)
        flag, n = read_header(rec, 0)
        dec.feed(flag, rec[HEADER.size : HEADER.size + n])
        assert dec.buffer.tobytes() == f
        prev = arr


@pytest.mark.parametrize(
    "payload,expected",
    [(b"\x01", 1), (b"\x00\x05", 0), (b"\x02\x05", 3)],
)
def test_corrupt_payloads(payload, expected):
    with pytest.raises(CorruptRecord):
        rle_decode(payload, expected)


def test_corrupt_headers():
    rec = encode_record(np.zeros(4, dtype=np.uint8), None)
    with pytest.raises(CorruptRecord):
        read_header(b"\x58" + rec[1:], 0)
    with pytest.raises(CorruptRecord):
        read_header(rec[:-1], 0)
    with pytest.raises(CorruptRecord):
        read_header(rec[:3], 0)


def test_delta_without_keyframe():
    dec = Decoder(4)
    with pytest.raises(CorruptRecord):
        dec.feed(DELTA, rle_encode(np.zeros(4, dtype=np.uint8)))


@settings(max_examples=40)
@given(st.integers(1, 64), st.integers(2, 40))
def test_delta_encoding_smaller_on_static_stream(k, n):
    frame = np.arange(64, dtype=np.uint8)
    key = sum(len(encode_record(frame, None)) for _ in range(n))
    gop = sum(len(encode_record(frame, None if i % k == 0 else frame)) for i in range(n))
    assert gop <= key
