import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from framedag.kernels import REGISTRY, KernelError, byte_histogram, decimate, frame_delta_sum, make_kernel, unpack_f64


def f64(x):
    return struct.pack("<d", x)


@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=6))
def test_histogram_batch_equals_per_element(frames):
    out = make_kernel("byte_histogram").execute([frames])
    for f, h in zip(frames, out):
        counts = np.frombuffer(h, dtype="<u4")
        assert counts.sum() == 32
        assert np.array_equal(counts, byte_histogram(f))
        assert counts[f[0]] >= 1


def test_histogram_rejects_ragged_batch():
    with pytest.raises(KernelError):
        make_kernel("byte_histogram").execute([[b"ab", b"abc"]])


def test_delta_sum_uses_wraparound_distance():
    assert frame_delta_sum(bytes([0, 10]), bytes([255, 7])) == 1 + 3
    out = make_kernel("frame_delta_sum").execute([[bytes([0, 10])], [bytes([255, 7])]])
    assert unpack_f64(out[0]) == 4.0


def test_delta_sum_needs_two_fields():
    with pytest.raises(KernelError):
        make_kernel("frame_delta_sum").execute([[b"a"]])


def test_decimate():
    assert decimate(bytes(range(10)), 3) == bytes([0, 3, 6])
    assert make_kernel("decimate", {"k": 2}).execute([[b"abcdef"]]) == [b"ace"]
    with pytest.raises(KernelError):
        make_kernel("decimate", {"k": 0})


def test_threshold():
    out = make_kernel("threshold_detector", {"tau": 1.5}).execute([[f64(1.0), f64(2.0), f64(1.5)]])
    assert out == [b"\x00", b"\x01", b"\x00"]


def test_sliding_mean_window_and_reset():
    k = make_kernel("sliding_mean", {}, warmup=2)
    out = [unpack_f64(v) for v in k.execute([[f64(x) for x in (3, 6, 9, 12)]])]
    assert out == [3.0, 4.5, 6.0, 9.0]
    k.reset()
    assert unpack_f64(k.execute([[f64(5.0)]])[0]) == 5.0


def test_sliding_mean_fill_counts_as_fill_value():
    k = make_kernel("sliding_mean", {"fill_value": 1.0}, warmup=1)
    out = [unpack_f64(v) for v in k.execute([[f64(3.0), None]])]
    assert out == [3.0, 2.0]


def test_sliding_mean_rejects_infinite_warmup():
    with pytest.raises(KernelError):
        make_kernel("sliding_mean", {}, warmup=math.inf)


def test_registry_flags():
    assert REGISTRY["sliding_mean"].bounded_state and REGISTRY["sliding_mean"].accepts_fill
    assert not REGISTRY["byte_histogram"].accepts_fill
    with pytest.raises(KernelError):
        make_kernel("missing")
