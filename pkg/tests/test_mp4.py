import io
import struct

import numpy as np
import pytest

from uwvio import fixtures, mp4
from uwvio.errors import (AlignmentError, MalformedBox, NoTelemetryTrack,
                          NotMp4, TruncatedFile)


def box_bytes(fourcc, payload=b""):
    return struct.pack(">I4s", 8 + len(payload), fourcc.encode()) + payload


class CountingReader(io.BytesIO):
    """Byte source that counts how many bytes have been read."""

    def __init__(self, data):
        super().__init__(data)
        self.bytes_read = 0

    def read(self, n=-1):
        data = super().read(n)
        self.bytes_read += len(data)
        return data


def test_minimal_ftyp_moov_tree():
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12) + box_bytes("moov")
    boxes = mp4.parse_box_tree(io.BytesIO(data))
    assert len(boxes) == 2
    assert boxes[0].fourcc == "ftyp"
    assert boxes[0].size == 24
    assert boxes[0].offset == 0
    assert boxes[0].header_len == 8
    assert boxes[1].fourcc == "moov"
    assert boxes[1].size == 8
    assert boxes[1].offset == 24


def test_empty_file_is_not_mp4():
    with pytest.raises(NotMp4):
        mp4.parse_box_tree(io.BytesIO(b""))


def test_garbage_file_is_not_mp4():
    with pytest.raises(NotMp4):
        mp4.parse_box_tree(io.BytesIO(b"hello world, this is not a movie"))


def test_oversized_box_is_truncated():
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12)
    data += struct.pack(">I4s", 0xFFFFFFFF, b"moov")
    with pytest.raises(TruncatedFile):
        mp4.parse_box_tree(io.BytesIO(data))


def test_box_smaller_than_header_is_malformed():
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12)
    data += struct.pack(">I4s", 4, b"free")
    with pytest.raises(MalformedBox):
        mp4.parse_box_tree(io.BytesIO(data))


def test_size_zero_box_extends_to_eof_at_top_level():
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12)
    data += struct.pack(">I4s", 0, b"mdat") + b"\x00" * 100
    boxes = mp4.parse_box_tree(io.BytesIO(data))
    assert boxes[-1].fourcc == "mdat"
    assert boxes[-1].size == 108


def test_size_zero_nested_is_malformed():
    inner = struct.pack(">I4s", 0, b"trak") + b"\x00" * 8
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12) + box_bytes("moov", inner)
    with pytest.raises(MalformedBox):
        mp4.parse_box_tree(io.BytesIO(data))


def test_64bit_extended_size():
    payload = b"\x00" * 32
    big = struct.pack(">I4s", 1, b"mdat") + struct.pack(">Q", 16 + len(payload)) + payload
    data = box_bytes("ftyp", b"isom" + b"\x00" * 12) + big
    boxes = mp4.parse_box_tree(io.BytesIO(data))
    assert boxes[1].size == 48
    assert boxes[1].header_len == 16


def test_fixture_track_and_payloads(tmp_path):
    path = tmp_path / "fix.mp4"
    fixtures.fixture_mp4(path, n_payloads=3, accel_count=8, gyro_count=8,
                         shut_count=2)
    with open(path, "rb") as f:
        tree = mp4.parse_box_tree(f)
        table = mp4.find_gpmf_track(tree, f)
        assert table.sample_format_fourcc == "gpmd"
        assert table.handler_fourcc == "meta"
        assert table.timescale == 1000
        assert len(table.samples) == 3
        payloads = mp4.extract_payloads(table, f)
    assert [p.start_time for p in payloads] == [0.0, 1.01, 2.02]
    assert all(p.duration == 1.01 for p in payloads)


def test_no_gpmd_track(tmp_path):
    path = tmp_path / "novideo.mp4"
    mp4.write_fixture_mp4(path, [b"\x00" * 8], gpmd=False)
    with open(path, "rb") as f:
        tree = mp4.parse_box_tree(f)
        with pytest.raises(NoTelemetryTrack):
            mp4.find_gpmf_track(tree, f)


def test_payload_start_time_arithmetic(tmp_path):
    path = tmp_path / "t.mp4"
    payloads = [b"\x00" * 4, b"\x11" * 8, b"\x22" * 12]
    mp4.write_fixture_mp4(path, payloads, timescale=1000,
                          durations=[1010, 1010, 980])
    with open(path, "rb") as f:
        table = mp4.find_gpmf_track(mp4.parse_box_tree(f), f)
        out = mp4.extract_payloads(table, f)
    assert [p.start_time for p in out] == [0.0, 1.010, 2.020]
    assert [p.duration for p in out] == [1.010, 1.010, 0.980]


def test_single_payload(tmp_path):
    path = tmp_path / "one.mp4"
    mp4.write_fixture_mp4(path, [b"\xab" * 16], durations=[500])
    with open(path, "rb") as f:
        table = mp4.find_gpmf_track(mp4.parse_box_tree(f), f)
        out = mp4.extract_payloads(table, f)
    assert len(out) == 1
    assert out[0].start_time == 0.0
    assert out[0].data == b"\xab" * 16


def test_unaligned_payload_rejected(tmp_path):
    path = tmp_path / "bad.mp4"
    mp4.write_fixture_mp4(path, [b"\x00" * 7], durations=[500])
    with open(path, "rb") as f:
        table = mp4.find_gpmf_track(mp4.parse_box_tree(f), f)
        with pytest.raises(AlignmentError):
            mp4.extract_payloads(table, f)


def test_round_trip_payloads(tmp_path):
    rng = np.random.default_rng(3)
    payloads = [rng.bytes(4 * int(rng.integers(1, 64))) for _ in range(20)]
    durations = [int(rng.integers(500, 2000)) for _ in range(20)]
    path = tmp_path / "rt.mp4"
    mp4.write_fixture_mp4(path, payloads, timescale=1000, durations=durations)
    with open(path, "rb") as f:
        table = mp4.find_gpmf_track(mp4.parse_box_tree(f), f)
        out = mp4.extract_payloads(table, f)
    assert [p.data for p in out] == payloads
    expected_start = np.cumsum([0] + durations[:-1]) / 1000.0
    got = np.array([p.start_time for p in out])
    assert np.all(np.abs(got - expected_start) <= 1e-3)  # one tick
    assert np.all(np.diff(got) > 0)


def test_parse_reads_headers_not_payloads(tmp_path):
    path = tmp_path / "big.mp4"
    mp4.write_fixture_mp4(path, [b"\x00" * 1_000_000], durations=[1000])
    data = open(path, "rb").read()
    reader = CountingReader(data)
    mp4.parse_box_tree(reader)
    # header walking must not touch the megabyte payload
    assert reader.bytes_read < 10_000
