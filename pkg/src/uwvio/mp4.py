"""ISO-BMFF (MP4) container walking: locate the GoPro `gpmd` telemetry
track and pull its raw payloads with media timestamps.

Read-only and streaming-friendly: box parsing seeks past payloads and
never loads the video track; only telemetry sample bytes are copied.
"""

import struct
from dataclasses import dataclass, field

from .errors import (AlignmentError, InconsistentSampleTable, MalformedBox,
                     NotMp4, NoTelemetryTrack, TruncatedFile)

CONTAINER_BOXES = {
    "moov", "trak", "mdia", "minf", "stbl", "edts", "dinf", "udta",
    "mvex", "moof", "traf",
}

# fourccs plausible as the first top-level box of a real MP4
TOP_LEVEL_STARTERS = {"ftyp", "moov", "mdat", "free", "skip", "wide", "styp",
                      "sidx", "moof", "uuid", "pnot"}


@dataclass
class BoxHeader:
    fourcc: str
    size: int
    offset: int
    header_len: int
    children: list = field(default_factory=list)

    @property
    def payload_offset(self):
        return self.offset + self.header_len

    @property
    def payload_size(self):
        return self.size - self.header_len

    def find(self, fourcc):
        for child in self.children:
            if child.fourcc == fourcc:
                return child
        return None

    def find_all(self, fourcc):
        return [c for c in self.children if c.fourcc == fourcc]


@dataclass
class Sample:
    file_offset: int
    size: int
    decode_time: int
    duration: int


@dataclass
class TrackSampleTable:
    track_id: int
    handler_fourcc: str
    sample_format_fourcc: str
    timescale: int
    samples: list


@dataclass(frozen=True)
class RawPayload:
    data: bytes
    start_time: float
    duration: float


def _file_length(f):
    pos = f.tell()
    f.seek(0, 2)
    end = f.tell()
    f.seek(pos)
    return end


def parse_box_tree(f):
    """Parse the nested box structure of an MP4 file.

    Returns the list of top-level BoxHeaders. Payload bytes are never
    copied; leaves carry offsets only.
    """
    file_len = _file_length(f)
    if file_len < 8:
        raise NotMp4(f"file too short for any box ({file_len} bytes)")
    f.seek(4)
    first_fourcc = f.read(4)
    if first_fourcc.decode("ascii", errors="replace") not in TOP_LEVEL_STARTERS:
        raise NotMp4(f"unexpected leading box {first_fourcc!r}")
    boxes = _parse_boxes(f, 0, file_len, top_level=True)
    if not any(b.fourcc in ("ftyp", "moov") for b in boxes):
        raise NotMp4("no ftyp/moov box found")
    return boxes


def _parse_boxes(f, start, end, top_level=False):
    boxes = []
    pos = start
    while pos + 8 <= end:
        f.seek(pos)
        raw = f.read(8)
        if len(raw) < 8:
            raise TruncatedFile(f"short read at offset {pos}")
        size32, fourcc_raw = struct.unpack(">I4s", raw)
        if not all(0x20 <= b < 0x7F for b in fourcc_raw):
            raise MalformedBox(f"non-ASCII fourcc at offset {pos}: {fourcc_raw!r}")
        fourcc = fourcc_raw.decode("ascii")
        header_len = 8
        if size32 == 1:
            ext = f.read(8)
            if len(ext) < 8:
                raise TruncatedFile(f"short extended size at offset {pos}")
            size = struct.unpack(">Q", ext)[0]
            header_len = 16
        elif size32 == 0:
            if not top_level:
                raise MalformedBox(
                    f"{fourcc} at offset {pos}: size 0 only valid at top level")
            size = end - pos
        else:
            size = size32
        if size < header_len:
            raise MalformedBox(
                f"{fourcc} at offset {pos}: size {size} < header {header_len}")
        if pos + size > end:
            raise TruncatedFile(
                f"{fourcc} at offset {pos}: declared size {size} exceeds "
                f"available {end - pos} bytes")
        box = BoxHeader(fourcc=fourcc, size=size, offset=pos, header_len=header_len)
        if fourcc in CONTAINER_BOXES:
            box.children = _parse_boxes(f, pos + header_len, pos + size)
        boxes.append(box)
        pos += size
    if pos != end:
        raise TruncatedFile(f"{end - pos} stray bytes at offset {pos}")
    return boxes


def _read_payload(f, box):
    f.seek(box.payload_offset)
    data = f.read(box.payload_size)
    if len(data) < box.payload_size:
        raise TruncatedFile(f"{box.fourcc}: short payload read")
    return data


def _require(box, fourcc):
    child = box.find(fourcc)
    if child is None:
        raise InconsistentSampleTable(f"missing {fourcc} under {box.fourcc}")
    return child


def _full_box(data):
    """Split version/flags from a full-box payload."""
    version = data[0]
    return version, data[4:]


def find_gpmf_track(tree, f):
    """Return the sample table of the unique track with sample format `gpmd`.

    Decode times accumulate the time-to-sample table; file offsets resolve
    through the sample-to-chunk and chunk-offset tables (stco or co64).
    """
    moov = next((b for b in tree if b.fourcc == "moov"), None)
    if moov is None:
        raise NoTelemetryTrack("no moov box")
    for trak in moov.find_all("trak"):
        table = _track_table(trak, f)
        if table is not None and table.sample_format_fourcc == "gpmd":
            return table
    raise NoTelemetryTrack("no track with sample format gpmd")


def _track_table(trak, f):
    mdia = trak.find("mdia")
    if mdia is None:
        return None
    minf = mdia.find("minf")
    stbl = minf.find("stbl") if minf else None
    if stbl is None:
        return None
    stsd = stbl.find("stsd")
    if stsd is None:
        return None
    data = _read_payload(f, stsd)
    _, body = _full_box(data)
    entry_count = struct.unpack(">I", body[:4])[0]
    if entry_count < 1 or len(body) < 16:
        return None
    sample_format = body[8:12].decode("ascii", errors="replace")
    if sample_format != "gpmd":
        return None

    hdlr = mdia.find("hdlr")
    handler = "????"
    if hdlr is not None:
        hd = _read_payload(f, hdlr)
        handler = hd[8:12].decode("ascii", errors="replace")

    mdhd = _require(mdia, "mdhd")
    md = _read_payload(f, mdhd)
    version, body = _full_box(md)
    if version == 1:
        timescale = struct.unpack(">I", body[16:20])[0]
    else:
        timescale = struct.unpack(">I", body[8:12])[0]

    track_id = 0
    tkhd = trak.find("tkhd")
    if tkhd is not None:
        td = _read_payload(f, tkhd)
        version, body = _full_box(td)
        track_id = struct.unpack(">I", body[16:20] if version == 1 else body[8:12])[0]

    # time-to-sample: (count, delta) runs -> per-sample decode time/duration
    stts = _read_payload(f, _require(stbl, "stts"))
    _, body = _full_box(stts)
    n_entries = struct.unpack(">I", body[:4])[0]
    durations = []
    for i in range(n_entries):
        count, delta = struct.unpack(">II", body[4 + 8 * i:12 + 8 * i])
        durations.extend([delta] * count)

    # sample sizes
    stsz = _read_payload(f, _require(stbl, "stsz"))
    _, body = _full_box(stsz)
    uniform_size, sample_count = struct.unpack(">II", body[:8])
    if uniform_size:
        sizes = [uniform_size] * sample_count
    else:
        sizes = list(struct.unpack(f">{sample_count}I", body[8:8 + 4 * sample_count]))

    if len(durations) != sample_count:
        raise InconsistentSampleTable(
            f"stts declares {len(durations)} samples, stsz {sample_count}")

    # chunk offsets (32- or 64-bit)
    stco = stbl.find("stco")
    co64 = stbl.find("co64")
    if stco is not None:
        _, body = _full_box(_read_payload(f, stco))
        n = struct.unpack(">I", body[:4])[0]
        chunk_offsets = list(struct.unpack(f">{n}I", body[4:4 + 4 * n]))
    elif co64 is not None:
        _, body = _full_box(_read_payload(f, co64))
        n = struct.unpack(">I", body[:4])[0]
        chunk_offsets = list(struct.unpack(f">{n}Q", body[4:4 + 8 * n]))
    else:
        raise InconsistentSampleTable("no stco/co64 chunk offsets")

    # sample-to-chunk runs -> samples per chunk
    stsc = _read_payload(f, _require(stbl, "stsc"))
    _, body = _full_box(stsc)
    n_entries = struct.unpack(">I", body[:4])[0]
    runs = [struct.unpack(">III", body[4 + 12 * i:16 + 12 * i]) for i in range(n_entries)]

    samples = []
    decode_time = 0
    sample_idx = 0
    for ci, chunk_off in enumerate(chunk_offsets):
        per_chunk = 0
        for first_chunk, samples_per_chunk, _desc in runs:
            if ci + 1 >= first_chunk:
                per_chunk = samples_per_chunk
        offset = chunk_off
        for _ in range(per_chunk):
            if sample_idx >= sample_count:
                break
            samples.append(Sample(file_offset=offset, size=sizes[sample_idx],
                                  decode_time=decode_time,
                                  duration=durations[sample_idx]))
            offset += sizes[sample_idx]
            decode_time += durations[sample_idx]
            sample_idx += 1
    if sample_idx != sample_count:
        raise InconsistentSampleTable(
            f"chunk layout yields {sample_idx} samples, size table {sample_count}")

    file_len = _file_length(f)
    for s in samples:
        if s.file_offset + s.size > file_len:
            raise InconsistentSampleTable(
                f"sample at {s.file_offset} (+{s.size}) exceeds file end {file_len}")

    return TrackSampleTable(track_id=track_id, handler_fourcc=handler,
                            sample_format_fourcc=sample_format,
                            timescale=timescale, samples=samples)


def extract_payloads(table, f):
    """Copy every telemetry sample out of the file as a RawPayload."""
    payloads = []
    for s in table.samples:
        f.seek(s.file_offset)
        data = f.read(s.size)
        if len(data) < s.size:
            raise TruncatedFile(f"short payload read at offset {s.file_offset}")
        if len(data) % 4 != 0:
            raise AlignmentError(
                f"payload at offset {s.file_offset} is {len(data)} bytes, "
                "not 32-bit aligned")
        payloads.append(RawPayload(data=data,
                                   start_time=s.decode_time / table.timescale,
                                   duration=s.duration / table.timescale))
    return payloads


# --- fixture writer -------------------------------------------------------

def _box(fourcc, payload):
    return struct.pack(">I4s", 8 + len(payload), fourcc.encode("ascii")) + payload


def _full(fourcc, body, version=0, flags=0):
    return _box(fourcc, struct.pack(">I", (version << 24) | flags) + body)


def write_fixture_mp4(path, payloads, timescale=1000, durations=None,
                      with_video_track=True, gpmd=True):
    """Write a minimal valid MP4 holding the given telemetry payloads.

    ``payloads`` is a list of byte blocks stored as one sample each in a
    `gpmd` track; ``durations`` are per-sample durations in timescale ticks
    (default: 1010 each, the ~1.01 s cadence of a 29.97 Hz recording).
    """
    payloads = [bytes(p) for p in payloads]
    if durations is None:
        durations = [1010] * len(payloads)
    if len(durations) != len(payloads):
        raise ValueError("durations length must match payloads")

    ftyp = _box("ftyp", b"isom" + struct.pack(">I", 0x200) + b"isommp41")
    mdat_payload = b"".join(payloads)
    mdat = _box("mdat", mdat_payload)
    mdat_offset = len(ftyp)
    data_start = mdat_offset + 8

    traks = b""
    if with_video_track:
        traks += _stub_video_trak(track_id=1)
    if gpmd:
        traks += _gpmd_trak(track_id=2, timescale=timescale, payloads=payloads,
                            durations=durations, data_start=data_start)

    total_duration = sum(durations)
    mvhd = _full("mvhd", struct.pack(">IIII", 0, 0, timescale, total_duration) +
                 struct.pack(">I", 0x00010000) + struct.pack(">H", 0x0100) +
                 b"\x00" * 10 + _identity_matrix() + b"\x00" * 24 +
                 struct.pack(">I", 3))
    moov = _box("moov", mvhd + traks)

    with open(path, "wb") as f:
        f.write(ftyp + mdat + moov)
    return path


def _identity_matrix():
    return struct.pack(">9i", 0x10000, 0, 0, 0, 0x10000, 0, 0, 0, 0x40000000)


def _stbl(sample_entry, sizes, durations, offsets):
    stsd = _full("stsd", struct.pack(">I", 1) + sample_entry)
    n = len(sizes)
    stts_entries = []
    for d in durations:
        if stts_entries and stts_entries[-1][1] == d:
            stts_entries[-1][0] += 1
        else:
            stts_entries.append([1, d])
    stts = _full("stts", struct.pack(">I", len(stts_entries)) +
                 b"".join(struct.pack(">II", c, d) for c, d in stts_entries))
    stsz = _full("stsz", struct.pack(">II", 0, n) +
                 struct.pack(f">{n}I", *sizes))
    # one chunk per sample keeps the layout trivial
    stsc = _full("stsc", struct.pack(">I", 1) + struct.pack(">III", 1, 1, 1)
                 if n else struct.pack(">I", 0))
    stco = _full("stco", struct.pack(">I", n) + struct.pack(f">{n}I", *offsets))
    return _box("stbl", stsd + stts + stsz + stsc + stco)


def _gpmd_trak(track_id, timescale, payloads, durations, data_start):
    sizes = [len(p) for p in payloads]
    offsets = []
    pos = data_start
    for s in sizes:
        offsets.append(pos)
        pos += s
    # minimal gpmd sample entry: 6 reserved bytes + data_reference_index
    sample_entry = struct.pack(">I4s", 16, b"gpmd") + b"\x00" * 6 + struct.pack(">H", 1)
    stbl = _stbl(sample_entry, sizes, durations, offsets)
    return _trak(track_id, timescale, sum(durations), "meta", stbl)


def _stub_video_trak(track_id):
    sample_entry = struct.pack(">I4s", 16, b"avc1") + b"\x00" * 6 + struct.pack(">H", 1)
    stbl = _stbl(sample_entry, [], [], [])
    return _trak(track_id, 30000, 0, "vide", stbl)


def _trak(track_id, timescale, duration, handler, stbl):
    tkhd = _full("tkhd", struct.pack(">IIIII", 0, 0, track_id, 0, duration) +
                 b"\x00" * 8 + struct.pack(">HHHH", 0, 0, 0, 0) +
                 _identity_matrix() + struct.pack(">II", 0, 0), flags=7)
    mdhd = _full("mdhd", struct.pack(">IIII", 0, 0, timescale, duration) +
                 struct.pack(">HH", 0x55C4, 0))
    hdlr = _full("hdlr", struct.pack(">I", 0) + handler.encode("ascii") +
                 b"\x00" * 12 + b"uwvio fixture\x00")
    dref = _full("dref", struct.pack(">I", 1) + _full("url ", b"", flags=1))
    dinf = _box("dinf", dref)
    nmhd = _full("nmhd", b"")
    minf = _box("minf", nmhd + dinf + stbl)
    mdia = _box("mdia", mdhd + hdlr + minf)
    return _box("trak", tkhd + mdia)
