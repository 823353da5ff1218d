"""IEEE C37.118.2-style synchrophasor frame codec.

Implements a bit-exact encoder/decoder for a documented subset of the
synchrophasor wire messages: data, configuration (CFG-2), header, and
command frames, with CRC-CCITT framing.

Wire contract (normative for this project, all integers big-endian):

Common header, 14 bytes::

    SYNC       2   0xAA, then (frame_type << 4) | version
    FRAMESIZE  2   total frame length in bytes, checksum included
    IDCODE     2   data stream / PMU identifier
    SOC        4   seconds of century (UTC epoch seconds)
    FRACSEC    4   time-quality byte << 24 | 24-bit fraction-of-second count

Frame types (bits 6..4 of the second SYNC byte): 0 data, 1 header,
2 CFG-1, 3 CFG-2, 4 command, 5 CFG-3.  Only 0, 1, 3 and 4 are in the
supported subset; CFG-1/CFG-3 are rejected on decode.

CFG-2 body::

    TIME_BASE  4   fraction-of-second resolution (low 24 bits)
    NUM_PMU    2
    per PMU:
      STN      16  station name, ASCII, space padded
      IDCODE   2
      FORMAT   2   bit0 coord (0 rect / 1 polar), bit1 phasors (0 int16 /
                   1 float32), bit2 analogs (same), bit3 freq/dfreq (same)
      PHNMR    2   phasor count
      ANNMR    2   analog count
      DGNMR    2   digital word count
      CHNAM    16 * (PHNMR + ANNMR + 16*DGNMR) channel names
      PHUNIT   4 * PHNMR   type byte (0 V / 1 A) << 24 | 24-bit factor
      ANUNIT   4 * ANNMR   type byte << 24 | 24-bit factor
      DIGUNIT  4 * DGNMR   normal mask << 16 | valid mask
      FNOM     2   bit0: 1 = 50 Hz, 0 = 60 Hz
      CFGCNT   2
    DATA_RATE  2   signed, frames per second (must be > 0 here)

Data frame body, per PMU block (counts and formats from the governing
CFG-2)::

    STAT       2
    PHASORS    8 each (two float32) or 4 each (two int16)
    FREQ       4 float32 absolute Hz, or 2 int16 deviation in mHz
    DFREQ      4 float32 Hz/s, or 2 int16 in 0.01 Hz/s
    ANALOG     4 each float32, or 2 each int16 raw counts
    DIGITAL    2 each

Header frame body: free ASCII text.  Command frame body: 2-byte command
code.  Every frame ends with CHK, the CRC-CCITT (poly 0x1021, init
0xFFFF, no reflection, no final XOR) of all preceding bytes.

Int16 phasors carry magnitude counts scaled by the channel's PHUNIT
factor * 1e-5 (polar) or rectangular counts scaled the same way; polar
angles are int16 in 1e-4 rad.  Decoded angles are normalized to
(-pi, pi].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

__all__ = [
    "FrameError",
    "FrameEncodeError",
    "ChannelCountMismatch",
    "FieldRangeError",
    "FrameDecodeError",
    "BadSync",
    "BadChecksum",
    "SizeMismatch",
    "MissingConfig",
    "UnsupportedFrameType",
    "UnknownCommand",
    "PhasorValue",
    "FrameHeader",
    "PmuConfig",
    "ConfigFrame",
    "PmuData",
    "DataFrame",
    "HeaderFrame",
    "CommandFrame",
    "MeasurementRecord",
    "crc16_ccitt",
    "encode",
    "decode",
    "to_record",
    "to_records",
    "describe_frame",
    "demo_config",
    "demo_data_frame",
]

SYNC_BYTE = 0xAA

TYPE_DATA = 0
TYPE_HEADER = 1
TYPE_CFG1 = 2
TYPE_CFG2 = 3
TYPE_COMMAND = 4
TYPE_CFG3 = 5

_SUPPORTED_TYPES = {TYPE_DATA, TYPE_HEADER, TYPE_CFG2, TYPE_COMMAND}

CMD_DATA_OFF = 1
CMD_DATA_ON = 2
CMD_SEND_HEADER = 3
CMD_SEND_CFG1 = 4
CMD_SEND_CFG2 = 5
CMD_SEND_CFG3 = 6

COMMAND_NAMES = {
    CMD_DATA_OFF: "data transmission off",
    CMD_DATA_ON: "data transmission on",
    CMD_SEND_HEADER: "send header frame",
    CMD_SEND_CFG1: "send CFG-1",
    CMD_SEND_CFG2: "send CFG-2",
    CMD_SEND_CFG3: "send CFG-3",
}

HEADER_LEN = 14
CHK_LEN = 2
MIN_FRAME_LEN = HEADER_LEN + CHK_LEN  # empty header frame

ANGLE_COUNTS_PER_RAD = 1e4  # int16 polar angle resolution
UNIT_SCALE = 1e-5  # PHUNIT factor scaling for int16 magnitudes


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class FrameError(Exception):
    """Base class for codec errors."""


class FrameEncodeError(FrameError):
    pass


class ChannelCountMismatch(FrameEncodeError):
    """Frame shape disagrees with the governing configuration."""


class FieldRangeError(FrameEncodeError):
    """A field value cannot be represented in its wire format."""


class FrameDecodeError(FrameError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadSync(FrameDecodeError):
    """First byte of the buffer is not 0xAA."""


class BadChecksum(FrameDecodeError):
    """Stored CRC does not match the CRC computed over the frame."""


class SizeMismatch(FrameDecodeError):
    """FRAMESIZE disagrees with the buffer length, or the buffer is truncated."""


class MissingConfig(FrameDecodeError):
    """A data frame cannot be decoded without its configuration frame."""


class UnsupportedFrameType(FrameDecodeError):
    """Frame-type bits outside the supported subset."""


class UnknownCommand(FrameError):
    """Command code outside the documented set."""


# ---------------------------------------------------------------------------
# Checksum
# ---------------------------------------------------------------------------

def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16_ccitt(data: bytes) -> int:
    """CRC-CCITT over ``data``: poly 0x1021, init 0xFFFF, no reflection."""
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

def wrap_angle(angle: float) -> float:
    """Normalize an angle in radians to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _f32(x: float) -> float:
    """Round-trip a float through IEEE-754 single precision."""
    return struct.unpack(">f", struct.pack(">f", x))[0]


@dataclass(frozen=True)
class PhasorValue:
    """A polar phasor: magnitude in volts or amps, angle in radians.

    The angle is normalized to (-pi, pi] on construction; magnitude must
    be finite and non-negative.
    """

    magnitude: float
    angle: float

    def __post_init__(self):
        if not math.isfinite(self.magnitude) or self.magnitude < 0.0:
            raise FieldRangeError(f"phasor magnitude must be finite and >= 0, got {self.magnitude}")
        if not math.isfinite(self.angle):
            raise FieldRangeError("phasor angle must be finite")
        object.__setattr__(self, "angle", wrap_angle(self.angle))

    @classmethod
    def from_rect(cls, x: float, y: float) -> "PhasorValue":
        return cls(math.hypot(x, y), math.atan2(y, x))

    @property
    def x(self) -> float:
        return self.magnitude * math.cos(self.angle)

    @property
    def y(self) -> float:
        return self.magnitude * math.sin(self.angle)


@dataclass
class FrameHeader:
    """Common header fields shared by all frame types.

    ``frame_size`` is derived on encode and informational after decode;
    it is excluded from equality so that constructed frames compare equal
    to their decoded round-trips.
    """

    frame_type: int
    id_code: int
    soc: int
    frac_count: int = 0
    time_quality: int = 0
    version: int = 2
    frame_size: int = field(default=0, compare=False)

    def validate(self):
        if self.frame_type not in _SUPPORTED_TYPES:
            raise FieldRangeError(f"unsupported frame type {self.frame_type}")
        if not 1 <= self.version <= 15:
            raise FieldRangeError(f"version {self.version} outside 1..15")
        if not 0 <= self.id_code <= 0xFFFF:
            raise FieldRangeError(f"id_code {self.id_code} outside uint16")
        if not 0 <= self.soc <= 0xFFFFFFFF:
            raise FieldRangeError(f"soc {self.soc} outside uint32")
        if not 0 <= self.frac_count < (1 << 24):
            raise FieldRangeError(f"frac_count {self.frac_count} outside uint24")
        if not 0 <= self.time_quality <= 0xFF:
            raise FieldRangeError(f"time_quality {self.time_quality} outside uint8")


@dataclass
class PmuConfig:
    """Per-PMU block of a configuration frame."""

    station: str
    id_code: int
    phasor_names: list[str]
    phasor_types: list[str] = field(default_factory=list)  # "V" or "I"
    phasor_factors: list[int] = field(default_factory=list)  # 24-bit, 1e-5 units/count
    analog_names: list[str] = field(default_factory=list)
    analog_types: list[int] = field(default_factory=list)
    analog_factors: list[int] = field(default_factory=list)
    digital_names: list[str] = field(default_factory=list)  # 16 per digital word
    digital_units: list[tuple[int, int]] = field(default_factory=list)  # (normal, valid)
    fnom_hz: int = 60
    cfg_count: int = 0
    coord_polar: bool = True
    phasor_float: bool = True
    analog_float: bool = True
    freq_float: bool = True

    def __post_init__(self):
        n_ph = len(self.phasor_names)
        if not self.phasor_types:
            self.phasor_types = ["V"] * n_ph
        if not self.phasor_factors:
            # 10 V/count for voltage, 0.1 A/count for current channels
            self.phasor_factors = [1_000_000 if t == "V" else 10_000 for t in self.phasor_types]
        if not self.analog_types:
            self.analog_types = [0] * len(self.analog_names)
        if not self.analog_factors:
            self.analog_factors = [100_000] * len(self.analog_names)  # raw scale 1.0
        if self.digital_names and not self.digital_units:
            self.digital_units = [(0x0000, 0xFFFF)] * self.num_digitals

    @property
    def num_phasors(self) -> int:
        return len(self.phasor_names)

    @property
    def num_analogs(self) -> int:
        return len(self.analog_names)

    @property
    def num_digitals(self) -> int:
        if len(self.digital_names) % 16:
            raise FieldRangeError("digital channel names must come in groups of 16 per word")
        return len(self.digital_names) // 16

    @property
    def format_word(self) -> int:
        return (
            (1 if self.coord_polar else 0)
            | (2 if self.phasor_float else 0)
            | (4 if self.analog_float else 0)
            | (8 if self.freq_float else 0)
        )

    def data_block_size(self) -> int:
        size = 2  # STAT
        size += self.num_phasors * (8 if self.phasor_float else 4)
        size += 8 if self.freq_float else 4
        size += self.num_analogs * (4 if self.analog_float else 2)
        size += self.num_digitals * 2
        return size


@dataclass
class ConfigFrame:
    """CFG-2 configuration frame."""

    header: FrameHeader
    time_base: int
    pmus: list[PmuConfig]
    data_rate: int
    chk: int = field(default=0, compare=False)

    def __post_init__(self):
        self.header.frame_type = TYPE_CFG2

    @property
    def id_code(self) -> int:
        return self.header.id_code

    @property
    def num_pmu(self) -> int:
        return len(self.pmus)

    def data_frame_size(self) -> int:
        return HEADER_LEN + sum(p.data_block_size() for p in self.pmus) + CHK_LEN

    def validate(self):
        self.header.validate()
        if not 1 <= self.time_base < (1 << 24):
            raise FieldRangeError(f"time_base {self.time_base} outside 1..2^24-1")
        if self.data_rate <= 0:
            raise FieldRangeError("data_rate must be a positive frames-per-second count")
        if self.data_rate > 0x7FFF:
            raise FieldRangeError("data_rate outside int16")
        if not self.pmus:
            raise FieldRangeError("configuration must carry at least one PMU block")


@dataclass
class PmuData:
    """Per-PMU block of a data frame.

    ``freq`` is the value as transmitted: deviation from nominal in Hz
    when the config declares int16 freq, absolute Hz in float mode.
    """

    stat: int
    phasors: list[PhasorValue]
    freq: float
    dfreq: float
    analogs: list[float] = field(default_factory=list)
    digitals: list[int] = field(default_factory=list)


@dataclass
class DataFrame:
    header: FrameHeader
    pmus: list[PmuData]
    chk: int = field(default=0, compare=False)

    def __post_init__(self):
        self.header.frame_type = TYPE_DATA


@dataclass
class HeaderFrame:
    header: FrameHeader
    text: str = ""
    chk: int = field(default=0, compare=False)

    def __post_init__(self):
        self.header.frame_type = TYPE_HEADER


@dataclass
class CommandFrame:
    header: FrameHeader
    command: int = CMD_SEND_CFG2
    chk: int = field(default=0, compare=False)

    def __post_init__(self):
        self.header.frame_type = TYPE_COMMAND
        if self.command not in COMMAND_NAMES:
            raise UnknownCommand(f"command code {self.command} not in documented set "
                                 f"{sorted(COMMAND_NAMES)}")


Frame = DataFrame | ConfigFrame | HeaderFrame | CommandFrame


@dataclass
class MeasurementRecord:
    """One PMU's sample in engineering units."""

    station: str
    stream_id: int
    pmu_index: int
    soc: int
    frac_count: int
    time_base: int
    freq_hz: float
    rocof_hzps: float
    phasors: list[PhasorValue]
    analogs: list[float]
    digitals: list[int]
    stat: int

    @property
    def timestamp(self) -> float:
        return self.soc + self.frac_count / self.time_base

    @property
    def identity(self) -> tuple[int, int, int]:
        return (self.stream_id, self.soc, self.frac_count)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _pack_name(name: str) -> bytes:
    try:
        raw = name.encode("ascii")
    except UnicodeEncodeError as exc:
        raise FieldRangeError(f"channel/station name {name!r} is not ASCII") from exc
    if len(raw) > 16:
        raise FieldRangeError(f"name {name!r} longer than 16 bytes")
    return raw.ljust(16, b" ")


def _pack_header(header: FrameHeader, frame_size: int) -> bytes:
    header.validate()
    sync2 = ((header.frame_type & 0x7) << 4) | (header.version & 0xF)
    fracsec = ((header.time_quality & 0xFF) << 24) | header.frac_count
    return struct.pack(
        ">BBHHII", SYNC_BYTE, sync2, frame_size, header.id_code, header.soc, fracsec
    )


def _finish(header: FrameHeader, body: bytes) -> bytes:
    size = HEADER_LEN + len(body) + CHK_LEN
    if size > 0xFFFF:
        raise FieldRangeError(f"frame of {size} bytes exceeds the 16-bit size field")
    buf = _pack_header(header, size) + body
    chk = crc16_ccitt(buf)
    header.frame_size = size
    return buf + struct.pack(">H", chk)


def _encode_int16(value: float, what: str) -> int:
    counts = round(value)
    if not -32768 <= counts <= 32767:
        raise FieldRangeError(f"{what} {value} does not fit int16")
    return counts


def _encode_uint16(value: float, what: str) -> int:
    counts = round(value)
    if not 0 <= counts <= 65535:
        raise FieldRangeError(f"{what} {value} does not fit uint16")
    return counts


def _encode_phasor(pv: PhasorValue, pcfg: PmuConfig, channel: int) -> bytes:
    if pcfg.phasor_float:
        if pcfg.coord_polar:
            return struct.pack(">ff", pv.magnitude, pv.angle)
        return struct.pack(">ff", pv.x, pv.y)
    scale = pcfg.phasor_factors[channel] * UNIT_SCALE
    if scale <= 0:
        raise FieldRangeError(f"phasor channel {channel} has non-positive conversion factor")
    if pcfg.coord_polar:
        mag = _encode_uint16(pv.magnitude / scale, "phasor magnitude counts")
        ang = _encode_int16(pv.angle * ANGLE_COUNTS_PER_RAD, "phasor angle counts")
        return struct.pack(">Hh", mag, ang)
    x = _encode_int16(pv.x / scale, "phasor real counts")
    y = _encode_int16(pv.y / scale, "phasor imaginary counts")
    return struct.pack(">hh", x, y)


def _encode_pmu_block(block: PmuData, pcfg: PmuConfig) -> bytes:
    if len(block.phasors) != pcfg.num_phasors:
        raise ChannelCountMismatch(
            f"{pcfg.station!r}: {len(block.phasors)} phasors, config declares {pcfg.num_phasors}"
        )
    if len(block.analogs) != pcfg.num_analogs:
        raise ChannelCountMismatch(
            f"{pcfg.station!r}: {len(block.analogs)} analogs, config declares {pcfg.num_analogs}"
        )
    if len(block.digitals) != pcfg.num_digitals:
        raise ChannelCountMismatch(
            f"{pcfg.station!r}: {len(block.digitals)} digital words, "
            f"config declares {pcfg.num_digitals}"
        )
    parts = [struct.pack(">H", block.stat & 0xFFFF)]
    for ch, pv in enumerate(block.phasors):
        parts.append(_encode_phasor(pv, pcfg, ch))
    if pcfg.freq_float:
        parts.append(struct.pack(">ff", block.freq, block.dfreq))
    else:
        parts.append(struct.pack(">hh",
                                 _encode_int16(block.freq * 1000.0, "freq deviation mHz"),
                                 _encode_int16(block.dfreq * 100.0, "ROCOF counts")))
    for value in block.analogs:
        if pcfg.analog_float:
            parts.append(struct.pack(">f", value))
        else:
            parts.append(struct.pack(">h", _encode_int16(value, "analog counts")))
    for word in block.digitals:
        if not 0 <= word <= 0xFFFF:
            raise FieldRangeError(f"digital word {word} outside uint16")
        parts.append(struct.pack(">H", word))
    return b"".join(parts)


def encode(frame: Frame, cfg: ConfigFrame | None = None) -> bytes:
    """Serialize ``frame``; data frames need their governing config.

    The result starts with 0xAA, carries the correct FRAMESIZE and ends
    with a valid CRC.  Encoding is deterministic.
    """
    if isinstance(frame, DataFrame):
        if cfg is None:
            raise MissingConfig("encoding a data frame requires its configuration frame")
        if len(frame.pmus) != cfg.num_pmu:
            raise ChannelCountMismatch(
                f"data frame has {len(frame.pmus)} PMU blocks, config declares {cfg.num_pmu}"
            )
        if frame.header.frac_count >= cfg.time_base:
            raise FieldRangeError(
                f"frac_count {frame.header.frac_count} >= time_base {cfg.time_base}"
            )
        body = b"".join(
            _encode_pmu_block(block, pcfg) for block, pcfg in zip(frame.pmus, cfg.pmus)
        )
        out = _finish(frame.header, body)
    elif isinstance(frame, ConfigFrame):
        frame.validate()
        parts = [struct.pack(">IH", frame.time_base & 0xFFFFFF, frame.num_pmu)]
        for pcfg in frame.pmus:
            n_dig = pcfg.num_digitals
            if len(pcfg.digital_names) != 16 * n_dig:
                raise ChannelCountMismatch(
                    f"{pcfg.station!r}: digital words need 16 names each"
                )
            parts.append(_pack_name(pcfg.station))
            parts.append(struct.pack(">HHHHH", pcfg.id_code, pcfg.format_word,
                                     pcfg.num_phasors, pcfg.num_analogs, n_dig))
            for name in pcfg.phasor_names + pcfg.analog_names + pcfg.digital_names:
                parts.append(_pack_name(name))
            for ptype, factor in zip(pcfg.phasor_types, pcfg.phasor_factors):
                type_byte = 1 if ptype == "I" else 0
                parts.append(struct.pack(">I", (type_byte << 24) | (factor & 0xFFFFFF)))
            for atype, factor in zip(pcfg.analog_types, pcfg.analog_factors):
                parts.append(struct.pack(">I", ((atype & 0xFF) << 24) | (factor & 0xFFFFFF)))
            for normal, valid in pcfg.digital_units:
                parts.append(struct.pack(">I", ((normal & 0xFFFF) << 16) | (valid & 0xFFFF)))
            fnom = 1 if pcfg.fnom_hz == 50 else 0
            parts.append(struct.pack(">HH", fnom, pcfg.cfg_count & 0xFFFF))
        parts.append(struct.pack(">h", frame.data_rate))
        out = _finish(frame.header, b"".join(parts))
    elif isinstance(frame, HeaderFrame):
        try:
            body = frame.text.encode("ascii")
        except UnicodeEncodeError as exc:
            raise FieldRangeError("header frame text must be ASCII") from exc
        out = _finish(frame.header, body)
    elif isinstance(frame, CommandFrame):
        if frame.command not in COMMAND_NAMES:
            raise UnknownCommand(f"command code {frame.command} not in documented set")
        out = _finish(frame.header, struct.pack(">H", frame.command))
    else:
        raise TypeError(f"cannot encode {type(frame).__name__}")
    frame.chk = struct.unpack(">H", out[-2:])[0]
    return out


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _Cursor:
    """Bounds-checked reader over a frame body."""

    def __init__(self, buf: bytes, offset: int):
        self.buf = buf
        self.offset = offset

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.buf):
            raise SizeMismatch(
                f"frame truncated: need {size} bytes at offset {self.offset}",
                offset=self.offset,
            )
        values = struct.unpack_from(fmt, self.buf, self.offset)
        self.offset += size
        return values

    def take_name(self) -> str:
        (raw,) = self.take(">16s")
        return raw.decode("ascii", errors="replace").rstrip(" \x00")


def _decode_header(buf: bytes) -> FrameHeader:
    sync1, sync2, frame_size, id_code, soc, fracsec = struct.unpack_from(">BBHHII", buf, 0)
    if sync1 != SYNC_BYTE:
        raise BadSync(f"first byte 0x{sync1:02X}, expected 0xAA", offset=0)
    frame_type = (sync2 >> 4) & 0x7
    if sync2 & 0x80 or frame_type not in _SUPPORTED_TYPES:
        raise UnsupportedFrameType(
            f"frame type bits {frame_type} outside supported subset (data, header, CFG-2, command)",
            offset=1,
        )
    if frame_size != len(buf):
        raise SizeMismatch(
            f"FRAMESIZE {frame_size} != buffer length {len(buf)}", offset=2
        )
    return FrameHeader(
        frame_type=frame_type,
        id_code=id_code,
        soc=soc,
        frac_count=fracsec & 0xFFFFFF,
        time_quality=(fracsec >> 24) & 0xFF,
        version=sync2 & 0xF,
        frame_size=frame_size,
    )


def _decode_phasor(cur: _Cursor, pcfg: PmuConfig, channel: int) -> PhasorValue:
    if pcfg.phasor_float:
        a, b = cur.take(">ff")
        if pcfg.coord_polar:
            return PhasorValue(abs(a), b if a >= 0 else b + math.pi)
        return PhasorValue.from_rect(a, b)
    scale = pcfg.phasor_factors[channel] * UNIT_SCALE
    if pcfg.coord_polar:
        mag, ang = cur.take(">Hh")
        return PhasorValue(mag * scale, ang / ANGLE_COUNTS_PER_RAD)
    x, y = cur.take(">hh")
    return PhasorValue.from_rect(x * scale, y * scale)


def _decode_data(buf: bytes, header: FrameHeader, cfg: ConfigFrame) -> DataFrame:
    cur = _Cursor(buf, HEADER_LEN)
    blocks = []
    for pcfg in cfg.pmus:
        (stat,) = cur.take(">H")
        phasors = [_decode_phasor(cur, pcfg, ch) for ch in range(pcfg.num_phasors)]
        if pcfg.freq_float:
            freq, dfreq = cur.take(">ff")
        else:
            raw_f, raw_df = cur.take(">hh")
            freq, dfreq = raw_f / 1000.0, raw_df / 100.0
        analogs = []
        for i in range(pcfg.num_analogs):
            if pcfg.analog_float:
                (v,) = cur.take(">f")
            else:
                (v,) = cur.take(">h")
                v = float(v)
            analogs.append(v)
        digitals = [cur.take(">H")[0] for _ in range(pcfg.num_digitals)]
        blocks.append(PmuData(stat=stat, phasors=phasors, freq=freq, dfreq=dfreq,
                              analogs=analogs, digitals=digitals))
    if cur.offset != len(buf) - CHK_LEN:
        raise SizeMismatch(
            f"data frame body ends at {cur.offset}, checksum expected at {len(buf) - CHK_LEN}",
            offset=cur.offset,
        )
    return DataFrame(header=header, pmus=blocks)


def _decode_config(buf: bytes, header: FrameHeader) -> ConfigFrame:
    cur = _Cursor(buf, HEADER_LEN)
    time_base_raw, num_pmu = cur.take(">IH")
    time_base = time_base_raw & 0xFFFFFF
    pmus = []
    for _ in range(num_pmu):
        station = cur.take_name()
        id_code, fmt, n_ph, n_an, n_dg = cur.take(">HHHHH")
        names = [cur.take_name() for _ in range(n_ph + n_an + 16 * n_dg)]
        ph_types, ph_factors = [], []
        for _ in range(n_ph):
            (unit,) = cur.take(">I")
            ph_types.append("I" if (unit >> 24) & 0xFF else "V")
            ph_factors.append(unit & 0xFFFFFF)
        an_types, an_factors = [], []
        for _ in range(n_an):
            (unit,) = cur.take(">I")
            an_types.append((unit >> 24) & 0xFF)
            an_factors.append(unit & 0xFFFFFF)
        dig_units = []
        for _ in range(n_dg):
            (unit,) = cur.take(">I")
            dig_units.append(((unit >> 16) & 0xFFFF, unit & 0xFFFF))
        fnom_word, cfg_count = cur.take(">HH")
        pmus.append(PmuConfig(
            station=station,
            id_code=id_code,
            phasor_names=names[:n_ph],
            phasor_types=ph_types,
            phasor_factors=ph_factors,
            analog_names=names[n_ph:n_ph + n_an],
            analog_types=an_types,
            analog_factors=an_factors,
            digital_names=names[n_ph + n_an:],
            digital_units=dig_units,
            fnom_hz=50 if fnom_word & 1 else 60,
            cfg_count=cfg_count,
            coord_polar=bool(fmt & 1),
            phasor_float=bool(fmt & 2),
            analog_float=bool(fmt & 4),
            freq_float=bool(fmt & 8),
        ))
    (data_rate,) = cur.take(">h")
    if cur.offset != len(buf) - CHK_LEN:
        raise SizeMismatch(
            f"config frame body ends at {cur.offset}, checksum expected at {len(buf) - CHK_LEN}",
            offset=cur.offset,
        )
    if data_rate <= 0:
        raise FrameDecodeError(f"data_rate {data_rate} must be positive in this subset")
    return ConfigFrame(header=header, time_base=time_base, pmus=pmus, data_rate=data_rate)


def decode(buf: bytes, cfg=None) -> Frame:
    """Decode one frame from ``buf``.

    ``cfg`` is required for data frames: a ConfigFrame or a mapping of
    stream id_code -> ConfigFrame.  The checksum is verified before any
    structural field, so that any corrupted buffer of plausible length
    fails with BadChecksum rather than a downstream parse error.
    """
    if len(buf) < MIN_FRAME_LEN:
        raise SizeMismatch(
            f"buffer of {len(buf)} bytes is shorter than the {MIN_FRAME_LEN}-byte minimum frame",
            offset=0,
        )
    stored = struct.unpack(">H", buf[-CHK_LEN:])[0]
    computed = crc16_ccitt(buf[:-CHK_LEN])
    if stored != computed:
        raise BadChecksum(
            f"stored CRC 0x{stored:04X} != computed 0x{computed:04X}", offset=len(buf) - CHK_LEN
        )
    header = _decode_header(buf)
    if header.frame_type == TYPE_DATA:
        governing = cfg
        if isinstance(cfg, dict):
            governing = cfg.get(header.id_code)
        if governing is None:
            raise MissingConfig(
                f"no configuration for stream id_code {header.id_code}", offset=4
            )
        frame = _decode_data(buf, header, governing)
    elif header.frame_type == TYPE_CFG2:
        frame = _decode_config(buf, header)
    elif header.frame_type == TYPE_HEADER:
        frame = HeaderFrame(header=header,
                            text=buf[HEADER_LEN:-CHK_LEN].decode("ascii", errors="replace"))
    else:  # TYPE_COMMAND
        if len(buf) != HEADER_LEN + 2 + CHK_LEN:
            raise SizeMismatch(f"command frame must be 18 bytes, got {len(buf)}", offset=2)
        code = struct.unpack_from(">H", buf, HEADER_LEN)[0]
        if code not in COMMAND_NAMES:
            raise UnknownCommand(f"command code {code} not in documented set")
        frame = CommandFrame(header=header, command=code)
    frame.chk = stored
    return frame


# ---------------------------------------------------------------------------
# Engineering-unit records
# ---------------------------------------------------------------------------

def to_record(frame: DataFrame, cfg: ConfigFrame, pmu_index: int = 0) -> MeasurementRecord:
    """Convert one PMU block of a decoded data frame to engineering units.

    Frequency becomes absolute Hz (nominal offset applied when the wire
    carries a deviation), ROCOF stays Hz/s, phasors stay volts/amps and
    radians in (-pi, pi].
    """
    if pmu_index >= len(frame.pmus) or pmu_index >= cfg.num_pmu:
        raise ChannelCountMismatch(f"PMU index {pmu_index} outside frame/config blocks")
    block = frame.pmus[pmu_index]
    pcfg = cfg.pmus[pmu_index]
    freq_hz = block.freq if pcfg.freq_float else pcfg.fnom_hz + block.freq
    return MeasurementRecord(
        station=pcfg.station,
        stream_id=frame.header.id_code,
        pmu_index=pmu_index,
        soc=frame.header.soc,
        frac_count=frame.header.frac_count,
        time_base=cfg.time_base,
        freq_hz=freq_hz,
        rocof_hzps=block.dfreq,
        phasors=list(block.phasors),
        analogs=list(block.analogs),
        digitals=list(block.digitals),
        stat=block.stat,
    )


def to_records(frame: DataFrame, cfg: ConfigFrame) -> list[MeasurementRecord]:
    return [to_record(frame, cfg, i) for i in range(len(frame.pmus))]


# ---------------------------------------------------------------------------
# Inspection
# ---------------------------------------------------------------------------

_TYPE_NAMES = {
    TYPE_DATA: "data",
    TYPE_HEADER: "header",
    TYPE_CFG1: "CFG-1",
    TYPE_CFG2: "CFG-2",
    TYPE_COMMAND: "command",
    TYPE_CFG3: "CFG-3",
}


def describe_frame(buf: bytes, cfg: ConfigFrame | None = None, as_record: bool = False) -> str:
    """Human-readable field-by-field dump of a frame buffer.

    Decode failures are reported with their byte offset instead of
    raising, so the tool stays usable on malformed captures.
    """
    lines = [f"buffer: {len(buf)} bytes"]
    if len(buf) >= 4:
        sync2 = buf[1]
        ftype = (sync2 >> 4) & 0x7
        declared = struct.unpack_from(">H", buf, 2)[0]
        lines.append(f"sync: 0x{buf[0]:02X}{sync2:02X} "
                     f"(type {_TYPE_NAMES.get(ftype, '?')}, version {sync2 & 0xF})")
        lines.append(f"frame_size: {declared}")
    if len(buf) >= MIN_FRAME_LEN:
        stored = struct.unpack(">H", buf[-CHK_LEN:])[0]
        computed = crc16_ccitt(buf[:-CHK_LEN])
        ok = "OK" if stored == computed else "MISMATCH"
        lines.append(f"chk: stored 0x{stored:04X}, computed 0x{computed:04X} [{ok}]")
    try:
        frame = decode(buf, cfg)
    except FrameDecodeError as exc:
        where = f" at byte offset {exc.offset}" if exc.offset is not None else ""
        lines.append(f"decode error: {type(exc).__name__}{where}: {exc}")
        return "\n".join(lines)
    h = frame.header
    lines.append(f"id_code: {h.id_code}")
    lines.append(f"soc: {h.soc}  frac_count: {h.frac_count}  time_quality: 0x{h.time_quality:02X}")
    if isinstance(frame, DataFrame):
        tb = cfg.time_base if cfg else None
        if tb:
            lines.append(f"timestamp: {h.soc + h.frac_count / tb:.6f}")
        for i, block in enumerate(frame.pmus):
            lines.append(f"pmu[{i}] stat=0x{block.stat:04X} freq={block.freq!r} "
                         f"dfreq={block.dfreq!r}")
            for j, pv in enumerate(block.phasors):
                lines.append(f"  phasor[{j}]: {pv.magnitude:.6g} @ {pv.angle:+.6f} rad")
            if block.analogs:
                lines.append(f"  analogs: {block.analogs}")
            if block.digitals:
                lines.append("  digitals: " + " ".join(f"0x{w:04X}" for w in block.digitals))
        if as_record and cfg is not None:
            for rec in to_records(frame, cfg):
                lines.append(
                    f"record[{rec.pmu_index}] {rec.station!r} t={rec.timestamp:.6f} "
                    f"freq={rec.freq_hz!r} Hz rocof={rec.rocof_hzps!r} Hz/s"
                )
    elif isinstance(frame, ConfigFrame):
        lines.append(f"time_base: {frame.time_base}  data_rate: {frame.data_rate} fps  "
                     f"num_pmu: {frame.num_pmu}")
        for i, p in enumerate(frame.pmus):
            lines.append(f"pmu[{i}] {p.station!r} id={p.id_code} format=0x{p.format_word:04X} "
                         f"phasors={p.num_phasors} analogs={p.num_analogs} "
                         f"digital_words={p.num_digitals} fnom={p.fnom_hz} Hz")
            lines.append(f"  phasor channels: {p.phasor_names}")
    elif isinstance(frame, HeaderFrame):
        lines.append(f"text: {frame.text!r}")
    elif isinstance(frame, CommandFrame):
        lines.append(f"command: {frame.command} ({COMMAND_NAMES[frame.command]})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Demo configuration (three-phase single PMU, 52-byte data frames)
# ---------------------------------------------------------------------------

def demo_config(id_code: int = 1, soc: int = 1_000_000_000) -> ConfigFrame:
    """Single-PMU demo stream: 3 float32 polar voltage phasors, float32
    freq/dfreq, no analogs, one digital word; 52-byte data frames."""
    pmu = PmuConfig(
        station="STATION A",
        id_code=id_code,
        phasor_names=["VA", "VB", "VC"],
        phasor_types=["V", "V", "V"],
        digital_names=[f"DG0B{b:02d}" for b in range(16)],
        fnom_hz=60,
        cfg_count=1,
    )
    header = FrameHeader(frame_type=TYPE_CFG2, id_code=id_code, soc=soc)
    return ConfigFrame(header=header, time_base=1_000_000, pmus=[pmu], data_rate=60)


def demo_data_frame(cfg: ConfigFrame | None = None, soc: int = 1_000_000_000,
                    frac_count: int = 0) -> DataFrame:
    """Nominal 60.000 Hz three-phase sample matching :func:`demo_config`."""
    if cfg is None:
        cfg = demo_config(soc=soc)
    mag = _f32(288675.0)  # ~500 kV line-to-neutral
    third = _f32(2.0 * math.pi / 3.0)
    block = PmuData(
        stat=0,
        phasors=[PhasorValue(mag, 0.0), PhasorValue(mag, -third), PhasorValue(mag, third)],
        freq=60.0,
        dfreq=0.0,
        digitals=[0],
    )
    header = FrameHeader(frame_type=TYPE_DATA, id_code=cfg.id_code, soc=soc,
                         frac_count=frac_count)
    return DataFrame(header=header, pmus=[block])
