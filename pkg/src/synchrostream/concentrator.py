"""Data-concentrator receiver: listen on UDP, decode frames, deduplicate,
time-align multiple PMU streams, downsample to a 1 Hz cadence, and log
receive timestamps.

Threading contract: one socket-reader task stamps each datagram with the
receive time at socket read and enqueues it; one processing task decodes,
deduplicates, aligns and forwards.  Receive-timestamping always happens
before queuing, processing order equals receive order, and stats exposed
to outside observers are read-only snapshots.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from .frames import (
    CMD_SEND_CFG2,
    CommandFrame,
    ConfigFrame,
    DataFrame,
    FrameDecodeError,
    FrameHeader,
    MeasurementRecord,
    MissingConfig,
    TYPE_COMMAND,
    decode,
    encode,
    to_records,
)
from .trace import RecvLogRow

__all__ = [
    "BindError",
    "DedupWindow",
    "AlignedRecord",
    "Aligner",
    "OneHzDownsampler",
    "StreamStats",
    "UdpListener",
]

logger = logging.getLogger(__name__)

DEFAULT_WAIT_MS = 50.0  # PDC alignment wait, inside the typical 30-80 ms band
RECV_BUF_BYTES = 8 << 20


class BindError(OSError):
    """Could not bind the listening socket."""


SourceKey = tuple[int, int]  # (stream id_code, pmu block index)


# ---------------------------------------------------------------------------
# Deduplication
# ---------------------------------------------------------------------------

class DedupWindow:
    """Bounded FIFO window of recently-seen frame identities.

    UDP carries no sequence numbers, so identity is reconstructed from
    the payload (idcode, soc, fracsec).  A repeat inside the window is a
    duplicate; once an identity is evicted a late repeat passes again —
    a documented limitation of the bounded window.  Capacity should
    cover at least 2 s of frames at the configured rate.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("dedup window capacity must be >= 1")
        self.capacity = capacity
        self._seen: OrderedDict = OrderedDict()

    @classmethod
    def for_rate(cls, fps: int, streams: int = 1) -> "DedupWindow":
        return cls(max(256, 2 * fps * streams))

    def check(self, identity) -> bool:
        """True = keep (first sighting in the window), False = drop."""
        if identity in self._seen:
            self._seen.move_to_end(identity)
            return False
        self._seen[identity] = None
        if len(self._seen) > self.capacity:
            self._seen.popitem(last=False)
        return True


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

@dataclass
class AlignedRecord:
    """Per-PMU records sharing one timestamp; absent sources are None."""

    soc: int
    frac_count: int
    time_base: int
    entries: dict[SourceKey, MeasurementRecord | None]

    @property
    def timestamp(self) -> float:
        return self.soc + self.frac_count / self.time_base

    @property
    def missing(self) -> int:
        return sum(1 for v in self.entries.values() if v is None)


class Aligner:
    """Merge per-PMU record streams on their timestamps.

    A timestamp is emitted when every expected source has reported or
    when ``wait_ms`` has elapsed since its first arrival, whichever comes
    first; emission order is strictly timestamp order, so a complete
    late timestamp still waits behind an earlier incomplete one.  Records
    arriving after their timestamp was emitted count as late drops.
    """

    def __init__(self, sources: list[SourceKey], time_base: int,
                 wait_ms: float = DEFAULT_WAIT_MS):
        if not sources:
            raise ValueError("aligner needs at least one expected source")
        self.sources = list(sources)
        self.time_base = time_base
        self.wait_s = wait_ms / 1000.0
        self.late_drops = 0
        self._pending: OrderedDict = OrderedDict()  # (soc, frac) -> (first_seen, entries)
        self._emitted_upto: tuple[int, int] | None = None

    def push(self, record: MeasurementRecord, now: float | None = None) -> list[AlignedRecord]:
        now = time.monotonic() if now is None else now
        key = (record.soc, record.frac_count)
        if self._emitted_upto is not None and key <= self._emitted_upto:
            self.late_drops += 1
            return self.flush(now)
        if key not in self._pending:
            self._pending[key] = (now, {s: None for s in self.sources})
            self._pending.move_to_end(key)
        src = (record.stream_id, record.pmu_index)
        if src in self._pending[key][1]:
            self._pending[key][1][src] = record
        return self.flush(now)

    def _emit(self, key) -> AlignedRecord:
        _, entries = self._pending.pop(key)
        self._emitted_upto = key
        return AlignedRecord(soc=key[0], frac_count=key[1],
                             time_base=self.time_base, entries=entries)

    def flush(self, now: float | None = None) -> list[AlignedRecord]:
        """Emit every leading timestamp that is complete or timed out."""
        now = time.monotonic() if now is None else now
        out = []
        while self._pending:
            key = min(self._pending)
            first_seen, entries = self._pending[key]
            complete = all(v is not None for v in entries.values())
            if complete or (now - first_seen) >= self.wait_s:
                out.append(self._emit(key))
            else:
                break
        return out

    def close(self) -> list[AlignedRecord]:
        """Emit everything still pending, in timestamp order."""
        out = []
        while self._pending:
            out.append(self._emit(min(self._pending)))
        return out


# ---------------------------------------------------------------------------
# 1 Hz downsampling
# ---------------------------------------------------------------------------

class OneHzDownsampler:
    """Reduce a per-PMU record stream to one frequency sample per second.

    The sample for a second is the frame whose fraction count is zero;
    if that frame is absent, the mean of the second's frames; a second
    with no frames at all yields a gap marker (freq None).
    """

    def __init__(self):
        self._current_soc: int | None = None
        self._zero_frac: float | None = None
        self._acc: list[float] = []

    def _finish(self) -> tuple[int, float | None]:
        soc = self._current_soc
        if self._zero_frac is not None:
            value = self._zero_frac
        elif self._acc:
            value = sum(self._acc) / len(self._acc)
        else:
            value = None
        self._zero_frac = None
        self._acc = []
        return (soc, value)

    def push(self, record: MeasurementRecord) -> list[tuple[int, float | None]]:
        """Feed one record; returns completed (soc, freq-or-None) seconds."""
        out: list[tuple[int, float | None]] = []
        if self._current_soc is None:
            self._current_soc = record.soc
        elif record.soc < self._current_soc:
            logger.warning("downsampler ignoring out-of-order second %d", record.soc)
            return out
        elif record.soc > self._current_soc:
            out.append(self._finish())
            # wholly-missing seconds between records become gap markers
            for soc in range(self._current_soc + 1, record.soc):
                out.append((soc, None))
            self._current_soc = record.soc
        if record.frac_count == 0:
            self._zero_frac = record.freq_hz
        else:
            self._acc.append(record.freq_hz)
        return out

    def flush(self) -> list[tuple[int, float | None]]:
        if self._current_soc is None:
            return []
        out = [self._finish()]
        self._current_soc = None
        return out


# ---------------------------------------------------------------------------
# Listener
# ---------------------------------------------------------------------------

@dataclass
class StreamStats:
    """Receive-side counters; ``snapshot`` hands out an independent copy."""

    datagrams: int = 0
    bytes_received: int = 0
    frames_received: int = 0  # data frames decoded, duplicates included
    duplicates_dropped: int = 0
    forwarded: int = 0
    decode_failures: int = 0
    missing_config_skips: int = 0
    config_frames: int = 0
    other_frames: int = 0
    frames_missing: int = 0
    late_drops: int = 0

    def snapshot(self) -> "StreamStats":
        return StreamStats(**vars(self))


class UdpListener:
    """Receive C37.118 frames on UDP and feed aligned records to a sink.

    The configuration may be supplied up front (ConfigFrame or mapping of
    id_code to ConfigFrame) or requested from a PMU address with a
    "send CFG-2" command frame at startup; config frames arriving on the
    socket are adopted either way.  Invalid frames are counted, never
    fatal.
    """

    def __init__(self, bind: tuple[str, int], cfgs: ConfigFrame | dict[int, ConfigFrame] | None,
                 sink=None, *, wait_ms: float = DEFAULT_WAIT_MS,
                 request_config_from: tuple[str, int] | None = None,
                 keep_recv_log: bool = True, dedup_capacity: int | None = None):
        if isinstance(cfgs, ConfigFrame):
            cfgs = {cfgs.id_code: cfgs}
        self._cfgs: dict[int, ConfigFrame] = dict(cfgs or {})
        self._sink = sink
        self._wait_ms = wait_ms
        self._keep_recv_log = keep_recv_log
        self.recv_rows: list[RecvLogRow] = []
        self._stats = StreamStats()
        self._aligners: dict[int, Aligner] = {}
        self._dedup_capacity = dedup_capacity
        self._dedup: DedupWindow | None = None
        self._span: dict[int, tuple[int, int]] = {}  # idcode -> (min_idx, max_idx)
        self._unique: dict[int, int] = {}  # idcode -> frames kept after dedup
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._stop = threading.Event()
        self._last_datagram = time.monotonic()

        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, RECV_BUF_BYTES)
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._sock.bind(bind)
        except OSError as exc:
            raise BindError(f"cannot bind UDP socket on {bind[0]}:{bind[1]}: {exc}") from exc
        self._sock.settimeout(0.1)

        if request_config_from is not None:
            self._request_config(request_config_from)

        self._reader = threading.Thread(target=self._read_loop, name="udp-reader", daemon=True)
        self._processor = threading.Thread(target=self._process_loop, name="frame-processor",
                                           daemon=True)
        self._reader.start()
        self._processor.start()

    # -- public surface ----------------------------------------------------

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    @property
    def stats(self) -> StreamStats:
        return self._stats.snapshot()

    @property
    def configs(self) -> dict[int, ConfigFrame]:
        return dict(self._cfgs)

    def idle_for(self) -> float:
        return time.monotonic() - self._last_datagram

    def wait(self, *, expected_frames: int | None = None, idle_timeout_s: float = 1.0,
             max_wait_s: float | None = None) -> StreamStats:
        """Block until ``expected_frames`` data frames arrived, the socket
        has been idle for ``idle_timeout_s``, or ``max_wait_s`` elapsed."""
        start = time.monotonic()
        while True:
            if expected_frames is not None and self._stats.frames_received >= expected_frames:
                return self.stats
            if self.idle_for() >= idle_timeout_s:
                return self.stats
            if max_wait_s is not None and time.monotonic() - start >= max_wait_s:
                return self.stats
            time.sleep(0.02)

    def stop(self) -> StreamStats:
        """Stop both tasks, flush the aligners, and return final stats."""
        if not self._stop.is_set():
            self._stop.set()
            self._reader.join(timeout=2.0)
            self._queue.put(None)
            self._processor.join(timeout=5.0)
            for aligner in self._aligners.values():
                for aligned in aligner.close():
                    self._deliver(aligned)
                self._stats.late_drops += aligner.late_drops
            self._finalize_missing()
        self._sock.close()
        return self.stats

    # -- internals ----------------------------------------------------------

    def _request_config(self, pmu_addr: tuple[str, int]):
        cmd = CommandFrame(
            header=FrameHeader(frame_type=TYPE_COMMAND, id_code=0xFFFF,
                               soc=int(time.time())),
            command=CMD_SEND_CFG2,
        )
        self._sock.sendto(encode(cmd), pmu_addr)
        logger.info("sent CFG-2 request to %s:%d", *pmu_addr)

    def _read_loop(self):
        while not self._stop.is_set():
            try:
                data, _addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            recv_ts_ns = time.time_ns()
            self._last_datagram = time.monotonic()
            self._stats.datagrams += 1
            self._stats.bytes_received += len(data)
            self._queue.put((data, recv_ts_ns))

    def _process_loop(self):
        while True:
            try:
                item = self._queue.get(timeout=0.05)
            except queue.Empty:
                self._tick_aligners()
                continue
            if item is None:
                break
            self._handle_datagram(*item)

    def _tick_aligners(self):
        for aligner in self._aligners.values():
            for aligned in aligner.flush():
                self._deliver(aligned)

    def _handle_datagram(self, data: bytes, recv_ts_ns: int):
        try:
            frame = decode(data, self._cfgs if self._cfgs else None)
        except MissingConfig:
            self._stats.missing_config_skips += 1
            return
        except FrameDecodeError:
            self._stats.decode_failures += 1
            return
        if isinstance(frame, ConfigFrame):
            self._cfgs[frame.id_code] = frame
            self._stats.config_frames += 1
            logger.info("adopted CFG-2 for stream %d (%d PMU block(s), %d fps)",
                        frame.id_code, frame.num_pmu, frame.data_rate)
            return
        if not isinstance(frame, DataFrame):
            self._stats.other_frames += 1
            return

        self._stats.frames_received += 1
        cfg = self._cfgs[frame.header.id_code]
        if self._keep_recv_log:
            self.recv_rows.append(RecvLogRow(
                idcode=frame.header.id_code,
                soc=frame.header.soc,
                fracsec=frame.header.frac_count,
                recv_ts_ns=recv_ts_ns,
                size_bytes=len(data),
            ))

        if self._dedup is None:
            streams = max(1, len(self._cfgs))
            cap = self._dedup_capacity or max(256, 2 * cfg.data_rate * streams)
            self._dedup = DedupWindow(cap)
        identity = (frame.header.id_code, frame.header.soc, frame.header.frac_count)
        if not self._dedup.check(identity):
            self._stats.duplicates_dropped += 1
            return
        self._stats.forwarded += 1
        self._unique[frame.header.id_code] = self._unique.get(frame.header.id_code, 0) + 1
        self._track_span(frame.header, cfg)

        aligner = self._aligners.get(frame.header.id_code)
        if aligner is None:
            sources = [(frame.header.id_code, i) for i in range(cfg.num_pmu)]
            aligner = Aligner(sources, cfg.time_base, wait_ms=self._wait_ms)
            self._aligners[frame.header.id_code] = aligner
        for record in to_records(frame, cfg):
            for aligned in aligner.push(record):
                self._deliver(aligned)

    def _track_span(self, header, cfg: ConfigFrame):
        step = cfg.time_base // cfg.data_rate
        idx = header.soc * cfg.data_rate + header.frac_count // step
        lo, hi = self._span.get(header.id_code, (idx, idx))
        self._span[header.id_code] = (min(lo, idx), max(hi, idx))

    def _finalize_missing(self):
        # expected = span of observed frame indices; undercounts when the
        # first or last frames of a run are themselves lost
        missing = 0
        for idcode, (lo, hi) in self._span.items():
            expected = hi - lo + 1
            missing += expected - self._unique.get(idcode, 0)
        self._stats.frames_missing = missing

    def _deliver(self, aligned: AlignedRecord):
        if self._sink is None:
            return
        try:
            self._sink(aligned)
        except Exception:
            logger.exception("record sink raised; continuing")
