"""Playback of archived measurements as paced real-time UDP data frames.

One playback task owns the socket and the plan.  Frames are paced with
absolute-deadline scheduling (sleep until the next send instant) so
timing error does not accumulate over long replays; a numeric speedup
replays archive time faster than wall time and ``"max"`` disables pacing
entirely.

Clock skew between the sending and receiving hosts is modeled, not
measured: ``clock_offset_s`` is how far the sender's wall clock lags the
receiver's.  Logged send timestamps are shifted earlier by the offset,
which inflates observed receive-send gaps by the same amount, and the
trace analyzer's ``skew_correction`` removes it again.
"""

from __future__ import annotations

import logging
import socket
import time
from dataclasses import dataclass, field

import numpy as np

from .archive import Archive, ArchiveRow
from .frames import (
    ConfigFrame,
    DataFrame,
    FrameHeader,
    PhasorValue,
    PmuData,
    TYPE_DATA,
    encode,
)
from .trace import SendLogRow

__all__ = ["PlaybackPlan", "PlaybackReport", "play", "frame_for_row"]

logger = logging.getLogger(__name__)

OVERRUN_TOL_S = 0.002  # pacing error before a frame counts as overrun


@dataclass
class PlaybackPlan:
    cfg: ConfigFrame
    rows: list[ArchiveRow]
    fps: int
    destination: tuple[str, int]
    start_soc: int = 1_000_000_000
    clock_offset_s: float = 0.0  # sender wall-clock lag vs receiver
    clock_jitter_std_s: float = 0.0
    jitter_seed: int = 0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.fps != self.cfg.data_rate:
            raise ValueError(
                f"plan fps {self.fps} != config data_rate {self.cfg.data_rate}"
            )
        if self.cfg.time_base % self.fps:
            raise ValueError(
                f"time_base {self.cfg.time_base} is not a multiple of fps {self.fps}; "
                "per-frame fraction increments would not be exact"
            )

    @classmethod
    def for_archive(cls, archive: Archive, destination: tuple[str, int], **kwargs) -> "PlaybackPlan":
        return cls(cfg=archive.config, rows=archive.rows, fps=archive.fps,
                   destination=destination, **kwargs)


@dataclass
class PlaybackReport:
    frames_sent: int
    bytes_sent: int
    wall_s: float
    overruns: int
    send_log: list[SendLogRow] = field(repr=False)


def frame_for_row(row: ArchiveRow, cfg: ConfigFrame, plan_start_soc: int,
                  frame_index: int, fps: int) -> DataFrame:
    """Build the data frame for one archive row.

    Timestamps preserve the archive's own offsets rebased onto
    ``plan_start_soc``: soc advances every fps frames and the fraction
    count steps by time_base/fps exactly.
    """
    step = cfg.time_base // fps
    header = FrameHeader(
        frame_type=TYPE_DATA,
        id_code=cfg.id_code,
        soc=plan_start_soc + frame_index // fps,
        frac_count=(frame_index % fps) * step,
    )
    blocks = []
    for sample, pcfg in zip(row.pmus, cfg.pmus):
        freq = sample.freq_hz if pcfg.freq_float else sample.freq_hz - pcfg.fnom_hz
        blocks.append(PmuData(
            stat=0,
            phasors=[PhasorValue(sample.vmag_v, sample.vang_rad)],
            freq=freq,
            dfreq=sample.rocof_hzps,
        ))
    return DataFrame(header=header, pmus=blocks)


def _resolve_pacing(pacing) -> float | None:
    """Map a pacing spec to a speedup factor (None disables pacing)."""
    if pacing in ("max", "max-rate", None):
        return None
    if pacing == "realtime":
        return 1.0
    speedup = float(pacing)
    if speedup <= 0:
        raise ValueError(f"pacing speedup must be positive, got {pacing!r}")
    return speedup


def play(plan: PlaybackPlan, pacing="realtime", *, announce_config: bool = False,
         stop=None, on_progress=None) -> PlaybackReport:
    """Stream one data frame per archive row to the plan's destination.

    ``pacing`` is ``"realtime"``, ``"max"``, or a numeric speedup factor.
    Pacing overruns are logged, never fatal.  ``stop`` (an object with
    ``is_set()``) aborts playback between frames.
    """
    speedup = _resolve_pacing(pacing)
    if len(plan.rows) != len({round(r.t * plan.fps) for r in plan.rows}):
        raise ValueError("archive rows do not map to distinct frame indices")

    jitter_rng = None
    if plan.clock_jitter_std_s > 0:
        jitter_rng = np.random.default_rng(plan.jitter_seed)
    offset_ns = round(plan.clock_offset_s * 1e9)

    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        if plan.destination[0].endswith(".255") or plan.destination[0] == "255.255.255.255":
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        send_log: list[SendLogRow] = []
        frames_sent = 0
        bytes_sent = 0
        overruns = 0

        if announce_config:
            sock.sendto(encode(plan.cfg), plan.destination)

        t0 = time.perf_counter()
        for row in plan.rows:
            if stop is not None and stop.is_set():
                logger.info("playback stopped after %d frames", frames_sent)
                break
            index = round(row.t * plan.fps)
            if speedup is not None:
                deadline = t0 + row.t / speedup
                delay = deadline - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                elif delay < -OVERRUN_TOL_S:
                    overruns += 1
            frame = frame_for_row(row, plan.cfg, plan.start_soc, index, plan.fps)
            payload = encode(frame, plan.cfg)
            sock.sendto(payload, plan.destination)
            send_ts_ns = time.time_ns() - offset_ns
            if jitter_rng is not None:
                send_ts_ns += round(jitter_rng.normal(0.0, plan.clock_jitter_std_s) * 1e9)
            send_log.append(SendLogRow(
                seq=index,
                idcode=frame.header.id_code,
                soc=frame.header.soc,
                fracsec=frame.header.frac_count,
                send_ts_ns=send_ts_ns,
            ))
            frames_sent += 1
            bytes_sent += len(payload)
            if on_progress is not None and frames_sent % 600 == 0:
                on_progress(frames_sent, len(plan.rows))
        wall_s = time.perf_counter() - t0
    finally:
        sock.close()

    if overruns:
        logger.warning("pacing overran %.1f ms tolerance on %d of %d frames",
                       OVERRUN_TOL_S * 1e3, overruns, frames_sent)
    return PlaybackReport(frames_sent=frames_sent, bytes_sent=bytes_sent,
                          wall_s=wall_s, overruns=overruns, send_log=send_log)
