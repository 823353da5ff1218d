"""End-to-end orchestration: playback, concentration, and detection in one
process over loopback, leaving behind the send/receive/event logs needed
to rerun the trace analysis offline.

The sender, receiver, and detector mirror the three roles of a
generator -> network -> receiver/edge deployment; here the receiver and
the detector share a process and the network is the loopback interface.
Multi-host splits use the individual ``play``/``listen``/``detect``
entry points instead.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import archive as archive_mod
from . import detector as detector_mod
from .concentrator import AlignedRecord, OneHzDownsampler, UdpListener
from .detector import DetectorConfig, OnlineDetector
from .emulator import PlaybackPlan, play
from .trace import (
    compliance_check,
    join_traces,
    latency_stats,
    stats_to_json,
    write_gap_csv,
    write_recv_log,
    write_send_log,
)

__all__ = ["E2EOptions", "run_e2e"]

logger = logging.getLogger(__name__)


@dataclass
class E2EOptions:
    out_dir: Path
    pacing: str | float = "max"
    start_soc: int = 1_000_000_000
    bind_host: str = "127.0.0.1"
    bind_port: int = 0  # 0 = ephemeral
    clock_offset_s: float = 0.0
    skew_correction_s: float | None = None  # None = use clock_offset_s
    wait_ms: float = 50.0
    detect_stream: int | None = None  # id_code; None = the archive stream
    detect_pmu: int = 0
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    drain_idle_s: float = 1.0
    drain_max_s: float = 30.0


def _write_aligned_csv(path: Path, aligned: list[AlignedRecord], num_pmu: int,
                       stream_id: int, start_soc: int):
    header = ["t_s"]
    for k in range(num_pmu):
        header += [f"pmu{k}_freq_hz", f"pmu{k}_rocof_hzps", f"pmu{k}_vmag_v", f"pmu{k}_vang_rad"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in aligned:
            row = [repr(rec.timestamp - start_soc)]
            for k in range(num_pmu):
                entry = rec.entries.get((stream_id, k))
                if entry is None:
                    row += ["", "", "", ""]
                else:
                    row += [repr(entry.freq_hz), repr(entry.rocof_hzps),
                            repr(entry.phasors[0].magnitude), repr(entry.phasors[0].angle)]
            writer.writerow(row)


def _write_series_csv(path: Path, series: list[tuple[int, float | None]], start_soc: int):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "freq_hz"])
        for soc, freq in series:
            writer.writerow([soc - start_soc, "" if freq is None else repr(freq)])


def run_e2e(archive_path: str | Path, opts: E2EOptions, *, stop=None,
            progress: dict | None = None) -> dict:
    """Run playback -> UDP -> concentrator -> detector on loopback.

    Returns a report dict (also written to ``report.json``) and leaves
    send_log.csv, recv_log.csv, events.jsonl plus the aligned, 1 Hz
    series, plot, gap and latency-stats files under ``opts.out_dir``.
    """
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    progress = progress if progress is not None else {}

    arch = archive_mod.load_archive(archive_path)
    stream_id = opts.detect_stream if opts.detect_stream is not None else arch.config.id_code
    detect_key = (stream_id, opts.detect_pmu)
    arch.config.header.soc = opts.start_soc

    det = OnlineDetector(opts.detector)
    downsampler = OneHzDownsampler()
    aligned_records: list[AlignedRecord] = []
    series: list[tuple[int, float | None]] = []

    def feed_detector(soc: int, freq: float | None):
        series.append((soc, freq))
        det.push_sample(float(soc), freq)

    def sink(rec: AlignedRecord):
        aligned_records.append(rec)
        entry = rec.entries.get(detect_key)
        if entry is not None:
            for soc, freq in downsampler.push(entry):
                feed_detector(soc, freq)

    progress["stage"] = "listening"
    listener = UdpListener((opts.bind_host, opts.bind_port), arch.config, sink,
                           wait_ms=opts.wait_ms)
    try:
        plan = PlaybackPlan.for_archive(
            arch, destination=(opts.bind_host, listener.port),
            start_soc=opts.start_soc, clock_offset_s=opts.clock_offset_s,
        )
        progress["stage"] = "playing"
        progress["frames_total"] = len(arch.rows)

        def on_progress(sent, total):
            progress["frames_sent"] = sent

        report = play(plan, pacing=opts.pacing, stop=stop, on_progress=on_progress)
        progress["stage"] = "draining"
        listener.wait(expected_frames=report.frames_sent,
                      idle_timeout_s=opts.drain_idle_s, max_wait_s=opts.drain_max_s)
    finally:
        stats = listener.stop()
    for soc, freq in downsampler.flush():
        feed_detector(soc, freq)

    progress["stage"] = "writing"
    send_log = out / "send_log.csv"
    recv_log = out / "recv_log.csv"
    write_send_log(report.send_log, send_log)
    write_recv_log(listener.recv_rows, recv_log)
    _write_aligned_csv(out / "aligned.csv", aligned_records, arch.num_pmu,
                       stream_id, opts.start_soc)
    _write_series_csv(out / "series_1hz.csv", series, opts.start_soc)
    detector_mod.write_events_jsonl(det.report.events, out / "events.jsonl")
    detector_mod.write_plot_csv(det.plot_rows, out / "plot.csv", t0=opts.start_soc)

    progress["stage"] = "analyzing"
    skew = opts.skew_correction_s if opts.skew_correction_s is not None else opts.clock_offset_s
    records = join_traces(report.send_log, listener.recv_rows)
    lstats = latency_stats(records, skew_correction_s=skew)
    compliance = compliance_check(lstats)
    (out / "latency_stats.json").write_text(stats_to_json(lstats, compliance) + "\n")
    write_gap_csv(lstats, out / "gaps.csv")

    events = [json.loads(e.to_json()) for e in det.report.events]
    for e in events:
        e["t_rel_s"] = e["ts"] - opts.start_soc
    summary = {
        "archive": str(archive_path),
        "frames_sent": report.frames_sent,
        "send_wall_s": report.wall_s,
        "pacing_overruns": report.overruns,
        "receiver": vars(stats),
        "latency": lstats.to_dict(),
        "compliance": compliance.to_dict(),
        "detector": {
            "samples": det.report.samples,
            "refits": det.report.refits,
            "mean_refit_s": det.report.mean_refit_s,
            "gaps_filled": det.report.gaps_filled,
            "resets": det.report.resets,
            "events": events,
        },
        "paths": {
            "send_log": str(send_log),
            "recv_log": str(recv_log),
            "aligned": str(out / "aligned.csv"),
            "series_1hz": str(out / "series_1hz.csv"),
            "events": str(out / "events.jsonl"),
            "plot": str(out / "plot.csv"),
            "latency_stats": str(out / "latency_stats.json"),
            "gaps": str(out / "gaps.csv"),
        },
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    progress["stage"] = "done"
    return summary
