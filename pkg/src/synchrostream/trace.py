"""Timestamp-trace analysis: join send/receive logs, filter duplicates and
losses, and compute latency statistics with plot-ready gap exports.

Log schemas (CSV, UTF-8):

* send log:    ``seq,idcode,soc,fracsec,send_ts_ns``
* receive log: ``idcode,soc,fracsec,recv_ts_ns,size_bytes``

Frames are matched on the payload identity (idcode, soc, fracsec); UDP
itself carries no sequence numbers.  Duplicate receives resolve to the
first receipt, unmatched sends become loss records, and all statistics
are computed over the deduplicated join only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "TraceError",
    "SchemaError",
    "EmptyTrace",
    "NegativeLatencyWarning",
    "FrameIdentity",
    "SendLogRow",
    "RecvLogRow",
    "TraceRecord",
    "LatencyStats",
    "ComplianceReport",
    "write_send_log",
    "write_recv_log",
    "read_send_log",
    "read_recv_log",
    "join_traces",
    "latency_stats",
    "estimate_skew",
    "compliance_check",
    "write_gap_csv",
]

logger = logging.getLogger(__name__)

SEND_LOG_HEADER = ["seq", "idcode", "soc", "fracsec", "send_ts_ns"]
RECV_LOG_HEADER = ["idcode", "soc", "fracsec", "recv_ts_ns", "size_bytes"]

FrameIdentity = tuple[int, int, int]  # (idcode, soc, fracsec)


class TraceError(Exception):
    pass


class SchemaError(TraceError):
    pass


class EmptyTrace(TraceError):
    pass


class NegativeLatencyWarning(UserWarning):
    """More than 1% of corrected latencies are negative: clock-skew symptom."""


@dataclass
class SendLogRow:
    seq: int
    idcode: int
    soc: int
    fracsec: int
    send_ts_ns: int

    @property
    def identity(self) -> FrameIdentity:
        return (self.idcode, self.soc, self.fracsec)


@dataclass
class RecvLogRow:
    idcode: int
    soc: int
    fracsec: int
    recv_ts_ns: int
    size_bytes: int

    @property
    def identity(self) -> FrameIdentity:
        return (self.idcode, self.soc, self.fracsec)


@dataclass
class TraceRecord:
    """One sent frame joined with its (first) receipt, if any."""

    identity: FrameIdentity
    seq: int
    send_ts_ns: int
    recv_ts_ns: int | None = None
    size_bytes: int | None = None
    receipts: int = 0  # receive-log rows matching this identity

    @property
    def lost(self) -> bool:
        return self.recv_ts_ns is None


@dataclass
class LatencyStats:
    n: int
    mean_ms: float
    median_ms: float
    p99_ms: float
    max_ms: float
    min_ms: float
    duplicates: int
    losses: int
    negative: int
    skew_correction_s: float
    gaps: list[tuple[int, float]] = field(repr=False)  # (packet_no, gap_s)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p99_ms": self.p99_ms,
            "max_ms": self.max_ms,
            "min_ms": self.min_ms,
            "duplicates": self.duplicates,
            "losses": self.losses,
            "negative": self.negative,
            "skew_correction_s": self.skew_correction_s,
        }


@dataclass
class ComplianceReport:
    """Latency verdict against a PMU-to-PDC delay envelope and a hard cap."""

    mean_within_envelope: bool
    p99_within_envelope: bool
    better_than_typical: bool
    hard_cap_violation: bool
    envelope_ms: tuple[float, float]
    hard_cap_s: float
    verdict: str

    def to_dict(self) -> dict:
        return {
            "mean_within_envelope": self.mean_within_envelope,
            "p99_within_envelope": self.p99_within_envelope,
            "better_than_typical": self.better_than_typical,
            "hard_cap_violation": self.hard_cap_violation,
            "envelope_ms": list(self.envelope_ms),
            "hard_cap_s": self.hard_cap_s,
            "verdict": self.verdict,
        }


# ---------------------------------------------------------------------------
# Log I/O
# ---------------------------------------------------------------------------

def write_send_log(rows: list[SendLogRow], path: str | Path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SEND_LOG_HEADER)
        for r in rows:
            writer.writerow([r.seq, r.idcode, r.soc, r.fracsec, r.send_ts_ns])


def write_recv_log(rows: list[RecvLogRow], path: str | Path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECV_LOG_HEADER)
        for r in rows:
            writer.writerow([r.idcode, r.soc, r.fracsec, r.recv_ts_ns, r.size_bytes])


def _read_rows(path: str | Path, header: list[str]) -> list[list[int]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty log") from None
        if got != header:
            raise SchemaError(f"{path}: header {got!r}, expected {header!r}")
        out = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                out.append([int(v) for v in raw])
            except ValueError as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from None
        return out


def read_send_log(path: str | Path) -> list[SendLogRow]:
    return [SendLogRow(*row) for row in _read_rows(path, SEND_LOG_HEADER)]


def read_recv_log(path: str | Path) -> list[RecvLogRow]:
    return [RecvLogRow(*row) for row in _read_rows(path, RECV_LOG_HEADER)]


# ---------------------------------------------------------------------------
# Join and statistics
# ---------------------------------------------------------------------------

def join_traces(send_rows: list[SendLogRow], recv_rows: list[RecvLogRow]) -> list[TraceRecord]:
    """Match receive rows to send rows on frame identity.

    Unmatched sends become loss records; identities received more than
    once keep the earliest receipt and bump the record's receipt count.
    Receive rows with no matching send are logged and ignored.  Output is
    ordered by send timestamp (then sequence number).
    """
    first_recv: dict[FrameIdentity, RecvLogRow] = {}
    counts: dict[FrameIdentity, int] = {}
    for r in recv_rows:
        key = r.identity
        counts[key] = counts.get(key, 0) + 1
        best = first_recv.get(key)
        if best is None or r.recv_ts_ns < best.recv_ts_ns:
            first_recv[key] = r

    records = []
    matched_keys = set()
    for s in send_rows:
        key = s.identity
        rec = first_recv.get(key)
        matched_keys.add(key)
        records.append(TraceRecord(
            identity=key,
            seq=s.seq,
            send_ts_ns=s.send_ts_ns,
            recv_ts_ns=rec.recv_ts_ns if rec else None,
            size_bytes=rec.size_bytes if rec else None,
            receipts=counts.get(key, 0),
        ))
    orphans = sum(c for k, c in counts.items() if k not in matched_keys)
    if orphans:
        logger.warning("%d received frame(s) had no matching send record", orphans)
    records.sort(key=lambda r: (r.send_ts_ns, r.seq))
    return records


def _percentile(sorted_values: list[float], p: float) -> float:
    # linear interpolation between order statistics
    if not sorted_values:
        raise EmptyTrace("no values")
    k = (len(sorted_values) - 1) * p / 100.0
    lo = math.floor(k)
    hi = math.ceil(k)
    if lo == hi:
        return sorted_values[int(k)]
    return sorted_values[lo] * (hi - k) + sorted_values[hi] * (k - lo)


def latency_stats(records: list[TraceRecord], skew_correction_s: float = 0.0) -> LatencyStats:
    """Latency statistics over deduplicated joined records.

    latency_i = recv - send - skew_correction.  The per-packet gap series
    (packet number vs uncorrected time gap) is exported for trace plots.
    Invariant under record reordering; duplicates only affect the
    duplicate counter.
    """
    if not records:
        raise EmptyTrace("no trace records to analyze")
    ordered = sorted(records, key=lambda r: (r.send_ts_ns, r.seq))
    duplicates = sum(max(0, r.receipts - 1) for r in ordered)
    losses = sum(1 for r in ordered if r.lost)

    skew_ns = skew_correction_s * 1e9
    latencies_ms = []
    gaps = []
    negative = 0
    for r in ordered:
        if r.lost:
            continue
        gap_ns = r.recv_ts_ns - r.send_ts_ns
        gaps.append((r.seq, gap_ns / 1e9))
        lat_ms = (gap_ns - skew_ns) / 1e6
        if lat_ms < 0:
            negative += 1
        latencies_ms.append(lat_ms)
    if not latencies_ms:
        raise EmptyTrace("every record in the trace was lost")

    if negative > 0.01 * len(latencies_ms):
        warnings.warn(
            f"{negative}/{len(latencies_ms)} corrected latencies are negative; "
            "check clock skew between sender and receiver",
            NegativeLatencyWarning,
            stacklevel=2,
        )

    ranked = sorted(latencies_ms)
    return LatencyStats(
        n=len(latencies_ms),
        mean_ms=sum(latencies_ms) / len(latencies_ms),
        median_ms=_percentile(ranked, 50.0),
        p99_ms=_percentile(ranked, 99.0),
        max_ms=ranked[-1],
        min_ms=ranked[0],
        duplicates=duplicates,
        losses=losses,
        negative=negative,
        skew_correction_s=skew_correction_s,
        gaps=gaps,
    )


def estimate_skew(records: list[TraceRecord]) -> float:
    """Minimum-gap skew estimate in seconds: the correction that maps the
    fastest observed packet to zero latency.  Opt-in; conflates true
    minimum latency with skew by construction."""
    gaps = [r.recv_ts_ns - r.send_ts_ns for r in records if not r.lost]
    if not gaps:
        raise EmptyTrace("cannot estimate skew without received frames")
    return min(gaps) / 1e9


def compliance_check(stats: LatencyStats, envelope_ms: tuple[float, float] = (20.0, 50.0),
                     hard_cap_s: float = 10.0) -> ComplianceReport:
    """Flag latency statistics against a typical PMU-to-PDC delay envelope
    (default 20-50 ms) and a hard real-time cap (default 10 s)."""
    lo, hi = envelope_ms
    mean_ok = lo <= stats.mean_ms <= hi
    p99_ok = lo <= stats.p99_ms <= hi
    better = stats.mean_ms < lo and stats.mean_ms >= 0
    hard_violation = stats.mean_ms > hard_cap_s * 1000.0 or stats.max_ms > hard_cap_s * 1000.0
    if hard_violation:
        verdict = f"hard-cap violation: latency beyond {hard_cap_s:g} s"
    elif better:
        verdict = f"better than typical: mean {stats.mean_ms:.3f} ms below the {lo:g} ms floor"
    elif mean_ok:
        verdict = f"within the {lo:g}-{hi:g} ms envelope"
    else:
        verdict = f"outside the {lo:g}-{hi:g} ms envelope"
    return ComplianceReport(
        mean_within_envelope=mean_ok,
        p99_within_envelope=p99_ok,
        better_than_typical=better,
        hard_cap_violation=hard_violation,
        envelope_ms=envelope_ms,
        hard_cap_s=hard_cap_s,
        verdict=verdict,
    )


def write_gap_csv(stats: LatencyStats, path: str | Path):
    """Per-packet gap series (``packet_no,gap_s``), the trace-plot export."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["packet_no", "gap_s"])
        for packet_no, gap_s in stats.gaps:
            writer.writerow([packet_no, repr(gap_s)])


def stats_to_json(stats: LatencyStats, compliance: ComplianceReport | None = None) -> str:
    payload = dict(stats.to_dict())
    if compliance is not None:
        payload["compliance"] = compliance.to_dict()
    return json.dumps(payload, indent=2)
