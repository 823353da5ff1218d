"""Measurement archives: the CSV replay format and synthetic signal generation.

An archive is a CSV file with header
``t_s,pmu<k>_freq_hz,pmu<k>_rocof_hzps,pmu<k>_vmag_v,pmu<k>_vang_rad``
repeated for k = 0..num_pmu-1, UTF-8, ``.`` decimal.  Rows are strictly
increasing in ``t_s`` with uniform spacing 1/data_rate.

All synthesized values are quantized to IEEE-754 single precision before
writing, so a round trip through float32 wire frames is bit-exact.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import ConfigFrame, FrameHeader, PmuConfig, TYPE_CFG2, wrap_angle

__all__ = [
    "ArchiveError",
    "ParseError",
    "NonMonotonicTime",
    "PmuSample",
    "ArchiveRow",
    "Archive",
    "SynthEvent",
    "load_archive",
    "save_archive",
    "synthesize",
    "config_for_archive",
]

NOMINAL_VMAG_V = 288675.0  # ~500 kV line-to-neutral
SPACING_TOL_S = 1e-9


class ArchiveError(Exception):
    pass


class ParseError(ArchiveError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotonicTime(ArchiveError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class PmuSample:
    freq_hz: float
    rocof_hzps: float
    vmag_v: float
    vang_rad: float


@dataclass
class ArchiveRow:
    t: float  # seconds from archive start
    pmus: list[PmuSample]


@dataclass
class Archive:
    rows: list[ArchiveRow]
    fps: int
    num_pmu: int
    config: ConfigFrame = field(repr=False)

    @property
    def duration_s(self) -> float:
        return len(self.rows) / self.fps


@dataclass
class SynthEvent:
    """A frequency step injected at ``onset_s``; exponential recovery with
    time constant ``recovery_tau_s`` when set, sustained otherwise."""

    onset_s: float
    step_hz: float
    recovery_tau_s: float | None = None


_HEADER_RE = re.compile(r"^pmu(\d+)_(freq_hz|rocof_hzps|vmag_v|vang_rad)$")


def config_for_archive(num_pmu: int, fps: int, id_code: int = 1,
                       nominal_hz: int = 60, start_soc: int = 0) -> ConfigFrame:
    """Synthesize the CFG-2 frame governing replay of an archive.

    Each PMU contributes one float32 polar voltage phasor alongside
    float32 freq/ROCOF.  time_base is chosen as 10000*fps so per-frame
    fraction-of-second increments are exact integers.
    """
    pmus = [
        PmuConfig(
            station=f"PMU-{k}",
            id_code=k + 1,
            phasor_names=["VA"],
            phasor_types=["V"],
            fnom_hz=nominal_hz,
        )
        for k in range(num_pmu)
    ]
    header = FrameHeader(frame_type=TYPE_CFG2, id_code=id_code, soc=start_soc)
    return ConfigFrame(header=header, time_base=10_000 * fps, pmus=pmus, data_rate=fps)


def _expected_header(num_pmu: int) -> list[str]:
    cols = ["t_s"]
    for k in range(num_pmu):
        cols += [f"pmu{k}_freq_hz", f"pmu{k}_rocof_hzps", f"pmu{k}_vmag_v", f"pmu{k}_vang_rad"]
    return cols


def load_archive(path: str | Path, id_code: int = 1) -> Archive:
    """Parse an archive CSV, validating monotonic uniform timestamps.

    Returns the rows plus a ConfigFrame synthesized from the column
    layout.  Raises ParseError with a line number on malformed input and
    NonMonotonicTime on duplicate or decreasing timestamps.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if not header or header[0] != "t_s" or (len(header) - 1) % 4 != 0:
            raise ParseError(f"unexpected header {header!r}", line=1)
        num_pmu = (len(header) - 1) // 4
        if num_pmu < 1 or header != _expected_header(num_pmu):
            raise ParseError(f"unexpected header {header!r}", line=1)

        rows: list[ArchiveRow] = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(raw)}", line=lineno)
            try:
                values = [float(v) for v in raw]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            t = values[0]
            if rows and t <= rows[-1].t:
                raise NonMonotonicTime(
                    f"t_s {t!r} does not increase past {rows[-1].t!r}", line=lineno
                )
            pmus = [
                PmuSample(*values[1 + 4 * k:5 + 4 * k]) for k in range(num_pmu)
            ]
            rows.append(ArchiveRow(t=t, pmus=pmus))

    if len(rows) < 2:
        raise ParseError("archive needs at least two rows to establish a data rate", line=2)
    dt = rows[1].t - rows[0].t
    if dt <= 0:
        raise NonMonotonicTime("first two rows do not advance in time", line=3)
    fps = round(1.0 / dt)
    if fps < 1 or abs(dt - 1.0 / fps) > SPACING_TOL_S:
        raise ParseError(f"row spacing {dt!r} s is not a whole frames-per-second rate", line=3)
    for i in range(1, len(rows)):
        if abs((rows[i].t - rows[i - 1].t) - 1.0 / fps) > SPACING_TOL_S:
            raise NonMonotonicTime(
                f"spacing {rows[i].t - rows[i - 1].t!r} deviates from 1/{fps} s", line=i + 2
            )
    cfg = config_for_archive(num_pmu, fps, id_code=id_code)
    return Archive(rows=rows, fps=fps, num_pmu=num_pmu, config=cfg)


def save_archive(rows: list[ArchiveRow], path: str | Path) -> int:
    """Write rows to an archive CSV; returns the row count."""
    if not rows:
        raise ArchiveError("refusing to write an empty archive")
    num_pmu = len(rows[0].pmus)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(num_pmu))
        for row in rows:
            out = [repr(row.t)]
            for s in row.pmus:
                out += [repr(s.freq_hz), repr(s.rocof_hzps), repr(s.vmag_v), repr(s.vang_rad)]
            writer.writerow(out)
    return len(rows)


def synthesize(duration_s: float, fps: int, base_freq_hz: float = 60.0,
               noise_std_hz: float = 0.001, event: SynthEvent | None = None,
               num_pmu: int = 1, seed: int = 0,
               vmag_v: float = NOMINAL_VMAG_V) -> list[ArchiveRow]:
    """Generate a Gaussian-noise frequency series with an optional injected
    step event.  Deterministic for a given seed.

    Voltage angles integrate the frequency deviation (so they drift the
    way real phase angles do), ROCOF is the discrete frequency
    derivative, and every column is float32-quantized.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if fps < 1:
        raise ValueError("fps must be >= 1")
    if event is not None and not 0 <= event.onset_s < duration_s:
        raise ValueError("event onset must fall inside the archive duration")

    n = round(duration_s * fps)
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64) / fps

    offset = np.zeros(n)
    if event is not None:
        mask = t >= event.onset_s
        if event.recovery_tau_s:
            offset[mask] = event.step_hz * np.exp(-(t[mask] - event.onset_s) / event.recovery_tau_s)
        else:
            offset[mask] = event.step_hz

    rows: list[ArchiveRow] = []
    per_pmu = []
    for _ in range(num_pmu):
        freq = (base_freq_hz + offset + rng.normal(0.0, noise_std_hz, size=n)).astype(np.float32)
        f64 = freq.astype(np.float64)
        rocof = np.zeros(n, dtype=np.float64)
        rocof[1:] = (f64[1:] - f64[:-1]) * fps
        rocof = rocof.astype(np.float32)
        vmag = np.full(n, np.float32(vmag_v), dtype=np.float32)
        vang = np.cumsum(2.0 * np.pi * (f64 - base_freq_hz) / fps)
        vang = np.array([wrap_angle(a) for a in vang], dtype=np.float32)
        per_pmu.append((f64, rocof.astype(np.float64), vmag.astype(np.float64),
                        vang.astype(np.float64)))

    for i in range(n):
        pmus = [
            PmuSample(freq_hz=f[i], rocof_hzps=r[i], vmag_v=m[i], vang_rad=a[i])
            for f, r, m, a in per_pmu
        ]
        rows.append(ArchiveRow(t=float(t[i]), pmus=pmus))
    return rows
