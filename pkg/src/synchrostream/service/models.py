"""Request/response models for the HTTP service.

File-path parameters are resolved by the service process: in the default
in-process deployment that is the caller's filesystem; against a remote
server they name files on the server's host.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    service: str = "synchrostream"
    version: str


# -- synth -------------------------------------------------------------------

class EventSpec(BaseModel):
    onset_s: float = Field(ge=0)
    step_hz: float
    recovery_tau_s: float | None = None


class SynthRequest(BaseModel):
    out_path: str
    duration_s: float = Field(gt=0)
    fps: int = Field(default=60, ge=1)
    base_freq_hz: float = 60.0
    noise_std_hz: float = Field(default=0.001, ge=0)
    num_pmu: int = Field(default=1, ge=1)
    seed: int = 0
    event: EventSpec | None = None


class SynthResponse(BaseModel):
    path: str
    rows: int
    fps: int
    duration_s: float


# -- codec inspection ----------------------------------------------------------

class InspectRequest(BaseModel):
    hex: str | None = None
    path: str | None = None
    config_path: str | None = None  # archive CSV or CFG-2 binary
    as_record: bool = False


class InspectResponse(BaseModel):
    dump: str


# -- trace analysis ------------------------------------------------------------

class AnalyzeRequest(BaseModel):
    send_log: str
    recv_log: str
    skew_correction_s: float = 0.0
    auto_skew: bool = False
    gap_csv: str | None = None
    envelope_low_ms: float = 20.0
    envelope_high_ms: float = 50.0
    hard_cap_s: float = 10.0


class LatencyStatsModel(BaseModel):
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


class ComplianceModel(BaseModel):
    mean_within_envelope: bool
    p99_within_envelope: bool
    better_than_typical: bool
    hard_cap_violation: bool
    envelope_ms: list[float]
    hard_cap_s: float
    verdict: str


class AnalyzeResponse(BaseModel):
    stats: LatencyStatsModel
    compliance: ComplianceModel
    gap_csv: str | None = None


# -- jobs ----------------------------------------------------------------------

class PlayRequest(BaseModel):
    archive: str
    dest_host: str = "127.0.0.1"
    dest_port: int = Field(default=47120, ge=1, le=65535)
    pacing: str = "realtime"  # "realtime", "max", or a speedup number
    start_soc: int = 1_000_000_000
    clock_offset_s: float = 0.0
    announce_config: bool = False
    send_log: str | None = None


class ListenRequest(BaseModel):
    bind_host: str = "0.0.0.0"
    bind_port: int = Field(default=47120, ge=0, le=65535)
    config_path: str | None = None  # archive CSV or CFG-2 binary
    request_config_host: str | None = None
    request_config_port: int | None = None
    wait_ms: float = 50.0
    expected_frames: int | None = None
    idle_timeout_s: float | None = None
    duration_s: float | None = None
    recv_log: str | None = None
    aligned_csv: str | None = None


class DetectRequest(BaseModel):
    input_csv: str | None = None  # offline 1 Hz series (t_s,freq_hz)
    bind_host: str = "0.0.0.0"
    bind_port: int = Field(default=47120, ge=0, le=65535)
    config_path: str | None = None
    window_s: int = 300
    horizon_h: int = 5
    threshold_sigma: float = 3.5
    delta: float = 0.95
    detect_pmu: int = 0
    expected_frames: int | None = None
    idle_timeout_s: float | None = None
    duration_s: float | None = None
    events_jsonl: str | None = None
    plot_csv: str | None = None
    t0: float = 0.0  # rebase for reported relative event times


class E2ERequest(BaseModel):
    archive: str | None = None
    synth: SynthRequest | None = None  # generate first when no archive given
    out_dir: str
    pacing: str = "max"
    start_soc: int = 1_000_000_000
    clock_offset_s: float = 0.0
    skew_correction_s: float | None = None
    wait_ms: float = 50.0
    window_s: int = 300
    horizon_h: int = 5
    threshold_sigma: float = 3.5
    delta: float = 0.95
    detect_pmu: int = 0


class JobInfo(BaseModel):
    id: str
    kind: str
    status: Literal["queued", "running", "done", "error", "stopped"]
    created_ts: float
    finished_ts: float | None = None
    progress: dict[str, Any] = Field(default_factory=dict)
    result: dict[str, Any] | None = None
    error: str | None = None


class JobList(BaseModel):
    jobs: list[JobInfo]
