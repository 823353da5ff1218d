"""Online anomaly detection over a 1 Hz frequency stream.

The detector keeps a sliding window (default 5 minutes at 1-second
resolution), refits the trend model on the whole window every second,
issues a multi-step forecast, and flags a sample as anomalous when it
deviates from the outstanding forecast by at least ``threshold_sigma``
training-error standard deviations.  Training error is the set of
one-step-ahead residuals from the window fit.

No events are emitted until the window first fills (warm-up).  Anomalous
samples still enter the window by default, so the model refits through
an event; masking them behind the forecast is available as a config
flag.  Missing seconds are filled last-observation-carried-forward and
flagged so the fill itself can never trigger an event; a long outage
(default 30 consecutive gaps) resets the window and restarts warm-up.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .gdlm import ModelSpec, filter_series, forecast

__all__ = [
    "DetectorError",
    "NonMonotonicTimestamp",
    "DetectorConfig",
    "AnomalyEvent",
    "PlotRow",
    "DetectionReport",
    "OnlineDetector",
    "run",
    "write_events_jsonl",
    "write_plot_csv",
]

logger = logging.getLogger(__name__)


class DetectorError(Exception):
    pass


class NonMonotonicTimestamp(DetectorError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    window_s: int = 300  # 5 minutes at 1-second resolution
    horizon_h: int = 5
    threshold_sigma: float = 3.5
    delta: float = 0.95
    refresh_s: int = 1
    gap_reset: int = 30  # consecutive gaps before a cold restart
    std_floor_hz: float = 1e-9
    mask_anomalies: bool = False

    def __post_init__(self):
        if self.window_s < 10 * self.horizon_h:
            raise DetectorError(
                f"window_s {self.window_s} must be >= 10 * horizon_h {self.horizon_h}"
            )
        if self.threshold_sigma <= 0:
            raise DetectorError("threshold_sigma must be positive")
        if self.horizon_h < 1 or self.refresh_s < 1:
            raise DetectorError("horizon_h and refresh_s must be >= 1")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(delta=self.delta, obs_var_mode="estimated")


@dataclass
class AnomalyEvent:
    timestamp: float
    observed_hz: float
    predicted_hz: float
    residual_hz: float
    sigma_multiple: float
    window_start_ts: float

    def to_json(self) -> str:
        return json.dumps({
            "ts": self.timestamp,
            "observed_hz": self.observed_hz,
            "predicted_hz": self.predicted_hz,
            "residual_hz": self.residual_hz,
            "sigma": self.sigma_multiple,
            "window_start_ts": self.window_start_ts,
        })


@dataclass
class PlotRow:
    t: float
    observed: float | None
    fitted: float | None
    forecast: float | None
    band_low: float | None
    band_high: float | None


@dataclass
class DetectionReport:
    events: list[AnomalyEvent]
    samples: int = 0
    gaps_filled: int = 0
    resets: int = 0
    refits: int = 0
    refit_total_s: float = 0.0

    @property
    def mean_refit_s(self) -> float:
        return self.refit_total_s / self.refits if self.refits else 0.0


class OnlineDetector:
    """Push-driven detector; one sample per second, gaps as None."""

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self.spec = cfg.model_spec()
        self.report = DetectionReport(events=[])
        self.plot_rows: list[PlotRow] = []
        self._window: deque[float] = deque(maxlen=cfg.window_s)
        self._window_start_ts: float | None = None
        self._last_t: float | None = None
        self._gap_run = 0
        self._std_training: float | None = None
        self._outstanding: dict[float, float] = {}  # target t -> predicted mean

    # -- sample ingestion ----------------------------------------------------

    def push_sample(self, t: float, y: float | None) -> AnomalyEvent | None:
        """Feed the sample for second ``t``; returns an event when the
        sample crosses the threshold against the outstanding forecast."""
        if self._last_t is not None and t <= self._last_t:
            raise NonMonotonicTimestamp(f"timestamp {t} does not advance past {self._last_t}")
        self._last_t = t
        self.report.samples += 1

        if y is None or not math.isfinite(y):
            return self._handle_gap(t)
        self._gap_run = 0

        event = None
        predicted = self._outstanding.get(t)
        if predicted is not None and self._std_training is not None:
            residual = y - predicted
            sigma = residual / self._std_training
            if abs(sigma) >= self.cfg.threshold_sigma:
                event = AnomalyEvent(
                    timestamp=t,
                    observed_hz=y,
                    predicted_hz=predicted,
                    residual_hz=residual,
                    sigma_multiple=sigma,
                    window_start_ts=self._window_start_ts if self._window_start_ts is not None else t,
                )
                self.report.events.append(event)

        admitted = y
        if event is not None and self.cfg.mask_anomalies:
            admitted = predicted
        self._append(t, admitted)
        self._plot(t, observed=y, predicted=predicted)
        self._refit_if_ready(t)
        return event

    def _handle_gap(self, t: float) -> None:
        """Missing second: carry the last observation forward, flagged so
        the fill never produces an event; long outages restart warm-up."""
        self.report.gaps_filled += 1
        self._gap_run += 1
        if self._gap_run >= self.cfg.gap_reset:
            self._reset()
            self._plot(t, observed=None, predicted=None)
            return None
        if self._window:
            self._append(t, self._window[-1])
            self._plot(t, observed=None, predicted=self._outstanding.get(t))
            self._refit_if_ready(t)
        else:
            self._plot(t, observed=None, predicted=None)
        return None

    def _reset(self):
        self._window.clear()
        self._window_start_ts = None
        self._outstanding.clear()
        self._std_training = None
        self._gap_run = 0
        self.report.resets += 1
        logger.info("detector window reset after %d consecutive gaps", self.cfg.gap_reset)

    # -- model upkeep ----------------------------------------------------------

    def _append(self, t: float, y: float):
        if not self._window:
            self._window_start_ts = t
        elif len(self._window) == self.cfg.window_s:
            self._window_start_ts = t - self.cfg.window_s + 1
        self._window.append(y)

    def _refit_if_ready(self, t: float):
        if len(self._window) < self.cfg.window_s:
            return
        started = time.perf_counter()
        result = filter_series(self._window, self.spec)
        self._std_training = result.residual_std(floor=self.cfg.std_floor_hz)
        fc = forecast(result.final, self.spec, self.cfg.horizon_h)
        self._outstanding = {t + k: float(fc.means[k - 1]) for k in range(1, self.cfg.horizon_h + 1)}
        self.report.refits += 1
        self.report.refit_total_s += time.perf_counter() - started
        if self.plot_rows:
            self.plot_rows[-1].fitted = float(result.fitted[-1])

    def _plot(self, t: float, observed: float | None, predicted: float | None):
        band = None
        if predicted is not None and self._std_training is not None:
            band = self.cfg.threshold_sigma * self._std_training
        self.plot_rows.append(PlotRow(
            t=t,
            observed=observed,
            fitted=None,  # filled by the refit for this second, if any
            forecast=predicted,
            band_low=predicted - band if band is not None else None,
            band_high=predicted + band if band is not None else None,
        ))


def run(source, cfg: DetectorConfig = DetectorConfig(), sink=None) -> DetectionReport:
    """Drive the detector over an iterable of (t, freq-or-None) samples.

    Events are forwarded to ``sink`` as they occur; sink failures are
    logged and detection continues.
    """
    det = OnlineDetector(cfg)
    for t, y in source:
        event = det.push_sample(t, y)
        if event is not None and sink is not None:
            try:
                sink(event)
            except Exception:
                logger.exception("event sink raised; detection continues")
    return det.report


def write_events_jsonl(events: list[AnomalyEvent], path: str | Path):
    with Path(path).open("w") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")


def write_plot_csv(rows: list[PlotRow], path: str | Path, t0: float = 0.0):
    """Fit/forecast plot data; ``t0`` rebases timestamps (pass the stream
    start to get archive-relative seconds)."""
    def fmt(v):
        return "" if v is None else repr(v)

    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "observed", "fitted", "forecast",
                         "threshold_band_low", "threshold_band_high"])
        for r in rows:
            writer.writerow([repr(r.t - t0), fmt(r.observed), fmt(r.fitted),
                             fmt(r.forecast), fmt(r.band_low), fmt(r.band_high)])
