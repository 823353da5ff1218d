"""Dynamic linear model with a locally-linear (second-order polynomial)
trend, fitted by a discount-factor Kalman recursion.

Model: observation y_t = level_t + noise(obs_var); state (level, slope)
evolves by level += slope.  Evolution noise is never materialized as an
explicit covariance: each step the propagated state covariance is
inflated by 1/delta, which is equivalent to adding
W_t = M C M^T (1 - delta)/delta and removes the usual two-parameter
tuning.  delta = 1 degenerates to the standard no-evolution-noise
Kalman filter.

The observation variance is either fixed or learned online with the
standard running scale recursion on standardized one-step residuals:
n += 1; S += S/n * (e^2/q - 1).

State covariances are stored as the three unique entries of the 2x2
symmetric matrix, so symmetry is exact by construction, and the
covariance update uses the cancellation-free form C = R * S / q on the
level entries.  The filter is plain scalar arithmetic: refitting a
300-sample window takes well under a millisecond, which is what lets the
detector refresh every second.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "GdlmError",
    "EmptyWindow",
    "NonFiniteObservation",
    "DegenerateVariance",
    "ModelSpec",
    "GdlmState",
    "ForecastResult",
    "FilterResult",
    "init_prior",
    "filter_step",
    "filter_series",
    "smooth",
    "forecast",
    "write_debug_dump",
]

VAR_FLOOR = 1e-12


class GdlmError(Exception):
    pass


class EmptyWindow(GdlmError):
    pass


class NonFiniteObservation(GdlmError):
    pass


class DegenerateVariance(GdlmError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Model configuration: discount factor and observation-noise handling.

    ``obs_var_mode`` is ``"estimated"`` (running scale learned from
    residuals) or ``"fixed"`` (``obs_var`` pinned).  The observation and
    system matrices are structural constants of the trend model, exposed
    for inspection and oracle comparisons.
    """

    delta: float = 0.95
    obs_var_mode: str = "estimated"
    obs_var: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise GdlmError(f"discount factor {self.delta} outside (0, 1]")
        if self.obs_var_mode not in ("estimated", "fixed"):
            raise GdlmError(f"unknown obs_var_mode {self.obs_var_mode!r}")
        if self.obs_var_mode == "fixed":
            if self.obs_var is None or self.obs_var < 0:
                raise GdlmError("fixed obs_var_mode requires obs_var >= 0")

    @property
    def obs_matrix(self) -> np.ndarray:
        return np.array([[1.0, 0.0]])

    @property
    def sys_matrix(self) -> np.ndarray:
        return np.array([[1.0, 1.0], [0.0, 1.0]])


@dataclass
class GdlmState:
    """Posterior state: mean (level, slope), covariance, noise bookkeeping."""

    level: float
    slope: float
    c11: float
    c12: float
    c22: float
    obs_var: float
    n_obs: int = 1
    t: int = 0

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.level, self.slope])

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.c11, self.c12], [self.c12, self.c22]])

    def validate(self, psd_tol: float = 1e-10):
        cov = self.cov
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise GdlmError("state covariance lost symmetry")
        if np.linalg.eigvalsh(cov).min() < -psd_tol:
            raise GdlmError("state covariance is not numerically PSD")
        if self.obs_var < 0:
            raise GdlmError("negative observation variance")


@dataclass
class ForecastResult:
    horizon: int
    means: np.ndarray
    variances: np.ndarray


@dataclass
class FilterResult:
    """Forward-pass outputs for a whole series."""

    states: list[GdlmState]
    residuals: np.ndarray
    pred_vars: np.ndarray
    fitted: np.ndarray  # one-step predictive means

    @property
    def final(self) -> GdlmState:
        return self.states[-1]

    def residual_std(self, floor: float = 0.0) -> float:
        n = len(self.residuals)
        if n < 2:
            return floor
        return max(float(np.std(self.residuals, ddof=1)), floor)


def init_prior(window, spec: ModelSpec = ModelSpec()) -> GdlmState:
    """Prior from an observation window: level = median, slope = 0,
    identity covariance.

    The even-length median is the mean of the two middle order
    statistics.  In estimated mode the observation-variance scale starts
    at the window's sample variance (floored); fixed mode uses the
    spec's value.
    """
    values = list(window)
    if not values:
        raise EmptyWindow("cannot build a prior from an empty window")
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteObservation("prior window contains non-finite values")
    if spec.obs_var_mode == "fixed":
        obs_var = float(spec.obs_var)
    elif len(values) > 1:
        obs_var = max(statistics.variance(values), VAR_FLOOR)
    else:
        obs_var = 1.0
    return GdlmState(
        level=statistics.median(values),
        slope=0.0,
        c11=1.0,
        c12=0.0,
        c22=1.0,
        obs_var=obs_var,
        n_obs=1,
        t=0,
    )


def filter_step(state: GdlmState, spec: ModelSpec, y: float) -> tuple[GdlmState, float, float]:
    """One discount-Kalman update; returns (new state, one-step residual,
    predictive variance)."""
    if not math.isfinite(y):
        raise NonFiniteObservation(f"observation {y!r} is not finite")

    # propagate: a = M m, R = M C M^T / delta
    a1 = state.level + state.slope
    a2 = state.slope
    inv_d = 1.0 / spec.delta
    r11 = (state.c11 + 2.0 * state.c12 + state.c22) * inv_d
    r12 = (state.c12 + state.c22) * inv_d
    r22 = state.c22 * inv_d

    s = state.obs_var
    q = r11 + s
    if q <= 0 or not math.isfinite(q):
        raise DegenerateVariance(f"predictive variance {q!r} is not positive")
    q = max(q, VAR_FLOOR)
    e = y - a1

    k1 = r11 / q
    k2 = r12 / q
    # posterior covariance: level entries via the stable R*S/q form,
    # slope entry via the Schur complement
    new_state = GdlmState(
        level=a1 + k1 * e,
        slope=a2 + k2 * e,
        c11=r11 * s / q,
        c12=r12 * s / q,
        c22=r22 - r12 * r12 / q,
        obs_var=s,
        n_obs=state.n_obs,
        t=state.t + 1,
    )
    if spec.obs_var_mode == "estimated":
        n = state.n_obs + 1
        new_state.n_obs = n
        new_state.obs_var = max(s + (s / n) * (e * e / q - 1.0), VAR_FLOOR)
    return new_state, e, q


def filter_series(ys, spec: ModelSpec = ModelSpec(),
                  state: GdlmState | None = None) -> FilterResult:
    """Run the forward recursion over a series, starting from ``state`` or
    from :func:`init_prior` over the whole series."""
    values = list(ys)
    if not values:
        raise EmptyWindow("cannot filter an empty series")
    if state is None:
        state = init_prior(values, spec)
    states = []
    residuals = np.empty(len(values))
    pred_vars = np.empty(len(values))
    fitted = np.empty(len(values))
    for i, y in enumerate(values):
        fitted[i] = state.level + state.slope
        state, e, q = filter_step(state, spec, y)
        states.append(state)
        residuals[i] = e
        pred_vars[i] = q
    return FilterResult(states=states, residuals=residuals, pred_vars=pred_vars, fitted=fitted)


def smooth(filtered_states: list[GdlmState], spec: ModelSpec = ModelSpec()) -> list[GdlmState]:
    """Fixed-interval backward smoother over filtered states.

    The last smoothed state equals the last filtered state, and smoothed
    covariances never exceed the filtered ones (eigenvalue-wise).  The
    one-step priors are reconstructed from the filtered states via the
    discount identity, so no extra bookkeeping is required.
    """
    if not filtered_states:
        raise EmptyWindow("nothing to smooth")
    m_matrix = spec.sys_matrix
    out = [replace(filtered_states[-1])]
    s_mean = filtered_states[-1].mean
    s_cov = filtered_states[-1].cov
    for t in range(len(filtered_states) - 2, -1, -1):
        st = filtered_states[t]
        mean_t, cov_t = st.mean, st.cov
        a_next = m_matrix @ mean_t
        r_next = (m_matrix @ cov_t @ m_matrix.T) / spec.delta
        gain = cov_t @ m_matrix.T @ np.linalg.inv(r_next)
        s_mean = mean_t + gain @ (s_mean - a_next)
        s_cov = cov_t + gain @ (s_cov - r_next) @ gain.T
        s_cov = 0.5 * (s_cov + s_cov.T)
        out.append(GdlmState(
            level=float(s_mean[0]),
            slope=float(s_mean[1]),
            c11=float(s_cov[0, 0]),
            c12=float(s_cov[0, 1]),
            c22=float(s_cov[1, 1]),
            obs_var=st.obs_var,
            n_obs=st.n_obs,
            t=st.t,
        ))
    out.reverse()
    return out


def forecast(state: GdlmState, spec: ModelSpec, h: int) -> ForecastResult:
    """Predict h steps ahead from the current posterior.

    The trend structure gives the mean path in closed form: after k
    steps the propagated mean is exactly level + k*slope.  Variances
    iterate P <- M P M^T / delta, so uncertainty inflates every step.
    """
    if h < 1:
        raise GdlmError(f"forecast horizon must be >= 1, got {h}")
    means = np.array([state.level + k * state.slope for k in range(1, h + 1)])
    variances = np.empty(h)
    p11, p12, p22 = state.c11, state.c12, state.c22
    inv_d = 1.0 / spec.delta
    for k in range(h):
        n11 = (p11 + 2.0 * p12 + p22) * inv_d
        n12 = (p12 + p22) * inv_d
        n22 = p22 * inv_d
        p11, p12, p22 = n11, n12, n22
        variances[k] = p11 + state.obs_var
    return ForecastResult(horizon=h, means=means, variances=variances)


def write_debug_dump(path: str | Path, ys, result: FilterResult):
    """Offline-inspection CSV: t, y, level, slope, residual, predictive
    variance for each step of a forward pass."""
    values = list(ys)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y", "level", "slope", "residual", "pred_var"])
        for i, (y, st) in enumerate(zip(values, result.states)):
            writer.writerow([i, repr(float(y)), repr(st.level), repr(st.slope),
                             repr(float(result.residuals[i])), repr(float(result.pred_vars[i]))])
