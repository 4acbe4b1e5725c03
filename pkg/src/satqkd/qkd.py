"""Asymptotic decoy-state BB84 secure-key budgets.

Per-pulse gain and QBER come from the standard channel model

    Q(mu_i) = y0 + 1 - exp(-eta * mu_i)
    E(mu_i) = (e0 * y0 + e_det * (1 - exp(-eta * mu_i))) / Q(mu_i)

single-photon bounds from the vacuum+weak decoy estimate, and the secure rate
from the GLLP formula

    R = q * ( -f_e * Q_mu * h2(E_mu) + Q1 * (1 - h2(e1)) )

clamped at zero.  Rates integrate over access intervals as rate-per-second
times sample spacing, and assemble into the per-interval, per-node key matrix
used by the scheduler.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from .channel import LinkSample, OpticalParams, total_loss
from .cloud import CloudGrid, query
from .orbit import AccessInterval, GroundStation


@dataclass(frozen=True)
class QkdParams:
    """Source, protocol and detector parameters of the decoy-state link."""
    mu: float = 0.5                 # signal intensity
    nu: float = 0.08                # decoy intensity
    omega: float = 0.0              # vacuum intensity
    rep_rate_hz: float = 2e8
    q_factor: float = 0.5           # 0.5 standard BB84 sifting, ~1 efficient BB84
    f_e: float = 1.16               # error-correction inefficiency
    e_detector: float = 0.015       # optical misalignment error probability
    y0: float = 3e-6                # background yield per pulse
    e0: float = 0.5                 # background error probability

    def __post_init__(self):
        if not 0.0 <= self.omega < self.nu < self.mu:
            raise ValueError(
                f"intensities must satisfy 0 <= omega < nu < mu, "
                f"got ({self.omega}, {self.nu}, {self.mu})")
        if not 0.0 < self.q_factor <= 1.0:
            raise ValueError(f"q_factor must be in (0, 1], got {self.q_factor}")
        if self.f_e < 1.0:
            raise ValueError(f"f_e must be >= 1, got {self.f_e}")
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be positive")
        for name in ("e_detector", "y0", "e0"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability in [0, 1]")


@dataclass(frozen=True)
class RateResult:
    """Gains, error bounds and the clamped secure rate for one transmittance."""
    q_mu: float
    e_mu: float
    y1_lower: float
    q1: float
    e1_upper: float
    rate_per_pulse: float
    rate_per_second: float


def binary_entropy(x: float) -> float:
    """h2(x) = -x log2 x - (1-x) log2 (1-x), with h2(0) = h2(1) = 0."""
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def gain_and_qber(mu_i: float, eta: float, params: QkdParams) -> tuple[float, float]:
    """Gain and QBER of intensity mu_i through transmittance eta."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    if mu_i < 0.0:
        raise ValueError(f"intensity must be >= 0, got {mu_i}")
    detected = -math.expm1(-eta * mu_i)
    gain = params.y0 + detected
    qber = (params.e0 * params.y0 + params.e_detector * detected) / gain
    return gain, qber


def decoy_estimate(params: QkdParams, eta: float) -> tuple[float, float, float]:
    """Vacuum+weak decoy bounds: (Y1 lower, Q1, e1 upper), each in [0, 1].

    Assumes omega = 0 so the vacuum gain is identified with y0.
    """
    mu, nu = params.mu, params.nu
    denom = mu * nu - nu * nu
    if denom <= 0.0:
        raise ValueError(f"decoy bound needs nu < mu, got nu={nu}, mu={mu}")
    q_mu, _ = gain_and_qber(mu, eta, params)
    q_nu, e_nu = gain_and_qber(nu, eta, params)

    y1 = (mu / denom) * (q_nu * math.exp(nu)
                         - q_mu * math.exp(mu) * (nu * nu) / (mu * mu)
                         - ((mu * mu - nu * nu) / (mu * mu)) * params.y0)
    y1 = min(max(y1, 0.0), 1.0)
    q1 = y1 * mu * math.exp(-mu)
    if y1 * nu > 0.0:
        e1 = (e_nu * q_nu * math.exp(nu) - params.e0 * params.y0) / (y1 * nu)
    else:
        e1 = 1.0  # no single-photon signal survives; worst case
    e1 = min(max(e1, 0.0), 1.0)
    return y1, q1, e1


def gllp_rate(eta: float, params: QkdParams) -> RateResult:
    """Secure-key rate for one transmittance; degenerate inputs give rate 0."""
    q_mu, e_mu = gain_and_qber(params.mu, eta, params)
    y1, q1, e1 = decoy_estimate(params, eta)
    bracket = (-params.f_e * q_mu * binary_entropy(e_mu)
               + q1 * (1.0 - binary_entropy(e1)))
    per_pulse = max(0.0, params.q_factor * bracket)
    return RateResult(q_mu=q_mu, e_mu=e_mu, y1_lower=y1, q1=q1, e1_upper=e1,
                      rate_per_pulse=per_pulse,
                      rate_per_second=per_pulse * params.rep_rate_hz)


def keys_over_interval(loss_series: Sequence[LinkSample], params: QkdParams,
                       dt_seconds: float | None = None) -> float:
    """Secure-key bits over a sample series: sum of rate/s times spacing.

    Spacing is inferred from consecutive sample times (the last sample reuses
    the preceding spacing); a single-sample series needs dt_seconds.
    """
    if not loss_series:
        return 0.0
    times = [s.time for s in loss_series]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("samples must be strictly time-ordered")
    if len(times) > 1:
        gaps = [(b - a).total_seconds() for a, b in zip(times, times[1:])]
        gaps.append(gaps[-1])
    elif dt_seconds is not None:
        gaps = [dt_seconds]
    else:
        raise ValueError("cannot infer sample spacing from a single sample; "
                         "pass dt_seconds")
    total = 0.0
    for sample, dt in zip(loss_series, gaps):
        total += gllp_rate(sample.loss.transmittance, params).rate_per_second * dt
    return total


@dataclass(frozen=True)
class KeyMatrix:
    """K[m][n]: secure-key bits obtainable in interval m by node n."""
    start: datetime
    interval_seconds: float
    node_names: tuple[str, ...]
    values: np.ndarray = field(repr=False)  # (n_intervals, n_nodes) float

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[1] != len(self.node_names):
            raise ValueError(f"values shape {v.shape} inconsistent with "
                             f"{len(self.node_names)} nodes")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("key matrix entries must be finite and >= 0")

    @property
    def n_intervals(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.values.shape[1])

    def interval_start(self, m: int) -> datetime:
        return self.start + timedelta(seconds=m * self.interval_seconds)


def build_key_matrix(accesses: Sequence[AccessInterval],
                     stations: Sequence[GroundStation],
                     optics: OpticalParams,
                     params: QkdParams,
                     start: datetime,
                     n_intervals: int,
                     interval_seconds: float = 10.0,
                     cloud: CloudGrid | None = None) -> KeyMatrix:
    """Aggregate per-sample key rates onto the scheduling grid.

    Every access sample contributes rate_per_second * sample_step to the grid
    interval containing it; entries stay 0 where a node has no usable access.
    Samples falling outside the grid raise (grid misalignment).
    """
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)
    column = {st.name: i for i, st in enumerate(stations)}
    values = np.zeros((n_intervals, len(stations)))
    for access in accesses:
        n = column.get(access.station.name)
        if n is None:
            raise ValueError(f"access interval for unknown station "
                             f"{access.station.name!r}")
        step = access.step_seconds
        for t, look in access.samples:
            m = math.floor((t - start).total_seconds() / interval_seconds)
            if not 0 <= m < n_intervals:
                raise ValueError(
                    f"grid misalignment: sample at {t.isoformat()} falls "
                    f"outside the {n_intervals}-interval grid from {start.isoformat()}")
            if cloud is not None:
                alpha = query(cloud, access.station.latitude_deg,
                              access.station.longitude_deg, t)
            else:
                alpha = 0
            loss = total_loss(look, alpha, optics)
            if loss.transmittance <= 0.0:
                continue
            rate = gllp_rate(loss.transmittance, params).rate_per_second
            values[m, n] += rate * step
    return KeyMatrix(start=start, interval_seconds=interval_seconds,
                     node_names=tuple(st.name for st in stations), values=values)


def params_digest(params: QkdParams) -> str:
    """Stable hash of the QKD parameter set, for export sidecars."""
    payload = json.dumps(asdict(params), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def export_key_matrix(matrix: KeyMatrix, params: QkdParams,
                      csv_path, meta_path) -> None:
    """Write nonzero entries as CSV plus a JSON metadata sidecar."""
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("interval_index,node_name,start_utc,key_bits\n")
        rows, cols = np.nonzero(matrix.values)
        for m, n in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{m},{matrix.node_names[n]},"
                     f"{matrix.interval_start(m).isoformat()},"
                     f"{float(matrix.values[m, n])!r}\n")
    meta = {
        "grid_start_utc": matrix.start.isoformat(),
        "interval_seconds": matrix.interval_seconds,
        "n_intervals": matrix.n_intervals,
        "node_names": list(matrix.node_names),
        "params_digest": params_digest(params),
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
