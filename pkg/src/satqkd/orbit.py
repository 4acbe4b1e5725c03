"""Orbital geometry for satellite-to-ground optical links.

Turns a two-line element set (or a precomputed ephemeris) plus ground-station
coordinates into time series of elevation, slant range and night-time
visibility, discretised into access intervals.

Propagation is Keplerian two-body plus J2 secular rates on the node and the
argument of perigee; the TLE mean motion is taken as the observed anomalistic
rate, so the mean anomaly advances at exactly that rate.  A spherical Earth
(equatorial radius) is used for topocentric geometry, and the Sun comes from a
low-precision analytic ephemeris (good to well under 0.5 degrees).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6378.137
EARTH_MU_KM3_S2 = 398600.4418
J2 = 1.08262668e-3
SIDEREAL_RATE_DEG_PER_DAY = 360.98564736629

_UNIX_JD = 2440587.5  # Julian date of 1970-01-01T00:00:00Z
_J2000_JD = 2451545.0


class TleError(ValueError):
    """Raised when a TLE line fails structural or checksum validation.

    Carries the 1-based line number and column span of the offending field.
    """

    def __init__(self, message: str, line: int | None = None,
                 columns: tuple[int, int] | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}"
            if columns is not None:
                where += f", columns {columns[0]}-{columns[1]}"
            where += ")"
        super().__init__(message + where)
        self.line = line
        self.columns = columns


def _as_utc(t: datetime) -> datetime:
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def _to_unix(t: datetime) -> float:
    return _as_utc(t).timestamp()


def _from_unix(u: float) -> datetime:
    return datetime.fromtimestamp(u, tz=timezone.utc)


@dataclass(frozen=True)
class TleElements:
    """Mean orbital elements decoded from a two-line element set."""
    epoch: datetime
    inclination_deg: float
    raan_deg: float
    eccentricity: float
    arg_perigee_deg: float
    mean_anomaly_deg: float
    mean_motion_rev_day: float
    bstar: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.eccentricity}")
        if self.mean_motion_rev_day <= 0.0:
            raise ValueError(f"mean motion must be positive, got {self.mean_motion_rev_day}")

    @property
    def period_seconds(self) -> float:
        return 86400.0 / self.mean_motion_rev_day

    @property
    def semi_major_axis_km(self) -> float:
        n = 2.0 * math.pi / self.period_seconds  # rad/s
        return (EARTH_MU_KM3_S2 / n**2) ** (1.0 / 3.0)


@dataclass(frozen=True)
class GroundStation:
    """An optical ground station with a scheduling weight."""
    name: str
    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"{self.name}: latitude {self.latitude_deg} outside [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError(f"{self.name}: longitude {self.longitude_deg} outside [-180, 180]")
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError(f"{self.name}: weight must be finite and >= 0, got {self.weight}")


@dataclass(frozen=True)
class SatelliteState:
    """Instantaneous Earth-centred inertial position/velocity, km and km/s."""
    time: datetime
    position_km: tuple[float, float, float]
    velocity_km_s: tuple[float, float, float]

    def __post_init__(self):
        r = math.sqrt(sum(c * c for c in self.position_km))
        if r <= EARTH_RADIUS_KM:
            raise ValueError(f"satellite radius {r:.3f} km is at or below the surface")


@dataclass(frozen=True)
class LookAngles:
    elevation_deg: float
    azimuth_deg: float
    slant_range_km: float


@dataclass(frozen=True)
class AccessInterval:
    """A maximal run of usable samples for one station.

    `end` is exclusive: it sits one sample step past the last usable sample,
    so end - start equals the usable duration.  Samples are (time, LookAngles)
    pairs at the configured step.
    """
    station: GroundStation
    start: datetime
    end: datetime
    samples: tuple[tuple[datetime, LookAngles], ...]

    @property
    def duration_seconds(self) -> float:
        return (self.end - self.start).total_seconds()

    @property
    def step_seconds(self) -> float:
        return self.duration_seconds / len(self.samples)


# ---------------------------------------------------------------------------
# TLE parsing
# ---------------------------------------------------------------------------

def tle_checksum(line: str) -> int:
    """Modulo-10 checksum of the first 68 columns (digits count, '-' counts 1)."""
    s = 0
    for c in line[:68]:
        if c.isdigit():
            s += int(c)
        elif c == "-":
            s += 1
    return s % 10


def _field(line: str, lineno: int, lo: int, hi: int, kind: str, name: str):
    """Decode columns lo..hi (1-based, inclusive) of a TLE line."""
    raw = line[lo - 1:hi]
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "impdec":
            # implied decimal point: "0000000" -> 0.0000000
            return float("0." + raw.strip()) if raw.strip() else 0.0
        if kind == "impexp":
            # implied decimal with exponent: " 44914-4" -> 0.44914e-4
            txt = raw.strip()
            if not txt or set(txt) <= {"0", "+", "-"}:
                return 0.0
            sign = -1.0 if txt[0] == "-" else 1.0
            if txt[0] in "+-":
                txt = txt[1:]
            mantissa, exp = txt[:-2], txt[-2:]
            return sign * float("0." + mantissa) * 10.0 ** int(exp)
        raise AssertionError(kind)
    except (ValueError, IndexError):
        raise TleError(f"malformed {name} field {raw!r}", lineno, (lo, hi)) from None


def _epoch_from_fields(year2: int, day_of_year: float) -> datetime:
    year = year2 + (2000 if year2 < 57 else 1900)
    return (datetime(year, 1, 1, tzinfo=timezone.utc)
            + timedelta(days=day_of_year - 1.0))


def parse_tle(text: str) -> TleElements:
    """Decode a standard two-line element set.

    Args:
        text: exactly two 69-character lines (leading/trailing blank lines
            are tolerated); strict per-line checksum validation.

    Raises:
        TleError: on line count/length mismatch, checksum failure, or a
            malformed column, reported with line number and column span.
    """
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2:
        raise TleError(f"expected exactly 2 TLE lines, got {len(lines)}")
    for i, ln in enumerate(lines, start=1):
        if len(ln) != 69:
            raise TleError(f"line length {len(ln)} != 69", i, (1, 69))
        if ln[0] != str(i):
            raise TleError(f"line must start with '{i}', found {ln[0]!r}", i, (1, 1))
        expect = ln[68]
        if not expect.isdigit() or int(expect) != tle_checksum(ln):
            raise TleError(
                f"checksum mismatch: computed {tle_checksum(ln)}, stated {expect!r}",
                i, (69, 69))
    l1, l2 = lines

    year2 = _field(l1, 1, 19, 20, "int", "epoch year")
    doy = _field(l1, 1, 21, 32, "float", "epoch day")
    bstar = _field(l1, 1, 54, 61, "impexp", "bstar")

    return TleElements(
        epoch=_epoch_from_fields(year2, doy),
        inclination_deg=_field(l2, 2, 9, 16, "float", "inclination"),
        raan_deg=_field(l2, 2, 18, 25, "float", "RAAN"),
        eccentricity=_field(l2, 2, 27, 33, "impdec", "eccentricity"),
        arg_perigee_deg=_field(l2, 2, 35, 42, "float", "argument of perigee"),
        mean_anomaly_deg=_field(l2, 2, 44, 51, "float", "mean anomaly"),
        mean_motion_rev_day=_field(l2, 2, 53, 63, "float", "mean motion"),
        bstar=bstar,
    )


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

def _kepler_solve(mean_anomaly: np.ndarray, ecc: float) -> np.ndarray:
    """Eccentric anomaly from mean anomaly, vectorised Newton iteration."""
    e_anom = mean_anomaly.copy()
    for _ in range(12):
        f = e_anom - ecc * np.sin(e_anom) - mean_anomaly
        e_anom = e_anom - f / (1.0 - ecc * np.cos(e_anom))
    return e_anom


def _propagate_arrays(el: TleElements, unix: np.ndarray,
                      include_j2: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """ECI positions (km) and velocities (km/s) at the given unix times."""
    if el.eccentricity >= 1.0:
        raise ValueError("cannot propagate a non-elliptical orbit")
    n = 2.0 * math.pi / el.period_seconds          # rad/s, anomalistic rate
    a = el.semi_major_axis_km
    ecc = el.eccentricity
    inc = math.radians(el.inclination_deg)
    p = a * (1.0 - ecc * ecc)

    raan_rate = argp_rate = 0.0
    if include_j2:
        base = n * J2 * (EARTH_RADIUS_KM / p) ** 2
        raan_rate = -1.5 * base * math.cos(inc)
        argp_rate = 0.75 * base * (5.0 * math.cos(inc) ** 2 - 1.0)

    dt = unix - _to_unix(el.epoch)
    mean_anom = math.radians(el.mean_anomaly_deg) + n * dt
    raan = math.radians(el.raan_deg) + raan_rate * dt
    argp = math.radians(el.arg_perigee_deg) + argp_rate * dt

    e_anom = _kepler_solve(np.mod(mean_anom, 2.0 * math.pi), ecc)
    cos_e, sin_e = np.cos(e_anom), np.sin(e_anom)
    r = a * (1.0 - ecc * cos_e)
    if np.any(r <= EARTH_RADIUS_KM):
        bad = int(np.argmax(r <= EARTH_RADIUS_KM))
        raise ValueError(
            f"propagation reached sub-surface radius {r[bad]:.1f} km "
            f"at {_from_unix(float(unix[bad])).isoformat()}")
    # true anomaly via perifocal coordinates (avoids quadrant headaches)
    x_pf = a * (cos_e - ecc)
    y_pf = a * math.sqrt(1.0 - ecc * ecc) * sin_e
    # perifocal velocity
    rate = math.sqrt(EARTH_MU_KM3_S2 * a) / r
    vx_pf = -rate * sin_e
    vy_pf = rate * math.sqrt(1.0 - ecc * ecc) * cos_e

    cos_o, sin_o = np.cos(raan), np.sin(raan)
    cos_w, sin_w = np.cos(argp), np.sin(argp)
    cos_i, sin_i = math.cos(inc), math.sin(inc)

    # rows of the perifocal->ECI rotation
    px = cos_o * cos_w - sin_o * sin_w * cos_i
    py = sin_o * cos_w + cos_o * sin_w * cos_i
    pz = sin_w * sin_i
    qx = -cos_o * sin_w - sin_o * cos_w * cos_i
    qy = -sin_o * sin_w + cos_o * cos_w * cos_i
    qz = cos_w * sin_i

    pos = np.stack([x_pf * px + y_pf * qx,
                    x_pf * py + y_pf * qy,
                    x_pf * pz + y_pf * qz], axis=-1)
    vel = np.stack([vx_pf * px + vy_pf * qx,
                    vx_pf * py + vy_pf * qy,
                    vx_pf * pz + vy_pf * qz], axis=-1)
    return pos, vel


def propagate(elements: TleElements, t: datetime, include_j2: bool = True) -> SatelliteState:
    """Propagate mean elements to an ECI state at time t.

    Two-body motion plus J2 secular drift of RAAN and argument of perigee;
    warns when |t - epoch| exceeds 30 days.
    """
    u = _to_unix(t)
    if abs(u - _to_unix(elements.epoch)) > 30 * 86400:
        warnings.warn("propagating more than 30 days from the TLE epoch; "
                      "accuracy degrades", stacklevel=2)
    pos, vel = _propagate_arrays(elements, np.array([u]), include_j2)
    return SatelliteState(_as_utc(t), tuple(float(c) for c in pos[0]),
                          tuple(float(c) for c in vel[0]))


# ---------------------------------------------------------------------------
# Sidereal time, Sun, topocentric geometry
# ---------------------------------------------------------------------------

def _gmst_deg(unix) -> np.ndarray | float:
    d = (np.asarray(unix, dtype=float) / 86400.0 + _UNIX_JD) - _J2000_JD
    t_cen = d / 36525.0
    g = (280.46061837 + 360.98564736629 * d
         + 0.000387933 * t_cen**2 - t_cen**3 / 38710000.0)
    return np.mod(g, 360.0)


def gmst_deg(t: datetime) -> float:
    """Greenwich mean sidereal time in degrees."""
    return float(_gmst_deg(_to_unix(t)))


def _sun_radec(unix) -> tuple[np.ndarray, np.ndarray]:
    """Low-precision solar right ascension / declination, radians."""
    d = (np.asarray(unix, dtype=float) / 86400.0 + _UNIX_JD) - _J2000_JD
    g = np.radians(np.mod(357.529 + 0.98560028 * d, 360.0))
    q = np.mod(280.459 + 0.98564736 * d, 360.0)
    lam = np.radians(q + 1.915 * np.sin(g) + 0.020 * np.sin(2.0 * g))
    eps = np.radians(23.439 - 0.00000036 * d)
    ra = np.arctan2(np.cos(eps) * np.sin(lam), np.cos(lam))
    dec = np.arcsin(np.sin(eps) * np.sin(lam))
    return ra, dec


def _sun_unit_eci(unix) -> np.ndarray:
    ra, dec = _sun_radec(unix)
    return np.stack([np.cos(dec) * np.cos(ra),
                     np.cos(dec) * np.sin(ra),
                     np.sin(dec)], axis=-1)


def _sun_elevation_arrays(station: GroundStation, unix) -> np.ndarray:
    ra, dec = _sun_radec(unix)
    lat = math.radians(station.latitude_deg)
    h = np.radians(_gmst_deg(unix) + station.longitude_deg) - ra
    sin_alt = (math.sin(lat) * np.sin(dec)
               + math.cos(lat) * np.cos(dec) * np.cos(h))
    return np.degrees(np.arcsin(np.clip(sin_alt, -1.0, 1.0)))


def sun_elevation(station: GroundStation, t: datetime) -> float:
    """Solar elevation at the station in degrees (analytic, <=0.5 deg error)."""
    t = _as_utc(t)
    if not 1950 <= t.year <= 2100:
        raise ValueError(f"time {t.isoformat()} outside supported years 1950-2100")
    return float(_sun_elevation_arrays(station, _to_unix(t)))


def _station_ecef_km(station: GroundStation) -> np.ndarray:
    lat = math.radians(station.latitude_deg)
    lon = math.radians(station.longitude_deg)
    r = EARTH_RADIUS_KM + station.altitude_m / 1000.0
    return r * np.array([math.cos(lat) * math.cos(lon),
                         math.cos(lat) * math.sin(lon),
                         math.sin(lat)])


def _look_arrays(pos_eci: np.ndarray, unix: np.ndarray,
                 station: GroundStation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Elevation/azimuth (deg) and slant range (km) for ECI positions."""
    theta = np.radians(_gmst_deg(unix))
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    x = pos_eci[..., 0] * cos_t + pos_eci[..., 1] * sin_t
    y = -pos_eci[..., 0] * sin_t + pos_eci[..., 1] * cos_t
    z = pos_eci[..., 2]

    st = _station_ecef_km(station)
    dx, dy, dz = x - st[0], y - st[1], z - st[2]

    lat = math.radians(station.latitude_deg)
    lon = math.radians(station.longitude_deg)
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    sin_lon, cos_lon = math.sin(lon), math.cos(lon)
    east = -sin_lon * dx + cos_lon * dy
    north = -sin_lat * cos_lon * dx - sin_lat * sin_lon * dy + cos_lat * dz
    up = cos_lat * cos_lon * dx + cos_lat * sin_lon * dy + sin_lat * dz

    rng = np.sqrt(dx * dx + dy * dy + dz * dz)
    elev = np.degrees(np.arcsin(np.clip(up / rng, -1.0, 1.0)))
    azim = np.mod(np.degrees(np.arctan2(east, north)), 360.0)
    return elev, azim, rng


def look_angles(state: SatelliteState, station: GroundStation,
                t: datetime | None = None) -> LookAngles:
    """Topocentric elevation, azimuth and slant range of an ECI state.

    Earth rotation enters through Greenwich sidereal time at t (defaults to
    the state's own time); spherical Earth.
    """
    when = _to_unix(t if t is not None else state.time)
    pos = np.array([state.position_km])
    elev, azim, rng = _look_arrays(pos, np.array([when]), station)
    return LookAngles(float(elev[0]), float(azim[0]), float(rng[0]))


def _umbra_mask(pos_eci: np.ndarray, unix: np.ndarray) -> np.ndarray:
    """True where the satellite sits inside the cylindrical Earth shadow."""
    sun_u = _sun_unit_eci(unix)
    along = np.einsum("ij,ij->i", pos_eci, sun_u)
    perp = pos_eci - along[:, None] * sun_u
    return (along < 0.0) & (np.linalg.norm(perp, axis=1) < EARTH_RADIUS_KM)


# ---------------------------------------------------------------------------
# Ephemeris replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ephemeris:
    """Precomputed ECI positions for exact replay; linear interpolation."""
    unix: np.ndarray = field(repr=False)
    positions_km: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.unix) < 2:
            raise ValueError("ephemeris needs at least two samples")
        if np.any(np.diff(self.unix) <= 0):
            raise ValueError("ephemeris times must be strictly increasing")

    def positions_at(self, unix: np.ndarray) -> np.ndarray:
        if np.any(unix < self.unix[0]) or np.any(unix > self.unix[-1]):
            raise ValueError("query time outside ephemeris span")
        out = np.empty((len(unix), 3))
        for k in range(3):
            out[:, k] = np.interp(unix, self.unix, self.positions_km[:, k])
        return out


def load_ephemeris(path) -> Ephemeris:
    """Read an ECI ephemeris CSV with header time_utc,x_km,y_km,z_km."""
    times: list[float] = []
    rows: list[tuple[float, float, float]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "time_utc,x_km,y_km,z_km":
            raise ValueError(f"unexpected ephemeris header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            t = datetime.fromisoformat(parts[0].replace("Z", "+00:00"))
            times.append(_to_unix(t))
            rows.append((float(parts[1]), float(parts[2]), float(parts[3])))
    return Ephemeris(np.array(times), np.array(rows))


# ---------------------------------------------------------------------------
# Access windows
# ---------------------------------------------------------------------------

def compute_access_windows(source: TleElements | Ephemeris,
                           stations: Sequence[GroundStation],
                           span: tuple[datetime, datetime],
                           step_seconds: float = 10.0,
                           elevation_mask_deg: float = 10.0,
                           night_threshold_deg: float = -6.0,
                           require_umbra: bool = False) -> list[AccessInterval]:
    """Compute night-time visibility intervals over a time span.

    A sample is usable when the elevation strictly exceeds the mask and the
    station's solar elevation is below the night threshold (plus, optionally,
    the satellite sits inside the cylindrical Earth shadow).  One
    AccessInterval is emitted per maximal run of usable samples; intervals
    touching the span boundary are truncated, not discarded.  The result is
    sorted by start time (ties by station order).

    Args:
        source: TLE mean elements or a precomputed Ephemeris.
        span: (start, end); samples are taken at interval starts, i.e. at
            start + k*step for k with start + k*step < end.
        step_seconds: sampling step, > 0.
    """
    start, end = (_as_utc(span[0]), _as_utc(span[1]))
    if step_seconds <= 0:
        raise ValueError("step_seconds must be positive")
    if end <= start:
        raise ValueError("span must be non-empty")

    u0, u1 = _to_unix(start), _to_unix(end)
    count = max(1, math.ceil((u1 - u0) / step_seconds - 1e-9))
    unix = u0 + step_seconds * np.arange(count)

    try:
        if isinstance(source, Ephemeris):
            pos = source.positions_at(unix)
        else:
            pos, _ = _propagate_arrays(source, unix)
    except ValueError as exc:
        raise ValueError(f"propagation failed over {start.isoformat()}"
                         f"..{end.isoformat()}: {exc}") from exc

    umbra = _umbra_mask(pos, unix) if require_umbra else None

    intervals: list[AccessInterval] = []
    for station in stations:
        elev, azim, rng = _look_arrays(pos, unix, station)
        night = _sun_elevation_arrays(station, unix) < night_threshold_deg
        usable = (elev > elevation_mask_deg) & night
        if umbra is not None:
            usable &= umbra
        for i0, i1 in _runs(usable):
            samples = tuple(
                (_from_unix(float(unix[i])),
                 LookAngles(float(elev[i]), float(azim[i]), float(rng[i])))
                for i in range(i0, i1))
            intervals.append(AccessInterval(
                station=station,
                start=_from_unix(float(unix[i0])),
                end=_from_unix(float(unix[i1 - 1]) + step_seconds),
                samples=samples))
    intervals.sort(key=lambda iv: iv.start)
    return intervals


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [i0, i1) index ranges of the True runs in a boolean mask."""
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(edges[i]), int(edges[i + 1])) for i in range(0, len(edges), 2)]
