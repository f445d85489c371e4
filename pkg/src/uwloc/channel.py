"""Stratified ocean waveguide environments and image-method multipath channels.

Coordinates are (x, y, z) in meters with z measured downward: z = 0 is the sea
surface and z = water_depth is the bottom. The sound speed varies with depth
only, as a piecewise-linear profile. A channel between a source position and a
receiver is a finite set of ray arrivals (delay in seconds, complex gain),
built by mirroring the source across the two boundaries and keeping the
shortest-delay arrivals.

Delays follow the straight-ray stratified model: the travel time of a path is
the line integral of slowness 1/c(z) along the straight segment. Reflected
paths integrate over the mirror-extended profile, which equals the sum of
in-column integrals over the folded sub-segments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateGeometryError

DEFAULT_MIN_DISTANCE = 10.0

# Vertical offsets below this (meters) are treated as horizontal paths.
_FLAT_TOLERANCE = 1e-9


@dataclass
class Environment:
    """Waveguide description: depth, sound-speed profile, boundary losses.

    ssp is an (M, 2) array of (depth, sound_speed) breakpoints, strictly
    increasing in depth and spanning [0, water_depth]. Reflection
    coefficients are per-bounce complex gains with magnitude <= 1.
    ray_budget is the number of modeled arrivals per receiver.
    """

    water_depth: float
    ssp: np.ndarray
    surface_reflection: complex
    bottom_reflection: complex
    absorption_db_per_m: float
    ray_budget: int

    def __post_init__(self):
        self.ssp = np.asarray(self.ssp, dtype=float)
        self.surface_reflection = complex(self.surface_reflection)
        self.bottom_reflection = complex(self.bottom_reflection)


@dataclass
class Geometry:
    """Receiver array, axis-aligned volume of interest, optional source.

    receivers is (L, 3); volume is (2, 3) holding the min and max corners.
    The source may be left unset and drawn later by the harness. Far-field
    validity is the caller's declaration and is not checked numerically.
    """

    receivers: np.ndarray
    volume: np.ndarray
    source: np.ndarray | None = None

    def __post_init__(self):
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        self.volume = np.asarray(self.volume, dtype=float)
        if self.source is not None:
            self.source = np.asarray(self.source, dtype=float)


@dataclass
class ArrivalSet:
    """Ray arrivals for one receiver, sorted by ascending delay."""

    delays: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.gains = np.asarray(self.gains, dtype=complex)


def validate_environment(env: Environment) -> list[str]:
    """Check every Environment invariant; return a list of violations.

    Total function: never raises, an empty list means the environment is
    valid. Each violated invariant contributes one message.
    """
    issues = []
    try:
        depth = float(env.water_depth)
    except (TypeError, ValueError):
        return ["water depth is not a number"]
    if not depth > 0:
        issues.append("water depth must be > 0")
    ssp = np.asarray(env.ssp, dtype=float)
    if ssp.ndim != 2 or ssp.shape[1] != 2 or ssp.shape[0] < 2:
        issues.append("ssp must be an (M, 2) array of (depth, speed) with M >= 2")
    else:
        depths = ssp[:, 0]
        speeds = ssp[:, 1]
        if np.any(np.diff(depths) <= 0):
            issues.append("ssp breakpoints not increasing")
        tol = 1e-9 * max(1.0, abs(depth))
        if abs(depths[0]) > tol or (depth > 0 and abs(depths[-1] - depth) > tol):
            issues.append("ssp breakpoints must span [0, water_depth]")
        if np.any(speeds <= 0):
            issues.append("sound speeds must be > 0")
    if abs(complex(env.surface_reflection)) > 1 + 1e-12:
        issues.append("surface reflection magnitude must be <= 1")
    if abs(complex(env.bottom_reflection)) > 1 + 1e-12:
        issues.append("bottom reflection magnitude must be <= 1")
    if env.absorption_db_per_m < 0:
        issues.append("absorption must be >= 0")
    if int(env.ray_budget) < 1:
        issues.append("ray budget must be >= 1")
    return issues


def validate_geometry(geometry: Geometry, env: Environment) -> list[str]:
    """Check Geometry invariants against an environment's water column."""
    issues = []
    recv = geometry.receivers
    if recv.ndim != 2 or recv.shape[1] != 3 or recv.shape[0] < 1:
        issues.append("receivers must be an (L, 3) array with L >= 1")
        return issues
    vol = geometry.volume
    if vol.shape != (2, 3):
        issues.append("volume must be a (2, 3) array of min/max corners")
        return issues
    lo, hi = vol
    if np.any(lo > hi):
        issues.append("volume min corner exceeds max corner")
    depth = float(env.water_depth)
    if np.any(recv[:, 2] < 0) or np.any(recv[:, 2] > depth):
        issues.append("receiver depths must lie in [0, water_depth]")
    if lo[2] < 0 or hi[2] > depth:
        issues.append("volume depths must lie in [0, water_depth]")
    if geometry.source is not None:
        p = geometry.source
        if p.shape != (3,):
            issues.append("source must be a 3-vector")
        elif np.any(p < lo) or np.any(p > hi):
            issues.append("source must lie inside the volume of interest")
    return issues


class _SlownessTable:
    """Closed-form slowness integrals over a piecewise-linear profile.

    Precomputes the antiderivative S(z) = integral of 1/c from 0 to z at the
    breakpoints. Within a segment where c(z) = c0 + g (z - z0), the integral
    is log1p(g dz / c0)/g, falling back to dz/c0 when g = 0. The extended
    antiderivative mirrors the profile across both boundaries, which is what
    an unfolded image-source path traverses.
    """

    def __init__(self, ssp: np.ndarray, water_depth: float):
        ssp = np.asarray(ssp, dtype=float)
        self.z = ssp[:, 0]
        self.c = ssp[:, 1]
        self.depth = float(water_depth)
        dz = np.diff(self.z)
        dc = np.diff(self.c)
        self.grad = dc / dz
        seg = np.where(
            self.grad == 0.0,
            dz / self.c[:-1],
            np.log1p(np.divide(self.grad * dz, self.c[:-1])) / np.where(self.grad == 0.0, 1.0, self.grad),
        )
        self.cum = np.concatenate(([0.0], np.cumsum(seg)))
        self.full = float(self.cum[-1])
        self.c_max = float(self.c.max())

    def speed(self, z):
        return np.interp(z, self.z, self.c)

    def speed_extended(self, z):
        r = np.abs(z) % (2.0 * self.depth)
        r = np.where(r <= self.depth, r, 2.0 * self.depth - r)
        return self.speed(r)

    def integral(self, z):
        """S(z) for z inside [0, water_depth]."""
        z = np.asarray(z, dtype=float)
        idx = np.clip(np.searchsorted(self.z, z, side="right") - 1, 0, len(self.z) - 2)
        dz = z - self.z[idx]
        g = self.grad[idx]
        c0 = self.c[idx]
        flat = dz / c0
        safe_g = np.where(g == 0.0, 1.0, g)
        sloped = np.log1p(safe_g * dz / c0) / safe_g
        return self.cum[idx] + np.where(g == 0.0, flat, sloped)

    def integral_extended(self, z):
        """S(z) over the mirror-extended profile, any real z."""
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        period = 2.0 * self.depth
        q = np.floor(a / period)
        r = a - period * q
        folded = np.where(r <= self.depth, r, period - r)
        part = self.integral(folded)
        part = np.where(r <= self.depth, part, 2.0 * self.full - part)
        return np.sign(z) * (2.0 * self.full * q + part)

    def delay(self, start, end):
        """Travel time along straight segments; endpoints may be unfolded."""
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        dist = np.linalg.norm(end - start, axis=-1)
        z0 = start[..., 2]
        z1 = end[..., 2]
        dz = z1 - z0
        steep = np.abs(dz) > _FLAT_TOLERANCE
        safe_dz = np.where(steep, dz, 1.0)
        slant = dist * (self.integral_extended(z1) - self.integral_extended(z0)) / safe_dz
        flat = dist / self.speed_extended(0.5 * (z0 + z1))
        return np.where(steep, slant, flat)


def stratified_delay(ssp, start, end) -> float:
    """Travel time along the straight segment from start to end.

    ssp is the (M, 2) breakpoint array; both endpoints must lie within the
    water column covered by the profile.
    """
    ssp = np.asarray(ssp, dtype=float)
    depth = float(ssp[-1, 0])
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    for point in (start, end):
        if point[2] < 0 or point[2] > depth:
            raise ValueError("path endpoint outside the water column")
    table = _SlownessTable(ssp, depth)
    return float(table.delay(start, end))


def _image_table(water_depth: float, max_bounces: int):
    """Mirror-source bookkeeping for bounce counts 0..max_bounces.

    Image depth = sign * z_source + offset. Listed in increasing bounce
    count, surface-first before bottom-first within a count.
    """
    sign = [1.0]
    offset = [0.0]
    n_surface = [0]
    n_bottom = [0]
    d = water_depth
    for n in range(1, max_bounces + 1):
        if n % 2 == 1:
            sign += [-1.0, -1.0]
            offset += [(1 - n) * d, (n + 1) * d]
            n_surface += [(n + 1) // 2, (n - 1) // 2]
            n_bottom += [(n - 1) // 2, (n + 1) // 2]
        else:
            sign += [1.0, 1.0]
            offset += [n * d, -n * d]
            n_surface += [n // 2, n // 2]
            n_bottom += [n // 2, n // 2]
    return (
        np.array(sign),
        np.array(offset),
        np.array(n_surface),
        np.array(n_bottom),
    )


def arrivals_batch(
    env: Environment,
    receivers,
    positions,
    *,
    min_distance: float = DEFAULT_MIN_DISTANCE,
    check_distance: bool = True,
):
    """Image-method arrivals from many source positions to all receivers.

    Returns (delays, gains) of shape (M, L, R), sorted by ascending delay
    along the last axis. Gains follow spherical spreading 1/d, per-bounce
    reflection products, and absorption 10^(-alpha d / 20).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    receivers = np.atleast_2d(np.asarray(receivers, dtype=float))
    table = _SlownessTable(env.ssp, env.water_depth)
    budget = int(env.ray_budget)
    depth = float(env.water_depth)

    z_src = positions[:, 2]
    z_rec = receivers[:, 2]
    horiz = np.linalg.norm(
        positions[:, None, :2] - receivers[None, :, :2], axis=-1
    )  # (M, L)
    direct = np.hypot(horiz, z_src[:, None] - z_rec[None, :])
    if check_distance and np.any(direct < min_distance):
        worst = float(direct.min())
        raise DegenerateGeometryError(
            f"source-receiver distance {worst:.3g} m below minimum {min_distance:g} m"
        )

    max_bounces = budget + 2
    while True:
        sign, offset, n_surf, n_bot = _image_table(depth, max_bounces)
        zeta = sign[:, None] * z_src[None, :] + offset[:, None]  # (I, M)
        dz = zeta[:, :, None] - z_rec[None, None, :]  # (I, M, L)
        dist = np.sqrt(horiz[None, :, :] ** 2 + dz**2)
        s_int = (
            table.integral_extended(zeta)[:, :, None]
            - table.integral_extended(z_rec)[None, None, :]
        )
        steep = np.abs(dz) > _FLAT_TOLERANCE
        safe_dz = np.where(steep, dz, 1.0)
        delays = np.where(
            steep,
            dist * s_int / safe_dz,
            dist / table.speed_extended(0.5 * (zeta[:, :, None] + z_rec[None, None, :])),
        )
        # Stable sort: equal delays resolve to the lower bounce count.
        order = np.argsort(delays, axis=0, kind="stable")[:budget]  # (R, M, L)
        kept_delays = np.take_along_axis(delays, order, axis=0)
        # Any image with one more bounce is at least this slow; if that beats
        # every kept delay the enumeration is complete.
        floor_next = max_bounces * depth / table.c_max
        if floor_next > float(kept_delays[-1].max()) or max_bounces > 100000:
            break
        max_bounces *= 2

    refl = (env.surface_reflection ** n_surf) * (env.bottom_reflection ** n_bot)
    kept_dist = np.take_along_axis(dist, order, axis=0)
    kept_refl = refl[order]
    attn = 10.0 ** (-env.absorption_db_per_m * kept_dist / 20.0)
    kept_gains = kept_refl / kept_dist * attn

    delays_out = np.moveaxis(kept_delays, 0, 2)
    gains_out = np.moveaxis(kept_gains, 0, 2)
    return delays_out, gains_out


def image_method_arrivals(
    env: Environment,
    geometry: Geometry,
    receiver_index: int,
    *,
    min_distance: float = DEFAULT_MIN_DISTANCE,
) -> ArrivalSet:
    """Arrivals between geometry.source and one receiver, shortest-delay first."""
    if geometry.source is None:
        raise ConfigError("geometry has no source position")
    delays, gains = arrivals_batch(
        env,
        geometry.receivers[receiver_index : receiver_index + 1],
        geometry.source[None, :],
        min_distance=min_distance,
    )
    return ArrivalSet(delays[0, 0], gains[0, 0])


def average_attenuation(
    env: Environment,
    geometry: Geometry,
    sample_count: int,
    rng_seed,
    arrivals_fn=None,
) -> float:
    """Mean over uniform volume positions of the receiver-mean CIR energy.

    CIR energy per receiver is the sum of squared gain magnitudes. The
    minimum-distance check is bypassed: volume sampling almost surely avoids
    degenerate points and the 1/d^2 energy stays integrable. arrivals_fn is
    a drop-in replacement for arrivals_batch (same call signature).
    """
    if sample_count < 1:
        raise ConfigError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = geometry.volume
    points = rng.uniform(lo, hi, size=(int(sample_count), 3))
    fn = arrivals_batch if arrivals_fn is None else arrivals_fn
    _, gains = fn(env, geometry.receivers, points, check_distance=False)
    energy = np.sum(np.abs(gains) ** 2, axis=2)  # (M, L)
    return float(energy.mean(axis=1).mean())


def _complex_from_json(value) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigError("complex values must be [re, im]")
        return complex(float(value[0]), float(value[1]))
    return complex(float(value), 0.0)


def _complex_to_json(value: complex):
    return [value.real, value.imag]


def environment_from_dict(data: dict) -> Environment:
    try:
        env = Environment(
            water_depth=float(data["water_depth"]),
            ssp=np.asarray(data["ssp"], dtype=float),
            surface_reflection=_complex_from_json(data["surface_reflection"]),
            bottom_reflection=_complex_from_json(data["bottom_reflection"]),
            absorption_db_per_m=float(data["absorption_db_per_m"]),
            ray_budget=int(data["ray_budget"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad environment config: {exc}") from exc
    issues = validate_environment(env)
    if issues:
        raise ConfigError("invalid environment: " + "; ".join(issues))
    return env


def geometry_from_dict(data: dict, env: Environment | None = None) -> Geometry:
    try:
        geometry = Geometry(
            receivers=np.asarray(data["receivers"], dtype=float),
            volume=np.asarray(data["volume"], dtype=float),
            source=(
                np.asarray(data["source"], dtype=float)
                if data.get("source") is not None
                else None
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad geometry config: {exc}") from exc
    if env is not None:
        issues = validate_geometry(geometry, env)
        if issues:
            raise ConfigError("invalid geometry: " + "; ".join(issues))
    return geometry


def environment_to_dict(env: Environment) -> dict:
    return {
        "water_depth": env.water_depth,
        "ssp": env.ssp.tolist(),
        "surface_reflection": _complex_to_json(env.surface_reflection),
        "bottom_reflection": _complex_to_json(env.bottom_reflection),
        "absorption_db_per_m": env.absorption_db_per_m,
        "ray_budget": env.ray_budget,
    }


def geometry_to_dict(geometry: Geometry) -> dict:
    data = {
        "receivers": geometry.receivers.tolist(),
        "volume": geometry.volume.tolist(),
    }
    if geometry.source is not None:
        data["source"] = geometry.source.tolist()
    return data


def load_scene(path) -> tuple[Environment, Geometry]:
    """Read one JSON file holding an environment plus geometry."""
    with open(path) as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(data, dict) or "environment" not in data or "geometry" not in data:
        raise ConfigError(f"{path}: expected top-level 'environment' and 'geometry' keys")
    env = environment_from_dict(data["environment"])
    geometry = geometry_from_dict(data["geometry"], env)
    return env, geometry
