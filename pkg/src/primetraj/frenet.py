"""Frenet frame along a reference path and Frenet <-> Cartesian conversion.

The reference curve r(s) is a C2 cubic spline through the resampled path
points, parametrized by the cumulative chord length s. Beyond either end the
curve continues as a straight line along the end tangent, so trajectories
that run past the end of the map keep their full length.

Sign convention: d > 0 to the left of the direction of travel; the normal is
the tangent rotated by +90 degrees.

Conversion to Cartesian works on the time derivatives directly. With
sigma = |r'(s)|, omega = sigma * kappa_ref and A = sigma - omega * d::

    velocity      = (sdot * A,  ddot)                      in (t, n)
    acceleration  = (sddot*A + sdot^2*(sigma' - d*omega') - 2*sdot*ddot*omega,
                         sdot^2 * A * omega + dddot)

and speed / tangential acceleration / curvature follow from those two
vectors. This is the usual Frenet-to-Cartesian transformation written without
dividing by sdot, so it stays defined for a vehicle at rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegeneratePath, OutOfCorridor, SingularProjection
from .path_search import ReferencePath
from .scene import AgentState, wrap_angle

_NEWTON_ITERS = 30


@dataclass(frozen=True)
class FrenetState:
    s: float
    s_dot: float
    s_ddot: float
    d: float
    d_dot: float
    d_ddot: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.s, self.s_dot, self.s_ddot, self.d, self.d_dot, self.d_ddot)


@dataclass(frozen=True)
class CartesianState:
    position: np.ndarray
    heading: float
    speed: float
    acceleration: float
    curvature: float


@dataclass(frozen=True)
class Geometry:
    """Reference-curve quantities evaluated at an array of s values."""

    r: np.ndarray  # (n, 2)
    tangent: np.ndarray  # (n, 2), unit
    normal: np.ndarray  # (n, 2), unit
    heading: np.ndarray
    sigma: np.ndarray  # |dr/ds|
    sigma_s: np.ndarray  # d sigma / ds
    omega: np.ndarray  # heading rate per unit s
    omega_s: np.ndarray

    @property
    def curvature(self) -> np.ndarray:
        return self.omega / self.sigma


class FrenetFrame:
    """Curvilinear frame built on one ReferencePath."""

    def __init__(self, path: ReferencePath):
        pts = np.asarray(path.points, dtype=float)
        if len(pts) < 2:
            raise DegeneratePath("reference path needs at least 2 points")
        if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 1e-12):
            raise DegeneratePath("consecutive reference points coincide")
        self.path = path
        self.knots = np.asarray(path.cum_arclength, dtype=float)
        self.length = float(self.knots[-1])
        self._spline = CubicSpline(self.knots, pts, axis=0)
        ends = np.array([0.0, self.length])
        d1 = self._spline(ends, 1)
        self._end_r = self._spline(ends)
        self._end_t = d1 / np.linalg.norm(d1, axis=1)[:, None]
        g = self.geometry(self.knots)
        self.points = pts
        self.tangents = g.tangent
        self.normals = g.normal
        self.curvatures = g.curvature

    # ------------------------------------------------------------------ geometry
    def geometry(self, s) -> Geometry:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        inside = np.clip(s, 0.0, self.length)
        sp = self._spline
        r = sp(inside)
        r1, r2, r3 = sp(inside, 1), sp(inside, 2), sp(inside, 3)
        before, after = s < 0.0, s > self.length
        if np.any(before | after):
            r1 = r1.copy()
            r2 = np.where((before | after)[:, None], 0.0, r2)
            r3 = np.where((before | after)[:, None], 0.0, r3)
            for mask, k, edge in ((before, 0, 0.0), (after, 1, self.length)):
                if np.any(mask):
                    r[mask] = self._end_r[k] + (s[mask] - edge)[:, None] * self._end_t[k]
                    r1[mask] = self._end_t[k]
        sigma2 = np.einsum("ij,ij->i", r1, r1)
        sigma = np.sqrt(sigma2)
        tangent = r1 / sigma[:, None]
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
        cross12 = r1[:, 0] * r2[:, 1] - r1[:, 1] * r2[:, 0]
        cross13 = r1[:, 0] * r3[:, 1] - r1[:, 1] * r3[:, 0]
        dot12 = np.einsum("ij,ij->i", r1, r2)
        omega = cross12 / sigma2
        omega_s = cross13 / sigma2 - 2.0 * cross12 * dot12 / sigma2**2
        sigma_s = dot12 / sigma
        heading = np.arctan2(tangent[:, 1], tangent[:, 0])
        return Geometry(r, tangent, normal, heading, sigma, sigma_s, omega, omega_s)

    # ---------------------------------------------------------------- projection
    def _initial_s(self, pts: np.ndarray) -> np.ndarray:
        """Closest point on the knot polyline, extended linearly past both ends."""
        a = self.points[:-1]
        e = np.diff(self.points, axis=0)
        len2 = np.einsum("ij,ij->i", e, e)
        rel = pts[:, None, :] - a[None, :, :]
        u_raw = np.einsum("pij,ij->pi", rel, e) / len2
        u = np.clip(u_raw, 0.0, 1.0)
        u[:, 0] = np.minimum(u_raw[:, 0], 1.0)
        u[:, -1] = np.maximum(u_raw[:, -1], 0.0)
        foot = a[None] + u[..., None] * e[None]
        dist = np.linalg.norm(pts[:, None, :] - foot, axis=-1)
        k = np.argmin(dist, axis=1)
        seg = np.sqrt(len2)
        return self.knots[k] + u[np.arange(len(pts)), k] * seg[k]

    def project_points(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """(s, d) for each point: the foot where the offset is along the normal.

        Solves (x - r(s)) . t(s) = 0 by Newton iteration started from the closest
        point on the polyline of knots; no corridor check is applied.
        """
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        s = self._initial_s(pts)
        span = 4.0 * float(np.max(np.diff(self.knots)))
        lo, hi = s - span, s + span
        for _ in range(_NEWTON_ITERS):
            g = self.geometry(s)
            rel = pts - g.r
            f = np.einsum("ij,ij->i", rel, g.tangent)
            d = np.einsum("ij,ij->i", rel, g.normal)
            slope = g.sigma - g.omega * d
            step = np.where(slope > 1e-9, f / np.where(slope > 1e-9, slope, 1.0), 0.0)
            s = np.clip(s + step, lo, hi)
            if np.all(np.abs(step) < 1e-13 * max(1.0, self.length)):
                break
        g = self.geometry(s)
        d = np.einsum("ij,ij->i", pts - g.r, g.normal)
        return s, d

    def project(self, state: AgentState, max_offset: float | None = None) -> FrenetState:
        """Project an agent's kinematic state; second derivatives are set to 0."""
        s_arr, d_arr = self.project_points(state.position[None])
        s, d = float(s_arr[0]), float(d_arr[0])
        if max_offset is not None and abs(d) > max_offset:
            raise OutOfCorridor(f"lateral offset {d:.2f} m exceeds {max_offset:.2f} m")
        if not (-1e-9 <= s <= self.length + 1e-9) and max_offset is not None:
            raise OutOfCorridor(f"projection s={s:.2f} lies outside [0, {self.length:.2f}]")
        g = self.geometry(s)
        scale = float(g.sigma[0] - g.omega[0] * d)
        if scale <= 0:
            raise SingularProjection(f"1 - kappa*d <= 0 at s={s:.2f}, d={d:.2f}")
        dtheta = wrap_angle(state.heading - float(g.heading[0]))
        return FrenetState(
            s,
            state.speed * math.cos(dtheta) / scale,
            0.0,
            d,
            state.speed * math.sin(dtheta),
            0.0,
        )

    # -------------------------------------------------------------- to cartesian
    def to_cartesian_arrays(self, s, s_dot, s_ddot, d, d_dot, d_ddot) -> dict[str, np.ndarray]:
        """Vectorized conversion; every argument broadcasts to a common shape.

        Returns x, y, theta, speed (>= 0), accel (tangential), kappa, s_dot and
        ``scale`` = sigma - omega*d (must stay positive).
        """
        s, s_dot, s_ddot, d, d_dot, d_ddot = np.broadcast_arrays(
            *(np.asarray(a, dtype=float) for a in (s, s_dot, s_ddot, d, d_dot, d_ddot))
        )
        shape = s.shape
        g = self.geometry(s.ravel())
        s, s_dot, s_ddot = s.ravel(), s_dot.ravel(), s_ddot.ravel()
        d, d_dot, d_ddot = d.ravel(), d_dot.ravel(), d_ddot.ravel()
        pos = g.r + d[:, None] * g.normal
        scale = g.sigma - g.omega * d
        vt = s_dot * scale
        vn = d_dot
        at = s_ddot * scale + s_dot**2 * (g.sigma_s - d * g.omega_s) - 2.0 * s_dot * d_dot * g.omega
        an = s_dot**2 * scale * g.omega + d_ddot
        speed = np.hypot(vt, vn)
        moving = speed > 1e-9
        safe = np.where(moving, speed, 1.0)
        accel = np.where(moving, (vt * at + vn * an) / safe, at)
        kappa = np.where(moving, (vt * an - vn * at) / safe**3, 0.0)
        theta = wrap_angle(g.heading + np.arctan2(vn, vt))
        out = {
            "x": pos[:, 0], "y": pos[:, 1], "theta": theta, "speed": speed,
            "accel": accel, "kappa": kappa, "s_dot": s_dot, "scale": scale,
        }
        return {k: v.reshape(shape) for k, v in out.items()}

    def to_cartesian(self, fs: FrenetState) -> CartesianState:
        out = self.to_cartesian_arrays(*fs.as_tuple())
        if float(out["scale"]) <= 0:
            raise SingularProjection(f"1 - kappa*d <= 0 at s={fs.s:.2f}, d={fs.d:.2f}")
        return CartesianState(
            np.array([float(out["x"]), float(out["y"])]),
            float(out["theta"]),
            float(out["speed"]),
            float(out["accel"]),
            float(out["kappa"]),
        )


def build_frame(path: ReferencePath) -> FrenetFrame:
    return FrenetFrame(path)
