"""Small 3D vector and plane helpers shared by session, board, and gaze.

Vectors are plain ``(x, y, z)`` tuples of floats.  Everything here is pure
and allocation-light; no numpy dependency so results are bit-reproducible
across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec3 = tuple[float, float, float]


def vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(a: Vec3, s: float) -> Vec3:
    return (a[0] * s, a[1] * s, a[2] * s)


def vdot(a: Vec3, b: Vec3) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vcross(a: Vec3, b: Vec3) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def vnorm(a: Vec3) -> float:
    return math.sqrt(vdot(a, a))


def vnormalize(a: Vec3) -> Vec3:
    n = vnorm(a)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return (a[0] / n, a[1] / n, a[2] / n)


def vdist(a: Vec3, b: Vec3) -> float:
    return vnorm(vsub(a, b))


def angle_between(a: Vec3, b: Vec3) -> float:
    """Angle in radians between two nonzero vectors."""
    c = vdot(a, b) / (vnorm(a) * vnorm(b))
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``origin`` with unit ``normal``."""

    origin: Vec3
    normal: Vec3

    def __post_init__(self) -> None:
        n = vnorm(self.normal)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length (got |n|={n!r})")

    def signed_distance(self, p: Vec3) -> float:
        return vdot(vsub(p, self.origin), self.normal)

    def reflect_point(self, p: Vec3) -> Vec3:
        d = self.signed_distance(p)
        return vsub(p, vscale(self.normal, 2.0 * d))

    def reflect_dir(self, d: Vec3) -> Vec3:
        return vsub(d, vscale(self.normal, 2.0 * vdot(d, self.normal)))

    def ray_intersect(self, origin: Vec3, direction: Vec3, eps: float = 1e-9) -> Vec3 | None:
        """Forward ray intersection (parameter t >= 0), or None when the ray
        is parallel to the plane or points away from it."""
        denom = vdot(direction, self.normal)
        if abs(denom) < eps:
            return None
        t = -self.signed_distance(origin) / denom
        if t < 0.0:
            return None
        return vadd(origin, vscale(direction, t))

    def basis(self) -> tuple[Vec3, Vec3]:
        """Deterministic in-plane orthonormal axes (u, v) with v roughly 'up'.

        For the reference normal (0,0,1) this yields u=(1,0,0), v=(0,1,0).
        """
        up = (0.0, 1.0, 0.0)
        if abs(vdot(up, self.normal)) > 0.999:
            up = (0.0, 0.0, 1.0)
        u = vnormalize(vcross(up, self.normal))
        v = vcross(self.normal, u)
        return u, v
