"""Bounded domains: balls, annuli, perforated domains and boundary meshes.

Every domain exposes vectorised membership and boundary-distance queries,
its volume, a diameter estimate and boundary sampling used by the
collocation engines. Domains are plain frozen dataclasses and round-trip
through JSON dictionaries (see :func:`domain_from_dict`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings
from math import gamma, pi

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import GeometryError

MAX_DIM = 6


def sphere_area(n, radius=1.0):
    """Surface area of the sphere of given radius in R^n."""
    return 2.0 * pi ** (n / 2) / gamma(n / 2) * radius ** (n - 1)


def ball_volume(n, radius=1.0):
    return pi ** (n / 2) / gamma(n / 2 + 1) * radius**n


def green_constant(n):
    """c_n = 1 / ((n - 2) |S^{n-1}|), so that -Laplace(c_n |x|^{2-n}) = Dirac."""
    return 1.0 / ((n - 2) * sphere_area(n))


def sphere_points(n, count, seed=0):
    """Quasi-uniform unit vectors in R^n.

    Fibonacci lattice for n = 3; scrambled Sobol points pushed through the
    Gaussian quantile and normalised otherwise.
    """
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = pi * (3.0 - np.sqrt(5.0)) * k
        s = np.sqrt(1.0 - z * z)
        return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = sob.random(count)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    g = ndtri(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise GeometryError(f"expected points in R^{n}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Sphere:
    """A spherical boundary component; ``sign`` is +1 when the domain is inside."""

    center: np.ndarray
    radius: float
    sign: int


class Domain:
    """Common interface of all domain kinds."""

    n: int

    def boundary_distance(self, x):
        raise NotImplementedError

    def contains(self, x):
        return self.boundary_distance(x) > 0.0

    @property
    def volume(self):
        raise NotImplementedError

    @property
    def diameter(self):
        raise NotImplementedError

    @property
    def inradius(self):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    def spheres(self):
        """Boundary as a list of :class:`Sphere`, or None for mesh boundaries."""
        return None

    def axis_center(self):
        """Common center if every boundary component is a concentric sphere."""
        sph = self.spheres()
        if not sph:
            return None
        c = sph[0].center
        scale = max(s.radius for s in sph)
        for s in sph[1:]:
            if np.linalg.norm(s.center - c) > 1e-9 * scale:
                return None
        return c

    def sample_boundary(self, count, seed=0):
        """Return (points, outward normals, areas) with about ``count`` points."""
        raise NotImplementedError

    def sample_interior(self, rng, count, min_distance=0.0, max_tries=10000):
        """Uniform samples with boundary distance at least ``min_distance``."""
        lo, hi = self.bounding_box()
        out = []
        have = 0
        for _ in range(max_tries):
            cand = rng.uniform(lo, hi, size=(max(4 * (count - have), 16), self.n))
            ok = self.boundary_distance(cand) >= min_distance
            cand = cand[ok]
            out.append(cand)
            have += len(cand)
            if have >= count:
                break
        pts = np.concatenate(out)[:count]
        if len(pts) < count:
            raise GeometryError("could not sample the requested interior region")
        return pts

    def to_dict(self):
        raise NotImplementedError


def _check_dim(n):
    if int(n) != n or n < 3:
        raise GeometryError(f"dimension must be an integer >= 3, got {n}")


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center: np.ndarray
    radius: float
    n: int = field(default=0)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        n = self.n or c.size
        object.__setattr__(self, "n", int(n))
        _check_dim(self.n)
        if c.size != self.n:
            raise GeometryError("center dimension does not match n")
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")

    def boundary_distance(self, x):
        x = _as_points(x, self.n)
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    @property
    def volume(self):
        return ball_volume(self.n, self.radius)

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def inradius(self):
        return self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def spheres(self):
        return [Sphere(self.center, self.radius, +1)]

    def sample_boundary(self, count, seed=0):
        u = sphere_points(self.n, count, seed)
        area = sphere_area(self.n, self.radius) / count
        return self.center + self.radius * u, u, np.full(count, area)

    def to_dict(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": float(self.radius), "n": self.n}


@dataclass(frozen=True, eq=False)
class Annulus(Domain):
    center: np.ndarray
    r_inner: float
    r_outer: float
    n: int = field(default=0)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "n", int(self.n or c.size))
        _check_dim(self.n)
        if c.size != self.n:
            raise GeometryError("center dimension does not match n")
        if not 0 < self.r_inner < self.r_outer:
            raise GeometryError("annulus needs 0 < r_inner < r_outer")

    def boundary_distance(self, x):
        x = _as_points(x, self.n)
        r = np.linalg.norm(x - self.center, axis=-1)
        return np.minimum(r - self.r_inner, self.r_outer - r)

    @property
    def volume(self):
        return ball_volume(self.n, self.r_outer) - ball_volume(self.n, self.r_inner)

    @property
    def diameter(self):
        return 2.0 * self.r_outer

    @property
    def inradius(self):
        return 0.5 * (self.r_outer - self.r_inner)

    def bounding_box(self):
        return self.center - self.r_outer, self.center + self.r_outer

    def spheres(self):
        return [Sphere(self.center, self.r_outer, +1), Sphere(self.center, self.r_inner, -1)]

    def sample_boundary(self, count, seed=0):
        return _sample_spheres(self.spheres(), self.n, count, seed)

    def to_dict(self):
        return {
            "kind": "annulus",
            "center": self.center.tolist(),
            "r_inner": float(self.r_inner),
            "r_outer": float(self.r_outer),
            "n": self.n,
        }


@dataclass(frozen=True, eq=False)
class Perforated(Domain):
    """``outer`` minus the closed ball ``B(hole_center, hole_radius)``."""

    outer: Domain
    hole_center: np.ndarray
    hole_radius: float

    def __post_init__(self):
        hc = np.asarray(self.hole_center, dtype=float).reshape(-1)
        object.__setattr__(self, "hole_center", hc)
        if hc.size != self.outer.n:
            raise GeometryError("hole center dimension does not match the outer domain")
        if not self.hole_radius > 0:
            raise GeometryError("hole radius must be positive")
        clearance = float(self.outer.boundary_distance(hc)) - self.hole_radius
        if not clearance > 0:
            raise GeometryError("hole must lie strictly inside the outer domain")

    @property
    def n(self):
        return self.outer.n

    def boundary_distance(self, x):
        x = _as_points(x, self.n)
        dh = np.linalg.norm(x - self.hole_center, axis=-1) - self.hole_radius
        return np.minimum(self.outer.boundary_distance(x), dh)

    @property
    def volume(self):
        return self.outer.volume - ball_volume(self.n, self.hole_radius)

    @property
    def diameter(self):
        return self.outer.diameter

    @property
    def inradius(self):
        return self.outer.inradius

    def bounding_box(self):
        return self.outer.bounding_box()

    def spheres(self):
        sph = self.outer.spheres()
        if sph is None:
            return None
        return sph + [Sphere(self.hole_center, self.hole_radius, -1)]

    def sample_boundary(self, count, seed=0):
        hole = Sphere(self.hole_center, self.hole_radius, -1)
        sph = self.outer.spheres()
        if sph is not None:
            return _sample_spheres(sph + [hole], self.n, count, seed)
        n_hole = max(count // 4, 2 * self.n)
        p0, n0, a0 = self.outer.sample_boundary(count - n_hole, seed)
        p1, n1, a1 = _sample_spheres([hole], self.n, n_hole, seed)
        return np.vstack([p0, p1]), np.vstack([n0, n1]), np.concatenate([a0, a1])

    def to_dict(self):
        return {
            "kind": "perforated",
            "outer": self.outer.to_dict(),
            "hole_center": self.hole_center.tolist(),
            "hole_radius": float(self.hole_radius),
        }


@dataclass(frozen=True, eq=False)
class BoundaryMesh(Domain):
    """Domain given by boundary panels (point, outward unit normal, area)."""

    points: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        nv = np.atleast_2d(np.asarray(self.normals, dtype=float))
        a = np.asarray(self.areas, dtype=float).reshape(-1)
        if p.shape != nv.shape or p.shape[0] != a.size:
            raise GeometryError("panel arrays have inconsistent shapes")
        _check_dim(p.shape[1])
        if np.any(np.abs(np.linalg.norm(nv, axis=1) - 1.0) > 1e-12):
            raise GeometryError("panel normals must have unit norm")
        if np.any(a <= 0):
            raise GeometryError("panel areas must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", nv)
        object.__setattr__(self, "areas", a)
        if self.volume <= 0:
            raise GeometryError("mesh normals must point outward (non-positive enclosed volume)")

    @property
    def n(self):
        return self.points.shape[1]

    def winding(self, x):
        """Discrete Gauss integral: ~1 inside, ~0 outside."""
        x = _as_points(x, self.n)
        flat = x.reshape(-1, self.n)
        out = np.empty(len(flat))
        omega = sphere_area(self.n)
        for s in range(0, len(flat), 512):
            d = self.points[None, :, :] - flat[s : s + 512, None, :]
            r = np.linalg.norm(d, axis=-1)
            out[s : s + 512] = np.sum(
                self.areas * np.einsum("ijk,jk->ij", d, self.normals) / r**self.n, axis=1
            ) / omega
        return out.reshape(x.shape[:-1])

    def boundary_distance(self, x):
        x = _as_points(x, self.n)
        flat = x.reshape(-1, self.n)
        dist = np.empty(len(flat))
        for s in range(0, len(flat), 512):
            d = np.linalg.norm(self.points[None, :, :] - flat[s : s + 512, None, :], axis=-1)
            dist[s : s + 512] = d.min(axis=1)
        inside = self.winding(flat) > 0.5
        return np.where(inside, dist, -dist).reshape(x.shape[:-1])

    @property
    def volume(self):
        return float(np.sum(self.areas * np.einsum("ij,ij->i", self.points, self.normals)) / self.n)

    @property
    def diameter(self):
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    @property
    def inradius(self):
        c = self.points.mean(axis=0)
        return max(float(self.boundary_distance(c)), 0.25 * self.diameter / np.sqrt(self.n))

    def bounding_box(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def sample_boundary(self, count, seed=0):
        return self.points, self.normals, self.areas

    def to_dict(self):
        return {
            "kind": "mesh",
            "n": self.n,
            "panels": [
                {"point": p.tolist(), "normal": q.tolist(), "area": float(a)}
                for p, q, a in zip(self.points, self.normals, self.areas)
            ],
        }


def _sample_spheres(spheres, n, count, seed):
    """Split ``count`` points over spherical components (area-weighted, floor count each)."""
    areas = np.array([sphere_area(n, s.radius) for s in spheres])
    floor = max(count // (2 * len(spheres)), 2 * n)
    share = np.maximum(floor, np.round(count * areas / areas.sum()).astype(int))
    pts, nrm, wts = [], [], []
    for s, m in zip(spheres, share):
        u = sphere_points(n, int(m), seed)
        pts.append(s.center + s.radius * u)
        nrm.append(s.sign * u)
        wts.append(np.full(int(m), sphere_area(n, s.radius) / m))
    return np.vstack(pts), np.vstack(nrm), np.concatenate(wts)


def sphere_mesh(center, radius, count, n=None, seed=0):
    """Boundary mesh of a sphere with ``count`` equal-area panels."""
    c = np.asarray(center, dtype=float).reshape(-1)
    n = n or c.size
    u = sphere_points(n, count, seed)
    return BoundaryMesh(c + radius * u, u, np.full(count, sphere_area(n, radius) / count))


def domain_from_dict(d):
    """Build a domain from its JSON dictionary."""
    if not isinstance(d, dict) or "kind" not in d:
        raise GeometryError("domain must be an object with a 'kind' field")
    kind = d["kind"]
    try:
        if kind == "ball":
            return Ball(d["center"], float(d["radius"]), int(d.get("n", 0)))
        if kind == "annulus":
            return Annulus(d["center"], float(d["r_inner"]), float(d["r_outer"]), int(d.get("n", 0)))
        if kind == "perforated":
            return Perforated(domain_from_dict(d["outer"]), d["hole_center"], float(d["hole_radius"]))
        if kind == "mesh":
            panels = d["panels"]
            return BoundaryMesh(
                [p["point"] for p in panels], [p["normal"] for p in panels], [p["area"] for p in panels]
            )
    except KeyError as exc:
        raise GeometryError(f"domain of kind {kind!r} is missing field {exc}") from None
    raise GeometryError(f"unknown domain kind {kind!r}")
