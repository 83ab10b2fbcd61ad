"""Volume quadrature on domains with concentration points.

Integrands here are bubbles: radial about their centers and sharply peaked.
Each cluster of concentration points (and each hole) gets a polar rule about
its own center with geometrically graded radial panels, so the peak is seen
as a smooth radial profile. Several clusters are combined through a smooth
partition of unity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import BudgetExceeded, GeometryError
from .geometry import Annulus, Ball, BoundaryMesh, Perforated

# default angular degree and radial Gauss order per dimension
ANGULAR_DEGREE = {3: 24, 4: 12, 5: 8, 6: 6}
# several clusters: the partition-of-unity transitions need finer angles
MULTI_DEGREE = {3: 48, 4: 16, 5: 8, 6: 6}
RADIAL_ORDER = 10
PANEL_RATIO = 1.5
DEFAULT_BUDGET = 2_000_000


@lru_cache(maxsize=64)
def sphere_rule(n, degree):
    """Product Gauss rule on the unit sphere S^(n-1), exact to ``degree``.

    Returns ``(points, weights)`` with the weights summing to the sphere area.
    """
    if n < 2:
        raise ValueError("sphere rule needs n >= 2")
    m = degree + 1
    phi = 2 * np.pi * (np.arange(m) + 0.5) / m
    pts = np.column_stack([np.cos(phi), np.sin(phi)])
    wts = np.full(m, 2 * np.pi / m)
    k = (degree + 2) // 2
    for dim in range(3, n + 1):
        a = (dim - 3) / 2
        t, wt = roots_jacobi(k, a, a)
        s = np.sqrt(1 - t * t)
        pts = np.concatenate([np.column_stack([s[i] * pts, np.full(len(pts), t[i])]) for i in range(k)])
        wts = np.concatenate([wt[i] * wts for i in range(k)])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def gauss_panels(edges, order):
    """Gauss-Legendre nodes and weights on consecutive panels."""
    x, w = roots_legendre(order)
    e = np.asarray(edges, dtype=float)
    lo, hi = e[:-1, None], e[1:, None]
    return (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * w).ravel()


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def bump(r, r_flat, r_out):
    """Smooth cutoff: 1 for r <= r_flat, 0 for r >= r_out."""
    return 1.0 - smooth_step((r - r_flat) / (r_out - r_flat))


@dataclass(frozen=True)
class Patch:
    center: np.ndarray
    r_inner: float
    r_out: float
    scale: float

    @property
    def r_flat(self):
        return max(0.5 * self.r_out, self.r_inner)

    def chi(self, x):
        return bump(np.linalg.norm(x - self.center, axis=-1), self.r_flat, self.r_out)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    refinement_centers: list = field(default_factory=list)
    refinement_scales: list = field(default_factory=list)

    def integrate(self, values):
        """Sum of ``weights * values`` (values shape (N,) or (N, ...))."""
        v = np.asarray(values)
        return np.tensordot(self.weights, v, axes=(0, 0))

    def __len__(self):
        return len(self.weights)


def sphere_rule_size(n, degree):
    return (degree + 1) * ((degree + 2) // 2) ** (n - 2)


def polar_rule(center, r_edges, order, degree, n, radial_weight=None, budget=DEFAULT_BUDGET):
    """Tensor rule on a spherical shell region described by radial panel edges."""
    size = (len(r_edges) - 1) * order * sphere_rule_size(n, degree)
    if size > budget:
        raise BudgetExceeded(f"polar rule needs {size} nodes, budget is {budget}")
    r, wr = gauss_panels(r_edges, order)
    wr = wr * r ** (n - 1)
    if radial_weight is not None:
        wr = wr * radial_weight(r)
    keep = wr != 0
    r, wr = r[keep], wr[keep]
    u, wu = sphere_rule(n, degree)
    nodes = (center + r[:, None, None] * u[None]).reshape(-1, n)
    return nodes, np.outer(wr, wu).ravel()


def _uniform_edges(a, b, width):
    m = max(1, int(np.ceil((b - a) / width)))
    return np.linspace(a, b, m + 1)


def _patch_edges(r0, r_start, r_flat, r_out, ratio, transition_panels=4):
    edges = [r0]
    r = max(r_start, r0 * ratio) if r0 > 0 else r_start
    while r < r_flat:
        edges.append(r)
        r *= ratio
    edges.append(r_flat)
    edges.extend(np.linspace(r_flat, r_out, transition_panels + 1)[1:])
    return np.unique(edges)


def _clusters(centers, scales, holes):
    """Group concentration points into refinement clusters.

    Points within 20 scales of each other share a cluster (towers); its
    center is the point with the smallest scale. A hole whose center lies
    within 20 scales of a cluster point (or which contains one) is attached
    to it, and the cluster is then centered on the hole. Returns a list of
    ``(center, inner_radius, scale, attached_hole_index)``.
    """
    pts = [np.asarray(c, float) for c in centers]
    groups = [[i] for i in range(len(pts))]
    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                reach = 20 * max(scales[i] for i in groups[a] + groups[b])
                if min(np.linalg.norm(pts[i] - pts[j]) for i in groups[a] for j in groups[b]) <= reach:
                    groups[a] += groups.pop(b)
                    merged = True
                    break
            if merged:
                break
    out = []
    for g in groups:
        i0 = min(g, key=lambda i: scales[i])
        c, rin, attached = pts[i0], 0.0, None
        for h, (hc, hr) in enumerate(holes):
            if any(np.linalg.norm(pts[i] - hc) <= max(20 * scales[i], hr) for i in g):
                c, rin, attached = np.asarray(hc, float), float(hr), h
                break
        out.append((c, rin, scales[i0], attached))
    return out


def _outer_ball(domain):
    """Enclosing ball and the holes (center, radius) cut out of it, if any."""
    if isinstance(domain, Ball):
        return domain, []
    if isinstance(domain, Annulus):
        return Ball(domain.center, domain.r_outer), [(domain.center, domain.r_inner)]
    if isinstance(domain, Perforated):
        outer, holes = _outer_ball(domain.outer)
        if outer is None:
            return None, []
        return outer, holes + [(domain.hole_center, domain.hole_radius)]
    return None, []


def smooth_step7(s):
    """Septic smoothstep: C^3, polynomial on [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**4 * (35 - 84 * s + 70 * s * s - 20 * s**3)


def voronoi_weights(nodes, centers, radii):
    """Smooth partition of unity attached to clusters ``(centers, radii)``.

    Between clusters ``i`` and ``j`` the transition is a slab across the gap
    ``g = |c_i - c_j| - r_i - r_j``, centered in the gap with width ``g / 2``;
    weight ``i`` vanishes within ``r_j + g / 4`` of ``c_j``.
    """
    k = len(centers)
    g = np.ones((k, len(nodes)))
    for i in range(k):
        for j in range(k):
            if i != j:
                d = np.linalg.norm(centers[i] - centers[j])
                e = (centers[i] - centers[j]) / d
                gap = d - radii[i] - radii[j]
                mid = radii[j] + 0.5 * gap
                g[i] *= smooth_step7(0.5 + ((nodes - centers[j]) @ e - mid) / (0.5 * gap))
    return g / g.sum(axis=0)


def interior_quadrature(
    domain, centers=(), scales=(), budget=DEFAULT_BUDGET, order=RADIAL_ORDER, degree=None, ratio=PANEL_RATIO
):
    """Quadrature rule refined geometrically near ``centers`` down to ``scales``.

    Concentration points closer than a few scales to each other (towers) or
    to a hole share one refinement cluster. On domains inside a ball every
    cluster carries a polar rule about its own center, weighted by a smooth
    partition of unity; mesh domains use a cell rule with polar patches.
    """
    n = domain.n
    centers = [np.asarray(c, dtype=float) for c in centers]
    scales = [float(s) for s in scales]
    if len(centers) != len(scales):
        raise GeometryError("centers and scales must have the same length")
    if any(s <= 0 for s in scales):
        raise GeometryError("scales must be positive")
    ball, holes = _outer_ball(domain)
    if ball is None:
        degree = degree or ANGULAR_DEGREE.get(n, 6)
        return _mesh_quadrature(domain, centers, scales, budget, order, degree, ratio)
    # tower centers may sit inside a hole, which is resolved by its own cluster
    if centers and np.any(ball.boundary_distance(np.array(centers)) <= 0):
        raise GeometryError("refinement centers must be interior")

    groups = _clusters(centers, scales, holes)
    # a free hole gets its own polar cluster: rays from elsewhere graze it
    # tangentially, which costs the angular rule its accuracy
    taken = {g[3] for g in groups}
    groups += [(np.asarray(hc, float), float(hr), None, h) for h, (hc, hr) in enumerate(holes) if h not in taken]
    if not groups:
        groups = [(ball.center, 0.0, None, None)]
    degree = degree or (MULTI_DEGREE if len(groups) > 1 else ANGULAR_DEGREE).get(n, 6)
    cpts = np.array([g[0] for g in groups])
    crad = np.array([g[1] for g in groups])
    parts_n, parts_w = [], []
    total = 0
    for i, (c, rin, scale, attached) in enumerate(groups):
        clip = [hole for h, hole in enumerate(holes) if h != attached]
        nodes, weights = star_rule(ball, c, rin, scale, order, degree, ratio, budget, clip)
        if len(groups) > 1:
            weights = weights * voronoi_weights(nodes, cpts, crad)[i]
            keep = weights != 0
            nodes, weights = nodes[keep], weights[keep]
        total += len(weights)
        if total > budget:
            raise BudgetExceeded(f"quadrature needs more than {budget} nodes")
        parts_n.append(nodes)
        parts_w.append(weights)
    return QuadratureRule(
        np.concatenate(parts_n),
        np.concatenate(parts_w),
        [g[0] for g in groups if g[2] is not None],
        [g[2] for g in groups if g[2] is not None],
    )


def _mesh_quadrature(domain, centers, scales, budget, order, degree, ratio):
    if centers and np.any(domain.boundary_distance(np.array(centers)) <= 0):
        raise GeometryError("refinement centers must be interior")
    groups = _clusters(centers, scales, [])
    patches = []
    for i, (c, _, scale, _) in enumerate(groups):
        spread = max(np.linalg.norm(p - c) for p in centers if np.linalg.norm(p - c) <= 20 * max(scales))
        room = float(domain.boundary_distance(c[None])[0])
        for j, (c2, _, _, _) in enumerate(groups):
            if j != i:
                room = min(room, 0.5 * np.linalg.norm(c - c2))
        r_out = 0.5 * room
        if r_out <= 2 * spread:
            raise GeometryError("concentration points too close to the boundary or to each other")
        patches.append(Patch(c, 0.0, r_out, scale))
    min_patch = min((p.r_out - p.r_flat for p in patches), default=np.inf)
    nodes, weights = _cell_rule(domain, min(domain.diameter / 24, min_patch / 2), budget=budget)
    if patches:
        chi = np.zeros(len(nodes))
        for p in patches:
            chi += p.chi(nodes)
        weights = weights * (1.0 - chi)
        keep = weights != 0
        nodes, weights = nodes[keep], weights[keep]
    parts_n, parts_w = [nodes], [weights]
    total = len(weights)
    for p in patches:
        edges = _patch_edges(0.0, p.scale / 4, p.r_flat, p.r_out, ratio)
        pn, pw = polar_rule(p.center, edges, order, degree, domain.n, lambda r, p=p: bump(r, p.r_flat, p.r_out), budget)
        parts_n.append(pn)
        parts_w.append(pw)
        total += len(pw)
        if total > budget:
            raise BudgetExceeded(f"quadrature needs more than {budget} nodes")
    return QuadratureRule(
        np.concatenate(parts_n), np.concatenate(parts_w), [p.center for p in patches], [p.scale for p in patches]
    )


def _ray_intervals(c, u, r0, L, holes):
    """Sub-intervals of [r0, L] along ``c + t u`` lying outside the holes."""
    cuts = []
    for hc, hr in holes:
        v = c - hc
        bq = u @ v
        disc = bq * bq - (v @ v - hr * hr)
        if disc > 0:
            sq = np.sqrt(disc)
            cuts.append((-bq - sq, -bq + sq))
    pieces = [(r0, L)]
    for t1, t2 in cuts:
        nxt = []
        for a, b in pieces:
            if t2 <= a or t1 >= b:
                nxt.append((a, b))
                continue
            if t1 > a:
                nxt.append((a, t1))
            if t2 < b:
                nxt.append((t2, b))
        pieces = nxt
    return pieces


def star_rule(
    ball,
    c,
    r_inner=0.0,
    scale=None,
    order=RADIAL_ORDER,
    degree=None,
    ratio=PANEL_RATIO,
    budget=DEFAULT_BUDGET,
    holes=(),
):
    """Polar rule about an interior point ``c`` of a ball, graded toward ``c``.

    Along each direction ``u`` the ray runs from ``r_inner`` to the sphere at
    distance ``L(u)``, minus any ``holes`` (center, radius) it crosses. On
    the first piece panels grow geometrically from ``scale / 4`` (or from
    ``r_inner``) up to ``L / 2``; elsewhere they are uniform.
    """
    n = ball.n
    degree = degree or ANGULAR_DEGREE.get(n, 6)
    if sphere_rule_size(n, degree) > budget:
        raise BudgetExceeded("angular rule exceeds the node budget")
    u, wu = sphere_rule(n, degree)
    c = np.asarray(c, dtype=float)
    v = c - ball.center
    cu = u @ v
    L = -cu + np.sqrt(cu * cu + ball.radius**2 - v @ v)
    width = ball.radius / 8
    nodes, weights = [], []
    for k in range(len(wu)):
        for a, b in _ray_intervals(c, u[k], r_inner, L[k], holes):
            graded = a == r_inner and (r_inner > 0 or (scale is not None and scale / 4 < 0.5 * b))
            if graded:
                half = 0.5 * b
                edges = [a]
                r = a * ratio if a > 0 else scale / 4
                while r < half:
                    edges.append(r)
                    r *= ratio
                tail = edges[-1] if len(edges) > 1 else a
                m = max(2, int(np.ceil((b - tail) / width)))
                edges = np.concatenate([edges[:-1], np.linspace(tail, b, m + 1)])
            else:
                edges = _uniform_edges(a, b, width)
            r, wr = gauss_panels(edges, order)
            nodes.append(c + r[:, None] * u[k])
            weights.append(wr * r ** (n - 1) * wu[k])
    return np.concatenate(nodes), np.concatenate(weights)


def _cell_rule(mesh, h, points_per_cell=2, budget=DEFAULT_BUDGET):
    """Tensor Gauss rule on a box grid, keeping nodes inside the mesh."""
    n = mesh.n
    lo, hi = mesh.bounding_box()
    m = np.maximum(1, np.ceil((hi - lo) / h).astype(int))
    if np.prod(m) * points_per_cell**n > budget:
        raise BudgetExceeded("cell rule exceeds the node budget")
    axes, wax = [], []
    for k in range(n):
        x, w = gauss_panels(np.linspace(lo[k], hi[k], m[k] + 1), points_per_cell)
        axes.append(x)
        wax.append(w)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    wgrid = np.ones(1)
    for w in wax:
        wgrid = np.multiply.outer(wgrid, w)
    weights = wgrid.ravel()
    inside = mesh.winding(nodes) > 0.5
    return nodes[inside], weights[inside]
