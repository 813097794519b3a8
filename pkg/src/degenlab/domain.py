"""Computational geometry: graded disk/annulus triangulations and quadrature.

Meshes are built from concentric rings of vertices joined by a two-pointer
merge, so boundary vertices sit exactly on their circle and the radial grading
near the degeneracy at the origin is explicit.  All integrals use a per-cell
midpoint rule (exact for quadratic integrands), with optional dyadic cell
subdivision near the origin where singular weights live.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

_MIDPOINT_BARY = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])


@dataclass(frozen=True)
class GeometrySpec:
    """Disk B_L containing the degeneracy, with observation annulus A_{3R,6R}."""

    R: float = 1.0
    L: float = 9.0
    dim: int = 2

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.L <= 8.0 * self.R:
            raise ValueError("need L > 8R so the annulus bands fit inside the disk")
        if self.dim != 2:
            raise ValueError("only dim = 2 is exercised at runtime")


@dataclass(frozen=True)
class Region:
    """Radial region: ball, annulus, complement of a ball, or the whole domain."""

    kind: str  # "ball" | "annulus" | "complement" | "whole"
    r_inner: float = 0.0
    r_outer: float = 0.0

    @staticmethod
    def ball(r):
        return Region("ball", 0.0, r)

    @staticmethod
    def annulus(a, b):
        if not 0.0 <= a <= b:
            raise ValueError("annulus radii must satisfy 0 <= a <= b")
        return Region("annulus", a, b)

    @staticmethod
    def complement(r):
        return Region("complement", r, np.inf)

    @staticmethod
    def whole():
        return Region("whole")

    def contains_radius(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "ball":
            return r < self.r_outer
        if self.kind == "annulus":
            return (r > self.r_inner) & (r < self.r_outer)
        if self.kind == "complement":
            return r >= self.r_inner
        return np.ones_like(r, dtype=bool)


@dataclass
class SpaceQuadrature:
    """Flat arrays of quadrature points over (possibly subdivided) cells."""

    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)
    cell: np.ndarray     # (nq,) owning cell index
    nodes: np.ndarray    # (nq, 3) vertex ids of the owning cell
    shape: np.ndarray    # (nq, 3) P1 shape values at the point

    def values(self, field_or_fn):
        if callable(field_or_fn):
            return np.asarray(field_or_fn(self.points), dtype=float)
        u = np.asarray(field_or_fn, dtype=float)
        return np.einsum("qi,qi->q", self.shape, u[self.nodes])


class Mesh:
    """Immutable P1 triangulation with boundary markers and cached geometry."""

    OUTER, INNER = 0, 1

    def __init__(self, vertices, cells, boundary_edges, boundary_markers, h):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.boundary_edges = np.asarray(boundary_edges, dtype=np.int64)
        self.boundary_markers = np.asarray(boundary_markers, dtype=np.int64)
        self.h = float(h)
        self._finalize()
        self._quad_cache: dict = {}

    def _finalize(self):
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        flip = signed < 0
        if np.any(flip):
            self.cells[flip] = self.cells[flip][:, [0, 2, 1]]
            p = self.vertices[self.cells]
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(signed <= 0):
            raise ValueError("degenerate cell in triangulation")
        self.areas = signed
        self.centroids = p.mean(axis=1)
        # P1 shape gradients: grad lambda_i = rot(opposite edge) / (2A)
        x, y = p[..., 0], p[..., 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        self.grads = np.stack([b, c], axis=2) / (2.0 * self.areas)[:, None, None]
        bmask = np.zeros(len(self.vertices), dtype=bool)
        bmask[self.boundary_edges.ravel()] = True
        self.boundary_mask = bmask
        self.interior = np.flatnonzero(~bmask)

    # -- queries -------------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    def cell_mask(self, region: Region) -> np.ndarray:
        return region.contains_radius(np.linalg.norm(self.centroids, axis=1))

    def vertex_mask(self, region: Region) -> np.ndarray:
        return region.contains_radius(np.linalg.norm(self.vertices, axis=1))

    def p1_gradient(self, u) -> np.ndarray:
        """Piecewise-constant gradient of a nodal field, one row per cell."""
        u = np.asarray(u, dtype=float)
        return np.einsum("ci,cid->cd", u[self.cells], self.grads)

    def boundary_edge_normals(self) -> np.ndarray:
        """Unit outward normals per boundary edge (radial on circles)."""
        mids = 0.5 * (self.vertices[self.boundary_edges[:, 0]]
                      + self.vertices[self.boundary_edges[:, 1]])
        r = np.linalg.norm(mids, axis=1, keepdims=True)
        n = mids / r
        n[self.boundary_markers == Mesh.INNER] *= -1.0
        return n

    # -- quadrature ------------------------------------------------------------

    def quadrature(self, subdivide_radius: float = 0.0, levels: int = 2) -> SpaceQuadrature:
        key = (round(float(subdivide_radius), 12), int(levels))
        if key in self._quad_cache:
            return self._quad_cache[key]
        qp = self._build_quadrature(subdivide_radius, levels)
        self._quad_cache[key] = qp
        return qp

    def _build_quadrature(self, subdivide_radius, levels):
        p = self.vertices[self.cells]
        if subdivide_radius > 0.0:
            vr = np.linalg.norm(p, axis=2).min(axis=1)
            fine = vr <= subdivide_radius
        else:
            fine = np.zeros(self.num_cells, dtype=bool)
        coarse = ~fine
        blocks = []
        if np.any(coarse):
            blocks.append(self._midpoint_block(np.flatnonzero(coarse), _MIDPOINT_BARY))
        if np.any(fine):
            bary = _MIDPOINT_BARY
            for _ in range(levels):
                bary = _refine_bary(bary)
            blocks.append(self._midpoint_block(np.flatnonzero(fine), bary))
        pts = np.concatenate([b[0] for b in blocks])
        w = np.concatenate([b[1] for b in blocks])
        cell = np.concatenate([b[2] for b in blocks])
        shape = np.concatenate([b[3] for b in blocks])
        return SpaceQuadrature(pts, w, cell, self.cells[cell], shape)

    def _midpoint_block(self, cell_ids, bary):
        p = self.vertices[self.cells[cell_ids]]         # (c, 3, 2)
        pts = np.einsum("qi,cid->cqd", bary, p)          # (c, q, 2)
        nq = bary.shape[0]
        w = np.repeat(self.areas[cell_ids] / (nq / 3.0) / 3.0, nq)
        cells = np.repeat(cell_ids, nq)
        shape = np.tile(bary, (len(cell_ids), 1))
        return pts.reshape(-1, 2), w, cells, shape

    # -- plain-text export -----------------------------------------------------

    def save(self, path):
        buf = io.StringIO()
        buf.write(f"# vertices {self.num_vertices}\n")
        for x, y in self.vertices:
            buf.write(f"{float(x)!r} {float(y)!r}\n")
        buf.write(f"# cells {self.num_cells}\n")
        for i, j, k in self.cells:
            buf.write(f"{i} {j} {k}\n")
        buf.write(f"# boundary_edges {len(self.boundary_edges)}\n")
        for (i, j), m in zip(self.boundary_edges, self.boundary_markers):
            buf.write(f"{i} {j} {'inner' if m == Mesh.INNER else 'outer'}\n")
        buf.write(f"# h {self.h!r}\n")
        with open(path, "w") as f:
            f.write(buf.getvalue())

    @staticmethod
    def load(path):
        with open(path) as f:
            lines = f.read().splitlines()
        pos = 0

        def read_block(tag):
            nonlocal pos
            head = lines[pos].split()
            if head[1] != tag:
                raise ValueError(f"expected section {tag}, got {lines[pos]!r}")
            n = int(head[2])
            block = lines[pos + 1: pos + 1 + n]
            pos += 1 + n
            return block

        verts = np.array([[float(t) for t in ln.split()] for ln in read_block("vertices")])
        cells = np.array([[int(t) for t in ln.split()] for ln in read_block("cells")])
        edges, marks = [], []
        for ln in read_block("boundary_edges"):
            i, j, m = ln.split()
            edges.append((int(i), int(j)))
            marks.append(Mesh.INNER if m == "inner" else Mesh.OUTER)
        h = float(lines[pos].split()[2])
        return Mesh(verts, cells, np.array(edges), np.array(marks), h)


def _refine_bary(bary):
    """Replace each barycentric point set by its image on the 4 subtriangles."""
    corners = np.array([
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ], dtype=float)
    out = np.einsum("qi,sid->sqd", bary, corners)
    return out.reshape(-1, 3)


# ---------------------------------------------------------------------------
# ring-based mesh generation
# ---------------------------------------------------------------------------

def _ring_radii(r_start, r_end, spacing_fn, s_first=None):
    radii = [r_start]
    s_prev = s_first if s_first is not None else spacing_fn(r_start)
    r = r_start
    while True:
        s = min(spacing_fn(r), 1.5 * s_prev)
        r = r + s
        s_prev = s
        radii.append(r)
        if r >= r_end - 0.25 * s:
            break
    radii = np.array(radii)
    # affine squeeze of the overshoot so the last ring lands exactly on r_end
    radii = r_start + (radii - r_start) * (r_end - r_start) / (radii[-1] - r_start)
    return radii


def _ring_points(radius, count, stagger):
    theta = 2.0 * np.pi * (np.arange(count) + (0.5 if stagger else 0.0)) / count
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)]), theta


def _merge_rings(theta_a, theta_b, idx_a, idx_b):
    """Triangulate the band between two vertex rings by angular two-pointer merge."""
    na, nb = len(theta_a), len(theta_b)
    tri = []
    i = j = 0
    two_pi = 2.0 * np.pi

    def ang(th, k, n):
        return th[k % n] + two_pi * (k // n)

    while i < na or j < nb:
        adv_a = ang(theta_a, i + 1, na) <= ang(theta_b, j + 1, nb)
        if i >= na:
            adv_a = False
        if j >= nb:
            adv_a = True
        if adv_a:
            tri.append((idx_a[i % na], idx_b[j % nb], idx_a[(i + 1) % na]))
            i += 1
        else:
            tri.append((idx_a[i % na], idx_b[j % nb], idx_b[(j + 1) % nb]))
            j += 1
    return tri


def _build_rings(radii, spacing_fn, index_start, include_center):
    """Vertex rings plus triangles between consecutive rings."""
    verts = []
    cells = []
    ring_idx = []
    ring_theta = []
    nxt = index_start
    if include_center:
        verts.append(np.zeros((1, 2)))
        center = nxt
        nxt += 1
        radii = radii[1:]  # drop the r = 0 entry
    for k, r in enumerate(radii):
        s = spacing_fn(r)
        count = max(8, int(np.ceil(2.0 * np.pi * r / s)))
        pts, theta = _ring_points(r, count, stagger=(k % 2 == 1))
        verts.append(pts)
        ring_idx.append(np.arange(nxt, nxt + count))
        ring_theta.append(theta)
        nxt += count
    if include_center:
        first = ring_idx[0]
        n0 = len(first)
        for i in range(n0):
            cells.append((center, first[i], first[(i + 1) % n0]))
    for k in range(len(ring_idx) - 1):
        cells.extend(_merge_rings(ring_theta[k], ring_theta[k + 1],
                                  ring_idx[k], ring_idx[k + 1]))
    return np.concatenate(verts), cells, ring_idx


def _boundary_from_ring(ring, marker):
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    return edges, [marker] * n


def build_disk_mesh(spec: GeometrySpec, h: float, local_h: float | None = None) -> Mesh:
    """Graded triangulation of the disk B_L.

    Ring spacing is h outside B_{2R} and h/2 inside (the degeneracy band);
    ``local_h`` forces an even finer spacing right at the origin so a
    regularization ball of comparable radius is resolved.
    """
    if not 0.0 < h < spec.R:
        raise ValueError(
            f"h={h} too coarse: need h < R = {spec.R} so the 3R-wide "
            "observation annulus is crossed by at least 3 element layers")
    R = spec.R
    fine = h / 2.0
    lh = fine if local_h is None else min(local_h, fine)

    def spacing(r):
        base = fine if r < 2.0 * R else h
        return min(base, max(lh, 0.6 * r))

    radii = _ring_radii(0.0, spec.L, spacing, s_first=lh)
    verts, cells, rings = _build_rings(radii, spacing, 0, include_center=True)
    edges, marks = _boundary_from_ring(rings[-1], Mesh.OUTER)
    return Mesh(verts, np.array(cells), np.array(edges), np.array(marks), h)


def build_annulus_mesh(r_in: float, r_out: float, h: float) -> Mesh:
    """Quasi-uniform triangulation of the annulus A_{r_in, r_out}."""
    if not 0.0 < r_in < r_out:
        raise ValueError("need 0 < r_in < r_out")
    if h >= (r_out - r_in) / 3.0:
        raise ValueError("h too coarse: fewer than 3 element layers across the annulus")

    radii = _ring_radii(r_in, r_out, lambda r: h)
    verts, cells, rings = _build_rings(radii, lambda r: h, 0, include_center=False)
    e_in, m_in = _boundary_from_ring(rings[0], Mesh.INNER)
    e_out, m_out = _boundary_from_ring(rings[-1], Mesh.OUTER)
    return Mesh(verts, np.array(cells), np.array(e_in + e_out),
                np.array(m_in + m_out), h)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def region_mask(mesh: Mesh, region: Region) -> np.ndarray:
    """Cell mask by centroid membership (no cut cells)."""
    return mesh.cell_mask(region)


def integrate_space(mesh: Mesh, integrand, region: Region | None = None,
                    weight=None, subdivide_radius: float = 0.0) -> float:
    """Integral of integrand * weight over the region.

    ``integrand`` is either a nodal array (P1-interpolated) or a callable on
    point arrays; same for ``weight``.  Cells whose vertices come within
    ``subdivide_radius`` of the origin are integrated on a 2-level dyadic
    refinement of the midpoint rule.
    """
    qp = mesh.quadrature(subdivide_radius)
    vals = qp.values(integrand)
    w = qp.weights
    if weight is not None:
        vals = vals * np.asarray(weight(qp.points), dtype=float)
    if region is not None:
        mask = mesh.cell_mask(region)[qp.cell]
        w = w * mask
    return float(np.dot(w, vals))


def snap_window(times: np.ndarray, window) -> tuple[int, int]:
    """Indices of the time-grid nodes nearest the window endpoints."""
    t0, t1 = window
    T = times[-1]
    if t0 < -1e-12 or t1 > T + 1e-12 or t0 >= t1:
        raise ValueError(f"time window {window} outside [0, {T}]")
    i0 = int(np.argmin(np.abs(times - t0)))
    i1 = int(np.argmin(np.abs(times - t1)))
    return i0, i1


def integrate_spacetime(mesh: Mesh, times, slice_integrals=None, fields=None,
                        region: Region | None = None, weight=None,
                        window=None, subdivide_radius: float = 0.0) -> float:
    """Trapezoid-in-time composite of per-slice space integrals.

    Either pass precomputed per-slice integrals, or nodal ``fields`` with
    shape (len(times), n_vertices) to be integrated slice by slice.
    """
    times = np.asarray(times, dtype=float)
    if slice_integrals is None:
        slice_integrals = np.array([
            integrate_space(mesh, fields[n], region, weight, subdivide_radius)
            for n in range(len(times))])
    else:
        slice_integrals = np.asarray(slice_integrals, dtype=float)
    i0, i1 = (0, len(times) - 1) if window is None else snap_window(times, window)
    tw = times[i0:i1 + 1]
    return float(np.trapezoid(slice_integrals[i0:i1 + 1], tw))
