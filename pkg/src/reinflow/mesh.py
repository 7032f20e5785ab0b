"""Triangular meshes for channels, perforated domains, unit cells and
boundary-layer stacks.

All generators return quadratic (6-node) meshes.  Vertices come first in
``Mesh.nodes`` (indices ``0 .. n_vertices-1``), edge midpoints follow, so the
P1 pressure space is simply the vertex subset.
"""
from dataclasses import dataclass, field
from enum import IntEnum
import math

import numpy as np
import shapely
from scipy.spatial import cKDTree
import triangle

from .exceptions import MeshError

GEOM_TOL = 1e-10


class BoundaryTag(IntEnum):
    INLET = 1
    OUTLET = 2
    SLIP_WALL = 3
    OBSTACLE = 4
    INTERFACE = 5
    PERIODIC_MASTER = 6
    PERIODIC_SLAVE = 7
    BL_TOP = 8
    BL_BOTTOM = 9
    WALL = 10


class Region(IntEnum):
    FLUID = 0
    DARCY = 1
    RVE_FLUID = 2


DEFAULT_SIDES = {
    "left": BoundaryTag.INLET,
    "right": BoundaryTag.OUTLET,
    "bottom": BoundaryTag.SLIP_WALL,
    "top": BoundaryTag.SLIP_WALL,
}


@dataclass(frozen=True)
class ObstacleGrid:
    """Regular array of circular bars, one per square cell.

    ``origin`` is the lower-left corner of the (unrotated) grid; the grid is
    rotated by ``rotation_angle`` (radians) about its own center.
    """

    rows: int
    cols: int
    cell_size: float = 1.0
    radius: float = 0.25
    origin: tuple = (0.0, 0.0)
    rotation_angle: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise MeshError("obstacle grid needs at least one row and column")
        if self.cell_size <= 0:
            raise MeshError("cell_size must be positive")
        if not 0 < self.radius < self.cell_size / 2:
            raise MeshError(
                f"obstacle intersects cell boundary (radius={self.radius}, "
                f"cell_size={self.cell_size})"
            )

    @property
    def center(self):
        ox, oy = self.origin
        return np.array([ox + 0.5 * self.cols * self.cell_size,
                         oy + 0.5 * self.rows * self.cell_size])

    @property
    def rotation(self):
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        return np.array([[c, -s], [s, c]])

    def to_global(self, local):
        """Map block-local coordinates (origin at the grid center) to global."""
        return np.asarray(local, float) @ self.rotation.T + self.center

    def to_local(self, points):
        return (np.asarray(points, float) - self.center) @ self.rotation

    def cell_centers(self):
        s = self.cell_size
        i, j = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        local = np.c_[(i.ravel() + 0.5) * s - 0.5 * self.cols * s,
                      (j.ravel() + 0.5) * s - 0.5 * self.rows * s]
        return self.to_global(local)

    def corners(self):
        hx, hy = 0.5 * self.cols * self.cell_size, 0.5 * self.rows * self.cell_size
        return self.to_global([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])

    def polygon(self):
        return shapely.Polygon(self.corners())

    def cell_index(self, points):
        """Flat cell index (row-major from the lower-left cell), -1 outside."""
        loc = self.to_local(points)
        s = self.cell_size
        i = np.floor((loc[:, 0] + 0.5 * self.cols * s) / s).astype(int)
        j = np.floor((loc[:, 1] + 0.5 * self.rows * s) / s).astype(int)
        inside = (i >= 0) & (i < self.cols) & (j >= 0) & (j < self.rows)
        return np.where(inside, j * self.cols + i, -1)

    @property
    def n_cells(self):
        return self.rows * self.cols

    @property
    def porosity(self):
        return 1.0 - math.pi * self.radius**2 / self.cell_size**2


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    Attributes
    ----------
    nodes : (N, 2) array
        Vertices first, then edge midpoints (P2 meshes only).
    triangles : (T, 3) or (T, 6) int array
        Counterclockwise; quadratic triangles list the midpoints of edges
        (0,1), (1,2), (2,0) after the three vertices.
    regions : (T,) int array of :class:`Region`
    edges : (E, 2) or (E, 3) int array
        Tagged edges (outer boundary and internal interfaces).  Columns are
        the two end vertices and, for P2 meshes, the midpoint node.
    edge_tags : (E,) int array of :class:`BoundaryTag`
    periodic_pairs : (K, 2) int array
        ``(master, slave)`` node pairs; slave = master + a lattice shift.
    obstacles : (M, 3) array
        ``(cx, cy, radius)`` for every meshed hole.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    n_vertices: int
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        for name in ("nodes", "triangles", "regions", "edges", "edge_tags",
                     "periodic_pairs", "obstacles"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def order(self):
        return 2 if self.triangles.shape[1] == 6 else 1

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def vertices(self):
        return self.nodes[: self.n_vertices]

    def signed_areas(self):
        p = self.nodes[self.triangles[:, :3]]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self, region=None):
        a = self.signed_areas()
        if region is not None:
            a = a[self.regions == region]
        return float(a.sum())

    def centroids(self):
        return self.nodes[self.triangles[:, :3]].mean(axis=1)

    def edges_with(self, *tags):
        return self.edges[np.isin(self.edge_tags, tags)]

    def nodes_with(self, *tags):
        return np.unique(self.edges_with(*tags))

    def region_nodes(self, *regions):
        return np.unique(self.triangles[np.isin(self.regions, regions)])

    def periodic_partner(self):
        """Node -> partner lookup for the pure translation pairs (an involution)."""
        partner = np.arange(self.n_nodes)
        m, s = self.periodic_pairs.T
        partner[m] = s
        partner[s] = m
        return partner

    def summary(self):
        return (f"{self.n_nodes} nodes, {self.n_triangles} "
                f"{'quadratic' if self.order == 2 else 'linear'} triangles")


# --------------------------------------------------------------------------
# low-level helpers


def _as_box(outer):
    outer = tuple(float(v) for v in outer)
    if len(outer) == 2:
        outer = (0.0, 0.0) + outer
    x0, y0, x1, y1 = outer
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {outer}")
    return outer


def _segment_points(p0, p1, n):
    t = np.linspace(0.0, 1.0, n + 1)[:-1, None]
    return np.asarray(p0, float) * (1 - t) + np.asarray(p1, float) * t


def _triangulate(rings, h, holes=()):
    """Constrained Delaunay triangulation of pre-discretized closed rings.

    Boundary points are kept exactly (no Steiner points on segments), which is
    what makes periodic and conforming interfaces line up.
    """
    pts, segs, off = [], [], 0
    for ring in rings:
        n = len(ring)
        pts.append(ring)
        idx = np.arange(n) + off
        segs.append(np.c_[idx, np.roll(idx, -1)])
        off += n
    data = {"vertices": np.vstack(pts), "segments": np.vstack(segs)}
    if len(holes):
        data["holes"] = np.asarray(holes, float)
    max_area = math.sqrt(3) / 4 * h * h
    out = triangle.triangulate(data, f"pq28Ya{max_area:.12g}")
    return out["vertices"], out["triangles"]


def _merge(parts, tol=1e-9):
    """Glue (points, triangles, region) parts that share boundary points."""
    pts = np.vstack([p for p, _, _ in parts])
    tris, regs, off = [], [], 0
    for p, t, r in parts:
        tris.append(t + off)
        regs.append(np.full(len(t), r))
        off += len(p)
    tris = np.vstack(tris)
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    rep = np.arange(len(pts))
    for a, b in sorted(map(tuple, np.sort(pairs, axis=1))):
        ra, rb = rep[a], rep[b]
        while rep[ra] != ra:
            ra = rep[ra]
        while rep[rb] != rb:
            rb = rep[rb]
        rep[max(ra, rb)] = min(ra, rb)
    for i in range(len(rep)):
        r = i
        while rep[r] != r:
            r = rep[r]
        rep[i] = r
    keep, new = np.unique(rep, return_inverse=True)
    return pts[keep], new[tris], np.concatenate(regs)


def _orient(points, tris):
    p = points[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _p1_edges(tris):
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.sort(e, axis=1)


def _tagged_edges(points, tris, regions, classify):
    """Boundary edges (used once) and region-interface edges with tags."""
    t = len(tris)
    e = _p1_edges(tris)
    owner = np.tile(np.arange(t), 3)
    uniq, inv, cnt = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    bnd = uniq[cnt == 1]
    # internal edges whose two triangles carry different regions
    first = np.full(len(uniq), -1)
    second = np.full(len(uniq), -1)
    order = np.argsort(inv, kind="stable")
    sorted_inv = inv[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_inv)) + 1]
    first[sorted_inv[starts]] = owner[order[starts]]
    two = cnt[sorted_inv[starts]] == 2
    second[sorted_inv[starts[two]]] = owner[order[starts[two] + 1]]
    internal = (cnt == 2)
    iface = internal & (regions[first] != regions[np.maximum(second, 0)])
    iface_edges = uniq[iface]
    tags = np.array([classify(points[a], points[b]) for a, b in bnd], dtype=int)
    if np.any(tags <= 0):
        bad = bnd[tags <= 0][0]
        raise MeshError(f"unclassified boundary edge {points[bad[0]]}-{points[bad[1]]}")
    edges = np.vstack([bnd, iface_edges]) if len(iface_edges) else bnd
    tags = np.r_[tags, np.full(len(iface_edges), int(BoundaryTag.INTERFACE))]
    return edges, tags


def enrich_p2(mesh):
    """Add one node at the midpoint of every edge (Taylor-Hood velocity nodes).

    Idempotent on meshes that are already quadratic.
    """
    if mesh.order == 2:
        return mesh
    nv = mesh.n_vertices
    tris = np.asarray(mesh.triangles)
    e = _p1_edges(tris)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    t = len(tris)
    mids = nv + inv.reshape(3, t).T
    nodes = np.vstack([mesh.nodes[:nv], 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])])
    lookup = {(a, b): nv + k for k, (a, b) in enumerate(uniq)}
    edges = np.asarray(mesh.edges)
    if len(edges):
        emid = np.array([lookup[tuple(sorted(ab))] for ab in edges[:, :2]])
        edges = np.c_[edges[:, :2], emid]
    else:
        edges = np.zeros((0, 3), int)
    pairs = np.asarray(mesh.periodic_pairs)
    if len(pairs):
        # one master -> slave map per lattice translation (corners have several)
        shift = np.round(mesh.nodes[pairs[:, 1]] - mesh.nodes[pairs[:, 0]], 9)
        extra = []
        for s in np.unique(shift, axis=0):
            vmap = dict(map(tuple, pairs[np.all(shift == s, axis=1)]))
            for a, b in uniq:
                if a in vmap and b in vmap:
                    key = tuple(sorted((vmap[a], vmap[b])))
                    if key in lookup:
                        extra.append((lookup[(a, b)], lookup[key]))
        if extra:
            pairs = np.vstack([pairs, np.array(extra)])
    return Mesh(nodes, np.c_[tris, mids], mesh.regions, edges, mesh.edge_tags, nv,
                pairs, mesh.obstacles)


def _finalize(points, tris, regions, classify, obstacles=None, shifts=()):
    tris = _orient(points, tris)
    edges, tags = _tagged_edges(points, tris, regions, classify)
    pairs = _match_periodic(points, edges, tags, shifts)
    m = Mesh(points, tris, regions, edges, tags, len(points), pairs,
             np.zeros((0, 3)) if obstacles is None else np.asarray(obstacles, float))
    m = enrich_p2(m)
    if np.any(m.signed_areas() <= 0):
        raise MeshError("mesh contains degenerate triangles")
    return m


def _match_periodic(points, edges, tags, shifts):
    if not shifts:
        return np.zeros((0, 2), int)
    tree = cKDTree(points)
    pairs = []
    for shift, master_test in shifts:
        cand = np.unique(edges[tags == BoundaryTag.PERIODIC_MASTER])
        cand = cand[master_test(points[cand])]
        d, j = tree.query(points[cand] + shift)
        if np.any(d > GEOM_TOL):
            raise MeshError("periodic boundary discretizations do not match")
        pairs.append(np.c_[cand, j])
    return np.vstack(pairs)


def _side_classifier(box, side_tags, obstacles=()):
    x0, y0, x1, y1 = box
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    obstacles = np.asarray(obstacles, float).reshape(-1, 3)

    def classify(a, b):
        m = 0.5 * (a + b)
        if abs(a[0] - x0) < tol and abs(b[0] - x0) < tol:
            return side_tags["left"]
        if abs(a[0] - x1) < tol and abs(b[0] - x1) < tol:
            return side_tags["right"]
        if abs(a[1] - y0) < tol and abs(b[1] - y0) < tol:
            return side_tags["bottom"]
        if abs(a[1] - y1) < tol and abs(b[1] - y1) < tol:
            return side_tags["top"]
        if len(obstacles):
            d = np.hypot(*(obstacles[:, :2] - m).T) - obstacles[:, 2]
            if np.min(np.abs(d)) < 0.1 * np.linalg.norm(b - a) + 1e-9:
                return BoundaryTag.OBSTACLE
        return -1

    return classify


# --------------------------------------------------------------------------
# generators


def generate_rectangle_mesh(width, height, target_h, side_tags=None, origin=(0.0, 0.0)):
    """Structured triangulation of a rectangle with alternating diagonals.

    Every side is tagged according to ``side_tags`` (defaults: inlet left,
    outlet right, slip walls top and bottom).
    """
    if not (width > 0 and height > 0 and target_h > 0):
        raise MeshError(f"degenerate rectangle mesh request {(width, height, target_h)}")
    nx = max(1, math.ceil(width / target_h - 1e-9))
    ny = max(1, math.ceil(height / target_h - 1e-9))
    x = origin[0] + np.linspace(0, width, nx + 1)
    y = origin[1] + np.linspace(0, height, ny + 1)
    pts, tris = _structured(x, y)
    box = (origin[0], origin[1], origin[0] + width, origin[1] + height)
    sides = dict(DEFAULT_SIDES, **(side_tags or {}))
    return _finalize(pts, tris, np.zeros(len(tris), int), _side_classifier(box, sides))


def _structured(x, y):
    nx, ny = len(x) - 1, len(y) - 1
    X, Y = np.meshgrid(x, y)
    pts = np.c_[X.ravel(), Y.ravel()]
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    a = j * (nx + 1) + i
    b, c, d = a + 1, a + nx + 2, a + nx + 1
    flip = (i + j) % 2 == 1
    t1 = np.where(flip[:, None], np.c_[a, b, d], np.c_[a, b, c])
    t2 = np.where(flip[:, None], np.c_[b, c, d], np.c_[a, c, d])
    return pts, np.vstack([t1, t2])


def _octant(xi, h):
    """P1 mesh of {0 <= y <= x <= 1/2, |x| >= xi} with fixed boundary points."""
    c = xi * math.sqrt(0.5)
    h_arc = min(h, 2 * math.pi * xi / 16)
    n_arc = max(2, math.ceil(0.25 * math.pi * xi / h_arc - 1e-9))
    n_bot = max(1, math.ceil((0.5 - xi) / h - 1e-9))
    n_side = max(1, math.ceil(0.5 / h - 1e-9))
    n_diag = max(1, math.ceil(math.sqrt(2) * (0.5 - c) / h - 1e-9))
    ang = np.linspace(0.25 * math.pi, 0.0, n_arc + 1)[:-1]
    arc = np.c_[xi * np.cos(ang), xi * np.sin(ang)]
    arc[0] = (c, c)
    t = np.linspace(0.5, c, n_diag + 1)[:-1]
    ring = np.vstack([
        _segment_points((xi, 0.0), (0.5, 0.0), n_bot),
        np.c_[np.full(n_side, 0.5), np.linspace(0.0, 0.5, n_side + 1)[:-1]],
        np.c_[t, t],
        arc,
    ])
    return _triangulate([ring], h), n_side


_D4 = [
    lambda p: p,
    lambda p: p[:, ::-1],
    lambda p: p * (-1, 1),
    lambda p: p * (1, -1),
    lambda p: -p,
    lambda p: p[:, ::-1] * (-1, 1),
    lambda p: p[:, ::-1] * (1, -1),
    lambda p: -p[:, ::-1],
]


def _unit_cell_p1(xi, h):
    """D4-symmetric P1 mesh of the unit cell [-1/2, 1/2]^2 minus a disk."""
    (pts, tris), n_half = _octant(xi, h)
    parts = [(op(pts), tris, 0) for op in _D4]
    pts, tris, _ = _merge(parts)
    return pts, _orient(pts, tris), 2 * n_half


def generate_rve_mesh(xi, target_h=0.05):
    """Unit cell centered at the origin with a central hole of radius ``xi``.

    The mesh is symmetric under the eight symmetries of the square, so
    opposite sides are exact translated copies; the pairs are recorded in
    ``periodic_pairs`` (masters on the left and bottom sides).
    """
    if not 0 < xi < 0.5:
        raise MeshError(f"obstacle intersects cell boundary (xi={xi})")
    if target_h <= 0:
        raise MeshError("target_h must be positive")
    pts, tris, _ = _unit_cell_p1(xi, target_h)
    sides = {"left": BoundaryTag.PERIODIC_MASTER, "bottom": BoundaryTag.PERIODIC_MASTER,
             "right": BoundaryTag.PERIODIC_SLAVE, "top": BoundaryTag.PERIODIC_SLAVE}
    classify = _side_classifier((-0.5, -0.5, 0.5, 0.5), sides, [(0.0, 0.0, xi)])
    shifts = [((1.0, 0.0), lambda p: np.abs(p[:, 0] + 0.5) < GEOM_TOL),
              ((0.0, 1.0), lambda p: np.abs(p[:, 1] + 0.5) < GEOM_TOL)]
    return _finalize(pts, tris, np.full(len(tris), int(Region.RVE_FLUID)), classify,
                     [(0.0, 0.0, xi)], shifts)


def _ring_points(coords, spacing_for):
    """Discretize a closed shapely ring; ``spacing_for(p0, p1)`` gives n."""
    coords = np.asarray(coords)[:-1]
    out = []
    for k in range(len(coords)):
        p0, p1 = coords[k], coords[(k + 1) % len(coords)]
        out.append(_segment_points(p0, p1, spacing_for(p0, p1)))
    return np.vstack(out)


def _fluid_parts(box, grid, target_h, block_divisions):
    """Triangulate the channel minus the (possibly rotated) grid footprint.

    Edges lying on the footprint get ``block_divisions`` points per cell side
    so that they conform with whatever fills the footprint.
    """
    x0, y0, x1, y1 = box
    outer = shapely.box(x0, y0, x1, y1)
    block = grid.polygon()
    if not outer.buffer(1e-9).contains(block):
        raise MeshError("obstacle grid is not contained in the outer rectangle")
    fluid = outer.difference(block)
    fluid = shapely.set_precision(fluid, 0.0)
    boundary = block.exterior
    cs = grid.cell_size

    def n_for(p0, p1):
        seg = shapely.LineString([p0, p1])
        length = float(np.linalg.norm(np.subtract(p1, p0)))
        if boundary.buffer(1e-9).contains(seg):
            return max(1, round(length / cs * block_divisions))
        return max(1, math.ceil(length / target_h - 1e-9))

    polys = list(getattr(fluid, "geoms", [fluid]))
    parts = []
    for poly in polys:
        if poly.area < 1e-12:
            continue
        rings = [_ring_points(poly.exterior.coords, n_for)]
        holes = []
        for ring in poly.interiors:
            rings.append(_ring_points(ring.coords, n_for))
            holes.append(shapely.Polygon(ring).representative_point().coords[0])
        pts, tris = _triangulate(rings, target_h, holes)
        parts.append((pts, tris, int(Region.FLUID)))
    return parts


def _place(grid, local_pts, i, j):
    s = grid.cell_size
    loc = local_pts * s + [(i + 0.5) * s - 0.5 * grid.cols * s,
                           (j + 0.5) * s - 0.5 * grid.rows * s]
    return grid.to_global(loc)


def generate_perforated_mesh(outer, grid, target_h, cell_h=None, side_tags=None):
    """Boundary-fitted mesh of a channel containing a grid of circular bars.

    Each cell of the grid is filled with a copy of the symmetric unit-cell
    mesh (resolution ``cell_h``, relative to a unit cell), the remaining
    channel is triangulated with target edge length ``target_h``.
    """
    box = _as_box(outer)
    if target_h <= 0:
        raise MeshError("target_h must be positive")
    cell_h = target_h if cell_h is None else cell_h
    xi = grid.radius / grid.cell_size
    cpts, ctris, n_side = _unit_cell_p1(xi, cell_h / grid.cell_size)
    parts = _fluid_parts(box, grid, target_h, n_side)
    for j in range(grid.rows):
        for i in range(grid.cols):
            parts.append((_place(grid, cpts, i, j), ctris, int(Region.FLUID)))
    pts, tris, regs = _merge(parts)
    obstacles = np.c_[grid.cell_centers(), np.full(grid.n_cells, grid.radius)]
    sides = dict(DEFAULT_SIDES, **(side_tags or {}))
    return _finalize(pts, tris, regs, _side_classifier(box, sides, obstacles), obstacles)


def generate_coupled_mesh(outer, grid, target_h, darcy_divisions=2, side_tags=None):
    """Mesh for the homogenized problem: Stokes region plus a Darcy block.

    The footprint of ``grid`` becomes the Darcy region, meshed by a structured
    grid with ``darcy_divisions`` subdivisions per cell side (so element
    boundaries follow the cell lattice).  Edges shared by the two regions are
    tagged INTERFACE.
    """
    box = _as_box(outer)
    if target_h <= 0 or darcy_divisions < 1:
        raise MeshError("target_h and darcy_divisions must be positive")
    parts = _fluid_parts(box, grid, target_h, darcy_divisions)
    s = grid.cell_size
    x = np.linspace(-0.5 * grid.cols * s, 0.5 * grid.cols * s, grid.cols * darcy_divisions + 1)
    y = np.linspace(-0.5 * grid.rows * s, 0.5 * grid.rows * s, grid.rows * darcy_divisions + 1)
    dpts, dtris = _structured(x, y)
    parts.append((grid.to_global(dpts), dtris, int(Region.DARCY)))
    pts, tris, regs = _merge(parts)
    sides = dict(DEFAULT_SIDES, **(side_tags or {}))
    return _finalize(pts, tris, regs, _side_classifier(box, sides))


def generate_boundary_layer_mesh(xi, free_cells=4, target_h=0.05):
    """Stack of one perforated cell under ``free_cells`` empty cells.

    The strip is ``[-1/2, 1/2] x [-1, free_cells]``; the obstacle sits at
    ``(0, -1/2)`` and the interface is the line ``y = 0``.  ``xi = 0`` gives
    the stack without obstacle.
    """
    if not 0 <= xi < 0.5:
        raise MeshError(f"obstacle intersects cell boundary (xi={xi})")
    if free_cells < 1:
        raise MeshError("free_cells must be >= 1")
    L = float(free_cells)
    h = target_h
    h_arc = min(h, 2 * math.pi * xi / 16) if xi > 0 else h
    n_arc = max(4, 2 * math.ceil(0.5 * math.pi * xi / h_arc - 1e-9))
    n_low = max(1, math.ceil(1.0 / h - 1e-9))
    n_up = max(1, math.ceil(L / h - 1e-9))
    n_g = max(1, math.ceil(0.5 / h - 1e-9))
    n_gap_top = max(1, math.ceil((0.5 - xi) / h - 1e-9))
    ang = np.linspace(0.5 * math.pi, -0.5 * math.pi, n_arc + 1)[:-1]
    gamma = _segment_points((0.5, 0.0), (0.0, 0.0), n_g)
    if xi > 0:
        axis = [_segment_points((0.0, 0.0), (0.0, -0.5 + xi), n_gap_top),
                np.c_[xi * np.cos(ang), -0.5 + xi * np.sin(ang)],
                _segment_points((0.0, -0.5 - xi), (0.0, -1.0), n_gap_top)]
    else:
        axis = [np.c_[np.zeros(n_low), np.linspace(0.0, -1.0, n_low + 1)[:-1]]]
    lower = np.vstack([
        _segment_points((0.0, -1.0), (0.5, -1.0), n_g),
        np.c_[np.full(n_low, 0.5), np.linspace(-1.0, 0.0, n_low + 1)[:-1]],
        gamma,
        *axis,
    ])
    upper = np.vstack([
        _segment_points((0.0, 0.0), (0.5, 0.0), n_g),
        np.c_[np.full(n_up, 0.5), np.linspace(0.0, L, n_up + 1)[:-1]],
        _segment_points((0.5, L), (0.0, L), n_g),
        np.c_[np.zeros(n_up), np.linspace(L, 0.0, n_up + 1)[:-1]],
    ])
    lp, lt = _triangulate([lower], h)
    up, ut = _triangulate([upper], h)
    mirror = lambda p: p * (-1, 1)
    parts = [(lp, lt, int(Region.RVE_FLUID)), (mirror(lp), lt, int(Region.RVE_FLUID)),
             (up, ut, int(Region.FLUID)), (mirror(up), ut, int(Region.FLUID))]
    pts, tris, regs = _merge(parts)
    sides = {"left": BoundaryTag.PERIODIC_MASTER, "right": BoundaryTag.PERIODIC_SLAVE,
             "bottom": BoundaryTag.BL_BOTTOM, "top": BoundaryTag.BL_TOP}
    obstacles = [(0.0, -0.5, xi)] if xi > 0 else []
    classify = _side_classifier((-0.5, -1.0, 0.5, L), sides, obstacles)
    shifts = [((1.0, 0.0), lambda p: np.abs(p[:, 0] + 0.5) < GEOM_TOL)]
    return _finalize(pts, tris, regs, classify, obstacles, shifts)


# --------------------------------------------------------------------------
# text format


def write_mesh(mesh, path):
    """Write the plain-text mesh format (deterministic, full precision)."""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} edges {len(mesh.edges)}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines += [f"{i} {' '.join(map(str, t))} {r}"
              for i, (t, r) in enumerate(zip(mesh.triangles.tolist(), mesh.regions.tolist()))]
    lines += [f"{i} {e[0]} {e[1]} {g}"
              for i, (e, g) in enumerate(zip(mesh.edges.tolist(), mesh.edge_tags.tolist()))]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path, encoding="ascii") as fh:
        head = fh.readline().split()
        if len(head) != 6 or head[0] != "nodes":
            raise MeshError(f"{path}: bad mesh header")
        n, t, e = int(head[1]), int(head[3]), int(head[5])
        rows = [fh.readline().split() for _ in range(n + t + e)]
    nodes = np.array([[float(r[1]), float(r[2])] for r in rows[:n]]).reshape(-1, 2)
    tri = np.array([[int(v) for v in r[1:]] for r in rows[n:n + t]], dtype=int).reshape(t, -1)
    ed = np.array([[int(v) for v in r[1:]] for r in rows[n + t:]], dtype=int).reshape(e, 3)
    triangles, regions = tri[:, :-1], tri[:, -1]
    nv = int(triangles[:, :3].max()) + 1 if t else n
    m = Mesh(nodes[:nv], triangles[:, :3], regions, ed[:, :2], ed[:, 2], nv)
    if triangles.shape[1] == 6:
        m = Mesh(nodes, triangles, regions, ed[:, :2], ed[:, 2], nv)
        lookup = {}
        for tr in triangles:
            for (a, b), mid in zip(((0, 1), (1, 2), (2, 0)), (3, 4, 5)):
                lookup[(min(tr[a], tr[b]), max(tr[a], tr[b]))] = tr[mid]
        mids = np.array([lookup[(min(a, b), max(a, b))] for a, b in ed[:, :2]], dtype=int)
        m = Mesh(nodes, triangles, regions, np.c_[ed[:, :2], mids].reshape(-1, 3), ed[:, 2], nv)
    return m
