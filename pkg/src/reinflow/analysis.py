"""Post-processing: profiles, cell averages, DNS-vs-homogenized metrics,
sub-scale pressure reconstruction and the friction fit."""
from dataclasses import dataclass

import numpy as np

from .exceptions import ReinflowError
from .fem import TRI7, ElementGeometry, shape_functions

FIELDS = ("u_x", "u_y", "speed", "p", "pbar", "p_reconstructed")


@dataclass(frozen=True)
class ProfileRequest:
    """Straight section from ``start`` to ``end`` sampled at ``samples`` points."""

    start: tuple
    end: tuple
    field: str = "u_x"
    samples: int = 200

    def points(self):
        t = np.linspace(0.0, 1.0, self.samples)[:, None]
        return np.asarray(self.start, float) * (1 - t) + np.asarray(self.end, float) * t

    def arc_length(self):
        return np.linspace(0.0, float(np.hypot(*np.subtract(self.end, self.start))), self.samples)


def _inside_obstacles(mesh, pts):
    if len(mesh.obstacles) == 0:
        return np.zeros(len(pts), bool)
    c, r = mesh.obstacles[:, :2], mesh.obstacles[:, 2]
    d = np.linalg.norm(pts[:, None, :] - c[None], axis=2)
    return np.any(d < r[None] - 1e-12, axis=1)


def extract_profile(fields, request, reconstruction=None):
    """Tabulate ``(arc length, value)`` along a section.

    Points inside bars (or otherwise outside the mesh) are NaN.

    Raises
    ------
    ReinflowError
        If a section endpoint lies outside the mesh bounding box.
    """
    if request.field not in FIELDS:
        raise ReinflowError(f"unknown profile field {request.field!r}")
    lo, hi = fields.mesh.nodes.min(0) - 1e-9, fields.mesh.nodes.max(0) + 1e-9
    for p in (request.start, request.end):
        if np.any(np.asarray(p) < lo) or np.any(np.asarray(p) > hi):
            raise ReinflowError(f"section endpoint {p} outside the domain")
    pts = request.points()
    if request.field in ("u_x", "u_y", "speed"):
        v = fields.velocity(pts)
        val = {"u_x": v[:, 0], "u_y": v[:, 1], "speed": np.hypot(v[:, 0], v[:, 1])}[request.field]
    elif request.field == "pbar":
        val = fields._interp("darcy", fields.pbar, "P1", pts)
    elif request.field == "p_reconstructed":
        if reconstruction is None:
            raise ReinflowError("reconstructed pressure needs the cell solutions")
        val = fields.pressure(pts)
        inside = ~np.isnan(fields._interp("darcy", fields.pbar, "P1", pts))
        val[inside] = reconstruction(pts[inside])
    else:
        val = fields.pressure(pts)
    val = np.where(_inside_obstacles(fields.mesh, pts), np.nan, val)
    return np.c_[request.arc_length(), val]


# --------------------------------------------------------------------------
# cell (footprint) averages


def dns_cell_averages(report, grid):
    """Seepage velocity of every cell of ``grid``: integral of the DNS
    velocity over the fluid part of the cell divided by the cell area."""
    mesh, f = report.mesh, report.fields
    els = f.fluid_elements
    cell = grid.cell_index(mesh.centroids()[els])
    els, cell = els[cell >= 0], cell[cell >= 0]
    geom = ElementGeometry(mesh.nodes, mesh.triangles[els])
    N, _ = shape_functions("P2", TRI7.points)
    ue = f.u[mesh.triangles[els]]  # (T, 6, 2)
    integ = np.einsum("tq,qi,tic->tc", geom.dx(TRI7), N, ue)
    out = np.zeros((grid.n_cells, 2))
    np.add.at(out, cell, integ)
    return out / grid.cell_size**2


def homogenized_cell_averages(report, grid):
    """Footprint average of the seepage law evaluated at the Darcy elements."""
    d = report.darcy
    mesh = report.mesh
    cell = grid.cell_index(d["centroids"])
    area = mesh.signed_areas()[d["elements"]]
    out = np.zeros((grid.n_cells, 2))
    wsum = np.zeros(grid.n_cells)
    ok = cell >= 0
    np.add.at(out, cell[ok], d["flux"][ok] * area[ok, None])
    np.add.at(wsum, cell[ok], area[ok])
    return out / np.where(wsum > 0, wsum, 1.0)[:, None]


def velocity_error(dns_avg, hom_avg):
    """Max over cells of the difference of the averaged speeds, relative to
    the largest DNS cell average."""
    a = np.linalg.norm(dns_avg, axis=1)
    b = np.linalg.norm(hom_avg, axis=1)
    scale = a.max(initial=0.0)
    return float(np.max(np.abs(a - b), initial=0.0) / (scale if scale > 0 else 1.0))


def block_slope(fields, grid, y=None, samples=400, field="pressure"):
    """Least-squares slope of the pressure along a horizontal line, using
    only the points inside the block footprint (and outside bars)."""
    c = grid.corners()
    y = grid.center[1] if y is None else y
    xs = np.linspace(c[:, 0].min(), c[:, 0].max(), samples)
    pts = np.c_[xs, np.full(samples, y)]
    inside = grid.cell_index(pts) >= 0
    if field == "pbar":
        p = fields._interp("darcy", fields.pbar, "P1", pts)
    else:
        p = fields.pressure(pts)
    ok = inside & ~np.isnan(p) & ~_inside_obstacles(fields.mesh, pts)
    if ok.sum() < 2:
        raise ReinflowError("section does not cross the block")
    return float(np.polyfit(xs[ok], p[ok], 1)[0])


def _same_mesh(a, b):
    return a is b or (a.nodes.shape == b.nodes.shape and a.triangles.shape == b.triangles.shape
                      and np.array_equal(a.nodes, b.nodes)
                      and np.array_equal(a.triangles, b.triangles))


def pressure_field_error(dns, hom):
    """Max over DNS vertices of ``|p_dns - p_hom|`` relative to ``max |p_dns|``.

    Inside the block the homogenized value is the macro pressure.
    """
    m = dns.mesh
    v = np.arange(m.n_vertices)
    pd = dns.fields.p[v]
    ok = ~np.isnan(pd)
    if _same_mesh(hom.mesh, m):
        f = hom.fields
        ph = np.where(np.isnan(f.p), f.pbar, f.p)[v[ok]]
    else:
        ph = hom.fields.pressure(m.nodes[v[ok]])
    return float(np.nanmax(np.abs(pd[ok] - ph)) / np.nanmax(np.abs(pd[ok])))


def section_pressure_error(dns, hom, request):
    a = extract_profile(dns.fields, request)[:, 1]
    b = extract_profile(hom.fields, request)[:, 1]
    ok = ~np.isnan(a) & ~np.isnan(b)
    return float(np.max(np.abs(a[ok] - b[ok])) / np.max(np.abs(a[ok])))


@dataclass
class Comparison:
    velocity: float
    pressure_gradient: float
    pressure: float
    sections: dict

    def table(self):
        rows = [("averaged velocity (max over cells)", self.velocity),
                ("pressure gradient in block", self.pressure_gradient),
                ("pointwise pressure (max over mesh)", self.pressure)]
        rows += [(f"pressure on section {k}", v) for k, v in self.sections.items()]
        return "\n".join(f"{name:40s} {val:.6e}" for name, val in rows)


def _same_geometry(a, b):
    sa, sb = a.scenario, b.scenario
    return (sa.width == sb.width and sa.height == sb.height
            and np.allclose(sa.grid.corners(), sb.grid.corners()))


def compare(dns, hom, sections=()):
    """Max-norm discrepancies between a DNS and a homogenized report.

    Either argument may also be a DNS report (then velocities are averaged
    the DNS way), so ``compare(x, x)`` is zero.
    """
    if not _same_geometry(dns, hom):
        raise ReinflowError("runs do not share the same geometry")
    grid = dns.scenario.grid

    def avg(r):
        return dns_cell_averages(r, grid) if r.scenario.mode == "dns" else homogenized_cell_averages(r, grid)

    def slope(r):
        return block_slope(r.fields, grid, field="pressure" if r.scenario.mode == "dns" else "pbar")

    sd, sh = slope(dns), slope(hom)
    grad = abs(sd - sh) / abs(sd) if sd != 0 else abs(sh)
    secs = {}
    for k, req in enumerate(sections):
        secs[k] = section_pressure_error(dns, hom, req)
    return Comparison(velocity_error(avg(dns), avg(hom)), float(grad),
                      pressure_field_error(dns, hom), secs)


# --------------------------------------------------------------------------
# pressure reconstruction


def reconstruct_pressure(report, law, points):
    """Macro pressure plus its gradient expansion plus the sub-scale pressure.

    For each point in the block, the Darcy element containing it supplies
    ``pbar`` at the element evaluation point (its centroid), the element
    gradient and the driving force of the cell problem; the sub-scale
    pressure is evaluated at the point's position relative to the cell
    lattice.
    """
    f = report.fields
    d = report.darcy
    grid = report.scenario.grid
    pts = np.atleast_2d(np.asarray(points, float))
    loc = f.locator("darcy")
    idx, _ = loc.locate(pts)
    out = np.full(len(pts), np.nan)
    rve = law.rve_
    cell_loc = PointEvaluator(rve.mesh, rve.op.pspace)
    xbar = d["centroids"]
    pbar_c = f._interp("darcy", f.pbar, "P1", xbar)
    # position relative to the center of the enclosing cell, in [-1/2, 1/2)
    rel = grid.to_local(pts) / grid.cell_size + 0.5 * np.array([grid.cols, grid.rows])
    rel = rel - np.floor(rel) - 0.5
    R = grid.rotation
    sols = {}
    for i in np.flatnonzero(idx >= 0):
        e = int(idx[i])
        if e not in sols:
            sols[e] = law.cell_solution(d["force"][e] @ R, key=int(d["elements"][e]))
        ps = cell_loc(sols[e].p, rel[i])
        out[i] = pbar_c[e] + d["grad_p"][e] @ (pts[i] - xbar[e]) + ps
    return out


class PointEvaluator:
    """Evaluate a P1 field of a cell mesh at local coordinates."""

    def __init__(self, mesh, pspace):
        from .macro import PointLocator
        self.loc = PointLocator(mesh, pspace.elements)
        self.mesh, self.pspace = mesh, pspace

    def __call__(self, values, point):
        idx, ref = self.loc.locate(np.atleast_2d(point))
        if idx[0] < 0:
            return np.nan
        conn = self.pspace.conn[idx[0]]
        N, _ = shape_functions("P1", ref)
        return float(N[0] @ np.asarray(values)[conn])


# --------------------------------------------------------------------------
# friction fit


def v_section(scenario, samples=200):
    """Vertical section through the third column of cells (x at its center)."""
    g = scenario.grid
    col = min(2, g.cols - 1)
    x = g.to_global([[(col + 0.5) * g.cell_size - 0.5 * g.cols * g.cell_size, 0.0]])[0, 0]
    return ProfileRequest((x, 0.0), (x, scenario.height), "u_x", samples)


def interface_band_mismatch(dns, hom, request, band=None):
    """Max difference of the horizontal-velocity profiles inside a band of
    total width ``band`` (default: one cell) centred on the block's
    horizontal sides."""
    grid = dns.scenario.grid
    half = 0.5 * (grid.cell_size if band is None else band)
    a = extract_profile(dns.fields, request)
    b = extract_profile(hom.fields, request)
    y = request.points()[:, 1]
    c = grid.corners()
    near = np.zeros(len(y), bool)
    for yy in (c[:, 1].min(), c[:, 1].max()):
        near |= np.abs(y - yy) <= half
    ok = near & ~np.isnan(a[:, 1]) & ~np.isnan(b[:, 1])
    if not np.any(ok):
        raise ReinflowError("no samples in the interface band")
    return float(np.max(np.abs(a[ok, 1] - b[ok, 1])))


def beta_sweep(dns, hom_runner, betas, samples=200, band=None):
    """Best-fit friction: the ``beta`` whose homogenized v-section profile
    matches the DNS best near the interface.

    ``hom_runner(beta)`` returns a homogenized report.  Returns
    ``(best beta, {beta: mismatch})``.
    """
    req = v_section(dns.scenario, samples)
    mism = {}
    for b in betas:
        mism[float(b)] = interface_band_mismatch(dns, hom_runner(float(b)), req, band)
    best = min(mism, key=lambda k: (mism[k], k))
    return best, mism
