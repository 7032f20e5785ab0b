"""Command-line driver: scenario files, runs, comparisons and exports.

Scenario files are INI documents with the sections ``geometry``, ``fluid``,
``bc``, ``interface``, ``solver`` and ``output``; unknown sections or keys
are rejected.  Example::

    [geometry]
    mode = dns
    width = 10
    height = 4
    rows = 4
    cols = 4
    radius = 0.25
    origin = 3, 0

    [fluid]
    law = newtonian
    mu = 1

    [output]
    directory = out/bench1
    profiles = 0 2 10 2 p 200

Exit codes: 0 success, 1 configuration or I/O error, 2 mesh error,
3 solver error.
"""
import argparse
import configparser
from dataclasses import dataclass, field
import math
import os
import sys
import warnings

import numpy as np

from . import analysis
from .constitutive import Bingham, Newtonian
from .exceptions import (AssemblyError, ConfigError, ConstraintError, ConvergenceError,
                         MeshError, ReinflowError, SingularMatrixError)
from .macro import BETA_FROM_BOUNDARY_LAYER, FlowFields, Scenario, solve
from .mesh import Mesh, ObstacleGrid, write_mesh
from .micro import HomogenizedLaw, friction_coefficient, solve_boundary_layer
from .newton import SolverConfig

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER = 0, 1, 2, 3

SCHEMA = {
    "geometry": {"mode", "width", "height", "rows", "cols", "cell_size", "radius", "origin",
                 "rotation", "mesh_h", "cell_h", "darcy_divisions", "rve_h"},
    "fluid": {"law", "mu", "tau0", "m"},
    "bc": {"inlet_velocity", "outlet_pressure", "body_force"},
    "interface": {"beta"},
    "solver": {"tol_rel", "tol_abs", "max_newton", "sigma", "rho", "min_step"},
    "output": {"directory", "formats", "profiles"},
}


# --------------------------------------------------------------------------
# configuration


@dataclass
class OutputSpec:
    directory: str = "output"
    formats: tuple = ("csv", "vtk")
    profiles: list = field(default_factory=list)


@dataclass
class ScenarioConfig:
    scenario: Scenario
    output: OutputSpec
    text: str


def _floats(text, n, key):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {n} numbers, got {text!r}") from exc
    if len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {text!r}")
    return tuple(vals)


def _profiles(text):
    out = []
    for item in filter(None, (s.strip() for s in text.replace("\n", ";").split(";"))):
        parts = item.split()
        if len(parts) not in (5, 6):
            raise ConfigError(f"profile {item!r}: expected 'x0 y0 x1 y1 field [samples]'")
        x0, y0, x1, y1 = _floats(" ".join(parts[:4]), 4, "profile")
        if parts[4] not in analysis.FIELDS:
            raise ConfigError(f"profile {item!r}: unknown field {parts[4]!r}")
        n = int(parts[5]) if len(parts) == 6 else 200
        out.append(analysis.ProfileRequest((x0, y0), (x1, y1), parts[4], n))
    return out


def parse_config(text, base_dir="."):
    """Build a :class:`ScenarioConfig` from INI text.

    Raises
    ------
    ConfigError
        On unknown sections or keys, malformed or invalid values.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse scenario file: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - SCHEMA[sec]
        if extra:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(extra))}")

    def get(sec, key, conv=float, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{sec}] {key}: invalid value {raw!r}") from exc

    try:
        grid = ObstacleGrid(
            get("geometry", "rows", int, 4), get("geometry", "cols", int, 4),
            get("geometry", "cell_size", float, 1.0), get("geometry", "radius", float, 0.25),
            _floats(cp.get("geometry", "origin", fallback="3 0"), 2, "origin"),
            math.radians(get("geometry", "rotation", float, 0.0)))
    except MeshError as exc:
        raise ConfigError(str(exc)) from exc
    law_name = get("fluid", "law", str, "newtonian").strip().lower()
    mu = get("fluid", "mu", float, 1.0)
    try:
        if law_name == "newtonian":
            law = Newtonian(mu)
        elif law_name == "bingham":
            law = Bingham(mu, get("fluid", "tau0", float, 0.0), get("fluid", "m", float, 15.0))
        else:
            raise ConfigError(f"[fluid] law: unknown law {law_name!r}")
    except ValueError as exc:
        raise ConfigError(f"[fluid] {exc}") from exc
    beta_raw = cp.get("interface", "beta", fallback="0").strip()
    beta = BETA_FROM_BOUNDARY_LAYER if beta_raw == BETA_FROM_BOUNDARY_LAYER else None
    if beta is None:
        try:
            beta = float(beta_raw)
        except ValueError as exc:
            raise ConfigError(f"[interface] beta: invalid value {beta_raw!r}") from exc
    try:
        solver = SolverConfig(
            tol_rel=get("solver", "tol_rel", float, 1e-8), tol_abs=get("solver", "tol_abs", float, 1e-12),
            max_newton=get("solver", "max_newton", int, 50), sigma=get("solver", "sigma", float, 1e-4),
            rho=get("solver", "rho", float, 0.5), min_step=get("solver", "min_step", float, 2.0**-30))
        scenario = Scenario(
            mode=get("geometry", "mode", str, "dns").strip().lower(),
            width=get("geometry", "width", float, 10.0), height=get("geometry", "height", float, 4.0),
            grid=grid, law=law,
            inlet_velocity=get("bc", "inlet_velocity", float, 1.0),
            outlet_pressure=get("bc", "outlet_pressure", float, 0.0),
            body_force=_floats(cp.get("bc", "body_force", fallback="0 0"), 2, "body_force"),
            beta=beta, mesh_h=get("geometry", "mesh_h", float, 0.2),
            cell_h=get("geometry", "cell_h", float, 0.1),
            darcy_divisions=get("geometry", "darcy_divisions", int, 2),
            rve_h=get("geometry", "rve_h", float, 0.07), solver=solver)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    directory = cp.get("output", "directory", fallback="output")
    if not os.path.isabs(directory):
        directory = os.path.join(base_dir, directory)
    formats = tuple(f.strip().lower() for f in cp.get("output", "formats", fallback="csv, vtk").split(",")
                    if f.strip())
    bad = set(formats) - {"csv", "vtk"}
    if bad:
        raise ConfigError(f"[output] formats: unknown format(s) {', '.join(sorted(bad))}")
    out = OutputSpec(directory, formats, _profiles(cp.get("output", "profiles", fallback="")))
    return ScenarioConfig(scenario, out, text)


def load_config(path):
    """Read a scenario file; relative output directories refer to the current directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror or exc}") from exc
    return parse_config(text)


def scenario_to_config(scenario, output=None):
    """Inverse of :func:`parse_config` (round-trips every scenario field)."""
    g, law, s = scenario.grid, scenario.law, scenario.solver
    if isinstance(law, Bingham):
        fluid = f"law = bingham\nmu = {law.mu0!r}\ntau0 = {law.tau0!r}\nm = {law.m!r}\n"
    else:
        fluid = f"law = newtonian\nmu = {law.mu!r}\n"
    out = output or OutputSpec()
    prof = "; ".join(f"{r.start[0]!r} {r.start[1]!r} {r.end[0]!r} {r.end[1]!r} {r.field} {r.samples}"
                     for r in out.profiles)
    return (
        "[geometry]\n"
        f"mode = {scenario.mode}\nwidth = {scenario.width!r}\nheight = {scenario.height!r}\n"
        f"rows = {g.rows}\ncols = {g.cols}\ncell_size = {g.cell_size!r}\nradius = {g.radius!r}\n"
        f"origin = {float(g.origin[0])!r}, {float(g.origin[1])!r}\n"
        f"rotation = {math.degrees(g.rotation_angle)!r}\n"
        f"mesh_h = {scenario.mesh_h!r}\ncell_h = {scenario.cell_h!r}\n"
        f"darcy_divisions = {scenario.darcy_divisions}\nrve_h = {scenario.rve_h!r}\n\n"
        f"[fluid]\n{fluid}\n"
        "[bc]\n"
        f"inlet_velocity = {scenario.inlet_velocity!r}\noutlet_pressure = {scenario.outlet_pressure!r}\n"
        f"body_force = {float(scenario.body_force[0])!r}, {float(scenario.body_force[1])!r}\n\n"
        f"[interface]\nbeta = {scenario.beta if isinstance(scenario.beta, str) else repr(float(scenario.beta))}\n\n"
        "[solver]\n"
        f"tol_rel = {s.tol_rel!r}\ntol_abs = {s.tol_abs!r}\nmax_newton = {s.max_newton}\n"
        f"sigma = {s.sigma!r}\nrho = {s.rho!r}\nmin_step = {s.min_step!r}\n\n"
        f"[output]\ndirectory = {out.directory}\nformats = {', '.join(out.formats)}\n"
        f"profiles = {prof}\n"
    )


# --------------------------------------------------------------------------
# export


@dataclass
class FieldTable:
    """Nodal values ready for export: one velocity and one pressure per node."""

    nodes: np.ndarray
    u: np.ndarray
    p: np.ndarray
    triangles: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 6), int))

    @classmethod
    def from_fields(cls, fields):
        """Stokes values where defined, Darcy values elsewhere."""
        u = np.where(np.isnan(fields.u), fields.ubar, fields.u)
        p = np.where(np.isnan(fields.p), fields.pbar, fields.p)
        return cls(fields.mesh.nodes, np.nan_to_num(u), np.nan_to_num(p), fields.mesh.triangles)


def _table(fields):
    return fields if isinstance(fields, FieldTable) else FieldTable.from_fields(fields)


def write_csv(table, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("id,x,y,u_x,u_y,p\n")
        for i, ((x, y), (ux, uy), p) in enumerate(zip(table.nodes, table.u, table.p)):
            fh.write(f"{i},{x:.17g},{y:.17g},{ux:.17g},{uy:.17g},{p:.17g}\n")


def read_csv(path):
    """Read a field CSV back into a :class:`FieldTable` (without cells)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return FieldTable.empty()
    return FieldTable(data[:, 1:3], data[:, 3:5], data[:, 5], np.zeros((0, 6), int))


def write_vtk(table, path, title="reinflow fields"):
    """Legacy ASCII unstructured grid with quadratic triangles (cell type 22)."""
    n, tris = len(table.nodes), np.asarray(table.triangles)
    if tris.size and tris.shape[1] != 6:
        raise ValueError("VTK export needs quadratic (6-node) triangles")
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in table.nodes]
    lines.append(f"CELLS {len(tris)} {7 * len(tris)}")
    lines += ["6 " + " ".join(map(str, t)) for t in tris.tolist()]
    lines.append(f"CELL_TYPES {len(tris)}")
    lines += ["22"] * len(tris)
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS velocity double")
    lines += [f"{ux:.17g} {uy:.17g} 0" for ux, uy in table.u]
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [f"{p:.17g}" for p in table.p]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_fields(fields, directory, formats=("csv", "vtk"), stem="fields"):
    """Write ``fields`` (FlowFields or FieldTable) in the given formats.

    Returns the list of written paths.
    """
    table = _table(fields)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for fmt in formats:
        path = os.path.join(directory, f"{stem}.{fmt}")
        if fmt == "csv":
            write_csv(table, path)
        elif fmt == "vtk":
            write_vtk(table, path)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(path)
    return paths


def write_profile(table, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("s,value\n")
        for s, v in table:
            fh.write(f"{s:.17g},{v:.17g}\n")


# --------------------------------------------------------------------------
# saved runs


@dataclass
class SavedRun:
    """A run reloaded from its output directory (enough for :func:`analysis.compare`)."""

    scenario: Scenario
    mesh: Mesh
    fields: FlowFields
    darcy: dict


def _save_state(report, directory):
    m, f = report.mesh, report.fields
    d = report.darcy or {}
    np.savez(os.path.join(directory, "state.npz"),
             nodes=m.nodes, triangles=m.triangles, regions=m.regions, edges=m.edges,
             edge_tags=m.edge_tags, n_vertices=m.n_vertices, obstacles=m.obstacles,
             u=f.u, p=f.p, ubar=f.ubar, pbar=f.pbar, fluid_elements=f.fluid_elements,
             darcy_elements=f.darcy_elements,
             **{f"hom_{k}": np.asarray(v) for k, v in d.items()})


def load_run(directory):
    """Reload a run written by :func:`run_scenario`."""
    try:
        cfg = load_config(os.path.join(directory, "scenario.ini"))
        z = np.load(os.path.join(directory, "state.npz"))
    except OSError as exc:
        raise ConfigError(f"{directory}: not a run directory ({exc})") from exc
    mesh = Mesh(z["nodes"], z["triangles"], z["regions"], z["edges"], z["edge_tags"],
                int(z["n_vertices"]), obstacles=z["obstacles"])
    fields = FlowFields(mesh, z["u"], z["p"], z["ubar"], z["pbar"], z["fluid_elements"],
                        z["darcy_elements"])
    darcy = {k[4:]: z[k] for k in z.files if k.startswith("hom_")}
    return SavedRun(cfg.scenario, mesh, fields, darcy)


def report_text(report):
    """Deterministic run summary (no timings)."""
    s = report.scenario
    lines = [f"mode {s.mode}", f"law {s.law!r}", f"nodes {report.mesh.n_nodes}",
             f"triangles {report.mesh.n_triangles}", f"dofs {report.n_dofs}",
             f"free_dofs {report.n_free}", f"converged {report.converged}",
             f"iterations {report.iterations}", f"cell_solves {report.cell_solves}"]
    if s.mode == "homogenized":
        lines.append(f"beta {report.beta:.17g}")
    lines.append("# iteration residual step cell_solves")
    lines += [h.line() for h in report.history]
    return "\n".join(lines) + "\n"


def run_config(cfg, directory=None, threads=1, dump_rve=None):
    """Solve a parsed scenario and write mesh, fields, report and profiles."""
    directory = directory or cfg.output.directory
    scenario = cfg.scenario.with_(threads=max(1, int(threads)))
    report = solve(scenario)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "scenario.ini"), "w", encoding="utf-8") as fh:
        fh.write(scenario_to_config(cfg.scenario, cfg.output))
    write_mesh(report.mesh, os.path.join(directory, "mesh.txt"))
    export_fields(report.fields, directory, cfg.output.formats)
    with open(os.path.join(directory, "report.txt"), "w", encoding="ascii") as fh:
        fh.write(report_text(report))
    recon = None
    if scenario.mode == "homogenized":
        def recon(pts):
            return analysis.reconstruct_pressure(report, report.problem.law, pts)
    for k, req in enumerate(cfg.output.profiles):
        if req.field == "p_reconstructed" and recon is None:
            raise ConfigError("reconstructed pressure profiles need a homogenized run")
        write_profile(analysis.extract_profile(report.fields, req, recon),
                      os.path.join(directory, f"profile_{k}.csv"))
    _save_state(report, directory)
    if dump_rve and scenario.mode == "homogenized":
        law = report.problem.law
        R = scenario.grid.rotation
        for e, f in zip(report.darcy["elements"], report.darcy["force"]):
            sol = law.cell_solution(f @ R, key=int(e))
            law.rve_.dump(dump_rve, sol, tag=f"cell_{int(e)}")
    return report


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, MeshError):
        return EXIT_MESH
    if isinstance(exc, (ConvergenceError, SingularMatrixError, AssemblyError, ConstraintError)):
        return EXIT_SOLVER
    if isinstance(exc, OSError):
        return EXIT_CONFIG
    return EXIT_SOLVER


def run_scenario(path, directory=None, threads=1, dump_rve=None, stream=None):
    """Run a scenario file.  Returns the process exit status."""
    stream = stream or sys.stdout
    try:
        cfg = load_config(path)
        report = run_config(cfg, directory, threads, dump_rve)
    except (ReinflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    print(report.lines(), file=stream)
    print(f"wall time {report.wall_time:.3f} s", file=stream)
    return EXIT_OK


# --------------------------------------------------------------------------
# commands


def read_sections(path):
    """Section file: one ``x0 y0 x1 y1 [samples]`` line per section."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ConfigError(f"{path}: bad section line {line!r}")
            x0, y0, x1, y1 = _floats(" ".join(parts[:4]), 4, "section")
            out.append(analysis.ProfileRequest((x0, y0), (x1, y1), "p",
                                               int(parts[4]) if len(parts) == 5 else 200))
    return out


def _cmd_run(args):
    return run_scenario(args.config, args.output, args.threads, args.dump_rve)


def _cmd_compare(args):
    try:
        dns, hom = load_run(args.dns_dir), load_run(args.homog_dir)
        sections = read_sections(args.sections) if args.sections else []
        print(analysis.compare(dns, hom, sections).table())
    except (ReinflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


def _cmd_beta_sweep(args):
    try:
        cfg = load_config(args.config)
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
        if not betas or min(betas) < 0:
            raise ConfigError("--betas needs non-negative numbers")
        base = cfg.scenario.with_(threads=args.threads)
        dns = solve(base.with_(mode="dns"))
        best, mism = analysis.beta_sweep(
            dns, lambda b: solve(base.with_(mode="homogenized", beta=b)), betas,
            samples=args.samples, band=args.band)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReinflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    print("beta mismatch")
    for b in betas:
        print(f"{b:g} {mism[float(b)]:.6e}")
    print(f"best {best:g}")
    return EXIT_OK


def _cmd_rve(args):
    try:
        if args.law == "bingham":
            law = Bingham(args.mu, args.tau0, args.m)
        else:
            law = Newtonian(args.mu)
        hl = HomogenizedLaw.from_law(args.xi, law, target_h=args.h).fit()
        force = _floats(args.force, 2, "--force")
        K = hl.evaluate(np.array([force]))[1][0]
        mu = law.mu if isinstance(law, Newtonian) else law.mu0
        bl = solve_boundary_layer(args.xi, Newtonian(mu))
        if args.dump_rve:
            hl.rve_.dump(args.dump_rve, hl.cell_solution(force), tag="cell")
    except (ReinflowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc) if isinstance(exc, ReinflowError) else EXIT_CONFIG
    print(f"porosity {hl.porosity_:.12g}")
    print(f"K {K[0, 0]:.12g} {K[0, 1]:.12g} {K[1, 0]:.12g} {K[1, 1]:.12g}")
    print(f"C_bl {bl.C_bl:.12g}")
    print(f"beta {friction_coefficient(mu, bl.C_bl):.12g}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit status 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="concurrent unit-cell solves")
    common.add_argument("--dump-rve", metavar="DIR", default=argparse.SUPPRESS,
                        help="write unit-cell solutions to DIR")
    p = _Parser(prog="reinflow", description=__doc__.split("\n")[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="solve a scenario file", parents=[common])
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides the file)")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="compare a DNS run with a homogenized run", parents=[common])
    c.add_argument("dns_dir")
    c.add_argument("homog_dir")
    c.add_argument("--sections", help="file with 'x0 y0 x1 y1 [samples]' lines")
    c.set_defaults(func=_cmd_compare)

    b = sub.add_parser("beta-sweep", help="best-fit interface friction", parents=[common])
    b.add_argument("config")
    b.add_argument("--betas", default="0,1,3,10")
    b.add_argument("--samples", type=int, default=200)
    b.add_argument("--band", type=float, default=None, help="band width (default: one cell)")
    b.set_defaults(func=_cmd_beta_sweep)

    v = sub.add_parser("rve", help="unit-cell properties", parents=[common])
    v.add_argument("xi", type=float)
    v.add_argument("--law", choices=("newtonian", "bingham"), default="newtonian")
    v.add_argument("--mu", type=float, default=1.0)
    v.add_argument("--tau0", type=float, default=0.0)
    v.add_argument("--m", type=float, default=15.0)
    v.add_argument("--h", type=float, default=0.07, help="unit-cell mesh size")
    v.add_argument("--force", default="0,0", help="driving force for the tangent")
    v.set_defaults(func=_cmd_rve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threads = getattr(args, "threads", 1)
    args.dump_rve = getattr(args, "dump_rve", None)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
