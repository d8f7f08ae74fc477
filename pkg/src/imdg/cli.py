"""Configuration, problem presets, simulation driver and study harness.

Configs are strict TOML: unknown keys are rejected with their path.  The
``run`` driver advances a single- or two-level (AMR) discretization and
writes receiver CSVs, legacy-VTK snapshots, a run log and, for plane-wave
initial conditions, a final error report.  ``convergence_study`` sweeps
grids and polynomial degrees and fits observed orders.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import amr as amr_mod
from . import dg, geometry, mesh, physics
from . import timestepping as ts
from .geometry import NEG, POS


class ConfigError(Exception):
    """Malformed, incomplete or unknown configuration content."""


_SCHEMA = {
    "domain": {"lo", "hi", "grid", "periodic"},
    "geometry": {"kind", "radius", "center", "a", "b", "c", "n1", "n2",
                 "offset", "value", "expr", "fd_step", "length", "width",
                 "delta1", "delta2"},
    "phases": {"mode"},
    "materials": {"alpha", "beta"},
    "discretization": {"degree", "fbar", "quad_order", "courant"},
    "bc": {"outer", "left", "right", "bottom", "top", "embedded"},
    "initial": {"kind", "kappa", "center", "decay"},
    "time": {"final", "log_every"},
    "sources": {"position", "direction", "ricker", "phase"},
    "receivers": {"position", "phase"},
    "amr": {"enabled", "ratio", "degree_coarse", "degree_fine", "tag",
            "threshold", "cadence", "buffer"},
    "output": {"directory", "snapshots", "receiver_every"},
}
_MATERIAL_KEYS = {"rho", "young", "poisson", "cp", "cs", "stiffness",
                  "rotate_deg", "preset"}


def _check_keys(data):
    for section, content in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SCHEMA[section]
        entries = content if isinstance(content, list) else [content]
        for entry in entries:
            if not isinstance(entry, dict):
                continue
            for key, val in entry.items():
                if key not in allowed:
                    raise ConfigError(f"unknown key {section}.{key}")
                if section == "materials" and isinstance(val, dict):
                    for mk in val:
                        if mk not in _MATERIAL_KEYS:
                            raise ConfigError(
                                f"unknown key materials.{key}.{mk}")


class ProblemConfig:
    """Validated problem description (see the shipped presets for examples)."""

    def __init__(self, data, name="config"):
        _check_keys(data)
        self.name = name
        try:
            dom = data["domain"]
            self.lo = [float(v) for v in dom["lo"]]
            self.hi = [float(v) for v in dom["hi"]]
            self.grid = [int(v) for v in dom["grid"]]
            self.periodic = tuple(bool(v) for v in dom.get("periodic",
                                                           [False, False]))
            self.geometry = dict(data["geometry"])
            self.biphase = data.get("phases", {}).get("mode", "single") == "biphase"
            self.materials_spec = data["materials"]
            disc = data["discretization"]
            self.degree = int(disc["degree"])
            self.fbar = float(disc.get("fbar", 0.3))
            self.quad_order = int(disc.get("quad_order", 0)) or self.degree + 2
            self.courant = float(disc.get("courant", 0.833))
            self.bc = dict(data.get("bc", {}))
            self.initial = dict(data.get("initial", {"kind": "zero"}))
            tim = data.get("time", {})
            self.t_final = float(tim.get("final", 0.0))
            self.log_every = int(tim.get("log_every", 50))
            self.sources = [dict(s) for s in data.get("sources", [])]
            self.receivers = [dict(r) for r in data.get("receivers", [])]
            amr_c = data.get("amr", {})
            self.amr_enabled = bool(amr_c.get("enabled", False))
            self.amr_ratio = int(amr_c.get("ratio", 4))
            self.amr_p0 = int(amr_c.get("degree_coarse", self.degree))
            self.amr_p1 = int(amr_c.get("degree_fine", self.degree))
            self.amr_tag = amr_c.get("tag", "energy")
            self.amr_threshold = float(amr_c.get("threshold", 1e-12))
            self.amr_cadence = int(amr_c.get("cadence", 10))
            self.amr_buffer = int(amr_c.get("buffer", 1))
            out = data.get("output", {})
            self.out_dir = out.get("directory", "out")
            self.snapshots = [float(v) for v in out.get("snapshots", [])]
            self.receiver_every = int(out.get("receiver_every", 1))
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from None
        if self.initial.get("kind") == "plane_wave":
            kappa = self.initial.get("kappa")
            if not kappa or float(np.hypot(*kappa)) == 0.0:
                raise ConfigError("plane_wave initial data needs kappa != 0")

    # -- constructed objects -------------------------------------------------

    def rect(self):
        return geometry.BackgroundRect(self.lo, self.hi)

    def levelset(self):
        g = dict(self.geometry)
        kind = g.pop("kind", None)
        try:
            if kind == "circle":
                return geometry.circle(g["radius"], g["center"])
            if kind == "halfplane":
                return geometry.halfplane(g["a"], g["b"], g["c"])
            if kind == "trig_product":
                return geometry.trig_product(g.get("n1", 1), g.get("n2", 1),
                                             g.get("offset", 0.125))
            if kind == "constant":
                return geometry.constant(g.get("value", -1.0))
            if kind == "expression":
                return geometry.expression(g["expr"],
                                           fd_step=g.get("fd_step", 1e-8))
            if kind == "structured_solid":
                return geometry.structured_solid(
                    g.get("length", 5.0), g.get("width", 0.4),
                    g.get("delta1", 0.2), g.get("delta2", 2.0))
        except KeyError as exc:
            raise ConfigError(
                f"geometry kind {kind!r} misses key {exc.args[0]!r}") from None
        raise ConfigError(f"unknown geometry kind {kind!r}")

    def phases(self):
        return (NEG, POS) if self.biphase else (NEG,)

    def material(self, which):
        spec = self.materials_spec.get(which)
        if spec is None:
            raise ConfigError(f"missing material definition for {which!r}")
        if isinstance(spec, str):
            lib = physics.material_library()
            if spec not in lib:
                raise ConfigError(f"unknown material preset {spec!r}")
            return lib[spec]
        if "preset" in spec:
            return self.material_from_preset(spec["preset"])
        try:
            rho = float(spec["rho"])
            if "stiffness" in spec:
                c = np.asarray(spec["stiffness"], dtype=float)
                if "rotate_deg" in spec:
                    c = physics.rotate_stiffness(
                        c, math.radians(float(spec["rotate_deg"])))
            elif "cp" in spec:
                c = physics.isotropic_from_speeds(rho, float(spec["cp"]),
                                                  float(spec["cs"]))
            else:
                c = physics.isotropic_stiffness(float(spec["young"]),
                                                float(spec["poisson"]))
        except KeyError as exc:
            raise ConfigError(
                f"material {which!r} misses key {exc.args[0]!r}") from None
        return physics.Material(rho, c, name=which)

    @staticmethod
    def material_from_preset(name):
        lib = physics.material_library()
        if name not in lib:
            raise ConfigError(f"unknown material preset {name!r}")
        return lib[name]

    def materials(self):
        mats = {NEG: self.material("alpha")}
        if self.biphase:
            mats[POS] = self.material("beta")
        return mats


def parse_config(path):
    """Load and validate a TOML problem configuration."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ProblemConfig(data, name=os.path.splitext(os.path.basename(path))[0])


def preset_path(name):
    here = os.path.dirname(__file__)
    return os.path.join(here, "presets", name + ".toml")


def load_preset(name):
    path = name if os.path.exists(name) else preset_path(name)
    if not os.path.exists(path):
        raise ConfigError(f"no such config or preset: {name}")
    return parse_config(path)


# ---------------------------------------------------------------------------
# BC closures and initial conditions.
# ---------------------------------------------------------------------------

def _bc_entry(kind_name, exact_ctx, mats):
    mat = mats[NEG]
    if kind_name == "absorbing":
        return (dg.ABSORBING_BC, None)
    if kind_name == "fixed":
        return (dg.VELOCITY_BC, lambda t, pts, nrm: np.zeros((len(pts), 2)))
    if kind_name == "free":
        return (dg.TRACTION_BC, lambda t, pts, nrm: np.zeros((len(pts), 2)))
    if kind_name == "velocity_exact":
        if exact_ctx is None:
            raise ConfigError("velocity_exact BC needs plane-wave initial data")
        modes, kappa = exact_ctx

        def v_data(t, pts, nrm):
            U = physics.exact_solution(t, pts, modes, kappa)
            return U[:, :2] / mat.rho

        return (dg.VELOCITY_BC, v_data)
    if kind_name == "traction_exact":
        if exact_ctx is None:
            raise ConfigError("traction_exact BC needs plane-wave initial data")
        modes, kappa = exact_ctx

        def t_data(t, pts, nrm):
            U = physics.exact_solution(t, pts, modes, kappa)
            return physics.traction_batch(U, mat, nrm)

        return (dg.TRACTION_BC, t_data)
    raise ConfigError(f"unknown boundary condition {kind_name!r}")


def build_bc_table(config, exact_ctx, mats):
    """BC table from the config; the assembler reports any tag left uncovered."""
    table = {}
    names = dict(config.bc)
    outer = names.pop("outer", None)
    for tag in ("left", "right", "bottom", "top"):
        name = names.pop(tag, outer)
        if name is not None:
            table[tag] = _bc_entry(name, exact_ctx, mats)
    if "embedded" in names:
        table["embedded"] = _bc_entry(names.pop("embedded"), exact_ctx, mats)
    return table


def build_sources(config, ls):
    sources = []
    for spec in config.sources:
        pos = np.asarray(spec["position"], dtype=float)
        phase = POS if spec.get("phase") == "beta" else NEG
        direction = spec.get("direction", "boundary_normal")
        if direction == "boundary_normal":
            u = geometry.boundary_normal(ls, pos, phase)
        elif direction == "interface_parallel":
            n = geometry.boundary_normal(ls, pos, phase)
            u = np.array([-n[1], n[0]])
        else:
            u = np.asarray(direction, dtype=float)
        rick = spec.get("ricker")
        if rick is None:
            raise ConfigError("source needs a ricker = {a1, fc, t0} table")
        a1, fc, t0 = float(rick["a1"]), float(rick["fc"]), float(rick["t0"])
        wavelet = lambda t, a1=a1, fc=fc, t0=t0: dg.ricker(t, a1, fc, t0)
        sources.append(dg.PointSource(pos, u, wavelet, phase))
    return sources


def initial_field(config, mats):
    """(field(points) -> (N, N_U), exact_ctx | None)."""
    kind = config.initial.get("kind", "zero")
    if kind == "zero":
        return (lambda pts: np.zeros((len(pts), physics.N_U))), None
    if kind == "plane_wave":
        kappa = np.asarray(config.initial["kappa"], dtype=float)
        modes = physics.plane_wave_modes(kappa, mats[NEG])
        return (lambda pts: physics.exact_solution(0.0, pts, modes, kappa),
                (modes, kappa))
    if kind == "gaussian_pulse":
        kappa = np.asarray(config.initial.get("kappa", [1.0, 0.0]), dtype=float)
        center = float(config.initial.get("center", 0.0))
        decay = float(config.initial.get("decay", 25.0))
        modes = physics.plane_wave_modes(kappa, mats[NEG])
        shape = modes[-1].shape  # fastest forward-moving mode

        def field(pts):
            envelope = np.exp(-decay * (pts[:, 0] - center) ** 2)
            return envelope[:, None] * shape

        return field, None
    raise ConfigError(f"unknown initial condition kind {kind!r}")


# ---------------------------------------------------------------------------
# Drivers.
# ---------------------------------------------------------------------------

class RunResult:
    def __init__(self):
        self.steps = 0
        self.t = 0.0
        self.tau = 0.0
        self.energy_history = []
        self.errors = None
        self.receiver_files = []
        self.snapshot_files = []
        self.log_lines = []
        self.amr_history = []


def _log(result, line, quiet):
    result.log_lines.append(line)
    if not quiet:
        print(line)


def run(config, out_dir=None, quiet=False, threads=1):
    """Run one simulation; returns a RunResult and writes output files.

    Execution is deterministic for a fixed config: assembly is vectorized,
    single-process (the threads flag is accepted for interface compatibility
    and does not alter results).
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    result = RunResult()

    rect = config.rect()
    ls = config.levelset()
    mats = config.materials()
    field0, exact_ctx = initial_field(config, mats)
    sources = build_sources(config, ls)
    phases = config.phases()
    p = config.degree
    q = config.quad_order

    max_speed = max(physics.max_wave_speed(m) for m in mats.values())
    if config.t_final > 0.0:
        t_final = config.t_final
    elif exact_ctx is not None:
        t_final = 2.0 * math.pi / physics.omega_max(exact_ctx[0])
    else:
        raise ConfigError("time.final must be set unless plane-wave ICs fix it")

    hierarchy = None
    bc_table = build_bc_table(config, exact_ctx, mats)
    if config.amr_enabled:
        hierarchy = amr_mod.AmrHierarchy(
            rect, config.grid, ls, phases, mats, config.fbar,
            config.amr_p0, config.amr_p1, config.amr_ratio,
            bc_table=bc_table, sources=sources, periodic=config.periodic,
            courant=config.courant, buffer_cells=config.amr_buffer)
        asm = hierarchy.coarse.assembler
        hierarchy.X0 = asm.project(field0)
        f_tag = amr_mod.energy_tag_function(config.amr_threshold)
        tags = amr_mod.tag_cells(asm, hierarchy.X0, f_tag)
        hierarchy.regrid(tags)
        if hierarchy.fine is not None:
            hierarchy.X1 = hierarchy.fine.assembler.project(field0)
        tau = hierarchy.timestep()
        recorder = dg.ReceiverRecorder(
            asm, [r["position"] for r in config.receivers],
            [POS if r.get("phase") == "beta" else NEG
             for r in config.receivers] or None)
    else:
        msh = mesh.build_mesh(rect, config.grid, ls, phases, config.fbar,
                              q, config.periodic)
        asm = dg.Assembler(msh, p, mats, bc_table=bc_table, sources=sources)
        X = asm.project(field0)
        par = ts.CflParams(config.courant, config.fbar, p)
        tau = ts.cfl_timestep(min(msh.h1, msh.h2), par, max_speed)
        scheme = ts.scheme_for_degree(p)
        recorder = dg.ReceiverRecorder(
            asm, [r["position"] for r in config.receivers],
            [POS if r.get("phase") == "beta" else NEG
             for r in config.receivers] or None)

    snap_times = sorted(config.snapshots)
    next_snap = 0
    t = 0.0
    step = 0
    result.tau = tau

    def total_energy():
        if hierarchy is not None:
            return hierarchy.total_energy()
        return asm.energy(X)[0]

    def take_snapshot(label):
        nonlocal next_snap
        if hierarchy is not None:
            path = os.path.join(out_dir, f"snapshot_{label}_l0.vtk")
            dg.write_vtk(path, hierarchy.coarse.assembler, hierarchy.X0, t)
            result.snapshot_files.append(path)
            if hierarchy.fine is not None:
                path = os.path.join(out_dir, f"snapshot_{label}_l1.vtk")
                dg.write_vtk(path, hierarchy.fine.assembler, hierarchy.X1, t)
                result.snapshot_files.append(path)
        else:
            path = os.path.join(out_dir, f"snapshot_{label}.vtk")
            dg.write_vtk(path, asm, X, t)
            result.snapshot_files.append(path)

    if config.receivers:
        if hierarchy is not None:
            recorder.assembler = hierarchy.coarse.assembler
            recorder.sample(t, hierarchy.X0)
        else:
            recorder.sample(t, X)

    e_tot = total_energy()
    result.energy_history.append((t, e_tot))
    _log(result, f"step {0:6d}  t {t:.6e}  tau {tau:.6e}  energy {e_tot:.9e}",
         quiet)

    while t < t_final - 1e-12 * t_final:
        tau_step = min(tau, t_final - t)
        if hierarchy is not None:
            hierarchy.advance(t, tau_step)
        else:
            X = ts.rk_step(X, t, tau_step, asm.rhs, scheme)
        t += tau_step
        step += 1

        if (config.receivers and step % config.receiver_every == 0):
            if hierarchy is not None:
                recorder.sample(t, hierarchy.X0)
            else:
                recorder.sample(t, X)

        while next_snap < len(snap_times) and t >= snap_times[next_snap] - 1e-12:
            take_snapshot(f"{snap_times[next_snap]:g}".replace(".", "p"))
            next_snap += 1

        if hierarchy is not None and step % config.amr_cadence == 0:
            f_tag = amr_mod.energy_tag_function(config.amr_threshold)
            tags = amr_mod.tag_cells(hierarchy.coarse.assembler, hierarchy.X0,
                                     f_tag)
            hierarchy.regrid(tags)
            tau = hierarchy.timestep()
            result.amr_history.append(
                (step, int(tags.sum()),
                 0 if hierarchy.fine is None else len(hierarchy.fine.mesh.elements),
                 tau))

        if step % config.log_every == 0 or t >= t_final - 1e-12 * t_final:
            e_tot = total_energy()
            result.energy_history.append((t, e_tot))
            _log(result,
                 f"step {step:6d}  t {t:.6e}  tau {tau:.6e}  energy {e_tot:.9e}",
                 quiet)

    result.steps = step
    result.t = t

    if config.receivers:
        pattern = os.path.join(out_dir, "receiver_{}.csv")
        result.receiver_files = recorder.write(pattern)
    if result.amr_history:
        path = os.path.join(out_dir, "amr_diagnostics.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "tagged_cells", "fine_elements", "tau"])
            writer.writerows(result.amr_history)

    if exact_ctx is not None:
        modes, kappa = exact_ctx

        def exact_fn(tt, pts):
            return physics.exact_solution(tt, pts, modes, kappa)

        if hierarchy is not None:
            errors = hierarchy.error_measures(exact_fn, t)
        else:
            errors = asm.error_measures(X, exact_fn, t)
        result.errors = errors
        _log(result, f"errors  e_Linf {errors[0]:.6e}  e_L2 {errors[1]:.6e}",
             quiet)
        with open(os.path.join(out_dir, "error_report.json"), "w") as fh:
            json.dump({"t": t, "e_linf": errors[0], "e_l2": errors[1],
                       "steps": step, "tau": result.tau,
                       "quad_order": config.quad_order,
                       "degree": config.degree}, fh, indent=2)

    with open(os.path.join(out_dir, "run.log"), "w") as fh:
        fh.write("\n".join(result.log_lines) + "\n")
    result.final_state = (hierarchy if hierarchy is not None else X)
    result.assembler = (hierarchy.coarse.assembler if hierarchy is not None
                        else asm)
    return result


def _fit_order(hs, errs):
    hs = np.log(np.asarray(hs, dtype=float))
    errs = np.log(np.asarray(errs, dtype=float))
    return float(np.polyfit(hs, errs, 1)[0])


def convergence_study(config, grids, degrees, out_dir=None, quiet=False):
    """Sweep grids x degrees; each run lasts one plane-wave period.

    Returns {degree: {"grids", "e_linf", "e_l2", "order_linf", "order_l2"}}
    and writes a rate table CSV.
    """
    if config.initial.get("kind") != "plane_wave":
        raise ConfigError("convergence_study needs plane-wave initial data")
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    table = {}
    for p in degrees:
        rows = []
        for n in grids:
            sub = _clone_for(config, n, p)
            res = run(sub, out_dir=os.path.join(out_dir, f"p{p}_n{n}"),
                      quiet=True)
            rows.append((n, res.errors[0], res.errors[1]))
            if not quiet:
                print(f"p={p} n={n}: e_Linf={res.errors[0]:.4e} "
                      f"e_L2={res.errors[1]:.4e}")
        hs = [1.0 / r[0] for r in rows]
        table[p] = {
            "grids": [r[0] for r in rows],
            "e_linf": [r[1] for r in rows],
            "e_l2": [r[2] for r in rows],
            "order_linf": _fit_order(hs, [r[1] for r in rows]),
            "order_l2": _fit_order(hs, [r[2] for r in rows]),
        }
        if not quiet:
            print(f"p={p}: order_Linf={table[p]['order_linf']:.2f} "
                  f"order_L2={table[p]['order_l2']:.2f}")
    path = os.path.join(out_dir, "convergence.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["degree", "grid", "e_linf", "e_l2"])
        for p in degrees:
            for n, ei, e2 in zip(table[p]["grids"], table[p]["e_linf"],
                                 table[p]["e_l2"]):
                writer.writerow([p, n, f"{ei:.12e}", f"{e2:.12e}"])
        writer.writerow([])
        writer.writerow(["degree", "order_linf", "order_l2"])
        for p in degrees:
            writer.writerow([p, f"{table[p]['order_linf']:.4f}",
                             f"{table[p]['order_l2']:.4f}"])
    return table


def _clone_for(config, n, p):
    import copy
    sub = copy.copy(config)
    aspect = (config.hi[1] - config.lo[1]) / (config.hi[0] - config.lo[0])
    sub.grid = [int(n), max(int(round(n * aspect)), 1)]
    sub.degree = int(p)
    sub.quad_order = int(p) + 2
    sub.t_final = 0.0
    sub.snapshots = []
    return sub


# ---------------------------------------------------------------------------
# Command-line interface.
# ---------------------------------------------------------------------------

def _cmd_run(args):
    config = load_preset(args.config)
    run(config, out_dir=args.out, threads=args.threads)
    return 0


def _cmd_converge(args):
    config = load_preset(args.config)
    grids = [int(v) for v in args.grids.split(",")]
    degrees = [int(v) for v in args.degrees.split(",")]
    convergence_study(config, grids, degrees, out_dir=args.out)
    return 0


def _cmd_quadtest(args):
    """Golden checks of the cut-cell quadrature: circle area and perimeter."""
    from .quadrature import Cell, cut_surface_rule, cut_volume_rule
    ls = geometry.circle(0.25, (0.5, 0.5))
    ok = True
    print("grid    area rel err    perimeter rel err")
    for n in (8, 16, 32, 64):
        h = 1.0 / n
        area = per = 0.0
        for i in range(n):
            for j in range(n):
                cell = Cell((i, j), (i * h, j * h), ((i + 1) * h, (j + 1) * h))
                area += cut_volume_rule(cell, ls, POS, 4).total
                per += cut_surface_rule(cell, ls, 4).total
        ea = abs(area - math.pi * 0.0625) / (math.pi * 0.0625)
        ep = abs(per - math.pi * 0.5) / (math.pi * 0.5)
        print(f"{n:4d}    {ea:.3e}       {ep:.3e}")
        if n == 64 and max(ea, ep) > 1e-8:
            ok = False
    print("quadtest:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_meshdump(args):
    config = load_preset(args.config)
    msh = mesh.build_mesh(config.rect(), config.grid, config.levelset(),
                          config.phases(), config.fbar, config.quad_order,
                          config.periodic)
    out = args.out or config.out_dir
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "mesh.jsonl")
    msh.dump_jsonl(path)
    print(f"wrote {path}: {len(msh.elements)} elements, {len(msh.faces)} faces")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="imdg",
        description="implicit-mesh DG solver for 2D elastodynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("config", help="config file or preset name")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_conv = sub.add_parser("converge", help="grid/degree convergence study")
    p_conv.add_argument("config")
    p_conv.add_argument("--grids", default="8,16,32")
    p_conv.add_argument("--degrees", default="1,2,3")
    p_conv.add_argument("--out", default=None)
    p_conv.set_defaults(func=_cmd_converge)

    p_quad = sub.add_parser("quadtest", help="cut-quadrature golden checks")
    p_quad.set_defaults(func=_cmd_quadtest)

    p_dump = sub.add_parser("meshdump", help="dump mesh as JSON lines")
    p_dump.add_argument("config")
    p_dump.add_argument("--out", default=None)
    p_dump.set_defaults(func=_cmd_meshdump)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
