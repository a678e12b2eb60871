"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 invalid input (arguments, config,
mesh file, coefficient data), 3 solver failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments as ex
from . import projections as proj
from . import semidiscrete as sd
from .derham import build_complex
from .fields import CoefficientError, TensorField
from .mesh import MeshError, generate_box_mesh, read_mesh, write_mesh
from .sparse import SolverError

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("whitney_maxwell")


class ConfigError(ValueError):
    pass


_POS = {"type": "number", "exclusiveMinimum": 0}
_COEF = {"oneOf": [
    {"enum": ["identity", "zero"]},
    {"type": "number", "minimum": 0},
    {"type": "object", "properties": {"per_cell": {"type": "string"}},
     "required": ["per_cell"], "additionalProperties": False},
]}
_MESH = {"type": "object", "oneOf": [
    {"properties": {"n": {"type": "integer", "minimum": 1}}, "required": ["n"], "additionalProperties": False},
    {"properties": {"file": {"type": "string"}}, "required": ["file"], "additionalProperties": False},
]}
_TOLS = {"type": "object", "additionalProperties": False,
         "properties": {"cg": _POS, "schur": _POS, "projection": _POS}}
_STEPPER = {"enum": ["crank-nicolson", "backward-euler"]}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mesh", "T", "initial", "b_init", "output"],
    "properties": {
        "mesh": _MESH,
        "eps": _COEF, "mu_inv": _COEF, "sigma": _COEF,
        "source": {"enum": ["zero", "cavity-consistent"]},
        "initial": {"enum": ["zero", "cavity"]},
        "t0": {"type": "number"},
        "b_init": {"enum": ["potential", "constrained"]},
        "T": _POS,
        "dt": _POS,
        "dt_policy": {"enum": ["h/8"]},
        "stepper": _STEPPER,
        "tolerances": _TOLS,
        "output": {"type": "object", "additionalProperties": False, "required": ["csv"],
                   "properties": {"csv": {"type": "string"}, "summary": {"type": "string"}}},
    },
    "not": {"required": ["dt", "dt_policy"]},
}

CONVERGENCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["levels", "T", "output"],
    "properties": {
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "T": {"type": "number", "minimum": 0},
        "dt": _POS,
        "dt_policy": {"enum": ["h/8"]},
        "t0": {"type": "number"},
        "b_init": {"enum": ["potential", "constrained"]},
        "stepper": _STEPPER,
        "order_band": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "output": {"type": "object", "additionalProperties": False, "required": ["csv"],
                   "properties": {"csv": {"type": "string"}}},
    },
    "not": {"required": ["dt", "dt_policy"]},
}


def _dump(obj) -> str:
    """JSON text; floats use Python's shortest round-trip repr, so they are lossless."""
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            o = float(o)
        if isinstance(o, float) and not np.isfinite(o):
            return None
        return o
    return json.dumps(clean(obj), indent=2)


def load_config(path, schema) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    return cfg


def _mesh_from(source, base: Path | None = None):
    entry = source
    if isinstance(entry, dict):
        n, path = entry.get("n"), entry.get("file")
    else:
        n, path = entry.n, entry.mesh
    if path is not None:
        p = Path(path)
        if base is not None and not p.is_absolute():
            p = base / p
        return read_mesh(p.read_text(encoding="utf-8"))
    if n is None:
        raise ConfigError("give a mesh file or --n")
    return generate_box_mesh(n)


def _coefficient(entry, n_cells: int, base: Path) -> TensorField | None:
    if entry is None or entry == "identity":
        return TensorField.identity()
    if entry == "zero":
        return TensorField.zero()
    if isinstance(entry, (int, float)):
        return TensorField.scalar(entry)
    p = Path(entry["per_cell"])
    if not p.is_absolute():
        p = base / p
    values = np.loadtxt(p, ndmin=2)
    if values.shape == (n_cells, 1):
        values = values[:, 0]
    elif values.shape == (n_cells, 9):
        values = values.reshape(n_cells, 3, 3)
    else:
        raise CoefficientError(f"{p}: expected {n_cells} rows of 1 or 9 values, got shape {values.shape}")
    return TensorField.cellwise(values)


def _threads() -> int:
    raw = os.environ.get("MAXWELL_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"MAXWELL_THREADS must be a positive integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"MAXWELL_THREADS must be a positive integer, got {raw!r}")
    return k


# --- subcommands -----------------------------------------------------------------

def cmd_mesh(args) -> int:
    mesh = generate_box_mesh(args.n, (tuple(args.box[:3]), tuple(args.box[3:])))
    if args.out:
        Path(args.out).write_text(write_mesh(mesh), encoding="utf-8")
    print(_dump(mesh.summary()))
    return EXIT_OK


def cmd_check_complex(args) -> int:
    mesh = _mesh_from(args)
    cx = build_complex(mesh)

    def mx(A):
        return int(abs(A).max()) if A.nnz else 0

    report = {
        "V": mesh.n_vertices, "E": mesh.n_edges, "F": mesh.n_faces, "C": mesh.n_cells,
        "euler": mesh.euler_characteristic,
        "DC_max": mx(cx.D @ cx.C), "CG_max": mx(cx.C @ cx.G),
        "interior_edges": cx.n_interior_edge,
        "boundary_edges": int(mesh.boundary_edges.sum()),
        "boundary_faces": int(mesh.boundary_faces.sum()),
        "boundary_vertices": int(mesh.boundary_vertices.sum()),
    }
    print(_dump(report))
    return EXIT_OK


_FIELDS = {
    "cavity-E": lambda t: (lambda x: ex.CAVITY.E(x, t), lambda x: ex.CAVITY.curl_E(x, t)),
    "cavity-B": lambda t: (lambda x: ex.CAVITY.B(x, t), None),
    "cavity-A": lambda t: (lambda x: ex.CAVITY.A(x, t), lambda x: ex.CAVITY.B(x, t)),
}


def cmd_project(args) -> int:
    cx = build_complex(_mesh_from(args))
    u, curl_u = _FIELDS[args.field](args.t)
    op = args.operator
    if op in ("riesz", "potential") and curl_u is None:
        raise ConfigError(f"operator {op!r} needs a field with a known curl")
    if op == "l2-rt":
        rep = proj.l2_project_rt(cx, u, args.tol)
    elif op == "l2-nedelec":
        rep = proj.l2_project_nedelec(cx, u, args.tol)
    elif op == "riesz":
        rep = proj.riesz_project_nedelec(cx, u, curl_u, args.tol)
    elif op == "constrained":
        rep = proj.constrained_project_rt(cx, u, args.tol)
    else:
        rep = proj.potential_init_rt(cx, u, curl_u, args.tol)
    out = rep.to_json()
    out["operator"] = op
    print(_dump(out))
    return EXIT_OK


def _write_csv(path: Path, records):
    buf = io.StringIO()
    sd.write_csv(records, buf)
    path.write_text(buf.getvalue(), encoding="utf-8")


def cmd_run(args) -> int:
    cfg = load_config(args.config, RUN_SCHEMA)
    base = Path(args.config).resolve().parent
    mesh = _mesh_from(cfg["mesh"], base)
    cx = build_complex(mesh)
    eps = _coefficient(cfg.get("eps"), mesh.n_cells, base)
    mu_inv = _coefficient(cfg.get("mu_inv"), mesh.n_cells, base)
    sigma = _coefficient(cfg.get("sigma", "zero"), mesh.n_cells, base)
    tols = {"cg": 1e-12, "schur": 1e-11, "projection": 1e-13, **cfg.get("tolerances", {})}
    t0 = float(cfg.get("t0", 0.0))
    T = float(cfg["T"])
    # an explicit dt is honored as given or rejected; only the policy is rounded
    dt = float(cfg["dt"]) if "dt" in cfg else ex.time_step(mesh.h, T, cfg.get("dt_policy", "h/8"))
    sd.n_steps(T, dt)
    sys_ = sd.build_system(cx, eps, mu_inv, sigma)
    if cfg["initial"] == "cavity":
        E0, B0, A0 = ex.CAVITY.at(t0)
    else:
        E0 = B0 = A0 = None
    state = sd.initial_state(sys_, E0, B0, A0=A0, b_init=cfg["b_init"], t0=t0,
                             tol=tols["projection"], schur_tol=tols["schur"])
    f = None
    if cfg.get("source", "zero") == "cavity-consistent":
        f = ex.CAVITY.forcing()
    csv_path = Path(cfg["output"]["csv"])
    if not csv_path.is_absolute():
        csv_path = base / csv_path
    start = time.perf_counter()
    try:
        res = sd.run(sys_, state, T, dt, f, cfg.get("stepper", "crank-nicolson"), tols["cg"])
    except sd.RunError as exc:
        _write_csv(csv_path, exc.records)
        raise
    wall = time.perf_counter() - start
    _write_csv(csv_path, res.records)
    e0 = res.records[0].energy
    summary = {
        "initial_energy": e0,
        "final_energy": res.records[-1].energy,
        "max_gauss_residual": res.max("gauss_residual"),
        "max_energy_identity_residual": res.max("energy_identity_residual"),
        "steps": len(res.records) - 1,
        "dt": dt,
        "wall_time": wall,
    }
    if "summary" in cfg["output"]:
        p = Path(cfg["output"]["summary"])
        (p if p.is_absolute() else base / p).write_text(_dump(summary) + "\n", encoding="utf-8")
    print(_dump(summary))
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = load_config(args.config, CONVERGENCE_SCHEMA)
    base = Path(args.config).resolve().parent
    band = cfg.get("order_band", [0.8, 1.6])
    table = ex.convergence_study(
        cfg["levels"], float(cfg["T"]), cfg.get("dt", cfg.get("dt_policy", "h/8")),
        float(cfg.get("t0", 0.0)), cfg.get("b_init", "potential"),
        cfg.get("stepper", "crank-nicolson"), threads=_threads())
    p = Path(cfg["output"]["csv"])
    (p if p.is_absolute() else base / p).write_text(table.to_csv(), encoding="utf-8")
    orders = [r.order_E for r in table.rows[1:]]
    print(_dump({
        "levels": [r.n for r in table.rows],
        "err_E": [r.err_E for r in table.rows],
        "err_B": [r.err_B for r in table.rows],
        "strictly_decreasing": table.strictly_decreasing(),
        "order_band": band,
        "order_E_in_band": all(band[0] <= o <= band[1] for o in orders),
    }))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="whitney-maxwell", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a structured box mesh")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--box", type=float, nargs=6, default=[0, 0, 0, 1, 1, 1],
                   metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_mesh)

    def mesh_source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--mesh", help="mesh file")
        g.add_argument("--n", type=int, help="box mesh subdivisions")

    p = sub.add_parser("check-complex", help="report incidence exactness and DOF counts")
    mesh_source(p)
    p.set_defaults(func=cmd_check_complex)

    p = sub.add_parser("project", help="apply a projection to cavity data")
    mesh_source(p)
    p.add_argument("--operator", required=True,
                   choices=["l2-rt", "l2-nedelec", "riesz", "constrained", "potential"])
    p.add_argument("--field", default="cavity-B", choices=sorted(_FIELDS))
    p.add_argument("--t", type=float, default=ex.PHASE_SHIFT)
    p.add_argument("--tol", type=float, default=1e-11)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("run", help="integrate the semi-discrete system")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence", help="cavity refinement study")
    p.add_argument("config")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, sd.RunError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, MeshError, CoefficientError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
