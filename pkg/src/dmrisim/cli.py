"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 geometry or mesher error,
4 solver or analysis error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .analysis import fit_adc, signal_difference, sta_adc
from .config import RunConfig, load_config, with_overrides
from .errors import (AnalysisError, ConfigError, GeometryError, MeshError, OracleError,
                     ParseError, SolverError)
from .pipeline import RunFlags, StageError, build_mesh, complex_array, load_result, run_pipeline

log = logging.getLogger("dmrisim")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER = 0, 2, 3, 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ParseError, ConfigError)):
        return EXIT_CONFIG
    if isinstance(exc, (MeshError, GeometryError)):
        return EXIT_MESH
    if isinstance(exc, (SolverError, AnalysisError, OracleError)):
        return EXIT_SOLVER
    return 1


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = with_overrides(cfg, cells={"seed": args.seed})
    return cfg


def _flags(args) -> RunFlags:
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    return RunFlags(out=args.out, mesh_in=getattr(args, "mesh_in", None), seed=args.seed,
                    threads=args.threads, base_dir=base)


def _emit(obj) -> None:
    json.dump(_jsonable(obj), sys.stdout, indent=1, allow_nan=False)
    sys.stdout.write("\n")


def _jsonable(o):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": _jsonable(o.real), "im": _jsonable(o.imag)}
    if isinstance(o, (np.integer, bool)):
        return int(o) if not isinstance(o, bool) else o
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    return o


# -- subcommands ------------------------------------------------------------

def cmd_geometry(args) -> int:
    from .geometry import place_cells, triangulate_cylinders, triangulate_spheres
    from .mesh import write_ply, write_poly
    from .pipeline import default_mesh_size

    cfg = _config(args)
    cc = cfg.cell_config()
    cells = place_cells(cc)
    if cfg.shape == "sphere":
        surface = triangulate_spheres(cells, cc)
    else:
        surface = triangulate_cylinders(cells, cc, default_mesh_size(cfg))
    summary = {"ncell": cells.ncell, "centers": cells.centers, "outer_radii": cells.outer_radii,
               "inner_radii": cells.inner_radii, "nvertex": len(surface.vertices),
               "ntriangle": len(surface.triangles), "ncompartment": surface.ncompartment}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "surface.ply"), "w") as fh:
            fh.write(write_ply(surface.vertices, surface.triangles))
        write_poly(surface, os.path.join(args.out, "surface.poly"))
        with open(os.path.join(args.out, "cells.json"), "w") as fh:
            json.dump(_jsonable(summary), fh, indent=1)
    _emit(summary)
    return EXIT_OK


def cmd_mesh(args) -> int:
    from .geometry import place_cells, triangulate_cylinders, triangulate_spheres
    from .mesh import deform_bend_twist, export_tetgen, mesh_quality, read_tetgen
    from .pipeline import default_mesh_size

    cfg = _config(args)
    if args.mesh_in:
        mesh = read_tetgen(args.mesh_in)
    else:
        cc = cfg.cell_config()
        cells = place_cells(cc)
        surface = (triangulate_spheres(cells, cc) if cfg.shape == "sphere"
                   else triangulate_cylinders(cells, cc, default_mesh_size(cfg)))
        mesh = build_mesh(cfg, cells, surface)
        ab, at = cfg.cells.para_deform
        if ab or at:
            mesh = deform_bend_twist(mesh, ab, at)
    q = mesh_quality(mesh)
    info = {"nnode": mesh.nnode, "ntet": mesh.ntet, "ncompartment": mesh.ncompartment,
            "nboundary": mesh.nboundary, "volume": float(mesh.volumes().sum()),
            "quality": dataclasses.asdict(q)}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_tetgen(mesh, os.path.join(args.out, "mesh"))
    _emit(info)
    return EXIT_OK


def _run(args, btpde, hadc) -> int:
    cfg = _config(args)
    if btpde is not None or hadc is not None:
        cfg = with_overrides(cfg, experiment={"solve_btpde": int(bool(btpde)),
                                              "solve_hadc": int(bool(hadc))})
    res = run_pipeline(cfg, _flags(args))
    doc = res.document
    keys = [k for k in ("ADC_cmpts", "ADC_allcmpts") if k in doc]
    _emit({"outputs": res.files, **{k: doc[k] for k in keys}})
    return EXIT_OK


def cmd_btpde(args) -> int:
    return _run(args, True, False)


def cmd_hadc(args) -> int:
    return _run(args, False, True)


def cmd_run(args) -> int:
    return _run(args, None, None)


def cmd_sta(args) -> int:
    res = sta_adc(args.sigma, args.delta, args.Delta, args.A_ug, args.V)
    _emit(dataclasses.asdict(res))
    return EXIT_OK


def _read_curve(path):
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] < 2:
        raise ParseError(f"{path}: need columns b, S (and optionally Im S)")
    s = data[:, 1] + (1j * data[:, 2] if data.shape[1] > 2 else 0.0)
    return data[:, 0], s


def cmd_fit(args) -> int:
    b, s = _read_curve(args.input)
    res = fit_adc(b, s, rel_tol=args.rel_tol)
    _emit({"adc": res.adc, "degree": res.degree, "coefficients": res.coefficients})
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracles import SpectralOracle1D, free_signal, spectral_signal_1d
    from .sequences import PGSE, amplitude_from_b

    b = np.asarray(args.bvalues, float)
    if args.kind == "free":
        _emit({"b": b, "signal": free_signal(b, args.sigma)})
        return EXIT_OK
    seq = PGSE(args.delta, args.Delta)
    if args.kind == "spectral":
        sig = args.sigmas or [args.sigma] * len(args.lengths)
        orc = SpectralOracle1D(tuple(args.lengths), tuple(sig), kappa=args.kappa)
        s = [spectral_signal_1d(orc, seq, amplitude_from_b(seq, bb)) for bb in b]
        _emit({"b": b, "signal": [complex(x) for x in s]})
        return EXIT_OK
    from .geometry import icosphere
    from .oracles.walker import WalkerOracle, make_substrate, run_walk

    v, t = icosphere(args.level)
    v = np.asarray(v) * args.radius
    T = args.steps
    sub = make_substrate(v, t, args.kappa, args.sigma, seq.TE / T)
    orc = WalkerOracle(sub, v, t, args.sigma, args.spins, T, seed=args.seed or 0)
    walk = run_walk(orc, seq, [[1.0, 0.0, 0.0]], threads=args.threads)
    s = walk.signals(amplitude_from_b(seq, b))
    _emit({"b": b, "signal": [complex(x) for x in s], "backend": walk.backend})
    return EXIT_OK


def cmd_compare(args) -> int:
    ref, test = load_result(args.reference), load_result(args.test)
    if "MF_allcmpts" not in ref or "MF_allcmpts" not in test:
        raise ConfigError("both results need MF_allcmpts (run with solve_btpde = 1)")
    a, b = complex_array(ref["MF_allcmpts"]), complex_array(test["MF_allcmpts"])
    out = []
    for ie in range(a.shape[0]):
        e = signal_difference(a[ie], b[ie], mode=args.mode)
        out.append({"experiment": ie, "E": e, "max_E": float(np.max(e))})
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmrisim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mesh_in=True):
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the placement seed")
        sp.add_argument("--threads", type=int, default=1)
        if mesh_in:
            sp.add_argument("--mesh-in", dest="mesh_in",
                            help="prefix of node/ele/face files to use instead of geometry")

    sp = sub.add_parser("geometry", help="place cells and write the surface triangulation")
    common(sp, mesh_in=False)
    sp.set_defaults(func=cmd_geometry)
    sp = sub.add_parser("mesh", help="build or import the tetrahedral mesh")
    common(sp)
    sp.set_defaults(func=cmd_mesh)
    for name, fn, text in (("btpde", cmd_btpde, "solve the Bloch-Torrey equation only"),
                           ("hadc", cmd_hadc, "solve the homogenized ADC model only"),
                           ("run", cmd_run, "full pipeline with the configured toggles")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("sta", help="short-time ADC for a PGSE sequence")
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--Delta", type=float, required=True)
    sp.add_argument("--A-ug", dest="A_ug", type=float, required=True)
    sp.add_argument("--V", type=float, required=True)
    sp.set_defaults(func=cmd_sta)

    sp = sub.add_parser("fit", help="fit the ADC to a CSV curve b,re[,im]")
    sp.add_argument("input")
    sp.add_argument("--rel-tol", type=float, default=1e-2)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("oracle", help="reference signals")
    sp.add_argument("kind", choices=("free", "spectral", "walker"))
    sp.add_argument("--bvalues", type=float, nargs="+", default=[0.0, 500.0, 1000.0])
    sp.add_argument("--sigma", type=float, default=2e-3)
    sp.add_argument("--sigmas", type=float, nargs="+")
    sp.add_argument("--lengths", type=float, nargs="+", default=[10.0])
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--delta", type=float, default=10000.0)
    sp.add_argument("--Delta", type=float, default=13000.0)
    sp.add_argument("--radius", type=float, default=5.0)
    sp.add_argument("--level", type=int, default=3)
    sp.add_argument("--spins", type=int, default=2000)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("compare", help="signal difference E(b) between two result.json files")
    sp.add_argument("reference")
    sp.add_argument("test")
    sp.add_argument("--mode", choices=("abs_ref0", "ratio"), default="abs_ref0")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, StageError, ConfigError, ParseError, MeshError, GeometryError,
            SolverError, AnalysisError, OracleError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, OSError) and code == 1:
            code = EXIT_CONFIG
        print(f"dmrisim: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
