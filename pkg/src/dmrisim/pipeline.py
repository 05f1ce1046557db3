"""End-to-end run: geometry, surface, mesh, deformation, assembly, solves, fits, outputs."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import fit_adc, sta_adc_sequence
from .btpde import run_experiment_grid
from .config import RunConfig, serialize_config
from .errors import AnalysisError, DmriError
from .fem import assemble
from .geometry import (cross_section, place_cells, triangulate_cylinders, triangulate_spheres)
from .hadc import hadc_direction_sweep
from .integrator import OdeTolerances
from .mesh import (CompartmentModel, FeMesh, canonical_model, deform_bend_twist, export_tetgen,
                   invoke_external_mesher, measure, mesh_cells, mesh_layered_sphere,
                   read_tetgen, split_double_nodes, write_ply)
from .plots import adc_figure, signal_figure

log = logging.getLogger(__name__)

STAGES = ("geometry", "surface", "mesh", "deform", "assemble", "btpde", "hadc", "fit", "write")


class StageError(DmriError):
    """Failure inside one pipeline stage; ``cause`` is the original exception."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class RunFlags:
    out: str | None = None
    mesh_in: str | None = None
    seed: int | None = None
    threads: int = 1
    base_dir: str = "."


@dataclass
class RunOutput:
    document: dict
    files: list = field(default_factory=list)


def default_mesh_size(cfg: RunConfig) -> float:
    """Built-in mesher element size: ``Htetgen`` when positive, else ``Rmin / 2``."""
    h = cfg.domain.Htetgen
    return float(h) if h > 0 else 0.5 * cfg.cells.Rmin


def _relabel(mesh: FeMesh, cmpt_map, bdy_map) -> FeMesh:
    cm = np.asarray(cmpt_map)[mesh.tet_cmpt]
    bm = np.asarray(bdy_map)[mesh.facet_bdy]
    return FeMesh(points=mesh.points, tets=mesh.tets, tet_cmpt=cm, facets=mesh.facets,
                  facet_bdy=bm, double_pairs=mesh.double_pairs, origin=mesh.origin)


def model_from_config(cfg: RunConfig) -> CompartmentModel:
    d = cfg.domain
    return canonical_model(
        cfg.shape, cfg.cells.ncell, cfg.cell_config().has_inner, d.include_ECS != 0,
        sigma={"IN": d.dcoeff_IN, "OUT": d.dcoeff_OUT, "ECS": d.dcoeff_ECS},
        rho={"IN": d.ic_IN, "OUT": d.ic_OUT, "ECS": d.ic_ECS},
        kappa_in_out=d.kappa_IN_OUT, kappa_out_ecs=d.kappa_OUT_ECS,
        T2={"IN": d.T2_IN, "OUT": d.T2_OUT, "ECS": d.T2_ECS})


def model_for_imported(mesh: FeMesh, cfg: RunConfig) -> CompartmentModel:
    """Parameters for an external mesh whose labels follow no built-in scheme.

    Every compartment takes the OUT parameters; boundaries touching the
    exterior are rigid and all others use ``kappa_IN_OUT``.
    """
    d = cfg.domain
    sides = mesh.facet_sides()
    nb, nc = mesh.nboundary, mesh.ncompartment
    rigid = np.zeros(nb, bool)
    np.logical_or.at(rigid, mesh.facet_bdy, sides[:, 1] < 0)
    labels = tuple("rigid" if r else "IN_OUT" for r in rigid)
    return CompartmentModel(
        cmpt_labels=("OUT",) * nc, sigma=[d.dcoeff_OUT] * nc, rho=[d.ic_OUT] * nc,
        T2=[d.T2_OUT] * nc, bdy_labels=labels,
        kappa=[0.0 if r else d.kappa_IN_OUT for r in rigid])


def build_mesh(cfg: RunConfig, cells, surface) -> FeMesh:
    """Built-in meshers where available, the external tetrahedral mesher otherwise."""
    cc = cfg.cell_config()
    h = default_mesh_size(cfg)
    if cfg.shape == "cylinder":
        section = cross_section(cells, cc, h)
        return mesh_cells(section, cc.Hcyl, h)
    if cc.ncell == 1 and cc.ecs_mode == "none":
        R = float(cells.outer_radii[0])
        c = np.asarray(cells.centers[0], float)
        if cc.has_inner:
            m = mesh_layered_sphere([float(cells.inner_radii[0]), R], h, c)
            # layers are numbered from the centre; canonical numbering puts OUT first
            return _relabel(m, [1, 0], [1, 0])
        return mesh_layered_sphere([R], h, c)
    return invoke_external_mesher(surface, cfg.domain.Htetgen, cmd=cfg.domain.tetgen_cmd)


def _complex_json(a):
    a = np.asarray(a)
    return {"re": _real_json(a.real), "im": _real_json(a.imag)}


def _real_json(a):
    a = np.asarray(a, float)
    if a.ndim == 0:
        v = float(a)
        return v if math.isfinite(v) else None
    return [_real_json(x) for x in a]


def _seq_json(seq):
    out = {"kind": seq.kind, "TE": float(seq.TE)}
    for name in ("delta", "Delta"):
        if hasattr(seq, name):
            out[name] = float(getattr(seq, name))
    if hasattr(seq, "nperiod"):
        out["nperiod"] = int(seq.nperiod)
    if hasattr(seq, "tau"):
        out["tau"] = float(seq.tau)
    return out


def _adc_or_nan(b, s, rel_tol=1e-2):
    try:
        if np.any(~np.isfinite(s)):
            return math.nan
        return fit_adc(b, s, rel_tol).adc
    except AnalysisError:
        return math.nan


def _finite_mean(a):
    """Mean over the first axis ignoring NaN; all-NaN slices stay NaN."""
    a = np.asarray(a, float)
    ok = np.isfinite(a)
    n = ok.sum(axis=0)
    total = np.where(ok, a, 0.0).sum(axis=0)
    return np.where(n > 0, total / np.maximum(n, 1), np.nan)


def _write_failure(out, stage, exc, done):
    if out is None:
        return None
    path = os.path.join(out, "failure.json")
    with open(path, "w") as fh:
        json.dump({"stage": stage, "error": type(exc).__name__, "message": str(exc),
                   "completed_stages": done}, fh, indent=2)
    return path


def run_pipeline(cfg: RunConfig, flags: RunFlags | None = None) -> RunOutput:
    """Run every stage in order and write outputs when ``flags.out`` is set.

    Stage failures raise :class:`StageError` after a ``failure.json``
    manifest and all outputs completed so far have been written.
    """
    flags = flags or RunFlags()
    if flags.seed is not None:
        from .config import with_overrides

        cfg = with_overrides(cfg, cells={"seed": int(flags.seed)})
    out = flags.out
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.txt"), "w") as fh:
            fh.write(serialize_config(cfg))
    timings = {}
    done = []
    files = []
    stage = "geometry"

    def mark(name, t0):
        timings[name] = time.perf_counter() - t0
        done.append(name)

    try:
        e = cfg.experiment
        sequences = cfg.sequences(flags.base_dir)
        bvals, gvals = cfg.gradient_grid(sequences)
        dirs = cfg.directions()
        cells = surface = None
        if flags.mesh_in:
            stage = "mesh"
            t0 = time.perf_counter()
            mesh = read_tetgen(flags.mesh_in)
            model = model_for_imported(mesh, cfg)
            mark("mesh", t0)
        else:
            stage = "geometry"
            t0 = time.perf_counter()
            cells = place_cells(cfg.cell_config())
            mark("geometry", t0)
            stage = "surface"
            t0 = time.perf_counter()
            if cfg.shape == "sphere":
                surface = triangulate_spheres(cells, cfg.cell_config())
            else:
                surface = triangulate_cylinders(cells, cfg.cell_config(), default_mesh_size(cfg))
            if out:
                p = os.path.join(out, "surface.ply")
                with open(p, "w") as fh:
                    fh.write(write_ply(surface.vertices, surface.triangles))
                files.append(p)
            mark("surface", t0)
            stage = "mesh"
            t0 = time.perf_counter()
            mesh = build_mesh(cfg, cells, surface)
            model = model_from_config(cfg)
            mark("mesh", t0)
        stage = "deform"
        t0 = time.perf_counter()
        ab, at = cfg.cells.para_deform
        if (ab or at) and not flags.mesh_in:
            mesh = deform_bend_twist(mesh, ab, at)
        if out:
            prefix = os.path.join(out, "mesh")
            export_tetgen(mesh, prefix)
            files += [prefix + ext for ext in (".node", ".ele", ".face")]
        mark("deform", t0)

        stage = "assemble"
        t0 = time.perf_counter()
        split = split_double_nodes(mesh, model)
        A = assemble(split, model)
        mark("assemble", t0)
        ncmpt = split.ncompartment
        V = A.volumes

        doc = {
            "version": __version__,
            "meta": {
                "seed": cfg.cells.seed,
                "mesh": {"nnode": int(split.nnode), "ntet": int(split.ntet),
                         "ncompartment": int(ncmpt), "nboundary": int(split.nboundary)},
                "compartments": list(model.cmpt_labels),
                "volumes": _real_json(V),
                "sequences": [_seq_json(s) for s in sequences],
                "bvalues": _real_json(bvals),
                "gvalues": _real_json(gvals),
                "directions": _real_json(dirs),
                "tolerances": {"rtol_bt": e.rtol_bt, "atol_bt": e.atol_bt,
                               "rtol_deff": e.rtol_deff, "atol_deff": e.atol_deff},
                "timings": timings,
                "failures": [],
            },
        }
        adc_sources = {}
        if e.solve_btpde:
            stage = "btpde"
            t0 = time.perf_counter()
            res = run_experiment_grid(A, sequences, list(gvals), dirs,
                                      OdeTolerances(e.rtol_bt, e.atol_bt), threads=flags.threads)
            mark("btpde", t0)
            MF_dir = np.moveaxis(res.MF_cmpts, 3, 0)  # (ndir, ncmpt, nexp, nb)
            doc["MF_cmpts"] = _complex_json(MF_dir.mean(axis=0))
            doc["MF_allcmpts"] = _complex_json(MF_dir.sum(axis=1).mean(axis=0))
            doc["MF_cmpts_dir"] = _complex_json(MF_dir)
            doc["meta"]["failures"] += [
                {"stage": "btpde", "experiment": f[0], "b_index": f[1], "direction": f[2],
                 "message": f[3]} for f in res.failures]
            fit_dir = np.full((len(dirs), ncmpt, e.nexperi), np.nan)
            fit_all_dir = np.full((len(dirs), e.nexperi), np.nan)
            for idir in range(len(dirs)):
                for ie in range(e.nexperi):
                    for c in range(ncmpt):
                        fit_dir[idir, c, ie] = _adc_or_nan(bvals[ie], MF_dir[idir, c, ie])
                    tot = MF_dir[idir, :, ie].sum(axis=0)
                    fit_all_dir[idir, ie] = _adc_or_nan(bvals[ie], tot)
            adc_sources["btpde"] = (fit_dir, fit_all_dir)
            if out:
                files.append(_write_signal_csv(out, bvals, gvals, MF_dir, model.cmpt_labels))
        if e.solve_hadc:
            stage = "hadc"
            t0 = time.perf_counter()
            grid = hadc_direction_sweep(A, sequences, dirs,
                                        tol=OdeTolerances(e.rtol_deff, e.atol_deff),
                                        threads=flags.threads)
            mark("hadc", t0)
            h_dir = np.moveaxis(grid.ADC_cmpts_dir, 2, 0)  # (ndir, ncmpt, nexp)
            w = model.rho * V
            h_all = np.einsum("c,dce->de", w, h_dir) / w.sum()
            doc["HADC_cmpts_dir"] = _real_json(h_dir)
            doc["HADC_allcmpts_dir"] = _real_json(h_all)
            doc["meta"]["failures"] += [
                {"stage": "hadc", "compartment": f[0], "experiment": f[1], "direction": f[2],
                 "message": f[3]} for f in grid.failures]
            adc_sources["hadc"] = (h_dir, h_all)

        stage = "fit"
        t0 = time.perf_counter()
        if adc_sources:
            src = "btpde" if "btpde" in adc_sources else "hadc"
            a_dir, a_all_dir = adc_sources[src]
            doc["meta"]["adc_source"] = src
            doc["ADC_cmpts_dir"] = _real_json(a_dir)
            doc["ADC_allcmpts_dir"] = _real_json(a_all_dir)
            doc["ADC_cmpts"] = _real_json(_finite_mean(a_dir))
            if src == "btpde":
                MF_mean = np.moveaxis(res.MF_cmpts, 3, 0).mean(axis=0)
                all_adc = [_adc_or_nan(bvals[ie], MF_mean[:, ie].sum(axis=0))
                           for ie in range(e.nexperi)]
            else:
                all_adc = _finite_mean(a_all_dir)
            doc["ADC_allcmpts"] = _real_json(all_adc)
        doc["STA_cmpts_dir"] = _real_json(_sta_grid(A, split, sequences, dirs))
        mark("fit", t0)

        if out:
            stage = "write"
            files += _write_outputs(out, doc, bvals, model.cmpt_labels)
        return RunOutput(document=doc, files=files)
    except DmriError as exc:
        path = _write_failure(out, stage, exc, done)
        if isinstance(exc, StageError):
            raise
        err = StageError(stage, exc)
        err.manifest = path
        raise err from exc


def _sta_grid(A, mesh, sequences, dirs):
    """Short-time ADC per (direction, compartment, experiment)."""
    out = np.full((len(dirs), mesh.ncompartment, len(sequences)), np.nan)
    for idir, u in enumerate(dirs):
        geo = measure(mesh, u)
        for c in range(mesh.ncompartment):
            for ie, seq in enumerate(sequences):
                try:
                    out[idir, c, ie] = sta_adc_sequence(float(A.model.sigma[c]), seq,
                                                        geo["A_ug_cmpt"][c], geo["V"][c]).adc
                except (ValueError, ArithmeticError) as exc:
                    log.warning("STA unavailable for experiment %d: %s", ie, exc)
    return out


def _write_signal_csv(out, bvals, gvals, MF_dir, labels):
    path = os.path.join(out, "signals.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "b", "g", "direction", "compartment", "label", "re", "im"])
        ndir, nc, ne, nb = MF_dir.shape
        for ie in range(ne):
            for ib in range(nb):
                for idir in range(ndir):
                    for c in range(nc):
                        z = MF_dir[idir, c, ie, ib]
                        w.writerow([ie, f"{bvals[ie, ib]:.17g}", f"{gvals[ie, ib]:.17g}", idir, c,
                                    labels[c], f"{z.real:.17g}", f"{z.imag:.17g}"])
    return path


def _write_outputs(out, doc, bvals, labels):
    files = []
    path = os.path.join(out, "result.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=False)
    files.append(path)
    names = [f"{lab}{i}" for i, lab in enumerate(labels)]
    if "ADC_cmpts" in doc:
        path = os.path.join(out, "adc.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment"] + names + ["all"])
            for ie, a_all in enumerate(doc["ADC_allcmpts"]):
                row = [doc["ADC_cmpts"][c][ie] for c in range(len(names))]
                w.writerow([ie] + ["" if v is None else f"{v:.17g}" for v in row + [a_all]])
        files.append(path)
    for ie in range(len(bvals)):
        if "MF_cmpts" in doc:
            re_ = np.array(doc["MF_cmpts"]["re"], dtype=float)[:, ie]
            im_ = np.array(doc["MF_cmpts"]["im"], dtype=float)[:, ie]
            svg = signal_figure(bvals[ie], re_ + 1j * im_, names, title=f"Signal, experiment {ie}")
            path = os.path.join(out, f"signal_exp{ie}.svg")
            with open(path, "w") as fh:
                fh.write(svg)
            files.append(path)
        if "ADC_cmpts" in doc:
            vals = [np.nan if doc["ADC_cmpts"][c][ie] is None else doc["ADC_cmpts"][c][ie]
                    for c in range(len(names))]
            a_all = doc["ADC_allcmpts"][ie]
            svg = adc_figure(vals, np.nan if a_all is None else a_all, names,
                             title=f"ADC, experiment {ie}")
            path = os.path.join(out, f"adc_exp{ie}.svg")
            with open(path, "w") as fh:
                fh.write(svg)
            files.append(path)
    return files


def load_result(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def complex_array(obj) -> np.ndarray:
    """Inverse of the ``{"re": ..., "im": ...}`` encoding (``null`` becomes NaN)."""
    re_ = np.array(obj["re"], dtype=float)
    im_ = np.array(obj["im"], dtype=float)
    return re_ + 1j * im_


__all__ = ["RunFlags", "RunOutput", "StageError", "build_mesh", "complex_array",
           "default_mesh_size", "load_result", "model_from_config", "model_for_imported",
           "run_pipeline"]
