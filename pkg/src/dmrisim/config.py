"""Run configuration: ``key = value`` lines grouped in three sections.

::

    [cells]
    cell_shape = 1          # 1 = spheres, 2 = cylinders
    ncell = 10
    ...
    [domain]
    dcoeff_IN = 0.002
    ...
    [experiment]
    seqvec = 1 2 3
    ...

Keys keep the classical input-file variable names. Lists are whitespace
separated; strings may be quoted. Unknown keys are rejected. Lengths in µm,
times in µs, b-values in s/mm² (= µs/µm²).
"""
from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CellConfig
from .sequences import amplitude_from_b, bvalue, direction_set, make_sequence

SECTIONS = ("cells", "domain", "experiment")


@dataclass(frozen=True)
class CellsSection:
    cell_shape: int = 1
    fname_params_cells: str = "current_cells"
    ncell: int = 1
    Rmin: float = 2.5
    Rmax: float = 2.5
    dmin: float = 1.5
    dmax: float = 2.5
    para_deform: tuple = (0.0, 0.0)
    Hcyl: float = 20.0
    seed: int = 0


@dataclass(frozen=True)
class DomainSection:
    Rratio: float = 0.0
    include_ECS: int = 0
    ECS_gap: float = 0.3
    dcoeff_IN: float = 0.002
    dcoeff_OUT: float = 0.002
    dcoeff_ECS: float = 0.002
    ic_IN: float = 1.0
    ic_OUT: float = 1.0
    ic_ECS: float = 1.0
    kappa_IN_OUT: float = 0.0
    kappa_OUT_ECS: float = 0.0
    T2_IN: float = math.inf
    T2_OUT: float = math.inf
    T2_ECS: float = math.inf
    Htetgen: float = -1.0
    tetgen_cmd: str = "tetgen"


@dataclass(frozen=True)
class ExperimentSection:
    ngdir: int = 1
    gdir: tuple = (1.0, 0.0, 0.0)
    nexperi: int = 1
    sdeltavec: tuple = (10000.0,)
    bdeltavec: tuple = (13000.0,)
    seqvec: tuple = (1,)
    npervec: tuple = (0,)
    tauvec: tuple = ()
    profile_files: tuple = ()
    solve_hadc: int = 0
    rtol_deff: float = 1e-4
    atol_deff: float = 1e-4
    solve_btpde: int = 1
    rtol_bt: float = 1e-5
    atol_bt: float = 1e-5
    nb: int = 2
    blimit: int = 0
    const_q: int = 0
    bvalues: tuple = (0.0, 1000.0)


_SECTION_TYPES = {"cells": CellsSection, "domain": DomainSection,
                  "experiment": ExperimentSection}

# value kinds for tuple-valued keys
_LIST_KIND = {
    "para_deform": float, "gdir": float, "sdeltavec": float, "bdeltavec": float,
    "seqvec": int, "npervec": int, "tauvec": float, "profile_files": str, "bvalues": float,
}


def _kinds(cls):
    out = {}
    for f in fields(cls):
        default = f.default
        if isinstance(default, tuple):
            out[f.name] = ("list", _LIST_KIND[f.name])
        else:
            out[f.name] = ("scalar", type(default))
    return out


_KINDS = {name: _kinds(cls) for name, cls in _SECTION_TYPES.items()}


def _convert(tok: str, kind, key, line):
    try:
        if kind is int:
            v = float(tok)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            return float(tok)
        return tok
    except ValueError:
        raise ParseError(f"cannot read {tok!r} as {kind.__name__}", line=line, key=key) from None


def _parse_value(raw: str, spec, key, line):
    try:
        toks = shlex.split(raw, comments=False, posix=True)
    except ValueError as exc:
        raise ParseError(str(exc), line=line, key=key) from None
    what, kind = spec
    if what == "scalar":
        if len(toks) != 1:
            raise ParseError(f"expected one value, got {len(toks)}", line=line, key=key)
        return _convert(toks[0], kind, key, line)
    return tuple(_convert(t, kind, key, line) for t in toks)


@dataclass(frozen=True)
class RunConfig:
    cells: CellsSection = field(default_factory=CellsSection)
    domain: DomainSection = field(default_factory=DomainSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def __post_init__(self):
        validate(self)

    # -- derived quantities -------------------------------------------------
    @property
    def shape(self) -> str:
        return "sphere" if self.cells.cell_shape == 1 else "cylinder"

    @property
    def ecs_mode(self) -> str:
        return ("none", "box", "tight_wrap")[self.domain.include_ECS]

    def cell_config(self) -> CellConfig:
        c, d = self.cells, self.domain
        return CellConfig(cell_shape=self.shape, ncell=c.ncell, Rmin=c.Rmin, Rmax=c.Rmax,
                          dmin=c.dmin, dmax=c.dmax, Hcyl=c.Hcyl, Rratio=d.Rratio,
                          ecs_mode=self.ecs_mode, ecs_gap=d.ECS_gap,
                          alpha_bend=c.para_deform[0], alpha_twist=c.para_deform[1],
                          rng_seed=c.seed)

    def sequences(self, base_dir=".") -> list:
        e = self.experiment
        out = []
        for i in range(e.nexperi):
            tau = e.tauvec[i] if e.tauvec else None
            samples = None
            if e.seqvec[i] == 5:
                samples = _read_profile(_join(base_dir, e.profile_files[i]))
            out.append(make_sequence(e.seqvec[i], e.sdeltavec[i], e.bdeltavec[i],
                                     e.npervec[i], tau=tau, samples=samples))
        return out

    def directions(self) -> np.ndarray:
        return direction_set(self.experiment.ngdir, self.experiment.gdir)

    def gradient_grid(self, sequences) -> tuple:
        """Per-experiment arrays of b-values and amplitudes, shape ``(nexperi, nb)``."""
        e = self.experiment
        nb = e.nb
        if e.blimit == 0:
            b0 = np.asarray(e.bvalues, float)
        elif e.blimit == 1:
            b0 = np.linspace(e.bvalues[0], e.bvalues[1], nb)
        else:
            g0 = np.linspace(e.bvalues[0], e.bvalues[1], nb)
        bs = np.zeros((e.nexperi, nb))
        gs = np.zeros((e.nexperi, nb))
        for i, seq in enumerate(sequences):
            if e.blimit == 2:
                gs[i] = g0
                bs[i] = bvalue(seq, g0)
            elif e.const_q and i > 0:
                gs[i] = gs[0]
                bs[i] = bvalue(seq, gs[0])
            else:
                bs[i] = b0
                gs[i] = amplitude_from_b(seq, b0)
        return bs, gs


def _join(base, name):
    import os

    return name if os.path.isabs(name) else os.path.join(base, name)


def _read_profile(path):
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise ValidationError(f"profile file {path} must have two columns (t, f)")
    return data[:, 0], data[:, 1]


def validate(cfg: RunConfig) -> None:
    c, d, e = cfg.cells, cfg.domain, cfg.experiment
    if c.cell_shape not in (1, 2):
        raise ValidationError("cell_shape must be 1 (spheres) or 2 (cylinders)", key="cell_shape")
    if d.include_ECS not in (0, 1, 2):
        raise ValidationError("include_ECS must be 0, 1 or 2", key="include_ECS")
    if len(c.para_deform) != 2:
        raise ValidationError("para_deform needs two values", key="para_deform")
    if len(e.gdir) != 3:
        raise ValidationError("gdir needs three components", key="gdir")
    if e.nexperi < 1:
        raise ValidationError("nexperi must be >= 1", key="nexperi")
    for key in ("sdeltavec", "bdeltavec", "seqvec", "npervec"):
        if len(getattr(e, key)) != e.nexperi:
            raise ValidationError(f"{key} must have nexperi = {e.nexperi} entries", key=key)
    for key in ("tauvec", "profile_files"):
        if getattr(e, key) and len(getattr(e, key)) != e.nexperi:
            raise ValidationError(f"{key} must have nexperi = {e.nexperi} entries", key=key)
    for code in e.seqvec:
        if code not in (1, 2, 3, 4, 5):
            raise ValidationError(f"seqvec code {code} outside 1..5", key="seqvec")
    if 5 in e.seqvec and not e.profile_files:
        raise ValidationError("seqvec code 5 needs profile_files", key="profile_files")
    if e.nb < 1:
        raise ValidationError("nb must be >= 1", key="nb")
    if e.blimit not in (0, 1, 2):
        raise ValidationError("blimit must be 0, 1 or 2", key="blimit")
    if e.blimit == 0 and len(e.bvalues) != e.nb:
        raise ValidationError(f"nb = {e.nb} but {len(e.bvalues)} bvalues given", key="bvalues")
    if e.blimit in (1, 2) and len(e.bvalues) != 2:
        raise ValidationError("blimit 1 or 2 needs a [min, max] pair", key="bvalues")
    if any(v < 0 for v in e.bvalues):
        raise ValidationError("bvalues must be non-negative", key="bvalues")
    if e.const_q not in (0, 1):
        raise ValidationError("const_q must be 0 or 1", key="const_q")
    for key in ("rtol_deff", "atol_deff", "rtol_bt", "atol_bt"):
        if not getattr(e, key) > 0:
            raise ValidationError(f"{key} must be positive", key=key)
    if e.ngdir < 1:
        raise ValidationError("ngdir must be >= 1", key="ngdir")
    for key in ("T2_IN", "T2_OUT", "T2_ECS"):
        if not getattr(d, key) > 0:
            raise ValidationError(f"{key} must be positive", key=key)


def parse_config(text: str) -> RunConfig:
    """Parse configuration text.

    Examples
    --------
    >>> cfg = parse_config("[cells]\\nncell = 3\\n[experiment]\\nnb = 1\\nbvalues = 0\\n")
    >>> cfg.cells.ncell, cfg.experiment.bvalues
    (3, (0.0,))
    """
    values = {s: {} for s in SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", line=lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ParseError("key outside any section", line=lineno, key=key)
        kinds = _KINDS[section]
        if key not in kinds:
            raise ParseError(f"unknown key in [{section}]", line=lineno, key=key)
        if key in values[section]:
            raise ParseError("duplicate key", line=lineno, key=key)
        values[section][key] = _parse_value(val, kinds[key], key, lineno)
    return RunConfig(**{s: _SECTION_TYPES[s](**values[s]) for s in SECTIONS})


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if ch in "'\"":
            quote = None if quote == ch else (ch if quote is None else quote)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, str):
        return shlex.quote(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Text form that parses back to an equal configuration."""
    out = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(sec):
            v = getattr(sec, f.name)
            text = " ".join(_fmt(x) for x in v) if isinstance(v, tuple) else _fmt(v)
            out.append(f"{f.name} = {text}")
        out.append("")
    return "\n".join(out)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Copy with some keys replaced, e.g. ``with_overrides(cfg, cells={"seed": 3})``."""
    parts = {s: replace(getattr(cfg, s), **sections.get(s, {})) for s in SECTIONS}
    return RunConfig(**parts)


__all__ = ["CellsSection", "DomainSection", "ExperimentSection", "RunConfig", "load_config",
           "parse_config", "serialize_config", "validate", "with_overrides"]
