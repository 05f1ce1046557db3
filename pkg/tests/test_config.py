import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrisim.config import (RunConfig, load_config, parse_config, serialize_config,
                            with_overrides)
from dmrisim.errors import ParseError, ValidationError
from dmrisim.sequences import bvalue

TEXT = """
# two cylinders with an ECS box
[cells]
cell_shape = 2
ncell = 2
Rmin = 2   # µm
Rmax = 3
para_deform = 0.01 0.0
[domain]
include_ECS = 1
kappa_IN_OUT = 1e-5
T2_IN = inf
[experiment]
ngdir = 3
nexperi = 2
sdeltavec = 1000 2000
bdeltavec = 3000 5000
seqvec = 1 3
npervec = 0 2
nb = 3
bvalues = 0 500 1000
"""


def test_parse_example():
    cfg = parse_config(TEXT)
    assert cfg.shape == "cylinder" and cfg.ecs_mode == "box"
    assert cfg.cells.para_deform == (0.01, 0.0)
    assert cfg.domain.T2_IN == math.inf
    assert cfg.cell_config().alpha_bend == 0.01
    seqs = cfg.sequences()
    assert [s.kind for s in seqs] == ["PGSE", "OGSE_cos"]
    assert cfg.directions().shape == (3, 3)


def test_roundtrip(tmp_path):
    cfg = parse_config(TEXT)
    assert parse_config(serialize_config(cfg)) == cfg
    (tmp_path / "c.txt").write_text(serialize_config(cfg))
    assert load_config(tmp_path / "c.txt") == cfg


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.floats(0.5, 3.0), st.floats(0.0, 2.0), st.integers(0, 2**31),
       st.floats(1e-6, 1e-2), st.text("abcxyz_/.", min_size=1, max_size=12))
def test_roundtrip_property(ncell, rmin, extra, seed, kappa, cmd):
    cfg = with_overrides(RunConfig(), cells={"ncell": ncell, "Rmin": rmin, "Rmax": rmin + extra,
                                             "seed": seed},
                         domain={"kappa_IN_OUT": kappa, "tetgen_cmd": cmd})
    assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_and_duplicate_keys():
    with pytest.raises(ParseError) as exc:
        parse_config("[cells]\nncells = 2\n")
    assert exc.value.key == "ncells" and exc.value.line == 2
    with pytest.raises(ParseError) as exc:
        parse_config("[cells]\nncell = 2\nncell = 3\n")
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        parse_config("[nowhere]\n")
    with pytest.raises(ParseError):
        parse_config("ncell = 2\n")
    with pytest.raises(ParseError):
        parse_config("[cells]\nncell = two\n")
    with pytest.raises(ParseError):
        parse_config("[cells]\nncell = 2.5\n")


def test_validation_errors():
    with pytest.raises(ValidationError) as exc:
        parse_config("[experiment]\nnb = 3\nbvalues = 0 1000\n")
    assert exc.value.key == "bvalues"
    with pytest.raises(ValidationError):
        parse_config("[experiment]\nseqvec = 7\n")
    with pytest.raises(ValidationError):
        parse_config("[experiment]\nnexperi = 2\n")
    with pytest.raises(ValidationError):
        parse_config("[domain]\nT2_IN = 0\n")
    with pytest.raises(ValidationError):
        parse_config("[experiment]\nseqvec = 5\n")
    with pytest.raises(ValidationError):
        parse_config("[cells]\ncell_shape = 3\n")


def test_const_q_grid():
    cfg = parse_config(TEXT)
    cfg = with_overrides(cfg, experiment={"const_q": 1})
    seqs = cfg.sequences()
    bs, gs = cfg.gradient_grid(seqs)
    assert np.array_equal(gs[0], gs[1])
    assert bs[0] == pytest.approx([0, 500, 1000])
    assert bs[1, 2] == pytest.approx(bvalue(seqs[1], gs[0, 2]))


@pytest.mark.parametrize("blimit", [1, 2])
def test_blimit_ranges(blimit):
    cfg = with_overrides(RunConfig(), experiment={"blimit": blimit, "nb": 4,
                                                  "bvalues": (0.0, 0.3)})
    bs, gs = cfg.gradient_grid(cfg.sequences())
    if blimit == 1:
        assert bs[0] == pytest.approx(np.linspace(0, 0.3, 4))
    else:
        assert gs[0] == pytest.approx(np.linspace(0, 0.3, 4))


def test_profile_file(tmp_path):
    np.savetxt(tmp_path / "p.txt", [[0, 1], [10, 1], [10, -1], [20, -1]])
    cfg = parse_config("[experiment]\nseqvec = 5\nprofile_files = p.txt\n")
    seq = cfg.sequences(base_dir=tmp_path)[0]
    assert seq.kind == "piecewise"
    assert seq.TE == 20.0
