import json
from pathlib import Path

import numpy as np
import pytest

from dmrisim import cli
from dmrisim.analysis import sta_adc

CFG = Path(__file__).parent / "data" / "cylinder.cfg"


def _call(capsys, argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else None), out.err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "dmrisim" in capsys.readouterr().out


def test_geometry(capsys, tmp_path):
    code, doc, _ = _call(capsys, ["geometry", "--config", CFG, "--out", tmp_path])
    assert code == 0
    assert doc["ncell"] == 1 and doc["ncompartment"] == 1
    assert (tmp_path / "surface.ply").exists() and (tmp_path / "surface.poly").exists()


def test_mesh_and_reimport(capsys, tmp_path):
    code, doc, _ = _call(capsys, ["mesh", "--config", CFG, "--out", tmp_path])
    assert code == 0 and doc["ntet"] > 0
    code, again, _ = _call(capsys, ["mesh", "--mesh-in", tmp_path / "mesh"])
    assert code == 0
    assert again["ntet"] == doc["ntet"]
    assert again["volume"] == pytest.approx(doc["volume"], rel=1e-12)


def test_hadc_subcommand(capsys, tmp_path):
    code, doc, _ = _call(capsys, ["hadc", "--config", CFG, "--out", tmp_path])
    assert code == 0
    res = json.loads((tmp_path / "result.json").read_text())
    assert "MF_cmpts" not in res and res["meta"]["adc_source"] == "hadc"
    assert 0 < doc["ADC_allcmpts"][0] < 2e-3


def test_btpde_and_compare(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _call(capsys, ["btpde", "--config", CFG, "--out", a])[0] == 0
    assert _call(capsys, ["run", "--config", CFG, "--out", b])[0] == 0
    code, doc, _ = _call(capsys, ["compare", a / "result.json", b / "result.json"])
    assert code == 0
    assert doc[0]["max_E"] == pytest.approx(0.0, abs=1e-12)


def test_compare_needs_signals(capsys, tmp_path):
    assert _call(capsys, ["hadc", "--config", CFG, "--out", tmp_path])[0] == 0
    r = tmp_path / "result.json"
    assert _call(capsys, ["compare", r, r])[0] == 2


def test_sta(capsys):
    code, doc, _ = _call(capsys, ["sta", "--sigma", 2e-3, "--delta", 2500, "--Delta", 5000,
                                  "--A-ug", 30.0, "--V", 100.0])
    assert code == 0
    assert doc["adc"] == pytest.approx(sta_adc(2e-3, 2500, 5000, 30.0, 100.0).adc, rel=1e-12)


def test_fit(capsys, tmp_path):
    b = np.array([0.0, 200.0, 400.0, 800.0])
    f = tmp_path / "curve.csv"
    np.savetxt(f, np.c_[b, np.exp(-1.5e-3 * b)], delimiter=",")
    code, doc, _ = _call(capsys, ["fit", f])
    assert code == 0
    assert doc["adc"] == pytest.approx(1.5e-3, rel=1e-6)


def test_fit_nonpositive_signal(capsys, tmp_path):
    f = tmp_path / "curve.csv"
    f.write_text("0,1\n500,0\n1000,-0.1\n")
    assert _call(capsys, ["fit", f])[0] == 4


def test_oracle_free_and_spectral(capsys):
    code, doc, _ = _call(capsys, ["oracle", "free", "--bvalues", 0, 1000])
    assert code == 0
    assert doc["signal"][1] == pytest.approx(np.exp(-2.0), rel=1e-12)
    code, doc, _ = _call(capsys, ["oracle", "spectral", "--bvalues", 0, 1000, "--lengths", 10])
    assert code == 0
    assert doc["signal"][0]["re"] == pytest.approx(1.0, rel=1e-10)
    assert 0 < doc["signal"][1]["re"] < 1


def test_oracle_walker(capsys):
    code, doc, _ = _call(capsys, ["oracle", "walker", "--spins", 100, "--steps", 50,
                                  "--level", 1, "--seed", 3, "--bvalues", 0, 500])
    assert code == 0
    assert doc["signal"][0]["re"] == pytest.approx(1.0)
    assert doc["backend"] in ("compiled", "numpy")


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(CFG.read_text().replace("[domain]", "bogus_key = 1\n[domain]"))
    code, _, err = _call(capsys, ["run", "--config", bad])
    assert code == 2 and "bogus_key" in err
    assert _call(capsys, ["run", "--config", tmp_path / "missing.cfg"])[0] == 2


def test_missing_mesher(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SPIN_MESHER", "definitely-not-a-mesher-xyz")
    cfg = tmp_path / "spheres.cfg"
    text = CFG.read_text().replace("cell_shape = 2", "cell_shape = 1").replace(
        "ncell = 1", "ncell = 2").replace("Rmin = 3", "Rmin = 2").replace("Rmax = 3", "Rmax = 2")
    cfg.write_text(text)
    code, _, _ = _call(capsys, ["run", "--config", cfg, "--out", tmp_path / "o"])
    assert code == 3
    assert json.loads((tmp_path / "o" / "failure.json").read_text())["stage"] == "mesh"
