import math

import numpy as np
import pytest

from conftest import SIGMA
from dmrisim.btpde import (BtpdeProblem, dump_magnetization, integrate_signal,
                           run_experiment_grid, solve_btpde)
from dmrisim.fem import assemble
from dmrisim.integrator import OdeTolerances
from dmrisim.mesh import CompartmentModel, mesh_box, split_double_nodes
from dmrisim.oracles import SpectralOracle1D, spectral_signal_1d
from dmrisim.sequences import PGSE, amplitude_from_b

SEQ = PGSE(2000.0, 5000.0)
LOOSE = OdeTolerances(1e-5, 1e-8)


def test_zero_gradient_keeps_uniform_density(two_slab):
    _, model, split = two_slab
    A = assemble(split, model)
    res = solve_btpde(BtpdeProblem(A, SEQ, (1, 0, 0), 0.0), LOOSE)
    assert np.allclose(res.y, A.initial_state(), atol=1e-12)


def test_zero_gradient_exchange_conserves_total(two_slab):
    _, model, split = two_slab
    A = assemble(split, model.with_rho([1.0, 0.4]))
    res = solve_btpde(BtpdeProblem(A, SEQ, (1, 0, 0), 0.0), LOOSE)
    sig = integrate_signal(res, A)
    assert sig.sum() == pytest.approx(1.4 * 1.25, rel=1e-12)
    # the membrane moves magnetization from the dense side to the sparse side
    assert sig[0].real < 1.25 and sig[1].real > 0.5


def test_uniform_T2_factors_out(slab_assembly):
    A0 = slab_assembly
    T2 = 40e3
    A1 = assemble(A0.mesh, A0.model.with_T2([T2]))
    g = amplitude_from_b(SEQ, 500.0)
    s0 = integrate_signal(solve_btpde(BtpdeProblem(A0, SEQ, (1, 0, 0), g), LOOSE), A0)[0]
    s1 = integrate_signal(solve_btpde(BtpdeProblem(A1, SEQ, (1, 0, 0), g), LOOSE), A1)[0]
    assert s1 * math.exp(SEQ.TE / T2) == pytest.approx(s0, rel=1e-4)


def test_matches_spectral_reference(slab_assembly):
    orc = SpectralOracle1D((10.0,), (SIGMA,))
    for b in (300.0, 1500.0):
        g = amplitude_from_b(SEQ, b)
        s = integrate_signal(solve_btpde(BtpdeProblem(slab_assembly, SEQ, (1, 0, 0), g),
                                         LOOSE), slab_assembly)[0]
        ref = spectral_signal_1d(orc, SEQ, g) * 2.5
        assert abs(s - ref) / 2.5 < 5e-3


def test_transverse_direction_is_nearly_free_of_phase(slab_assembly):
    # the 0.5 µm cross-section leaves almost no attenuation at moderate b
    g = amplitude_from_b(SEQ, 1000.0)
    s = integrate_signal(solve_btpde(BtpdeProblem(slab_assembly, SEQ, (0, 1, 0), g), LOOSE),
                         slab_assembly)[0]
    assert abs(s) / 2.5 > 0.995


def test_problem_validation(slab_assembly):
    with pytest.raises(ValueError):
        BtpdeProblem(slab_assembly, SEQ, (1, 0, 0), -1.0)
    p = BtpdeProblem(slab_assembly, SEQ, (2.0, 0, 0), 0.1)
    assert np.allclose(p.direction, [1, 0, 0])


def test_grid_layout_and_b0(two_slab):
    _, model, split = two_slab
    A = assemble(split, model)
    seqs = [SEQ, PGSE(1000.0, 3000.0)]
    gs = [amplitude_from_b(s, np.array([0.0, 500.0, 1500.0])) for s in seqs]
    dirs = [[1, 0, 0], [0, 0, 1]]
    r = run_experiment_grid(A, seqs, gs, dirs, LOOSE)
    assert r.MF_cmpts.shape == (2, 2, 3, 2)
    assert np.allclose(r.MF_allcmpts[:, 0, :], 2.5, rtol=1e-12)
    assert np.allclose(r.bvalues, [[0, 500, 1500]] * 2)
    mag = np.abs(r.MF_allcmpts[:, :, 0])
    assert np.all(np.diff(mag, axis=1) < 0)
    assert not r.failures


def test_grid_deterministic_across_threads(slab_assembly):
    gs = [amplitude_from_b(SEQ, np.array([0.0, 800.0]))]
    a = run_experiment_grid(slab_assembly, [SEQ], gs, [[1, 0, 0], [0, 1, 0]], LOOSE, threads=1)
    b = run_experiment_grid(slab_assembly, [SEQ], gs, [[1, 0, 0], [0, 1, 0]], LOOSE, threads=2)
    assert np.array_equal(a.MF_cmpts, b.MF_cmpts)


def test_grid_failure_is_recorded(slab_assembly):
    gs = [amplitude_from_b(SEQ, np.array([0.0, 800.0]))]
    r = run_experiment_grid(slab_assembly, [SEQ], gs, [[1, 0, 0]],
                            OdeTolerances(1e-6, 1e-9, max_steps=3))
    assert r.failures
    assert np.isnan(r.MF_cmpts).any()


def test_tiny_permeability_approaches_impermeable():
    mesh = mesh_box((10, 0.5, 0.5), 0.5, layers=[5, 5])
    base = CompartmentModel.uniform(2, mesh.nboundary, SIGMA)
    A0 = assemble(mesh, base)
    perm = base.with_kappa([1e-8, 0.0])
    A1 = assemble(split_double_nodes(mesh, perm), perm)
    g = amplitude_from_b(SEQ, 1000.0)
    s0 = integrate_signal(solve_btpde(BtpdeProblem(A0, SEQ, (1, 0, 0), g), LOOSE), A0).sum()
    s1 = integrate_signal(solve_btpde(BtpdeProblem(A1, SEQ, (1, 0, 0), g), LOOSE), A1).sum()
    assert abs(s1 - s0) / abs(s0) < 1e-4


def test_dump_magnetization(tmp_path, slab_assembly):
    res = solve_btpde(BtpdeProblem(slab_assembly, SEQ, (1, 0, 0), 0.05), LOOSE)
    dump_magnetization(res, tmp_path / "xi.txt")
    data = np.loadtxt(tmp_path / "xi.txt")
    assert np.allclose(data[:, 1] + 1j * data[:, 2], res.y, rtol=1e-15)
