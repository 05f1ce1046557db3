import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrisim.errors import StepLimitExceeded
from dmrisim.integrator import OdeTolerances, _snap, tr_bdf2


def _diag(vals):
    return sp.diags(np.asarray(vals, float)).tocsr()


def test_scalar_decay():
    lam = np.array([0.5, 2.0, 10.0])
    res = tr_bdf2(_diag([1, 1, 1]), _diag(lam), np.ones(3), (0.0, 2.0),
                  tol=OdeTolerances(1e-8, 1e-12))
    assert np.allclose(res.y, np.exp(-2.0 * lam), rtol=1e-5, atol=1e-10)
    assert res.nsteps > 0


def test_error_falls_with_tolerance():
    errs = []
    for rtol in (1e-4, 1e-6, 1e-8):
        res = tr_bdf2(_diag([1]), _diag([1.0]), np.ones(1), (0.0, 1.0),
                      tol=OdeTolerances(rtol, rtol * 1e-3))
        errs.append(abs(res.y[0] - math.exp(-1.0)))
    assert errs[0] > errs[1] > errs[2]


def test_complex_rotation_with_breakpoints():
    # y' = -i ω s(t) y with s = +1 then -1: the phase returns to zero
    omega = 3.0

    def coef(t, a, b):
        return 1.0 if 0.5 * (a + b) < 1.0 else -1.0

    res = tr_bdf2(_diag([1]), _diag([0.0]), np.ones(1), (0.0, 2.0),
                  L=sp.diags([1j * omega]).tocsr(), coef=coef, breakpoints=[1.0],
                  tol=OdeTolerances(1e-9, 1e-12))
    assert abs(res.y[0] - 1.0) < 1e-6


def test_source_term():
    # y' = -y + 1, y(0) = 0  ->  1 - e^{-t}
    res = tr_bdf2(_diag([1]), _diag([1.0]), np.zeros(1), (0.0, 3.0), src=lambda t: 1.0,
                  b=np.ones(1), tol=OdeTolerances(1e-9, 1e-12))
    assert res.y[0] == pytest.approx(1 - math.exp(-3.0), rel=1e-6)


def test_linear_invariant_preserved():
    rng = np.random.default_rng(0)
    n = 12
    W = rng.random((n, n))
    W = W + W.T
    np.fill_diagonal(W, 0.0)
    # graph Laplacian: columns sum to zero, so 1ᵀy is conserved
    K = np.diag(W.sum(axis=1)) - W
    y0 = rng.random(n)
    res = tr_bdf2(sp.eye(n, format="csr"), sp.csr_matrix(K), y0, (0.0, 1.0),
                  tol=OdeTolerances(1e-4, 1e-8))
    assert abs(res.y.sum() - y0.sum()) < 1e-12 * n


def test_observer_records_stages():
    res = tr_bdf2(_diag([1]), _diag([1.0]), np.ones(1), (0.0, 1.0),
                  observe=lambda y: float(y[0].real))
    t = np.array(res.record.t)
    assert t.shape == (res.nsteps, 3)
    assert np.all(np.diff(t.ravel()) >= 0)
    assert t[-1, 2] == pytest.approx(1.0)


def test_step_limit():
    with pytest.raises(StepLimitExceeded):
        tr_bdf2(_diag([1]), _diag([1.0]), np.ones(1), (0.0, 1000.0),
                tol=OdeTolerances(1e-10, 1e-14, max_steps=5))


def test_tolerance_validation():
    with pytest.raises(ValueError):
        OdeTolerances(0.0, 1e-9)
    with pytest.raises(ValueError):
        OdeTolerances(1e-6, -1.0)


def test_factorizations_are_reused():
    res = tr_bdf2(_diag([1] * 4), _diag([1.0, 2, 3, 4]), np.ones(4), (0.0, 50.0),
                  tol=OdeTolerances(1e-6, 1e-9))
    assert res.nfactor < res.nsteps


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_snap_grid(h):
    s = _snap(h)
    assert s <= h * (1 + 1e-12)
    assert s > h / 2 ** 0.25 * (1 - 1e-12)
    k = 4 * math.log2(s)
    assert abs(k - round(k)) < 1e-9
