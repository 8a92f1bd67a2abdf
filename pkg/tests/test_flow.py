import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfrep.flow import (STATUS_OK, GridExhausted, NotConverged, constant_driver, default_grid,
                          estimate_bifurcation, evolve_flow, flow_local_times, flow_trace,
                          sample_driver, trace_inverse)


def test_flat_driver_lines_move_at_unit_speed():
    d = constant_driver(1e-3, 1000)
    fl = evolve_flow(d, np.array([-1.0, 0.0, 1.0]))
    assert np.allclose(fl.psi[:, 2], 1 + fl.u, rtol=0, atol=1e-12)
    assert np.allclose(fl.psi[:, 0], -1 - fl.u, rtol=0, atol=1e-12)
    assert not np.any(fl.psi[:, 1])


def test_flat_driver_bifurcates_at_zero():
    d = constant_driver(1e-3, 2000)
    fl = evolve_flow(d, np.linspace(-1, 1, 201))
    tr = trace_inverse(fl, d)
    assert tr.y_bif == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2**31))
def test_flow_invariants(seed):
    d = sample_driver(1e-3, 2000, seed)
    fl = evolve_flow(d, default_grid(d, 0.02))
    assert np.all(np.diff(fl.psi, axis=1) > 0)
    assert np.all(np.abs(np.diff(fl.psi, axis=0)) <= d.du * (1 + 1e-9))
    assert np.array_equal(fl.psi[0], fl.y)
    lt = flow_local_times(fl).values
    assert not np.any(lt[0])
    assert np.all(np.diff(lt, axis=0) >= -1e-9)


@given(st.integers(0, 2**31))
def test_trace_matches_driver(seed):
    d = sample_driver(1e-3, 1000, seed)
    fl = evolve_flow(d, default_grid(d, 0.01))
    tr = trace_inverse(fl, d)
    assert tr.xi[0] == pytest.approx(0.0, abs=1e-12)
    # Psi_u(xi_u) = B_u up to one interpolation cell
    for s in (1, 250, 999):
        j = np.searchsorted(fl.y, tr.xi[s]) - 1
        assert fl.psi[s, j] - 1e-12 <= d.values[s] <= fl.psi[s, j + 1] + 1e-12


def test_grid_exhaustion_names_time():
    d = sample_driver(1e-2, 2000, 1)
    with pytest.raises(GridExhausted) as err:
        evolve_flow(d, np.array([-0.01, 0.01]) + 5.0)
    assert err.value.args


def test_not_converged_raises():
    d = sample_driver(1e-3, 100, 3)
    fl = evolve_flow(d, default_grid(d))
    tr = trace_inverse(fl, d, tol=1e-12)
    with pytest.raises(NotConverged):
        estimate_bifurcation(tr, fl)


def test_bifurcation_separates_lines():
    d = sample_driver(1e-3, 40_000, 8)
    y = default_grid(d, 0.01)
    fl = evolve_flow(d, y, snapshot_every=400)
    tr = trace_inverse(fl, d, tol=0.05)
    yb, lam, dominant = estimate_bifurcation(tr, fl)
    tail = slice(int(0.9 * len(fl.steps)), None)
    B = d.values[fl.steps[tail]]
    above = y > yb + 0.3
    below = y < yb - 0.3
    assert np.all(fl.psi[tail][:, above] > B[:, None])
    assert np.all(fl.psi[tail][:, below] < B[:, None])
    assert dominant and lam > 0


def test_sparse_kernel_matches_dense():
    du, n = 1e-3, 3000
    d = sample_driver(du, n, 21)
    y = default_grid(d, 0.01)
    dense = evolve_flow(d, y)
    tr = trace_inverse(dense, d)
    inc = np.diff(d.values)
    sp = flow_trace(n, du, y, increments=inc)
    assert sp.status == STATUS_OK
    assert np.allclose(sp.final_psi, dense.psi[-1], atol=1e-9)
    assert sp.xi_end == pytest.approx(tr.xi[-1], abs=1e-9)


def test_refinement_shrinks_trace_error():
    # the same Brownian path sampled at du, du/4, du/16: the trace settles as du shrinks
    rng = np.random.default_rng(0)
    fine = 1e-5
    n = 100_000
    B = np.concatenate(([0.0], np.cumsum(rng.standard_normal(n) * np.sqrt(fine))))
    y = np.arange(-3, 3.0001, 0.01)
    ref = flow_trace(n, fine, y, increments=np.diff(B)).xi_end
    errs = []
    for k in (64, 16, 4):
        Bk = B[::k]
        errs.append(abs(flow_trace(Bk.size - 1, fine * k, y, increments=np.diff(Bk)).xi_end - ref))
    assert errs[-1] <= errs[0]
