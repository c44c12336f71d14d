from math import pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bethe_iba import iba, odeim
from bethe_iba.errors import DomainError, MatchFailure, RealAxisSingularity
from bethe_iba.partitions import Partition, partitions_of
from bethe_iba.special import alpha_context


def test_hermite_examples():
    assert odeim.hermite_wronskian(Partition(())).coeffs == (1,)
    assert odeim.hermite_wronskian(Partition((1,))).coeffs == (1, 0)
    assert odeim.hermite_wronskian(Partition((1, 1))).coeffs == (1, 0, 1)
    assert odeim.hermite_he(3).all_coeffs() == [1, 0, -3, 0]


def test_wronskian_degree_exhaustive():
    for N in range(0, 9):
        for nu in partitions_of(N):
            assert odeim.hermite_wronskian(nu).degree == N


def test_wronskian_roots_examples():
    assert np.allclose(odeim.wronskian_roots(odeim.WronskianPoly((1, 0))), [0.0])
    r = odeim.wronskian_roots(odeim.WronskianPoly((1, 0, 1)))
    assert np.allclose(sorted(r, key=lambda v: v.imag), [-1j, 1j], atol=1e-15)
    with pytest.raises(DomainError):
        odeim.wronskian_roots(odeim.WronskianPoly((1,)))


PARTS6 = [nu for N in range(1, 7) for nu in partitions_of(N)]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(PARTS6))
def test_vieta_and_conjugation(nu):
    P = odeim.hermite_wronskian(nu)
    r = odeim.wronskian_roots(P)
    c = P.coeffs
    assert abs(np.sum(r) + c[1] / c[0]) < 1e-9
    assert abs(np.prod(-r) - c[-1] / c[0]) < 1e-8 * max(1, abs(c[-1] / c[0]))
    assert np.allclose(np.sort_complex(r), np.sort_complex(np.conj(r)), atol=1e-10)


def test_seed_examples():
    ctx = alpha_context(2.0)
    ell = 12.0
    assert odeim.seed_z(ctx, Partition(()), ell).size == 0
    assert np.allclose(odeim.seed_z(ctx, Partition((1,)), ell), [ell ** 2 / 2])
    s = odeim.seed_z(ctx, Partition((1, 1)), ell)
    off = 6 ** 0.75 * ell ** 1.5 / 2
    assert np.allclose(sorted(s, key=lambda v: v.imag), [ell ** 2 / 2 - 1j * off, ell ** 2 / 2 + 1j * off])


@pytest.mark.parametrize("a", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("ell", [10.0, 20.0, 40.0])
def test_n1_closed_form(a, ell):
    ctx = alpha_context(a)
    m = odeim.solve_monster(ctx, ell, Partition((1,)))
    exact = (4 * ell * (ell + 1) + 1 - 4 * a * a) / (4 * a)
    assert abs(m.z[0] - exact) < 1e-12 * abs(exact)
    assert abs(odeim.monster_n1_exact(ctx, ell) - exact) < 1e-12 * exact
    seed_err = abs(odeim.seed_z(ctx, Partition((1,)), ell)[0] - exact)
    assert abs(seed_err - abs(4 * ell + 1 - 4 * a * a) / (4 * a)) < 1e-9 * ell
    assert seed_err < ell and seed_err < 0.06 * ell ** 2


def test_pair_solution():
    ctx = alpha_context(2.0)
    m = odeim.solve_monster(ctx, 30.0, Partition((1, 1)))
    assert m.residual < 1e-10 and m.iterations <= 20
    gap = np.abs(np.conj(m.z)[:, None] - m.z[None, :]).min(axis=1)
    assert np.all(gap < 1e-10 * np.abs(m.z))
    assert odeim.monster_residual(ctx, 30.0, m.z) < 1e-10


def test_potential_properties():
    ctx = alpha_context(2.0)
    t = np.linspace(0.1, 3, 50)
    assert np.allclose(odeim.potential(ctx, 2.0, (), t), 6 / t ** 2 + t ** 4)
    m = odeim.solve_monster(ctx, 30.0, Partition((1, 1)))
    v = odeim.potential(ctx, 30.0, m.z, np.geomspace(1e-3, 10, 200))
    assert np.max(np.abs(v.imag)) < 1e-12 * np.max(np.abs(v.real)) + 1e-12
    # correction term is finite as t -> 0
    corr = odeim.potential(ctx, 30.0, m.z, 1e-6) - odeim.potential(ctx, 30.0, (), 1e-6)
    assert np.isfinite(corr) and abs(corr) < 1.0


def test_potential_pole_detection():
    ctx = alpha_context(2.0)
    z = 2.0 ** 6                      # t^6 = z at t = 2
    with pytest.raises(RealAxisSingularity):
        odeim.potential(ctx, 1.0, [z], 2.0)
    with pytest.raises(RealAxisSingularity):
        odeim.eigenvalues(ctx, 1.0, [z], 1)


def test_alpha_one_harmonic_levels():
    E = odeim.eigenvalues(1.0, 1.0, (), 4)
    assert np.max(np.abs(E - np.array([5.0, 9.0, 13.0, 17.0]))) < 1e-6


def test_increasing_in_ell():
    ctx = alpha_context(2.0)
    E = [odeim.eigenvalues(ctx, ell, (), 3) for ell in (1.0, 2.0, 3.0)]
    assert np.all(np.diff(E[0]) > 0)
    assert np.all(E[1] > E[0]) and np.all(E[2] > E[1])


def test_wkb_levels_improve_with_ell():
    ctx = alpha_context(2.0)
    err = []
    for ell in (10.0, 30.0):
        ex = odeim.eigenvalues(ctx, ell, (), 2)
        wk = odeim.wkb_levels(ctx, ell, 2)
        assert np.all(np.diff(wk) > 0)
        err.append(np.max(np.abs(wk / ex - 1)))
    assert err[1] < err[0]


def test_pair_spectrum_is_real():
    ctx = alpha_context(2.0)
    m = odeim.solve_monster(ctx, 6.0, Partition((1, 1)))
    E = odeim.eigenvalues(ctx, 6.0, m.z, 2)
    assert np.all(np.isfinite(E)) and E[1] > E[0]


def test_dictionaries():
    ctx = alpha_context(2.0)
    assert abs(odeim.momentum_map(ctx, 14.5) - 10.0) < 1e-14
    assert abs(odeim.ell_from_momentum(ctx, odeim.momentum_map(ctx, 7.25)) - 7.25) < 1e-14
    c = odeim.cft_params(ctx, 1.0)
    assert abs(c.beta ** 2 - 1 / 3) < 1e-15 and abs(c.c + 7) < 1e-12
    with pytest.raises(DomainError):
        odeim.momentum_map(ctx, -1.0)


def test_eta_constant():
    ctx = alpha_context(2.0)
    assert abs(odeim.eta_constant(ctx) - ctx.eta) < 1e-14


def test_crosscheck_resolves_and_matches(excited10, ground10, ctx2):
    cc = odeim.crosscheck(ctx2, 10.0, Partition(()), range(0, 3), solution=ground10)
    assert (cc.eta_power, cc.ell_map) == (-1, "quarter")
    assert max(r["deviation"] for r in cc.rows) < 1e-9
    assert "eta^-1" in cc.header()
    with pytest.raises(RealAxisSingularity):
        odeim.crosscheck(ctx2, 10.0, Partition((1,)), range(0, 3), solution=excited10)


def test_resolve_convention_fails_loudly(ctx2, ground10):
    with pytest.raises(MatchFailure):
        odeim.resolve_convention(ctx2, 3 * ground10.roots[0], 10.0)
