import random

import pytest
from gmpy2 import mpq
from hypothesis import given, strategies as st

from magbnf.bnf import (birkhoff, commutant_residuals, conjugation_residual, effective_symbol, h2_symbol,
                        homological_solve, reconstruct, reorder_star)
from magbnf.errors import ResonanceError
from magbnf.poly import Poly
from magbnf.weylalg import E1, GradedSeries, oscillator, random_series

seeds = st.integers(0, 100_000)


def _apply_homological(rho, freqs):
    out = rho.like()
    for j, f in enumerate(freqs):
        osc = oscillator(rho.alg, j, rho.N, rho.T)
        out = out + osc.bracket_over_ih(rho).scale(f)
    return out


def test_homological_single_monomial():
    alg = E1(1, 0)
    R = GradedSeries.parse(alg, "x1^2 - xi1^2", 4)  # Re z^2
    one = [Poly.const(alg.nbase, mpq(1))]
    K, rho = homological_solve(R, one)
    assert K.is_zero()
    assert _apply_homological(rho, [1]) == R


def test_homological_diagonal_goes_to_kernel():
    alg = E1(1, 0)
    R = GradedSeries.parse(alg, "hbar*(x1^2 + xi1^2)", 6)
    K, rho = homological_solve(R, [Poly.const(alg.nbase, mpq(1))])
    assert K == R and rho.is_zero()


def test_homological_resonance_is_reported():
    alg = E1(2, 0)
    R = GradedSeries.parse(alg, "(x1^2 - xi1^2)*x2 + 2*x1*xi1*xi2", 5)  # Re z1^2 zbar2
    freqs = [Poly.const(alg.nbase, mpq(1)), Poly.const(alg.nbase, mpq(2))]
    with pytest.raises(ResonanceError) as info:
        homological_solve(R, freqs)
    assert info.value.assumption == 3


@given(seeds)
def test_homological_identity_random(seed):
    alg = E1(2, 1)
    rng = random.Random(seed)
    R = random_series(alg, 5, 2, rng, nterms=10, min_degree=4, fiber_max=4).project_degree(4)
    freqs = [Poly.const(alg.nbase, mpq(1)), Poly.const(alg.nbase, mpq(7, 5))]
    K, rho = homological_solve(R, freqs)
    assert K + _apply_homological(rho, freqs) == R
    assert all(c.is_zero() for c in commutant_residuals(K, 6))


def test_birkhoff_trivial():
    alg = E1(1, 0)
    tab = birkhoff(h2_symbol(alg, [1], N=6), 6)
    assert tab.kappa.is_zero() and tab.rho.is_zero() and tab.residual.is_zero()


def test_birkhoff_quartic_is_already_normal():
    alg = E1(1, 0)
    eps = mpq(1, 100)
    S = GradedSeries.parse(alg, "x1^2 + xi1^2 + (x1^2 + xi1^2)^2/100", 8, 2)
    tab = birkhoff(S, 8)
    assert tab.rho.is_zero()
    entries = tab.entry_map()
    assert entries[((2,), (), 0)].constant() == eps
    assert entries[((0,), (), 2)].constant() == eps


def test_birkhoff_odd_cubic():
    alg = E1(1, 0)
    S = GradedSeries.parse(alg, "x1^2 + xi1^2 + x1^3", 6, 2)
    tab = birkhoff(S, 6)
    assert not tab.rho.is_zero()
    assert tab.kappa.project_degree(3).is_zero()
    assert not tab.kappa.project_degree(4).is_zero()
    assert conjugation_residual(tab, S).is_zero()


@pytest.mark.parametrize("s,k", [(1, 0), (1, 1), (2, 0)])
def test_birkhoff_contract_random(s, k):
    rng = random.Random(17 + s + k)
    alg = E1(s, k)
    r = 6
    betas = [mpq(1), mpq(7, 5)][:s]
    H = h2_symbol(alg, betas, [[1 if i == j else 0 for j in range(k)] for i in range(k)], N=r, T=1)
    g = random_series(alg, r, 1, rng, nterms=12, base_max=1, min_degree=3, fiber_max=r - 1)
    tab = birkhoff(H + g, r)
    assert all(c.is_zero() for c in commutant_residuals(tab.kappa, r))
    assert conjugation_residual(tab, H + g).is_zero()
    assert tab.residual.valuation() >= r
    assert tab.kappa.is_real() and tab.rho.is_real()


def test_reorder_examples():
    alg = E1(1, 1)
    z4 = GradedSeries.parse(alg, "(x1^2 + xi1^2)^2", 6)
    assert {k: v.constant() for k, v in reorder_star(z4).items()} == {((2,), (0,), 0): 1, ((0,), (0,), 2): 1}
    z2 = GradedSeries.parse(alg, "x1^2 + xi1^2", 6)
    assert {k: v.constant() for k, v in reorder_star(z2).items()} == {((1,), (0,), 0): 1}
    th = GradedSeries.parse(alg, "tau1*hbar", 6)
    assert set(reorder_star(th)) == {((0,), (1,), 1)}


@given(seeds)
def test_reorder_round_trip(seed):
    alg = E1(2, 1)
    rng = random.Random(seed)
    kap = GradedSeries.zero(alg, 8, 2)
    for _ in range(6):
        a1, a2, t, l = rng.randint(0, 2), rng.randint(0, 1), rng.randint(0, 1), rng.randint(0, 1)
        text = f"{rng.randint(1, 5)}/{rng.randint(1, 4)}*(x1^2+xi1^2)^{a1}*(x2^2+xi2^2)^{a2}*tau1^{t}*hbar^{l}"
        kap = kap + GradedSeries.parse(alg, text, 8, 2)
    assert reconstruct(alg, reorder_star(kap), 8, 2) == kap


def test_effective_symbol_trivial_table():
    alg = E1(1, 1)
    H = h2_symbol(alg, [Poly(alg.nbase, {(0, 0, 0): mpq(1), (1, 0, 0): mpq(1)})], [[1]], N=5)
    tab = birkhoff(H, 5)
    n1 = effective_symbol(tab, (1,))
    names = ["y1", "eta1", "t1", "tau1", "hbar"]
    from magbnf.expr import parse_poly
    assert n1 == parse_poly("tau1^2 + hbar*(1 + y1)", names)


def test_effective_symbol_anharmonic():
    alg = E1(1, 0)
    S = GradedSeries.parse(alg, "x1^2 + xi1^2 + (x1^2 + xi1^2)^2/100", 8, 2)
    tab = birkhoff(S, 8)
    for n in (1, 2, 3):
        sym = effective_symbol(tab, (n,))
        expected = {(0, 0, 1): mpq(2 * n - 1), (0, 0, 2): mpq((2 * n - 1) ** 2 + 1, 100)}
        assert sym.terms == expected
    with pytest.raises(ValueError):
        effective_symbol(tab, (0,))
