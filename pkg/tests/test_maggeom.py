import math

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given, strategies as st

from magbnf.errors import ConfigError, DegenerateWellError, RankAmbiguityError
from magbnf.expr import parse_poly
from magbnf.maggeom import (betas_at, bmatrix_at, find_well, intensity, make_field, parse_field,
                            resonance_order, skew_eigen, spectrum_at, two_form)

from conftest import WELL2D, WELL3D

NAMES3 = ["q1", "q2", "q3"]


def test_parse_constant_field():
    spec = parse_field('dimension = 2\npotential = ["-q2/2", "q1/2"]\n')
    B = two_form(spec)
    assert B.B[0][1] == 1
    assert spec.flat


def test_default_metric_is_identity():
    spec = parse_field('dimension = 3\npotential = ["0", "q1", "0"]\n')
    assert np.array_equal(spec.metric_at([0.3, 1, 2]), np.eye(3))


def test_well2d_two_form():
    spec = make_field(WELL2D)
    assert two_form(spec).B[0][1] == parse_poly("1 + 2*q1^2 + 2*q2^2", ["q1", "q2"])


def test_asymmetric_metric_rejected():
    text = 'dimension = 2\npotential = ["0", "q1"]\nmetric = [["1", "q1"], ["0", "1"]]\n'
    with pytest.raises(ConfigError, match="asymmetric"):
        parse_field(text)


def test_syntax_error_reports_line():
    text = 'dimension = 2\npotential = ["0",\n "q1 + *"]\n'
    with pytest.raises(Exception) as info:
        parse_field(text)
    assert "line 3" in str(info.value)


def test_three_dimensional_two_form():
    spec = make_field(["-q2*(1 + q3^2)/2", "q1*(1 + q3^2)/2", "0"])
    B = two_form(spec).B
    assert B[0][1] == parse_poly("1 + q3^2", NAMES3)
    assert B[0][2] == parse_poly("q2*q3", NAMES3)
    assert B[1][2] == parse_poly("-q1*q3", NAMES3)


def test_exact_form_has_no_field():
    chi = parse_poly("q1^3*q2 - q2*q3^2 + 5*q1", NAMES3)
    spec = make_field([str(chi.diff(i).to_string(NAMES3)) for i in range(3)])
    assert all(b.is_zero() for row in two_form(spec).B for b in row)
    assert np.all(bmatrix_at(spec, two_form(spec), [0.2, 0.1, -0.4]) == 0)


def test_bmatrix_flat_2d():
    spec = make_field(["-3*q2/2", "3*q1/2"])
    bm = bmatrix_at(spec, two_form(spec), [0.1, 0.2])
    assert np.allclose(bm, [[0, 3], [-3, 0]])
    assert np.allclose(np.sort(np.abs(np.linalg.eigvals(bm).imag)), [3, 3])


def test_metric_scaling_example():
    spec = make_field(["-q2/2", "q1/2"], metric=[["4", "0"], ["0", "4"]])
    assert betas_at(spec, [0.0, 0.0]) == pytest.approx([0.25], abs=1e-14)


def test_skew_eigen_block_examples():
    sp = skew_eigen(np.array([[0, 1.0], [-1.0, 0]]), np.eye(2))
    assert (sp.s, sp.k) == (1, 0) and sp.betas[0] == pytest.approx(1.0)
    b3 = np.zeros((3, 3))
    b3[0, 1], b3[1, 0] = 1, -1
    sp = skew_eigen(b3, np.eye(3))
    assert (sp.s, sp.k) == (1, 1)
    assert np.allclose(sp.w[:, 0], [0, 0, 1])
    b4 = np.zeros((4, 4))
    b4[0, 1], b4[1, 0], b4[2, 3], b4[3, 2] = 1, -1, 2, -2
    sp = skew_eigen(b4, np.eye(4))
    assert sp.betas == pytest.approx([2, 1])


def test_rank_ambiguity_is_an_error():
    b = np.zeros((4, 4))
    b[0, 1], b[1, 0] = 1, -1
    b[2, 3], b[3, 2] = 1e-8, -1e-8
    with pytest.raises(RankAmbiguityError):
        skew_eigen(b, np.eye(4))


def _random_field(seed, d):
    rng = np.random.default_rng(seed)
    names = [f"q{i + 1}" for i in range(d)]
    pot = []
    for _ in range(d):
        terms = []
        for _ in range(4):
            e = rng.integers(0, 3, size=d)
            c = int(rng.integers(-4, 5))
            terms.append(f"({c})*" + "*".join(f"{n}^{k}" for n, k in zip(names, e)))
        pot.append(" + ".join(terms))
    return make_field(pot, box=[1] * d)


@given(st.integers(0, 10_000), st.sampled_from([2, 3, 4]))
def test_frame_invariants_on_random_fields(seed, d):
    spec = _random_field(seed, d)
    rng = np.random.default_rng(seed)
    q = rng.uniform(-0.8, 0.8, size=d)
    try:
        sp = spectrum_at(spec, q)
    except RankAmbiguityError:
        return
    bm, g = sp.bmat, sp.metric
    assert np.allclose(g @ bm + bm.T @ g, 0, atol=1e-12)
    scale = max(1.0, np.abs(bm).max())
    for j, beta in enumerate(sp.betas):
        assert np.allclose(bm @ sp.u[:, j], -beta * sp.v[:, j], atol=1e-10 * scale)
        assert np.allclose(bm @ sp.v[:, j], beta * sp.u[:, j], atol=1e-10 * scale)
    F = np.hstack([sp.u, sp.v, sp.w])
    assert np.allclose(F.T @ g @ F, np.eye(d), atol=1e-10)
    # trace identity
    assert np.sum(sp.betas ** 2) == pytest.approx(-0.5 * np.trace(bm @ bm), rel=1e-10, abs=1e-12)
    assert np.all(np.diff(sp.betas) < 0) or len(sp.betas) < 2


@given(st.integers(0, 10_000), st.sampled_from([2, 3]))
def test_gauge_invariance_of_geometry(seed, d):
    spec = _random_field(seed, d)
    names = [f"q{i + 1}" for i in range(d)]
    chi = " + ".join(f"{(seed % 7) - 3}*{n}^3*{names[(i + 1) % d]}" for i, n in enumerate(names))
    shifted = spec.gauge_shift(chi)
    B1, B2 = two_form(spec), two_form(shifted)
    assert all(B1.B[i][j] == B2.B[i][j] for i in range(d) for j in range(d))
    q = np.random.default_rng(seed).uniform(-1, 1, size=d)
    assert betas_at(spec, q) == pytest.approx(betas_at(shifted, q), abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_metric_scaling_property(seed, c):
    d = 3
    spec = _random_field(seed, d)
    scaled = make_field([p.to_string([f"q{i + 1}" for i in range(d)]) for p in spec.potential],
                        metric=[[repr(c) if i == j else "0" for j in range(d)] for i in range(d)], box=[1] * d)
    q = np.random.default_rng(seed).uniform(-1, 1, size=d)
    assert betas_at(scaled, q) == pytest.approx(betas_at(spec, q) / c, rel=1e-10, abs=1e-12)


def test_intensity_examples(field3d):
    assert intensity(make_field(["-q2/2", "q1/2"]), [0.7, -0.2]) == pytest.approx(1.0)
    assert intensity(field3d, [0, 0, 0]) == pytest.approx(1.0)
    spec2 = make_field(WELL2D)
    q = np.array([0.3, -0.4])
    assert intensity(spec2, q) == pytest.approx(1 + 2 * q @ q, rel=1e-13)


def test_intensity_squared_closed_form(field3d):
    rng = np.random.default_rng(5)
    for q in rng.uniform(-1, 1, size=(5, 3)):
        r2 = q[0] ** 2 + q[1] ** 2
        b2 = (1 + 2 * r2 + q[2] ** 2) ** 2 + q[2] ** 2 * r2
        assert intensity(field3d, q) ** 2 == pytest.approx(b2, rel=1e-12)


def test_find_well_2d(field2d):
    w = find_well(field2d)
    assert np.allclose(w.q0, 0, atol=1e-7)
    assert w.b0 == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w.hess_b, np.diag([4, 4]), atol=1e-6)
    assert w.assumption_flags["assumption1"] and w.assumption_flags["assumption3"]


def test_find_well_3d(field3d):
    w = find_well(field3d)
    assert np.allclose(w.q0, 0, atol=1e-7)
    assert np.allclose(w.hess_b, np.diag([4, 4, 2]), atol=1e-6)
    assert (w.s, w.k) == (1, 1)


def test_constant_field_has_degenerate_well():
    with pytest.raises(DegenerateWellError):
        find_well(make_field(["-q2/2", "q1/2"], well_guess=[0.1, 0.1]))


def test_resonance_order_examples():
    assert resonance_order([1], 10) == 10
    assert resonance_order([1, 2], 10) == 3
    assert resonance_order([1, math.sqrt(2)], 8) == 8


@given(st.lists(st.integers(1, 9), min_size=1, max_size=3), st.integers(1, 9))
def test_resonance_order_monotone(values, extra):
    before = resonance_order(values, 8)
    after = resonance_order(values + [extra], 8)
    assert 2 <= after <= before
