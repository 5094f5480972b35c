import math

import numpy as np
import pytest
import scipy.io

from magbnf.errors import ConfigError, NonConvergenceError
from magbnf.expr import parse_poly
from magbnf.maggeom import make_field
from magbnf.numverify import (EigRow, EigTable, build_grid_operator, fit_powers, localization_widths,
                              lowest_eigs, peierls_matrix, run_grid)
from magbnf.spectra import SpectralPrediction

from conftest import WELL2D

CONST = ["-q2/2", "q1/2"]


def _diag_gauge(op, chi_text, names):
    chi = parse_poly(chi_text, names)
    pts = np.meshgrid(*op.axes(), indexing="ij")
    vals = np.asarray(chi.to_float().evaluate(tuple(pts)), dtype=float) * np.ones(pts[0].shape)
    return np.exp(1j * vals.ravel() / op.hbar), chi


def test_peierls_tridiagonal_by_hand():
    hbar, h = 0.5, 0.25
    c = hbar ** 2 / h ** 2
    theta = 0.3
    H = peierls_matrix({0: np.exp(1j * theta) * np.ones(4)}, (3,), [h], hbar).toarray()
    e = np.exp(1j * theta)
    expected = c * np.array([[2, -e, 0], [-np.conj(e), 2, -e], [0, -np.conj(e), 2]])
    assert np.allclose(H, expected, atol=1e-14)


def test_free_spectrum_discrete_sines():
    spec = make_field(["0", "0"], box=[1, 1])
    n = 20
    op = build_grid_operator(spec, n_per_axis=n, hbar=1.0)
    h = 2.0 / (n + 1)
    one = [4 / h ** 2 * math.sin(j * math.pi / (2 * (n + 1))) ** 2 for j in range(1, n + 1)]
    exact = sorted(a + b for a in one for b in one)[:6]
    got = [r.eigenvalue for r in lowest_eigs(op, 6)]
    assert got == pytest.approx(exact, abs=1e-10)


def test_gauge_conjugation_peierls(field2d):
    chi = "q1*q2/3 + q1^3/5"
    op = build_grid_operator(field2d, [2, 2], 24, 0.5)
    D, poly = _diag_gauge(op, chi, field2d.names)
    op2 = build_grid_operator(field2d, [2, 2], 24, 0.5, gauge_shift=poly)
    Hc = (D[:, None] * op.matrix.toarray()) * D.conj()[None, :]
    assert np.abs(op2.matrix.toarray() - Hc).max() < 1e-10


def test_gauge_conjugation_metric():
    spec = make_field(WELL2D, metric=[["1 + q1^2/4", "q1*q2/8"], ["q1*q2/8", "1 + q2^2/4"]], box=[2, 2])
    op = build_grid_operator(spec, n_per_axis=20, hbar=0.5)
    assert op.scheme == "cell"
    D, poly = _diag_gauge(op, "q1*q2/2 - q2^3/7", spec.names)
    op2 = build_grid_operator(spec, n_per_axis=20, hbar=0.5, gauge_shift=poly)
    Hc = (D[:, None] * op.matrix.toarray()) * D.conj()[None, :]
    assert np.abs(op2.matrix.toarray() - Hc).max() < 1e-10
    H = op.matrix.toarray()
    assert np.abs(H - H.conj().T).max() < 1e-12
    assert np.linalg.eigvalsh(H).min() > -1e-10


def test_cell_scheme_equals_peierls_on_flat_metric(field2d):
    a = build_grid_operator(field2d, [2, 2], 20, 0.3)
    b = build_grid_operator(field2d, [2, 2], 20, 0.3, scheme="cell")
    assert a.scheme == "peierls"
    assert abs(a.matrix - b.matrix).max() < 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_conformal_metric_scaling(d):
    pot = CONST + ["0"] * (d - 2)
    c = 2
    metric = [[str(c) if i == j else "0" for j in range(d)] for i in range(d)]
    flat = make_field(pot, box=[3] * d)
    conf = make_field(pot, metric=metric, box=[3] * d)
    A = build_grid_operator(flat, n_per_axis=16, hbar=0.5).matrix
    B = build_grid_operator(conf, n_per_axis=16, hbar=0.5).matrix
    # Laplace-Beltrami for g = c I is the flat one divided by c
    assert abs(A - c * B).max() < 1e-12


def test_peierls_rejected_for_curved_metric():
    spec = make_field(CONST, metric=[["1 + q1^2", "0"], ["0", "1"]], box=[2, 2])
    with pytest.raises(ConfigError):
        build_grid_operator(spec, n_per_axis=16, scheme="peierls")


def test_grid_convergence_is_second_order(field2d):
    lam = [lowest_eigs(build_grid_operator(field2d, [3, 3], n, 0.5), 1)[0].eigenvalue for n in (15 + 1, 31 + 1)]
    lam.append(lowest_eigs(build_grid_operator(field2d, [3, 3], 63 + 1, 0.5), 1, method="shift-invert")[0].eigenvalue)
    ratio = (lam[0] - lam[1]) / (lam[1] - lam[2])
    assert 3.5 < ratio < 4.5


def test_solvers_agree(field2d):
    op = build_grid_operator(field2d, [2, 2], 40, 0.2)
    dense = [r.eigenvalue for r in lowest_eigs(op, 3, method="dense")]
    si = lowest_eigs(op, 3, tol=1e-9, method="shift-invert")
    assert [r.eigenvalue for r in si] == pytest.approx(dense, abs=1e-10)
    assert max(r.residual for r in si) < 1e-9
    spec3 = make_field(CONST + ["0"], box=[2, 2, 2])
    op3 = build_grid_operator(spec3, n_per_axis=16, hbar=0.5)
    a = [r.eigenvalue for r in lowest_eigs(op3, 2, tol=1e-8, method="lobpcg")]
    b = [r.eigenvalue for r in lowest_eigs(op3, 2, tol=1e-8, method="shift-invert")]
    assert a == pytest.approx(b, abs=1e-9)


def test_nonconvergence_is_reported(field2d):
    op = build_grid_operator(field2d, [2, 2], 24, 0.2)
    with pytest.raises(NonConvergenceError):
        lowest_eigs(op, 2, tol=1e-30, method="shift-invert")


def test_config_errors(field3d):
    with pytest.raises(ConfigError):
        build_grid_operator(field3d, n_per_axis=12)
    with pytest.raises(ConfigError):
        build_grid_operator(field3d, n_per_axis=1000)


def test_box_flag(field2d):
    op = build_grid_operator(field2d, [0.5, 0.5], 16, 0.1, well_scale=(np.zeros(2), 1.0))
    assert op.flags["box_too_small"]
    op = build_grid_operator(field2d, [8, 8], 16, 0.1, well_scale=(np.zeros(2), 1.0))
    assert not op.flags["box_too_small"]


def test_matrix_dump_round_trip(tmp_path, field2d):
    op = build_grid_operator(field2d, [2, 2], 16, 0.3)
    op.dump(tmp_path / "op.mtx")
    back = scipy.io.mmread(str(tmp_path / "op.mtx"))
    assert abs(back - op.matrix).max() < 1e-13


def test_localization_widths_scale(analysis3d, field3d):
    well, fr, quad = analysis3d
    a = localization_widths(field3d, 0.1, well, fr, quad)
    b = localization_widths(field3d, 0.4, well, fr, quad)
    assert a[0] == pytest.approx(6 * math.sqrt(0.2), rel=1e-6)
    assert b[0] / a[0] == pytest.approx(2.0, rel=1e-6)
    # along the field line the width grows like hbar^(1/4) once it beats sqrt(2 hbar)
    a, b = (localization_widths(field3d, h, well, fr, quad) for h in (0.01, 0.04))
    assert b[2] / a[2] == pytest.approx(math.sqrt(2), rel=1e-6)


def _table(fn, hbars, levels=2, n=(64, 64)):
    t = EigTable()
    for h in hbars:
        t.extend([EigRow(h, j + 1, fn(h, j), 0.0, n, (1, 1)) for j in range(levels)])
    return t


def test_fit_synthetic_three_halves():
    t = _table(lambda h, j: h + h ** 1.5 + 4 * j * h ** 2, [0.01, 0.02, 0.04, 0.08])
    pred = SpectralPrediction(1.0, 1.0, [2.0, 6.0])
    out = fit_powers(t, pred)
    assert out["nu0_extrapolated"] == pytest.approx(1.0, abs=1e-10)
    assert out["spacing"]["slope"] == pytest.approx(2.0, abs=1e-10)
    t = _table(lambda h, j: h + h ** 1.5, [0.01, 0.02, 0.04, 0.08])
    sub = fit_powers(t, pred)["subleading"]
    assert sub["slope"] == pytest.approx(1.5, abs=1e-10)
    assert sub["coefficient"] == pytest.approx(1.0, abs=1e-10)


def test_fit_synthetic_two_dimensional():
    t = _table(lambda h, j: h + (2 + 4 * j) * h ** 2, [0.02, 0.04, 0.06, 0.1])
    out = fit_powers(t, SpectralPrediction(1.0, 0.0, [2.0, 6.0]))
    assert out["subleading"]["slope"] == pytest.approx(2.0, abs=1e-10)
    assert out["spacing"]["coefficient"] == pytest.approx(4.0, rel=1e-10)
    assert out["spacing"]["predicted_coefficient"] == 4.0


def test_fit_needs_data():
    pred = SpectralPrediction(1.0, 0.0, [2.0])
    with pytest.raises(ValueError):
        fit_powers(_table(lambda h, j: h, [0.1, 0.2, 0.3]), pred)
    with pytest.raises(ValueError):
        fit_powers(_table(lambda h, j: h, [0.1, 0.15, 0.2, 0.3]), pred)


def test_richardson_best():
    t = EigTable()
    exact, c = 1.0, 3.0
    for n in (31, 63):
        h = 1.0 / (n + 1)
        t.extend([EigRow(0.1, 1, exact + c * h * h, 0.0, (n, n), (1, 1))])
    best, corr = t.best(0.1)
    assert best[0] == pytest.approx(exact, abs=1e-14)
    assert corr[0] == pytest.approx(c / 64 ** 2)


def test_csv_layout():
    t = _table(lambda h, j: h, [0.1], levels=1)
    lines = t.to_csv().splitlines()
    assert lines[0] == "hbar,level,eigenvalue,residual,nx,ny,nz,box"
    assert lines[1].split(",")[4:7] == ["64", "64", "0"]


def test_constant_field_control():
    # lambda_1 = hbar up to discretisation: no sub-leading power law
    spec = make_field(CONST, box=[4, 4])
    hbars = [0.05, 0.1, 0.2, 0.4]
    box = lambda h: localization_widths(spec, h)
    t = run_grid(spec, hbars, 40, box, m=2)
    t.extend(run_grid(spec, hbars, 20, box, m=2).rows)
    out = fit_powers(t, SpectralPrediction(1.0, 0.0, [0.0]))
    assert not out["subleading"]["detected"]
    for h, lam in zip(hbars, out["lambda1"]):
        assert lam == pytest.approx(h, rel=1e-3)
