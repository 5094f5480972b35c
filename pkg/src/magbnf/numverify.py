"""Sparse discretisation of the magnetic Laplacian and power-law fits.

Flat metric: nearest-neighbour Peierls operator.  Each edge carries the
link U = exp(-(i/hbar) int A.dl), the integral taken exactly by
Gauss-Legendre quadrature of the polynomial potential, so a gauge change
A -> A + grad(chi) conjugates the matrix by diag(exp(i chi/hbar)).

General metric: the quadratic form sum over cells of
|g|^(1/2) g^{kl} conj(D_k psi) D_l psi, with edge differences parallel-
transported to the lower cell corner.  Diagonal terms use every edge of
the cell, cross terms the cell-averaged differences.  The form is positive
semidefinite, gauge covariant, and equal to the Peierls operator when g is
the identity.
"""

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import stats

from .errors import ConfigError, NonConvergenceError
from .poly import Poly

MEMORY_BUDGET = 3.0e9


@dataclass
class GridOperator:
    dimension: int
    half_widths: tuple
    n: tuple
    hbar: float
    matrix: sp.csr_matrix
    links: dict
    scheme: str
    flags: dict = field(default_factory=dict)

    @property
    def spacing(self):
        return tuple(2 * L / (n + 1) for L, n in zip(self.half_widths, self.n))

    @property
    def signature(self):
        n = list(self.n) + [0] * (3 - len(self.n))
        return n[:3]

    def axes(self):
        return [-L + h * np.arange(1, n + 1) for L, n, h in zip(self.half_widths, self.n, self.spacing)]

    def dump(self, path):
        """Matrix Market triplet dump (debugging aid)."""
        import scipy.io
        scipy.io.mmwrite(path, self.matrix)


def _gauss(deg):
    m = deg // 2 + 1
    x, w = np.polynomial.legendre.leggauss(m)
    return (x + 1) / 2, w / 2


def _link_phases(spec, axes_ext, h_k, k, hbar, shift=None):
    """Phases int_edge A_k along axis k from every node of ``axes_ext``."""
    Ak = spec.potential[k]
    if shift is not None:
        Ak = Ak + shift.diff(k)
    deg = max(Ak.degree(), 0)
    gx, gw = _gauss(deg)
    d = len(axes_ext)
    starts = [a if j != k else a[:-1] for j, a in enumerate(axes_ext)]
    grids = np.meshgrid(*starts, indexing="ij")
    integ = 0.0
    for x, w in zip(gx, gw):
        pts = list(grids)
        pts[k] = pts[k] + x * h_k
        integ = integ + w * np.asarray(Ak.to_float().evaluate(tuple(pts)), dtype=float) * np.ones(grids[0].shape)
    return np.exp(-1j / hbar * h_k * integ)


def _estimate_bytes(N, d, scheme):
    per_row = (2 * d + 1) if scheme == "peierls" else 3 ** d
    return N * per_row * 28 + N * 16 * 40


def localization_widths(spec, hbar, well=None, frames=None, quad=None, factor=6.0):
    """Default half-widths: factor * (in-plane length, field-line length) per axis."""
    b0 = float(well.b0) if well is not None else 1.0
    q0 = np.zeros(spec.dimension) if well is None else np.asarray(well.q0, dtype=float)
    lw = np.full(spec.dimension, math.sqrt(2 * hbar / b0))
    if frames is not None and quad is not None and frames.k:
        lt = (hbar * np.diag(quad.M0) / np.diag(quad.Kt)) ** 0.25
        W = np.abs(frames.L0[:, 2 * frames.s:])
        lw = np.maximum(lw, (W * lt).max(axis=1))
    return tuple(float(abs(c) + factor * l) for c, l in zip(q0, lw))


def build_grid_operator(spec, box=None, n_per_axis=64, hbar=0.1, scheme=None, gauge_shift=None,
                        well_scale=None):
    """Discretise (i hbar d + A)^*(i hbar d + A) with Dirichlet walls at +-box.

    ``gauge_shift`` is a Poly chi; the operator of A + grad(chi) is built.
    ``well_scale`` = (q0, b0) enables the box-size flag.
    """
    d = spec.dimension
    L = tuple(float(x) for x in (box if box is not None else spec.box))
    n = (n_per_axis,) * d if isinstance(n_per_axis, int) else tuple(n_per_axis)
    if len(L) != d or len(n) != d:
        raise ConfigError("box and grid need one entry per axis")
    if min(n) < 16:
        raise ConfigError("at least 16 points per axis are required")
    flat = spec.flat
    scheme = scheme or ("peierls" if flat else "cell")
    if scheme == "peierls" and not flat:
        raise ConfigError("the Peierls scheme needs the flat metric")
    N = int(np.prod(n))
    est = _estimate_bytes(N, d, scheme)
    if est > MEMORY_BUDGET:
        raise ConfigError(f"memory estimate {est / 1e9:.1f} GB exceeds the {MEMORY_BUDGET / 1e9:.0f} GB budget")
    hs = [2 * l / (m + 1) for l, m in zip(L, n)]
    flags = {}
    if well_scale is not None:
        q0, b0 = well_scale
        need = 15 * math.sqrt(hbar / b0)
        margin = min(min(l - q, l + q) for l, q in zip(L, q0))
        flags["box_margin"] = margin
        flags["box_margin_required"] = need
        flags["box_too_small"] = margin < need
    ext = [-l + h * np.arange(0, m + 2) for l, m, h in zip(L, n, hs)]
    links = {k: _link_phases(spec, ext, hs[k], k, hbar, gauge_shift) for k in range(d)}
    if scheme == "peierls":
        H = peierls_matrix(links, n, hs, hbar)
    else:
        H = _assemble_cells(spec, links, ext, n, hs, hbar)
    return GridOperator(d, L, n, float(hbar), H, links, scheme, flags)


def _interior_index(n):
    """Index array on the extended grid: unknown number, or -1 on the walls."""
    idx = -np.ones([m + 2 for m in n], dtype=np.int64)
    inner = tuple(slice(1, m + 1) for m in n)
    idx[inner] = np.arange(int(np.prod(n))).reshape(n)
    return idx


def peierls_matrix(links, n, hs, hbar):
    """Nearest-neighbour stencil; ``links[k]`` holds phases on the extended grid."""
    d = len(n)
    N = int(np.prod(n))
    idx = _interior_index(n)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for k in range(d):
        c = hbar ** 2 / hs[k] ** 2
        diag += 2 * c
        # edges between interior nodes: start index 1..n-1 along k
        sl = [slice(1, m + 1) for m in n]
        sl[k] = slice(1, n[k])
        slb = list(sl)
        slb[k] = slice(2, n[k] + 1)
        U = links[k][tuple(sl)]
        rows.append(idx[tuple(sl)].ravel())
        cols.append(idx[tuple(slb)].ravel())
        vals.append(-c * U.ravel())
    r = np.concatenate(rows)
    cc = np.concatenate(cols)
    v = np.concatenate(vals)
    up = sp.coo_matrix((v, (r, cc)), shape=(N, N))
    H = (up + up.conj().T + sp.diags(diag)).tocsr()
    H.sum_duplicates()
    return H


def _metric_fields(spec, pts):
    """g^{kl}|g|^(1/2) and |g|^(1/2) at an array of points (last axis = coordinates)."""
    d = spec.dimension
    shape = pts[0].shape
    G = np.empty(shape + (d, d))
    for i in range(d):
        for j in range(d):
            G[..., i, j] = np.asarray(spec.metric[i][j].to_float().evaluate(tuple(pts)), dtype=float) * np.ones(shape)
    det = np.linalg.det(G)
    if np.any(det <= 0):
        raise ConfigError("metric is not positive definite on the grid")
    sq = np.sqrt(det)
    return np.linalg.inv(G) * sq[..., None, None], sq


def _assemble_cells(spec, links, ext, n, hs, hbar):
    d = len(n)
    N = int(np.prod(n))
    idx = _interior_index(n)
    ncell = [m + 1 for m in n]
    corners = list(itertools.product((0, 1), repeat=d))
    nc = len(corners)
    cpos = {b: i for i, b in enumerate(corners)}
    csl = [slice(0, m) for m in ncell]

    def node(b):
        return tuple(slice(bi, bi + m) for bi, m in zip(b, ncell))

    def link(k, b):
        sl = list(node(b))
        return links[k][tuple(sl)]

    # transport from the lower corner to corner b along increasing axes
    trans = {}
    for b in corners:
        T = np.ones(ncell, dtype=complex)
        cur = [0] * d
        for j in range(d):
            if b[j]:
                T = T * link(j, tuple(cur))
                cur[j] = 1
        trans[b] = T
    centers = np.meshgrid(*[e[:-1] + h / 2 for e, h in zip(ext, hs)], indexing="ij")
    Gc, sqc = _metric_fields(spec, centers)
    vol = float(np.prod(hs))
    shape = tuple(ncell)
    # difference vectors a[k][o]: coefficients over corners, per cell
    diffs = {}
    for k in range(d):
        for b in corners:
            if b[k]:
                continue
            e = list(b)
            e[k] = 1
            e = tuple(e)
            a = np.zeros(shape + (nc,), dtype=complex)
            a[..., cpos[e]] = trans[b] * link(k, b)
            a[..., cpos[b]] = -trans[b]
            diffs.setdefault(k, []).append(a)
    half = 2 ** (d - 1)
    local = np.zeros(shape + (nc, nc), dtype=complex)
    avg = {k: sum(diffs[k]) / half for k in range(d)}
    for k in range(d):
        wkk = Gc[..., k, k] * vol * hbar ** 2 / hs[k] ** 2 / half
        for a in diffs[k]:
            local += wkk[..., None, None] * np.conj(a)[..., :, None] * a[..., None, :]
        for l in range(d):
            if l == k:
                continue
            wkl = Gc[..., k, l] * vol * hbar ** 2 / (hs[k] * hs[l])
            local += wkl[..., None, None] * np.conj(avg[k])[..., :, None] * avg[l][..., None, :]
    gidx = np.stack([idx[node(b)] for b in corners], axis=-1)
    R = np.broadcast_to(gidx[..., :, None], local.shape)
    C = np.broadcast_to(gidx[..., None, :], local.shape)
    mask = (R >= 0) & (C >= 0) & (local != 0)
    E = sp.coo_matrix((local[mask], (R[mask], C[mask])), shape=(N, N)).tocsr()
    E.sum_duplicates()
    inner = tuple(slice(1, m + 1) for m in n)
    nodes = np.meshgrid(*[e[1:-1] for e in ext], indexing="ij")
    _, sqn = _metric_fields(spec, nodes)
    w = (sqn * vol).ravel()
    Dm = sp.diags(1 / np.sqrt(w))
    H = (Dm @ E @ Dm).tocsr()
    H = (H + H.conj().T) * 0.5
    return H.tocsr()


# ---------------------------------------------------------------------------
# Eigensolvers

@dataclass
class EigRow:
    hbar: float
    level: int
    eigenvalue: float
    residual: float
    n: tuple
    box: tuple


def _rayleigh_ritz(H, Y):
    Y, _ = np.linalg.qr(Y)
    HY = H @ Y
    T = Y.conj().T @ HY
    T = 0.5 * (T + T.conj().T)
    w, C = la.eigh(T)
    X = Y @ C
    R = HY @ C - X * w
    return w, X, np.linalg.norm(R, axis=0)


def _subspace_shift_invert(H, m, tol, rng, block_extra=6, maxiter=400):
    N = H.shape[0]
    I = sp.identity(N, format="csc", dtype=H.dtype)
    p = m + block_extra
    X = rng.standard_normal((N, p)) + 0j
    lu = sla.splu((H - 0.0 * I).tocsc())
    w, X, res = _rayleigh_ritz(H, X)
    for _ in range(20):
        w, X, res = _rayleigh_ritz(H, lu.solve(X))
        if res[:m].max() < 1e-3 * max(abs(w[0]), 1e-300):
            break
    # re-shift just below the lowest Ritz value as the residuals shrink
    it = 0
    while it < maxiter:
        gap = max(10 * res[:m].max(), 1e-9 * abs(w[0]), 1e-14)
        sigma = w[0] - min(gap, 1e-3 * abs(w[0]) + 1e-14)
        lu = sla.splu((H - sigma * I).tocsc())
        before = res[:m].max()
        for _ in range(25):
            w, X, res = _rayleigh_ritz(H, lu.solve(X))
            it += 1
            if res[:m].max() < tol or res[:m].max() < 0.01 * before:
                break
        if res[:m].max() < tol:
            break
    return w[:m], X[:, :m], res[:m]


def _lobpcg_amg(H, m, tol, rng, block_extra=2, maxiter=400):
    import pyamg
    import warnings
    ml = pyamg.smoothed_aggregation_solver(H, symmetry="hermitian", max_coarse=500)
    M = ml.aspreconditioner()
    X = rng.standard_normal((H.shape[0], m + block_extra)) + 0j
    best = None
    for _ in range(3):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            w, V = sla.lobpcg(H, X, M=M, tol=tol / 10, maxiter=maxiter // 3, largest=False)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        w, V, res = _rayleigh_ritz(H, V)
        best = (w[:m], V[:, :m], res[:m])
        if res[:m].max() < tol:
            break
        X = V
    return best


def lowest_eigs(op, m=4, tol=1e-8, seed=0, method="auto"):
    """The m smallest eigenvalues of op.matrix with residual norms."""
    H = op.matrix
    N = H.shape[0]
    if m >= N:
        raise ValueError("m must be smaller than the matrix dimension")
    rng = np.random.default_rng(seed)
    if method == "auto":
        method = "dense" if N <= 2500 else ("shift-invert" if op.dimension <= 2 else "lobpcg")
    if method == "dense":
        w, V = la.eigh(H.toarray())
        w, V = w[:m], V[:, :m]
        res = np.linalg.norm(H @ V - V * w, axis=0)
    elif method == "shift-invert":
        w, V, res = _subspace_shift_invert(H, m, tol, rng)
    elif method == "lobpcg":
        w, V, res = _lobpcg_amg(H, m, tol, rng)
    else:
        raise ValueError(f"unknown method {method}")
    if res.max() >= tol:
        raise NonConvergenceError(f"eigensolver did not reach residual {tol:.1e} at hbar={op.hbar} "
                                  f"(best residuals {np.array2string(res, precision=2)})")
    rows = [EigRow(op.hbar, j + 1, float(w[j]), float(res[j]), op.n, op.half_widths) for j in range(m)]
    return rows


@dataclass
class EigTable:
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def extend(self, rows):
        self.rows.extend(rows)
        self.rows.sort(key=lambda r: (r.hbar, tuple(r.n), r.level))

    def hbars(self):
        return sorted({r.hbar for r in self.rows})

    def levels(self, hbar, n=None):
        sel = [r for r in self.rows if r.hbar == hbar and (n is None or tuple(r.n) == tuple(n))]
        return [r.eigenvalue for r in sorted(sel, key=lambda r: r.level)]

    def grids(self, hbar):
        return sorted({tuple(r.n) for r in self.rows if r.hbar == hbar}, key=lambda g: np.prod(g))

    def best(self, hbar):
        """Finest-grid levels, Richardson-extrapolated when two grids exist."""
        gs = self.grids(hbar)
        fine = np.array(self.levels(hbar, gs[-1]))
        if len(gs) < 2:
            return fine, None
        coarse = np.array(self.levels(hbar, gs[-2]))
        m = min(len(fine), len(coarse))
        h_f = 1.0 / (gs[-1][0] + 1)
        h_c = 1.0 / (gs[-2][0] + 1)
        r = (h_c / h_f) ** 2
        extra = fine[:m] + (fine[:m] - coarse[:m]) / (r - 1)
        return extra, np.abs(extra - fine[:m])

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["hbar", "level", "eigenvalue", "residual", "nx", "ny", "nz", "box"])
        for r in self.rows:
            n = list(r.n) + [0] * (3 - len(r.n))
            wr.writerow([f"{r.hbar:.6g}", r.level, f"{r.eigenvalue:.15e}", f"{r.residual:.3e}",
                         n[0], n[1], n[2], ";".join(f"{b:.6g}" for b in r.box)])
        return buf.getvalue()


def run_grid(spec, hbars, n_per_axis, box_fn, m=4, tol=1e-8, seed=0, threads=1, method="auto",
             gauge_shift=None, well_scale=None):
    """Solve for every hbar (concurrently when threads > 1); rows merged by hbar."""

    def one(hb):
        op = build_grid_operator(spec, box_fn(hb), n_per_axis, hb, gauge_shift=gauge_shift,
                                 well_scale=well_scale)
        rows = lowest_eigs(op, m, tol, seed, method)
        flags = dict(op.flags)
        if len(rows) > 1:
            gap = (rows[1].eigenvalue - rows[0].eigenvalue) / abs(rows[0].eigenvalue)
            flags["relative_gap_12"] = gap
            flags["near_degenerate"] = gap < 1e-6
        return hb, rows, flags

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, hbars))
    else:
        out = [one(hb) for hb in hbars]
    table = EigTable()
    for hb, rows, flags in sorted(out, key=lambda t: t[0]):
        table.extend(rows)
        table.diagnostics[f"{hb:.6g}"] = flags
    return table


# ---------------------------------------------------------------------------
# Fits

def _loglog(x, y):
    res = stats.linregress(np.log(x), np.log(y))
    return {"slope": float(res.slope), "coefficient": float(math.exp(res.intercept)),
            "slope_stderr": float(res.stderr), "r2": float(res.rvalue ** 2)}


def fit_powers(table, prediction):
    """Power laws of (lambda_1 - b0 hbar) and of the first spacing in hbar."""
    hb = np.array(table.hbars())
    if len(hb) < 4 or hb.max() / hb.min() < 4:
        raise ValueError("need at least 4 hbar values spanning a factor of 4")
    best = [table.best(h) for h in hb]
    lam = np.array([b[0] for b in best], dtype=object)
    l1 = np.array([v[0] for v in lam], dtype=float)
    disc = [None if b[1] is None else float(b[1][0]) for b in best]
    out = {"hbar": hb.tolist(), "lambda1": l1.tolist(), "richardson_correction": disc}
    b0 = prediction.b0
    sub = l1 - b0 * hb
    expected = 1.5 if prediction.nu0 > 0 else 2.0
    noise = np.array([d if d is not None else 0.0 for d in disc])
    if np.all(sub > 0) and np.all(sub > 10 * noise):
        f = _loglog(hb, sub)
        f["expected_slope"] = expected
        f["detected"] = f["r2"] > 0.99
        out["subleading"] = f
    else:
        out["subleading"] = {"detected": False, "note": "no sub-leading law detected",
                             "expected_slope": expected}
    if prediction.nu0 > 0:
        # (lambda_1 - b0 hbar)/hbar^(3/2) = a + b hbar^(1/2) + c hbar
        y = sub / hb ** 1.5
        A = np.vstack([np.ones_like(hb), np.sqrt(hb), hb]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        out["nu0_extrapolated"] = float(coef[0])
        out["nu0_predicted"] = prediction.nu0
        out["nu0_fit"] = coef.tolist()
    if all(len(b[0]) >= 2 for b in best):
        gap = np.array([b[0][1] - b[0][0] for b in best])
        if np.all(gap > 0):
            f = _loglog(hb, gap)
            f["expected_slope"] = 2.0 if prediction.nu0 == 0 else None
            if len(prediction.E) >= 2:
                f["predicted_coefficient"] = prediction.E[1] - prediction.E[0]
            out["spacing"] = f
    table.fits = out
    return out
