"""Second normal form: the field-line oscillators in the mixed algebra E2.

Input is an explicit Landau-sector symbol N1(y, eta, t, tau, hbar) of the
shape <M tau, tau> + hbar*bhat(w, t) + ....  The t variables are recentred
at the minimiser s(w) of bhat(w, .), the pair (t, tau) is moved to
oscillator coordinates by a constant linear symplectic map built from
(M(0), (1/2) d_t^2 bhat(0)), and tau = h*tt, hbar = h^2 is substituted.
Dividing by h^2 gives N0(w) + N2 + gamma2 in E2.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from gmpy2 import mpq

from .bnf import (_jnum, _jval, _poly_json, _table_entries, birkhoff_engine,
                  effective_names, effective_symbol, homological_solve,
                  reorder_star)
from .errors import AlgebraError, AssumptionError
from .poly import Poly, is_exact
from .weylalg import E1, E2, GradedSeries, exp_ad, is_diagonal
from .wellframe import reduce_pair


@dataclass
class OscillatorForm:
    series: GradedSeries
    N0: Poly
    nu_polys: list
    nus0: list
    M0: np.ndarray
    Kt: np.ndarray
    P: np.ndarray
    s_jet: list
    exact: bool


@dataclass
class SecondTable:
    alg: object
    nus: list
    r: int
    N0: Poly
    H0: GradedSeries
    kappa: GradedSeries
    rho: GradedSeries
    residual: GradedSeries
    entries: list = field(default_factory=list)

    def entry_map(self):
        return {(e["alpha"], e["hbar_power"]): e["coeff_poly"] for e in self.entries}

    def to_json(self):
        names = self.alg.base_names
        return {
            "nus": [_jnum(v) for v in self.nus],
            "r2": self.r,
            "second_table": [
                {"alpha": list(e["alpha"]), "h_power": e["hbar_power"],
                 "coeff_poly": _poly_json(e["coeff_poly"], names)}
                for e in self.entries
            ],
            "M1_series_at_0": {str(p): _jnum(c) for p, c in sorted(m1_series_at_0(self).items())},
            "residual_valuation": _jval(self.residual.valuation()),
        }


# ---------------------------------------------------------------------------
# small exact linear algebra

def _inverse_exact(M):
    n = len(M)
    A = [[mpq(M[i][j]) for j in range(n)] + [mpq(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        piv = next((r for r in range(c, n) if A[r][c] != 0), None)
        if piv is None:
            raise AssumptionError(1, "singular t-Hessian")
        A[c], A[piv] = A[piv], A[c]
        p = A[c][c]
        A[c] = [x / p for x in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return [row[n:] for row in A]


def _exact_root(q, k):
    """q**(1/k) as an mpq when it is rational, else None."""
    q = mpq(q)
    if q < 0:
        return None
    out = []
    for part in (q.numerator, q.denominator):
        r = round(int(part) ** (1.0 / k))
        hit = next((c for c in (r - 1, r, r + 1) if c >= 0 and c ** k == part), None)
        if hit is None:
            return None
        out.append(hit)
    return mpq(out[0], out[1])


# ---------------------------------------------------------------------------
# N1 -> (M, bhat)

def split_n1(N1, s, k):
    """bhat(w, t) (hbar^1 tau^0 part) and M(w, t) (hbar^0 tau^2 part) of N1.

    Raises when N1 has a term that would blow up after division by h^2.
    """
    nb = 2 * s + k
    if N1.nvars != 2 * s + 2 * k + 1:
        raise AlgebraError("N1 must live in the variables (y, eta, t, tau, hbar)")
    bhat = Poly(nb)
    M = [[Poly(nb) for _ in range(k)] for _ in range(k)]
    for e, c in N1.terms.items():
        taus = e[nb:nb + k]
        ell = e[-1]
        td = sum(taus)
        if td + 2 * ell < 2:
            raise AlgebraError(f"N1 term {e} is not O(hbar) on the zero section")
        if ell == 1 and td == 0:
            bhat.terms[e[:nb]] = c
        elif ell == 0 and td == 2:
            idx = [i for i, a in enumerate(taus) for _ in range(a)]
            i, j = idx
            half = mpq(1, 2) if is_exact(c) else 0.5
            if i == j:
                M[i][i].terms[e[:nb]] = M[i][i].terms.get(e[:nb], 0) + c
            else:
                M[i][j].terms[e[:nb]] = M[i][j].terms.get(e[:nb], 0) + c * half
                M[j][i].terms[e[:nb]] = M[j][i].terms.get(e[:nb], 0) + c * half
    return bhat, M


def _grad_t(bhat, s, k):
    return [bhat.diff(2 * s + i) for i in range(k)]


def minimiser_jet(bhat, s, k, order):
    """Jet of t = s(w) solving d_t bhat(w, s(w)) = 0, as k polys in w."""
    nw = 2 * s
    F = _grad_t(bhat, s, k)
    exact = bhat.is_exact()
    F0 = [f.constant() for f in F]
    if any(abs(float(v)) > 1e-12 for v in F0):
        raise AssumptionError(1, "d_t bhat does not vanish at the origin")
    Htt = [[float(f.diff(2 * s + j).constant()) if not exact else f.diff(2 * s + j).constant()
            for j in range(k)] for f in F]
    Hinv = _inverse_exact(Htt) if exact else np.linalg.inv(np.array(Htt, dtype=float)).tolist()
    wsubs = [Poly.var(nw, i) for i in range(nw)]
    sj = [Poly(nw) for _ in range(k)]
    for _ in range(order + 1):
        Fs = [f.compose(wsubs + sj).truncate(order) for f in F]
        new = []
        for i in range(k):
            acc = sj[i]
            for j in range(k):
                acc = acc - Fs[j].scale(Hinv[i][j])
            new.append(acc.truncate(order))
        if all(a == b for a, b in zip(new, sj)):
            break
        sj = new
    return sj


def oscillator_map(M0, Kt, exact=False):
    """(A, B, nus): t = A t^, tau = B tau^ with A^T Kt A = B^T M0 B = diag(nu).

    Exact only when M0, Kt are diagonal and the needed roots are rational;
    otherwise floats from the co-reduction.
    """
    k = len(M0)
    if exact and all(M0[i][j] == 0 and Kt[i][j] == 0 for i in range(k) for j in range(k) if i != j):
        roots = []
        for j in range(k):
            m, kt = mpq(M0[j][j]), mpq(Kt[j][j])
            nu = _exact_root(m * kt, 2)
            a = _exact_root(m / kt, 4) if m > 0 and kt > 0 else None
            if nu is None or a is None:
                break
            roots.append((nu, a))
        else:
            order = sorted(range(k), key=lambda j: -roots[j][0])
            A = [[mpq(0)] * k for _ in range(k)]
            B = [[mpq(0)] * k for _ in range(k)]
            for col, j in enumerate(order):
                A[j][col] = roots[j][1]
                B[j][col] = 1 / roots[j][1]
            return A, B, [roots[j][0] for j in order], True
    Mf = np.array([[float(x) for x in r] for r in M0])
    Kf = np.array([[float(x) for x in r] for r in Kt])
    P, nus = reduce_pair(Mf, Kf)
    A = P / np.sqrt(nus)
    B = np.linalg.inv(P).T * np.sqrt(nus)
    return A.tolist(), B.tolist(), nus.tolist(), False


def _compose_truncated(poly, subs, keep, unit=mpq(1)):
    """poly(subs), dropping every monomial rejected by ``keep`` as soon as it appears."""
    target = subs[0].nvars
    one = Poly.const(target, unit)

    def filt(p):
        return Poly(target, {e: c for e, c in p.terms.items() if keep(e)})

    cache = [{0: one} for _ in subs]

    def pw(i, k):
        if k not in cache[i]:
            cache[i][k] = filt(pw(i, k - 1) * subs[i])
        return cache[i][k]

    out = Poly(target)
    for e, c in poly.terms.items():
        term = Poly.const(target, c)
        for i, kk in enumerate(e):
            if kk:
                term = filt(term * pw(i, kk))
                if term.is_zero():
                    break
        out = out + term
    return out


def reduce_to_oscillator(N1, s, k, N, T=None, quad=None):
    """E2 series N0 + sum nu_j(w)|v_j|^2 + gamma2 from the explicit symbol N1.

    ``quad`` (optional) is cross-checked: its nus must agree with the ones
    read from N1.
    """
    T = N if T is None else T
    alg = E2(s, k)
    nw = 2 * s
    bhat, Mpolys = split_n1(N1, s, k)
    exact = N1.is_exact()
    if k == 0:
        sj, A, B, nus0 = [], [], [], []
        M0 = np.zeros((0, 0))
        Kt = np.zeros((0, 0))
        exact_map = exact
    else:
        M0x = [[Mpolys[i][j].constant() for j in range(k)] for i in range(k)]
        half = mpq(1, 2) if exact else 0.5
        Ktx = [[bhat.diff(nw + i).diff(nw + j).constant() * half for j in range(k)] for i in range(k)]
        M0 = np.array([[float(x) for x in r] for r in M0x])
        Kt = np.array([[float(x) for x in r] for r in Ktx])
        if np.linalg.eigvalsh(M0).min() <= 0:
            raise AssumptionError(1, "M(0) is not positive definite")
        if np.linalg.eigvalsh(Kt).min() <= 0:
            raise AssumptionError(1, "(1/2) d_t^2 bhat(0) is not positive definite")
        A, B, nus0, exact_map = oscillator_map(M0x, Ktx, exact)
        nf = [float(v) for v in nus0]
        if any((nf[i] - nf[i + 1]) / nf[0] <= 1e-6 for i in range(k - 1)):
            raise AssumptionError(4, f"nu_j(0) not distinct: {nf}")
        sj = minimiser_jet(bhat, s, k, N + T)
    if quad is not None and k:
        if np.max(np.abs(np.array(quad.nus) - np.array([float(v) for v in nus0]))) > 1e-8:
            raise AssumptionError(4, "nus from the symbol disagree with the well data")
    exact = exact and exact_map
    nv = alg.nvars
    h = nv - 1
    if not exact:
        N1 = N1.to_float()
        sj = [p.to_float() for p in sj]
    # substitutions in the E2 ring (same variable layout as N1)
    subs = [Poly.var(nv, i) for i in range(nw)]
    for i in range(k):
        p = sj[i].extend(nv, list(range(nw)))
        for j in range(k):
            p = p + Poly.var(nv, nw + j, A[i][j])
        subs.append(p)
    for i in range(k):
        p = Poly(nv)
        for j in range(k):
            e = [0] * nv
            e[nw + k + j] = 1
            e[h] = 1
            p = p + Poly(nv, {tuple(e): B[i][j]})
        subs.append(p)
    e = [0] * nv
    e[h] = 2
    subs.append(Poly(nv, {tuple(e): mpq(1)}))
    tmpl = GradedSeries(alg, N, T)

    def keep(e):
        fd = sum(e[nw:h]) + 2 * (e[h] - 2)
        return fd <= N and sum(e[:nw]) + fd <= N + T

    if not exact:
        subs = [p.to_float() for p in subs]
    raw = _compose_truncated(N1, subs, keep, mpq(1) if exact else 1.0)
    re = {}
    for e, c in raw.terms.items():
        if e[h] < 2:
            raise AlgebraError("negative power of h after rescaling")
        e2 = e[:h] + (e[h] - 2,)
        if tmpl.keeps(e2):
            re[e2] = c
    S0 = GradedSeries(alg, N, T, re)
    D1 = S0.project_degree(1)
    if not D1.is_zero():
        size = D1.max_abs()
        if exact or size > 1e-9 * max(1.0, S0.max_abs()):
            raise AlgebraError(f"degree-1 terms survive the recentring ({size:.3e})")
        S0 = S0 - D1
    S = normalize_quadratic(S0, nus0) if k else S0
    N0 = Poly(nw, {e[:nw]: c for e, c in S.project_degree(0).re.items()})
    nu_polys = []
    for j in range(k):
        key = [0] * (nv - nw)
        key[j] = 2
        nu_polys.append(S.coeff_poly(tuple(key)))
    return OscillatorForm(S, N0, nu_polys, list(nus0), M0, Kt,
                          np.array([[float(x) for x in r] for r in A]) if k else np.zeros((0, 0)),
                          sj, exact)


def normalize_quadratic(S0, nus0):
    """Conjugate away the w-dependent non-diagonal quadratic terms.

    The degree-2 generator vanishes at w = 0, so the Lie series terminates;
    the diagonal coefficients that remain are the frequencies nu_j(w).
    """
    nw = S0.alg.nbase
    exact = S0.is_exact()
    freqs = [Poly.const(nw, v if exact else float(v)) for v in nus0]
    G = S0.like()
    cur = S0
    for m in range(1, S0.N + S0.T - 1):
        D2 = cur.project_degree(2)
        R = D2.like({e: c for e, c in D2.re.items() if D2.bdeg(e) == m},
                    {e: c for e, c in D2.im.items() if D2.bdeg(e) == m})
        if R.is_zero() or is_diagonal(R):
            continue
        _, rho = homological_solve(R, freqs, assumption=4)
        if rho.is_zero():
            continue
        G = G + rho
        cur = exp_ad(G, S0, allow_base_nilpotent=True)
    if not is_diagonal(cur.project_degree(2)):
        if exact:
            raise AlgebraError("quadratic normalisation did not diagonalise")
        cur = cur - _offdiag(cur.project_degree(2), 1e-10)
    return cur


def _offdiag(a, tol):
    from .weylalg import from_z_basis, to_z_basis
    z = to_z_basis(a)
    osc = a.alg.oscillators
    re = {e: c for e, c in z.re.items() if any(e[i] != e[j] for i, j in osc)}
    im = {e: c for e, c in z.im.items() if any(e[i] != e[j] for i, j in osc)}
    big = max([abs(float(c)) for c in list(re.values()) + list(im.values())], default=0.0)
    if big > tol * max(1.0, a.max_abs()):
        raise AlgebraError(f"quadratic normalisation left off-diagonal terms ({big:.3e})")
    return from_z_basis(a.like(re, im))


# ---------------------------------------------------------------------------
# Birkhoff in E2

def oscillator_series(alg, nus, N, T=None, N0=None):
    """N0 + sum_j nu_j |v_j|^2 in E2, nus scalar (mpq, Surd or float)."""
    S = GradedSeries(alg, N, T)
    nv = alg.nvars
    re = {}
    for j, nu in enumerate(nus):
        ix, ip = alg.oscillators[j]
        for slot in (ix, ip):
            e = [0] * nv
            e[slot] = 2
            re[tuple(e)] = nu
    if N0 is not None:
        for b, c in N0.terms.items():
            re[tuple(b) + (0,) * (nv - alg.nbase)] = c
    return S.like(re, {})


def second_birkhoff(series, nus=None, r2=None, res_tol=None):
    """Second Birkhoff normal form up to degree r2 (exclusive)."""
    if isinstance(series, OscillatorForm):
        series = series.series
    alg = series.alg
    if alg.tag != "E2":
        raise AlgebraError("second_birkhoff works in E2")
    r2 = r2 if r2 is not None else series.N + 1
    if series.N < r2 - 1:
        raise AlgebraError(f"truncation N_max={series.N} too low for r2={r2}")
    H0, kappa, rho, final, residual, freqs = birkhoff_engine(series, r2, res_tol=res_tol, assumption=4)
    nus0 = [f.constant() for f in freqs]
    if nus is not None:
        for a, b in zip(nus, nus0):
            if abs(float(a) - float(b)) > 1e-10 * max(1.0, abs(float(a))):
                raise AlgebraError("nus disagree with the quadratic part of the series")
    N0s = H0.project_degree(0)
    if not rho.is_zero() and not N0s.is_zero():
        v = N0s.bracket_over_ih(rho).valuation()
        if v < rho.valuation() + 2:
            raise AlgebraError("base bracket does not raise the degree by 2")
    N0 = Poly(alg.nbase, {e[:alg.nbase]: c for e, c in N0s.re.items()})
    table = reorder_star(kappa)
    return SecondTable(alg, nus0, r2, N0, H0, kappa, rho, residual, _table_entries(table))


def effective_m_symbol(table, n):
    """M^[n](w, h): oscillator star powers replaced by ((2 n_j - 1) h)^a."""
    return effective_symbol(table, n)


def m1_series_at_0(table):
    """{power of h: coefficient} of M^[1] at w = 0."""
    k = len(table.alg.oscillators)
    M = effective_m_symbol(table, (1,) * k)
    out = {}
    for e, c in M.terms.items():
        if not any(e[:-1]):
            out[e[-1]] = out.get(e[-1], 0) + c
    return out


def n1_names(s, k):
    return effective_names(E1(s, k))


def model_n1(quad, b0, s, k, extra=None):
    """Explicit N1 = <M0 tau, tau> + hbar*(b0 + (1/2) x^T Hphi x), x = (w, t)."""
    nb = 2 * s + k
    nv = 2 * s + 2 * k + 1
    N1 = Poly(nv)
    for i in range(k):
        for j in range(k):
            e = [0] * nv
            e[nb + i] += 1
            e[nb + j] += 1
            N1 = N1 + Poly(nv, {tuple(e): float(quad.M0[i, j])})
    H = np.zeros((nb, nb))
    n = 2 * s
    H[:n, :n] = quad.Hw
    H[:n, n:] = quad.cross
    H[n:, :n] = quad.cross.T
    H[n:, n:] = quad.Htt
    e = [0] * nv
    e[-1] = 1
    N1 = N1 + Poly(nv, {tuple(e): float(b0)})
    for i in range(nb):
        for j in range(nb):
            e = [0] * nv
            e[i] += 1
            e[j] += 1
            e[-1] += 1
            N1 = N1 + Poly(nv, {tuple(e): 0.5 * float(H[i, j])})
    if extra is not None:
        N1 = N1 + extra
    return N1


def c0_from_m1(M1, s):
    """Constant c0 from M^[1](w, h): h^2 coefficient at 0 minus the shift
    energy of the linear h-term against the Hessian of the h^0 part."""
    nw = 2 * s
    h = M1.nvars - 1

    def part(p):
        return Poly(nw, {e[:nw]: c for e, c in M1.terms.items() if e[h] == p})

    f2 = part(2).constant()
    if nw == 0:
        return float(f2)
    g = np.array([float(part(1).diff(i).constant()) for i in range(nw)])
    S = np.array([[float(part(0).diff(i).diff(j).constant()) for j in range(nw)] for i in range(nw)])
    return float(f2) - 0.5 * float(g @ np.linalg.solve(S, g))
