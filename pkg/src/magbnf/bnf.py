"""First Birkhoff normal form in E1 and the machinery it shares with E2.

The engine works on any algebra with harmonic oscillators
|z_j|^2 = x_j^2 + xi_j^2.  In the (z, zbar) basis the operator
rho -> sum_j beta_j (i/p)[|z_j|^2, rho] is diagonal with eigenvalue
2i <alpha' - alpha, beta> on z^alpha zbar^alpha', which makes the
homological equation a monomial-by-monomial division.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

from gmpy2 import mpq

from .errors import AlgebraError, ResonanceError
from .poly import Poly, is_exact
from .weylalg import (E1, GradedSeries, exp_ad, from_z_basis, is_diagonal,
                      oscillator, to_z_basis)


@dataclass
class NormalFormTable:
    alg: object
    betas: list
    r: int
    H0: GradedSeries
    kappa: GradedSeries
    rho: GradedSeries
    residual: GradedSeries
    entries: list = field(default_factory=list)

    def entry_map(self):
        return {(e["alpha"], e["alpha_tau"], e["hbar_power"]): e["coeff_poly"] for e in self.entries}

    def to_json(self, names=None):
        names = names or self.alg.base_names
        out = {
            "betas_at_well": [_jnum(b) for b in self.betas],
            "r1": self.r,
            "entries": [
                {"alpha": list(e["alpha"]), "alpha_tau": list(e["alpha_tau"]),
                 "hbar_power": e["hbar_power"], "coeff_poly": _poly_json(e["coeff_poly"], names)}
                for e in self.entries
            ],
            "residual_valuation": _jval(self.residual.valuation()),
        }
        return out


def _jnum(c):
    if is_exact(c):
        try:
            q = mpq(c)
            return {"exact": str(q), "value": float(q)}
        except (TypeError, ValueError):
            return {"exact": str(c), "value": float(c)}
    return float(c)


def _jval(v):
    return None if v == math.inf else v


def _poly_json(p, names):
    return [{"monomial": {n: k for n, k in zip(names, e) if k}, "coeff": _jnum(c)}
            for e, c in p.sorted_terms()]


# ---------------------------------------------------------------------------
# Homological equation

def _base_inverse(D, limit):
    """Taylor inverse of the base polynomial D around the origin, to ``limit``."""
    d0 = D.constant()
    D1 = D - d0
    inv0 = 1 / d0
    out = Poly.const(D.nvars, inv0)
    term = Poly.const(D.nvars, inv0)
    x = D1.scale(-inv0)
    for _ in range(limit):
        term = (term * x).truncate(limit)
        if term.is_zero():
            break
        out = out + term
    return out.truncate(limit)


def _float_abs(c):
    return abs(complex(c)) if isinstance(c, complex) else abs(float(c))


def homological_solve(R, freqs, res_tol=None, assumption=3):
    """Split R (homogeneous of one degree) into K + sum_j f_j (i/p)ad_{|z_j|^2} rho.

    ``freqs`` are base polynomials (the oscillator frequencies).  Returns
    (K, rho) with K diagonal; raises ResonanceError on a vanishing
    denominator at the base point.
    """
    alg = R.alg
    nb = alg.nbase
    osc = alg.oscillators
    if len(freqs) != len(osc):
        raise AlgebraError("one frequency per oscillator required")
    f0 = [_float_abs(f.constant()) for f in freqs]
    fmax = max(f0, default=1.0)
    res_tol = 1e-9 * fmax if res_tol is None else res_tol
    Z = to_z_basis(R)
    # group by fibre part
    groups = {}
    for part, d in ((0, Z.re), (1, Z.im)):
        for e, c in d.items():
            g = groups.setdefault(e[nb:], [Poly(nb), Poly(nb)])
            g[part].terms[e[:nb]] = c
    Kre, Kim, Rre, Rim = {}, {}, {}, {}
    inv_cache = {}
    for fk, (cre, cim) in groups.items():
        full = (0,) * nb + fk
        alpha = tuple(full[ix] for ix, _ in osc)
        alphap = tuple(full[ip] for _, ip in osc)
        if alpha == alphap:
            for e, c in cre.terms.items():
                Kre[e + fk] = c
            for e, c in cim.terms.items():
                Kim[e + fk] = c
            continue
        diff = tuple(b - a for a, b in zip(alpha, alphap))
        if diff not in inv_cache:
            D = Poly(nb)
            for dj, f in zip(diff, freqs):
                if dj:
                    D = D + f.scale(mpq(dj) if is_exact(f.constant()) else float(dj))
            if _float_abs(D.constant()) <= res_tol:
                raise ResonanceError(alpha, alphap, float(D.constant()) if D.constant() != 0 else 0.0, assumption)
            fd = R.fdeg(full)
            limit = R.N + R.T - fd
            inv_cache[diff] = _base_inverse(D, max(limit, 0))
        inv = inv_cache[diff]
        fd = R.fdeg(full)
        limit = R.N + R.T - fd
        # rho = c / (2i D) = (-i/2) c / D
        pre = (cre * inv).truncate(limit)
        pim = (cim * inv).truncate(limit)
        half = mpq(1, 2) if is_exact(inv.constant()) else 0.5
        # (-i/2)(pre + i pim) = pim/2 - i pre/2
        for e, c in pim.terms.items():
            Rre[e + fk] = c * half
        for e, c in pre.terms.items():
            Rim[e + fk] = -c * half
    K = from_z_basis(R.like(Kre, Kim))
    rho = from_z_basis(R.like(Rre, Rim))
    return K, rho


# ---------------------------------------------------------------------------
# Birkhoff loop

def split_quadratic(H):
    """Split a symbol into its degree <= 2 part and the rest (valuation >= 3)."""
    return H.degrees_below(3), H.degrees_at_least(3)


def oscillator_frequencies(H0):
    """Read the frequencies f_j from the degree-2 part f_j |z_j|^2 of H0.

    Checks that the oscillator sector of H0 is exactly sum_j f_j |z_j|^2,
    i.e. H0 commutes with every |z_j|^2 at leading order.
    """
    alg = H0.alg
    nb = alg.nbase
    if not is_diagonal(H0):
        raise AlgebraError("quadratic part is not a function of the oscillators")
    freqs = []
    for ix, ip in alg.oscillators:
        key = [0] * (alg.nvars - nb)
        key[ix - nb] = 2
        freqs.append(H0.coeff_poly(tuple(key)))
    if H0.project_degree(1).re or H0.project_degree(1).im:
        raise AlgebraError("symbol has a degree-1 part")
    return freqs


def birkhoff_engine(H, r, freqs=None, res_tol=None, assumption=3, check=True):
    """Normal form of H = H0 + gamma up to degree r (exclusive).

    Returns (H0, kappa, rho, final) with final = exp_ad(rho, H).
    """
    if not H.is_real():
        raise AlgebraError("symbol must be real")
    H0, gamma = split_quadratic(H)
    if freqs is None:
        freqs = oscillator_frequencies(H0)
    rho = H.like()
    for N in range(3, r):
        cur = exp_ad(rho, H, cap=N) if not rho.is_zero() else H
        R = cur.project_degree(N)
        if R.is_zero():
            continue
        K, rhoN = homological_solve(R, freqs, res_tol, assumption)
        if rhoN.im:
            raise AlgebraError("generator lost reality")
        rho = rho + rhoN
    final = exp_ad(rho, H) if not rho.is_zero() else H
    kappa = final.degrees_at_least(3).degrees_below(r)
    residual = final.degrees_at_least(r)
    if check:
        if not is_diagonal(kappa):
            raise AlgebraError("normal form is not diagonal below the target degree")
        if final.degrees_below(3) != H0:
            raise AlgebraError("low-degree part changed under conjugation")
    return H0, kappa, rho, final, residual, freqs


# ---------------------------------------------------------------------------
# Star powers of one oscillator: I^{*m} = sum_j p[m][j] I^j p^(m-j)

@lru_cache(maxsize=None)
def star_power_table(nmax):
    """p[m][j]: coefficients of I^{*m} in pointwise powers I^j (times p^(m-j))."""
    alg = E1(1, 0)
    N = 2 * nmax
    I = oscillator(alg, 0, N)
    cur = I.const(1)
    rows = [{0: mpq(1)}]
    for m in range(1, nmax + 1):
        cur = cur.star(I)
        Z = to_z_basis(cur)
        if Z.im:
            raise AlgebraError("star power of a real oscillator must be real")
        ix, ip = alg.oscillators[0]
        row = {}
        for e, c in Z.re.items():
            # z power in the x slot, zbar power in the xi slot
            if e[ix] != e[ip]:
                raise AlgebraError("star power not diagonal")
            if e[ix] + e[-1] != m:
                raise AlgebraError("star power grading broken")
            row[e[ix]] = c
        rows.append(row)
    return tuple(tuple(sorted(r.items())) for r in rows)


@lru_cache(maxsize=None)
def pointwise_in_star(nmax):
    """q[n][m]: I^n = sum_m q[n][m] p^(n-m) I^{*m} (triangular inversion)."""
    P = [dict(r) for r in star_power_table(nmax)]
    Q = []
    for n in range(nmax + 1):
        # I^{*n} = I^n + sum_{j<n} P[n][j] p^{n-j} I^j, P[n][n] = 1
        row = {n: mpq(1)}
        for j, c in P[n].items():
            if j == n:
                continue
            for m, qc in Q[j].items():
                row[m] = row.get(m, 0) - c * qc
        Q.append({m: c for m, c in row.items() if c != 0})
    return tuple(tuple(sorted(r.items())) for r in Q)


def reorder_star(kappa):
    """Table {(alpha, alpha_tau, l): base poly} of kappa in star powers of |z_j|^2."""
    alg = kappa.alg
    nb = alg.nbase
    osc = alg.oscillators
    Z = to_z_basis(kappa)
    if Z.im:
        raise AlgebraError("diagonal part of a real series must have real coefficients")
    osc_slots = {i for pair in osc for i in pair}
    other = [i for i in range(nb, alg.nvars - 1) if i not in osc_slots]
    maxp = 0
    for e in Z.re:
        for ix, ip in osc:
            if e[ix] != e[ip]:
                raise AlgebraError(f"non-diagonal monomial in normal form: {e}")
            maxp = max(maxp, e[ix])
    Q = [dict(r) for r in pointwise_in_star(max(maxp, 1))]
    table = {}
    for e, c in Z.re.items():
        alpha = tuple(e[ix] for ix, _ in osc)
        tau = tuple(e[i] for i in other)
        ell = e[-1]
        base = e[:nb]
        combos = [((), 0, mpq(1))]
        for a in alpha:
            combos = [(m + (mm,), sh + a - mm, cc * qc) for (m, sh, cc) in combos for mm, qc in Q[a].items()]
        for m, sh, cc in combos:
            key = (m, tau, ell + sh)
            p = table.setdefault(key, Poly(nb))
            v = p.terms.get(base, 0) + c * cc
            if v == 0:
                p.terms.pop(base, None)
            else:
                p.terms[base] = v
    return {k: v for k, v in table.items() if not v.is_zero()}


def reconstruct(alg, table, N, T):
    """Inverse of reorder_star: sum c * tau^a' * p^l * prod_j (|z_j|^2)^{*alpha_j}."""
    nb = alg.nbase
    osc = alg.oscillators
    osc_slots = {i for pair in osc for i in pair}
    other = [i for i in range(nb, alg.nvars - 1) if i not in osc_slots]
    maxp = max((max(k[0], default=0) for k in table), default=0)
    P = [dict(r) for r in star_power_table(max(maxp, 1))]
    out = GradedSeries(alg, N, T)
    re = {}
    for (alpha, tau, ell), poly in table.items():
        # pointwise expansion of prod_j I_j^{*alpha_j} in the z basis
        combos = [((), 0, mpq(1))]
        for a in alpha:
            combos = [(j + (jj,), sh + a - jj, cc * pc) for (j, sh, cc) in combos for jj, pc in P[a].items()]
        for js, sh, cc in combos:
            for b, c in poly.terms.items():
                e = list(b) + [0] * (alg.nvars - nb)
                for (ix, ip), jj in zip(osc, js):
                    e[ix] = e[ip] = jj
                for i, t in zip(other, tau):
                    e[i] = t
                e[-1] = ell + sh
                e = tuple(e)
                re[e] = re.get(e, 0) + c * cc
    z = out.like({e: c for e, c in re.items() if c != 0 and out.keeps(e)}, {})
    return from_z_basis(z)


def _table_entries(table):
    return [{"alpha": k[0], "alpha_tau": k[1], "hbar_power": k[2], "coeff_poly": v}
            for k, v in sorted(table.items())]


# ---------------------------------------------------------------------------
# E1 front end

def h2_symbol(alg, betas, M=None, N=None, T=None):
    """H2 = <M tau, tau> + sum_j beta_j |z_j|^2 as a series.

    ``betas`` and the entries of M may be scalars or base polynomials.
    """
    N = N if N is not None else 7
    H = GradedSeries(alg, N, T)
    nb = alg.nbase
    for j, b in enumerate(betas):
        bp = b if isinstance(b, Poly) else Poly.const(nb, mpq(b) if isinstance(b, int) else b)
        H = H + _times_base(oscillator(alg, j, N, T), bp)
    if M is not None and alg.k:
        tau0 = alg.index("tau1")
        for i in range(alg.k):
            for j in range(alg.k):
                m = M[i][j]
                mp = m if isinstance(m, Poly) else Poly.const(nb, mpq(m) if isinstance(m, int) else m)
                e = [0] * (alg.nvars - nb)
                e[tau0 - nb + i] += 1
                e[tau0 - nb + j] += 1
                H = H + H.like({b + tuple(e): c for b, c in mp.terms.items() if H.keeps(b + tuple(e))}, {})
    return H


def _times_base(series, p):
    nb = series.alg.nbase
    re = {}
    for e, c in series.re.items():
        for b, cb in p.terms.items():
            e2 = tuple(x + y for x, y in zip(b, e[:nb])) + e[nb:]
            if series.keeps(e2):
                re[e2] = re.get(e2, 0) + c * cb
    return series.like({e: c for e, c in re.items() if c != 0}, {})


def birkhoff(symbol, r1, betas=None, res_tol=None):
    """First Birkhoff normal form of ``symbol`` = H2 + gamma up to degree r1."""
    if symbol.alg.tag != "E1":
        raise AlgebraError("birkhoff works in E1; use secondform for E2")
    if symbol.N < r1 - 1:
        raise AlgebraError(f"truncation N_max={symbol.N} too low for r1={r1}")
    H0, kappa, rho, final, residual, freqs = birkhoff_engine(symbol, r1, res_tol=res_tol)
    betas_at_well = [f.constant() for f in freqs]
    if betas is not None:
        for b, f in zip(betas, betas_at_well):
            if abs(float(b) - float(f)) > 1e-12 * max(1.0, abs(float(b))):
                raise AlgebraError("betas disagree with the quadratic part of the symbol")
    table = reorder_star(kappa)
    return NormalFormTable(symbol.alg, betas_at_well, r1, H0, kappa, rho, residual, _table_entries(table))


def effective_symbol(table, n):
    """Landau-sector symbol: substitute |z_j|^{2*} -> (2 n_j - 1) hbar.

    Returns a Poly in the variables (y, eta, t, tau, hbar) of E1.
    """
    alg = table.alg
    if len(n) != len(alg.oscillators) or any(nj < 1 for nj in n):
        raise ValueError("need n_j >= 1 for every oscillator")
    nb = alg.nbase
    osc = alg.oscillators
    osc_slots = {i for pair in osc for i in pair}
    keep = [i for i in range(alg.nvars) if i not in osc_slots]
    nv = len(keep)
    out = Poly(nv)
    # H0 part: oscillators enter linearly as |z_j|^2 = I_j^{*1}
    H0tab = reorder_star(table.H0)
    for src in (H0tab, {(e["alpha"], e["alpha_tau"], e["hbar_power"]): e["coeff_poly"] for e in table.entries}):
        for (alpha, tau, ell), poly in src.items():
            scal = mpq(1)
            extra = ell
            for a, nj in zip(alpha, n):
                scal *= mpq(2 * nj - 1) ** a
                extra += a
            other = [i for i in range(nb, alg.nvars - 1) if i not in osc_slots]
            for b, c in poly.terms.items():
                e = list(b) + [0] * (nv - nb)
                for slot, t in zip(other, tau):
                    e[keep.index(slot)] = t
                e[-1] = extra
                cc = c * scal if is_exact(c) else c * float(scal)
                out = out + Poly(nv, {tuple(e): cc})
    return out


def effective_names(alg):
    osc_slots = {i for pair in alg.oscillators for i in pair}
    return [n for i, n in enumerate(alg.names) if i not in osc_slots]


def commutant_residuals(kappa, r):
    """[(i/p)[kappa, |z_j|^2] restricted to degrees < r, for each j]."""
    out = []
    for j in range(len(kappa.alg.oscillators)):
        osc = oscillator(kappa.alg, j, kappa.N, kappa.T)
        out.append(kappa.bracket_over_ih(osc).degrees_below(r))
    return out


def commutant_residual(kappa, r):
    """First non-zero entry of commutant_residuals, else the zero series."""
    for res in commutant_residuals(kappa, r):
        if not res.is_zero():
            return res
    return kappa.like()


def conjugation_residual(table, symbol):
    """exp_ad(rho, symbol) - (H0 + kappa), restricted to degrees < r."""
    final = exp_ad(table.rho, symbol) if not table.rho.is_zero() else symbol
    return (final - table.H0 - table.kappa).degrees_below(table.r)
