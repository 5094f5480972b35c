"""Harmonic ladders, Hermite-basis quantisation and assembled predictions.

Conventions for one oscillator: X = sqrt(hbar/2)(a + a^+), Xi = -i sqrt(hbar/2)(a - a^+),
so [X, Xi] = i hbar and Op(x^2 + xi^2) = hbar(2 a^+ a + 1) has spectrum
(2n - 1) hbar, n >= 1.  In these terms z = x + i xi quantises to sqrt(2 hbar) a
and zbar to sqrt(2 hbar) a^+.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergenceError
from .poly import Poly
from .wellframe import e_ladder


def landau_levels(betas, hbar, count):
    """First ``count`` values of sum_j beta_j (2 n_j - 1) hbar, with multiplicity."""
    return [hbar * v for v in e_ladder(betas, count)]


# ---------------------------------------------------------------------------
# Weyl quantisation on the Hermite basis

def _z_expand(symbol):
    """Symbol in (x, xi, hbar) -> {(p, q, l): complex coeff} of z^p zbar^q hbar^l."""
    out = {}
    for (a, b, l), c in symbol.terms.items():
        c = complex(float(c.real), float(c.imag)) if isinstance(c, complex) else float(c)
        # x = (z + zb)/2, xi = -i (z - zb)/2
        for k in range(a + 1):
            for j in range(b + 1):
                coef = c * math.comb(a, k) * math.comb(b, j) * (-1) ** (b - j) * (-1j) ** b / 2 ** (a + b)
                key = (k + j, a - k + b - j, l)
                out[key] = out.get(key, 0) + coef
    return {k: v for k, v in out.items() if v != 0}


def _normal_block(r, s, size):
    """Matrix of (a^+)^r a^s on the first ``size`` number states, exact entries."""
    M = np.zeros((size, size))
    for n in range(s, size):
        m = n - s + r
        if m < size:
            M[m, n] = math.sqrt(math.prod(range(n - s + 1, n + 1)) * math.prod(range(n - s + 1, m + 1)))
    return M


def weyl_matrix(symbol, hbar, size):
    """Hermitian matrix of Op^w(symbol) on number states 0..size-1.

    Weyl-ordered a^p (a^+)^q is rewritten in normal order,
    sum_k k! C(p,k) C(q,k) 2^-k (a^+)^(q-k) a^(p-k).
    """
    H = np.zeros((size, size), dtype=complex)
    for (p, q, l), c in _z_expand(symbol).items():
        scale = c * hbar ** l * (2 * hbar) ** ((p + q) / 2)
        for k in range(min(p, q) + 1):
            w = math.factorial(k) * math.comb(p, k) * math.comb(q, k) / 2 ** k
            H += scale * w * _normal_block(q - k, p - k, size)
    return H


def weyl_matrix_symmetrised(symbol, hbar, size):
    """Oracle: full symmetrisation of X and Xi products, no ordering formula."""
    big = size + 2 * _degree(symbol) + 2
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    ad = a.T
    X = math.sqrt(hbar / 2) * (a + ad)
    Xi = -1j * math.sqrt(hbar / 2) * (a - ad)
    H = np.zeros((big, big), dtype=complex)
    for (p, q, l), c in symbol.terms.items():
        words = set(itertools.permutations("x" * p + "k" * q))
        acc = np.zeros((big, big), dtype=complex)
        for wd in words:
            m = np.eye(big, dtype=complex)
            for ch in wd:
                m = m @ (X if ch == "x" else Xi)
            acc += m
        H += complex(c) * hbar ** l * acc / len(words)
    return H[:size, :size]


def _degree(symbol):
    return max((a + b for a, b, _ in symbol.terms), default=0)


@dataclass
class HermiteResult:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    tail_change: float
    basis_size: int


def hermite_quantize_1d(symbol, hbar, basis_size=400, count=10, tail_tol=1e-10):
    """Eigenvalues of Op^w(symbol) truncated to ``basis_size`` number states.

    The lowest ``count`` eigenvalues are recomputed on a doubled basis and
    must move by less than ``tail_tol``.
    """
    if symbol.nvars != 3:
        raise ValueError("symbol must be a polynomial in (x, xi, hbar)")
    if _degree(symbol) > 8:
        raise ValueError("fibre degree above 8 is not supported")
    if basis_size < 100:
        raise ValueError("basis_size must be at least 100")
    H = weyl_matrix(symbol, hbar, basis_size)
    if np.max(np.abs(H - H.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
        raise ValueError("symbol is not real: quantisation is not Hermitian")
    ev = np.linalg.eigvalsh(H)[:count]
    H2 = weyl_matrix(symbol, hbar, 2 * basis_size)
    ev2 = np.linalg.eigvalsh(H2)[:count]
    change = float(np.max(np.abs(ev - ev2))) if count else 0.0
    if change >= tail_tol:
        raise NonConvergenceError(f"Hermite truncation not converged: doubling the basis moved "
                                  f"eigenvalues by {change:.3e}")
    return HermiteResult(H, ev, change, basis_size)


# ---------------------------------------------------------------------------
# Assembled predictions

@dataclass
class SpectralPrediction:
    b0: float
    nu0: float
    E: list
    c0: float = None
    c0_status: str = "to be fitted"
    window: tuple = (0.0, 0.0)
    mus: list = field(default_factory=list)
    nus: list = field(default_factory=list)

    @property
    def coefficients(self):
        c = self.c0 if self.c0 is not None else 0.0
        return [(self.b0, self.nu0, e + c) for e in self.E]

    @property
    def spacings(self):
        return [self.E[i + 1] - self.E[i] for i in range(len(self.E) - 1)]

    def level(self, j, hbar, c0=None):
        c = c0 if c0 is not None else (self.c0 or 0.0)
        return hbar * (self.b0 + math.sqrt(hbar) * self.nu0 + hbar * (self.E[j - 1] + c))

    def to_json(self):
        return {
            "b0": self.b0,
            "nu0": self.nu0,
            "nus": list(self.nus),
            "mus": list(self.mus),
            "E_ladder": list(self.E),
            "spacing_predictions": self.spacings,
            "c0": self.c0 if self.c0 is not None else self.c0_status,
            "coefficients": [list(c) for c in self.coefficients],
            "hbar_window": list(self.window),
        }

    def ladder_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["level", "alpha0", "alpha1", "alpha2", "E"])
        for j, ((a0, a1, a2), e) in enumerate(zip(self.coefficients, self.E), 1):
            wr.writerow([j, f"{a0:.12g}", f"{a1:.12g}", f"{a2:.12g}", f"{e:.12g}"])
        return buf.getvalue()


def _window(b0, nu0, E):
    """hbar below which each correction is at most half the previous scale."""
    caps = []
    if nu0 > 0:
        caps.append((b0 / (2 * nu0)) ** 2)
    if E and E[-1] > 0:
        caps.append(b0 / (2 * E[-1]))
    return (0.0, min(caps) if caps else math.inf)


def assemble_prediction(well, quad, tables=None, levels=4):
    """Per-level coefficients (b0, nu(0), E_j + c0).

    ``tables`` may carry ``"M1"``, the effective symbol M^[1](w, h) of an
    explicit-symbol run; c0 is then computed from it.
    """
    from .secondform import c0_from_m1

    E = e_ladder(quad.mus, levels)
    b0 = float(well.b0)
    nu0 = float(np.sum(quad.nus))
    c0, status = None, "to be fitted"
    if tables and tables.get("M1") is not None:
        c0 = c0_from_m1(tables["M1"], len(quad.mus))
        status = "computed"
    return SpectralPrediction(b0, nu0, E, c0, status, _window(b0, nu0, E),
                              [float(m) for m in quad.mus], [float(n) for n in quad.nus])


def prediction_from_m1(M1, s, levels=4):
    """Prediction read entirely off an explicit M^[1](w, h) (s drift pairs)."""
    from .secondform import c0_from_m1
    from .wellframe import symplectic_eigenvalues

    nw = 2 * s
    h = M1.nvars - 1

    def part(p):
        return Poly(nw, {e[:nw]: c for e, c in M1.terms.items() if e[h] == p})

    b0 = float(part(0).constant())
    nu0 = float(part(1).constant())
    S = np.array([[float(part(0).diff(i).diff(j).constant()) for j in range(nw)] for i in range(nw)])
    mus = symplectic_eigenvalues(0.5 * S) if nw else np.zeros(0)
    E = e_ladder(mus, levels)
    c0 = c0_from_m1(M1, s)
    return SpectralPrediction(b0, nu0, E, c0, "computed", _window(b0, nu0, E),
                              [float(m) for m in mus], [])
