"""Symplectic frames and quadratic data at a magnetic well.

Phase-space vectors are pairs (Q, P) in R^d x R^d, flattened to R^2d.  The
two-form is evaluated as omega((Q1,P1),(Q2,P2)) = <P2,Q1> - <P1,Q2>, and the
same rule with (y, eta) in place of (q, p) evaluates deta^dy on the chart.
"""

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import AssumptionError
from .maggeom import (fd_hessian, intensity, resonance_order, spectrum_at,
                      two_form)


@dataclass
class FrameData:
    q0: np.ndarray
    s: int
    k: int
    betas: np.ndarray
    jac: np.ndarray          # jac[k, l] = d_l A_k at q0
    metric: np.ndarray
    f: np.ndarray            # columns f_j in R^2d
    fp: np.ndarray           # columns f_j'
    g: np.ndarray            # columns g_j spanning L
    L0: np.ndarray           # d x (2s+k): linear Darboux jet in q-space
    dphi: np.ndarray         # 2d x (2s+k): its lift to T Sigma

    @property
    def kernel_images(self):
        return self.dphi[:, 2 * self.s:]


@dataclass
class QuadData:
    M0: np.ndarray
    Kt: np.ndarray
    cross: np.ndarray
    Hw: np.ndarray
    Htt: np.ndarray
    s_jet: np.ndarray
    schur: np.ndarray
    nus: np.ndarray
    mus: np.ndarray
    P: np.ndarray
    block_check: float


def omega(a, b):
    d = len(a) // 2
    return float(b[d:] @ a[:d] - a[d:] @ b[:d])


def omega_matrix(d):
    """Matrix W with omega(a, b) = a^T W b."""
    W = np.zeros((2 * d, 2 * d))
    W[:d, d:] = np.eye(d)
    W[d:, :d] = -np.eye(d)
    return W


def chart_form(a, b, s):
    """deta^dy on (y, eta, t) vectors, same evaluation rule as omega."""
    return float(b[s:2 * s] @ a[:s] - a[s:2 * s] @ b[:s])


def jacobian_at(spec, q):
    d = spec.dimension
    J = np.zeros((d, d))
    for k in range(d):
        for l in range(d):
            J[k, l] = float(spec.potential[k].diff(l).evaluate(tuple(q)))
    return J


def half_hessian_H(ginv, J, a, b):
    """(1/2) Hessian of H = |p - A(q)|^2_g at a point of Sigma, on (a, b)."""
    d = J.shape[0]
    ra = a[d:] - J @ a[:d]
    rb = b[d:] - J @ b[:d]
    return float(ra @ ginv @ rb)


def build_frames(well, spec, B=None):
    B = B or two_form(spec)
    q0 = np.asarray(well.q0, dtype=float)
    sp = spectrum_at(spec, q0, B)
    d, s, k = spec.dimension, sp.s, sp.k
    J = jacobian_at(spec, q0)
    sq = np.sqrt(sp.betas)
    f = np.vstack([sp.u, J.T @ sp.u]) / sq if s else np.zeros((2 * d, 0))
    fp = np.vstack([sp.v, J.T @ sp.v]) / sq if s else np.zeros((2 * d, 0))
    L0 = np.hstack([sp.v / sq, sp.u / sq, sp.w]) if d else np.zeros((d, 0))
    dphi = np.vstack([L0, J @ L0])
    W = omega_matrix(d)
    if k:
        E = dphi[:, :2 * s]
        K = dphi[:, 2 * s:]
        # omega(g, c) = g^T W c, one row per constraint vector c
        A = (W @ np.hstack([E, f, fp, K])).T
        rhs = np.zeros((A.shape[0], k))
        rhs[-k:, :] = np.eye(k)
        G, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        resid = np.linalg.norm(A @ G - rhs)
        if resid > 1e-8 * max(1.0, np.linalg.norm(A)):
            raise AssumptionError(2, "singular system for the Lagrangian complement")
        om0 = G.T @ W @ G
        G = G + K @ (0.5 * om0).T
    else:
        G = np.zeros((2 * d, 0))
    return FrameData(q0, s, k, sp.betas, J, spec.metric_at(q0), f, fp, G, L0, dphi)


def frame_invariants(fr):
    """Largest violation of the symplectic relations among the frame vectors."""
    s, k = fr.s, fr.k
    errs = [0.0]
    for i in range(s):
        for j in range(s):
            errs.append(abs(omega(fr.f[:, i], fr.f[:, j])))
            errs.append(abs(omega(fr.fp[:, i], fr.fp[:, j])))
            errs.append(abs(omega(fr.f[:, i], fr.fp[:, j]) - (i == j)))
    for i in range(k):
        for j in range(s):
            errs.append(abs(omega(fr.g[:, i], fr.f[:, j])))
            errs.append(abs(omega(fr.g[:, i], fr.fp[:, j])))
        for j in range(k):
            errs.append(abs(omega(fr.g[:, i], fr.g[:, j])))
            errs.append(abs(omega(fr.g[:, i], fr.kernel_images[:, j]) - (i == j)))
    n = 2 * s + k
    for a in range(n):
        for b in range(n):
            ea, eb = np.eye(n)[a], np.eye(n)[b]
            errs.append(abs(omega(fr.dphi @ ea, fr.dphi @ eb) - chart_form(ea, eb, s)))
    return max(errs)


def symplectic_eigenvalues(Q):
    """Positive imaginary parts of the eigenvalues of J Q (J standard)."""
    n = Q.shape[0] // 2
    if n == 0:
        return np.zeros(0)
    Jm = np.zeros((2 * n, 2 * n))
    Jm[:n, n:] = np.eye(n)
    Jm[n:, :n] = -np.eye(n)
    ev = np.linalg.eigvals(Jm @ Q)
    return np.sort(ev.imag[ev.imag > 0])[::-1]


def reduce_pair(M, Kt):
    """Co-reduction: P with P^T M^-1 P = I and P^T Kt P = diag(nu^2), nu descending."""
    M = np.asarray(M, dtype=float)
    Kt = np.asarray(Kt, dtype=float)
    lam, V = np.linalg.eigh(M)
    if lam.min() <= 0:
        raise AssumptionError(1, "M is not positive definite")
    Mh = (V * np.sqrt(lam)) @ V.T
    S = Mh @ Kt @ Mh
    S = 0.5 * (S + S.T)
    mu, U = np.linalg.eigh(S)
    if mu.min() <= 0:
        raise AssumptionError(1, "the t-Hessian of the intensity is not positive definite")
    order = np.argsort(-mu)
    mu, U = mu[order], U[:, order]
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
    P = Mh @ U
    return P, np.sqrt(mu)


def hessian_data(fr, well, spec, B=None, hess_b=None):
    B = B or two_form(spec)
    s, k = fr.s, fr.k
    ginv = np.linalg.inv(fr.metric)
    # block check: the Hessian of H in the frame basis
    block = [0.0]
    for i in range(s):
        for j in range(s):
            target = math.sqrt(fr.betas[i] * fr.betas[j]) * (i == j)
            block.append(abs(half_hessian_H(ginv, fr.jac, fr.f[:, i], fr.f[:, j]) - target))
            block.append(abs(half_hessian_H(ginv, fr.jac, fr.fp[:, i], fr.fp[:, j]) - target))
            block.append(abs(half_hessian_H(ginv, fr.jac, fr.f[:, i], fr.fp[:, j])))
        for j in range(k):
            block.append(abs(half_hessian_H(ginv, fr.jac, fr.g[:, j], fr.f[:, i])))
            block.append(abs(half_hessian_H(ginv, fr.jac, fr.g[:, j], fr.fp[:, i])))
    bc = max(block)
    if bc > 1e-8 * max(1.0, float(np.max(fr.betas, initial=1.0))):
        raise AssumptionError(3, f"Hessian block check failed ({bc:.2e})")
    M0 = np.array([[half_hessian_H(ginv, fr.jac, fr.g[:, i], fr.g[:, j]) for j in range(k)] for i in range(k)])
    Hb = hess_b if hess_b is not None else well.hess_b
    Hphi = fr.L0.T @ Hb @ fr.L0
    Hphi = 0.5 * (Hphi + Hphi.T)
    n = 2 * s
    Hw, cross, Htt = Hphi[:n, :n], Hphi[:n, n:], Hphi[n:, n:]
    Kt = 0.5 * Htt
    if k:
        if np.linalg.eigvalsh(Kt).min() <= 0:
            raise AssumptionError(1, "the t-Hessian of the intensity is not positive definite")
        s_jet = -np.linalg.solve(Htt, cross.T)
        schur = Hw - cross @ np.linalg.solve(Htt, cross.T)
        P, nus = reduce_pair(M0, Kt)
    else:
        s_jet = np.zeros((0, n))
        schur = Hw.copy()
        P, nus = np.zeros((0, 0)), np.zeros(0)
    schur = 0.5 * (schur + schur.T)
    mus = symplectic_eigenvalues(0.5 * schur)
    return QuadData(M0, Kt, cross, Hw, Htt, s_jet, schur, nus, mus, P, bc)


def nus_from_product(M0, Kt):
    """nu^2 as eigenvalues of M0 Kt (unsymmetrised route)."""
    ev = np.linalg.eigvals(M0 @ Kt)
    return np.sort(np.sqrt(ev.real))[::-1]


def nus_generalized(M0, Kt):
    """nu^2 as generalised eigenvalues of (Kt, M0^-1)."""
    ev = sla.eigh(Kt, np.linalg.inv(M0), eigvals_only=True)
    return np.sort(np.sqrt(ev))[::-1]


def e_ladder(mus, m):
    """First m values of sum_i mu_i (2 n_i - 1), n_i >= 1, with multiplicity."""
    mus = [float(x) for x in mus]
    if m <= 0:
        return []
    if not mus:
        return [0.0][:m]
    start = (1,) * len(mus)
    val = lambda n: sum(mu * (2 * ni - 1) for mu, ni in zip(mus, n))
    heap = [(val(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < m:
        v, n = heapq.heappop(heap)
        out.append(v)
        for i in range(len(n)):
            nn = n[:i] + (n[i] + 1,) + n[i + 1:]
            if nn not in seen:
                seen.add(nn)
                heapq.heappush(heap, (val(nn), nn))
    return out


@dataclass
class Prediction:
    b0: float
    nu0: float
    E: list
    spacings: list
    c0: object = "unknown unless provided by the explicit-symbol pipeline"

    def level(self, j, hbar, c0=None):
        c = c0 if c0 is not None else 0.0
        return hbar * (self.b0 + math.sqrt(hbar) * self.nu0 + hbar * (self.E[j - 1] + c))


def predict_expansion(well, quad, count=4):
    E = e_ladder(quad.mus, count)
    sp = [E[i + 1] - E[i] for i in range(len(E) - 1)]
    return Prediction(float(well.b0), float(np.sum(quad.nus)), E, sp)


def analyze_well(spec, guess=None):
    """find_well + frames + quadratic data, with Assumption 4 and r2 filled in."""
    from .maggeom import find_well
    B = two_form(spec)
    well = find_well(spec, guess, B=B)
    fr = build_frames(well, spec, B)
    quad = hessian_data(fr, well, spec, B)
    gap_tol = float(spec.options.get("beta_gap_tol", 1e-6))
    cap = int(spec.options.get("resonance_cap", 10))
    nus = quad.nus
    if len(nus) > 1:
        gaps = [(nus[i] - nus[i + 1]) / nus[0] for i in range(len(nus) - 1)]
        well.assumption_flags["assumption4"] = all(g > gap_tol for g in gaps)
        well.diagnostics["nu_relative_gaps"] = gaps
    else:
        well.assumption_flags["assumption4"] = True
    well.r2 = resonance_order(nus, cap) if len(nus) else cap
    well.diagnostics["frame_invariant_error"] = frame_invariants(fr)
    well.diagnostics["hessian_block_error"] = quad.block_check
    return well, fr, quad


def check_well_flags(well):
    for name in ("assumption1", "assumption2", "assumption3", "assumption4"):
        v = well.assumption_flags.get(name)
        if v is False:
            raise AssumptionError(int(name[-1]), f"flag {name} failed at the well")


def intensity_along_chart(spec, fr, B=None):
    """b composed with the linear chart: (w, t) -> b(q0 + L0 (w, t))."""
    B = B or two_form(spec)
    return lambda x: intensity(spec, fr.q0 + fr.L0 @ np.asarray(x), B)


def chart_hessian(spec, fr, B=None):
    return fd_hessian(intensity_along_chart(spec, fr, B), np.zeros(fr.L0.shape[1]))
