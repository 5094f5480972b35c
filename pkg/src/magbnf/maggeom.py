"""Field specifications, the magnetic two-form and its pointwise spectrum.

The potential and the metric are exact polynomials.  The two-form
B_ij = d_i A_j - d_j A_i is therefore exact too; only the spectrum of the
field endomorphism (B as an operator through the metric) is computed in
floating point.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from gmpy2 import mpq

from .errors import (AssumptionError, ConfigError, DegenerateWellError,
                     NonConvergenceError, RankAmbiguityError)
from .expr import ExprError, parse_poly
from .poly import Poly

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib


DEFAULT_OPTIONS = {
    "rank_tol": 1e-8,
    "resonance_cap": 10,
    "beta_gap_tol": 1e-6,
}


@dataclass(eq=False)
class FieldSpec:
    dimension: int
    potential: list
    metric: list
    box: list
    well_guess: list
    options: dict = field(default_factory=dict)
    flat: bool = True
    source: str = ""

    @property
    def names(self):
        return [f"q{i + 1}" for i in range(self.dimension)]

    def metric_at(self, q):
        d = self.dimension
        g = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                g[i, j] = float(self.metric[i][j].evaluate(tuple(q)))
        return g

    def potential_at(self, q):
        return np.array([float(a.evaluate(tuple(q))) for a in self.potential])

    def gauge_shift(self, chi):
        """Same field with A replaced by A + grad(chi)."""
        if isinstance(chi, str):
            chi = parse_poly(chi, self.names)
        pot = [a + chi.diff(i) for i, a in enumerate(self.potential)]
        return FieldSpec(self.dimension, pot, self.metric, list(self.box),
                         list(self.well_guess), dict(self.options), self.flat, self.source)

    def permuted(self, perm):
        """Relabel coordinates: new q_i is old q_perm[i]."""
        d = self.dimension
        inv = [perm.index(i) for i in range(d)]
        subs = [Poly.var(d, inv[i]) for i in range(d)]
        pot = [self.potential[perm[i]].compose(subs) for i in range(d)]
        met = [[self.metric[perm[i]][perm[j]].compose(subs) for j in range(d)] for i in range(d)]
        return FieldSpec(d, pot, met, [self.box[p] for p in perm],
                         [self.well_guess[p] for p in perm], dict(self.options), self.flat, self.source)


@dataclass
class TwoFormB:
    dimension: int
    B: list

    def at(self, q):
        d = self.dimension
        m = np.zeros((d, d))
        for i in range(d):
            for j in range(i + 1, d):
                v = float(self.B[i][j].evaluate(tuple(q)))
                m[i, j], m[j, i] = v, -v
        return m


@dataclass
class SkewSpectrum:
    q: np.ndarray
    betas: np.ndarray
    s: int
    k: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    bmat: np.ndarray
    metric: np.ndarray


@dataclass
class WellReport:
    q0: np.ndarray
    b0: float
    grad_norm: float
    hess_b: np.ndarray
    betas: np.ndarray
    s: int
    k: int
    assumption_flags: dict
    diagnostics: dict
    r1: int
    r2: int = None
    iterations: int = 0


def _line_of(text, needle):
    if not text or not needle:
        return None
    idx = text.find(needle)
    if idx < 0:
        return None
    return text.count("\n", 0, idx) + 1


def _num(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float, str)):
        raise ConfigError(f"{what} must be a number")
    if isinstance(x, str):
        try:
            return mpq(x)
        except ValueError:
            raise ConfigError(f"{what}: cannot read {x!r} as a number")
    return mpq(x) if isinstance(x, int) else x


def parse_field(config_text):
    """Build a FieldSpec from TOML-formatted configuration text."""
    try:
        data = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from exc
    return field_from_dict(data, config_text)


def load_field(path):
    with open(path, encoding="utf-8") as fh:
        return parse_field(fh.read())


def field_from_dict(data, text=""):
    if "dimension" not in data:
        raise ConfigError("missing key 'dimension'")
    d = data["dimension"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 2:
        raise ConfigError("dimension must be an integer >= 2")
    names = [f"q{i + 1}" for i in range(d)]

    def parse(expr, what):
        try:
            return parse_poly(expr, names)
        except ExprError as exc:
            line = _line_of(text, expr) if isinstance(expr, str) else None
            raise ExprError(f"{what}: {exc.message}", exc.text, exc.column, line) from exc

    pot = data.get("potential")
    if not isinstance(pot, list) or len(pot) != d:
        raise ConfigError(f"potential must be a list of {d} expressions")
    potential = [parse(e, f"potential[{i}]") for i, e in enumerate(pot)]

    met = data.get("metric")
    if met is None:
        metric = [[Poly.const(d, mpq(int(i == j))) for j in range(d)] for i in range(d)]
        flat = True
    else:
        if not isinstance(met, list) or len(met) != d or any(not isinstance(r, list) or len(r) != d for r in met):
            raise ConfigError(f"metric must be a {d}x{d} array of expressions")
        metric = [[parse(met[i][j], f"metric[{i}][{j}]") for j in range(d)] for i in range(d)]
        for i in range(d):
            for j in range(i + 1, d):
                if metric[i][j] != metric[j][i]:
                    raise ConfigError(f"asymmetric metric: entries ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")
        flat = all(metric[i][j] == int(i == j) for i in range(d) for j in range(d))

    box = data.get("box", [8] * d)
    if not isinstance(box, list) or len(box) != d:
        raise ConfigError(f"box must list {d} half-widths")
    box = [_num(x, "box") for x in box]
    if any(x <= 0 for x in box):
        raise ConfigError("box half-widths must be positive")
    guess = data.get("well_guess", [0] * d)
    if not isinstance(guess, list) or len(guess) != d:
        raise ConfigError(f"well_guess must have {d} entries")
    guess = [_num(x, "well_guess") for x in guess]

    options = dict(DEFAULT_OPTIONS)
    user = data.get("options", {})
    if not isinstance(user, dict):
        raise ConfigError("options must be a table")
    options.update(user)

    spec = FieldSpec(d, potential, metric, box, guess, options, flat, text)
    if not flat:
        check_metric(spec)
    return spec


def make_field(potential, metric=None, box=None, well_guess=None, **options):
    """Programmatic constructor mirroring the config schema."""
    d = len(potential)
    data = {"dimension": d, "potential": list(potential)}
    if metric is not None:
        data["metric"] = metric
    if box is not None:
        data["box"] = list(box)
    if well_guess is not None:
        data["well_guess"] = list(well_guess)
    if options:
        data["options"] = options
    return field_from_dict(data)


def sample_points(spec, per_axis=7):
    axes = [np.linspace(-float(L), float(L), per_axis) for L in spec.box]
    return [np.array(p) for p in itertools.product(*axes)]


def check_metric(spec, per_axis=7):
    for q in sample_points(spec, per_axis):
        try:
            np.linalg.cholesky(spec.metric_at(q))
        except np.linalg.LinAlgError:
            raise ConfigError(f"metric is not positive definite at {q.tolist()}")


def two_form(spec):
    d = spec.dimension
    A = spec.potential
    B = [[Poly(d) for _ in range(d)] for _ in range(d)]
    for i in range(d):
        for j in range(d):
            B[i][j] = A[j].diff(i) - A[i].diff(j)
    for i, j, k in itertools.combinations(range(d), 3):
        if not (B[i][j].diff(k) + B[j][k].diff(i) + B[k][i].diff(j)).is_zero():
            raise AssertionError("two-form is not closed")
    return TwoFormB(d, B)


def bmatrix_at(spec, B, q):
    """Field endomorphism at q, defined by B(X, Y) = g(X, Bop Y)."""
    g = spec.metric_at(q)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise AssumptionError(0, f"metric not positive definite at {list(q)}")
    return np.linalg.solve(g, B.at(q))


def _sym_sqrt(g):
    lam, vec = np.linalg.eigh(g)
    r = np.sqrt(lam)
    return (vec * r) @ vec.T, (vec / r) @ vec.T


def _canonical_kernel(P, g, tol=1e-12):
    """Deterministic g-orthonormal basis of the range of the g-projector P."""
    d = P.shape[0]
    cols = []
    k = int(round(np.trace(P)))
    cand = [P[:, i] for i in range(d)]
    for _ in range(k):
        best, bn = None, -1.0
        for c in cand:
            r = c.copy()
            for w in cols:
                r = r - (w @ g @ r) * w
            n = math.sqrt(max(r @ g @ r, 0.0))
            if n > bn + tol:
                best, bn = r, n
        w = best / bn
        i = int(np.argmax(np.abs(w)))
        cols.append(w if w[i] > 0 else -w)
    return np.array(cols).T.reshape(d, k)


def skew_eigen(bmat, g, rank_tol=None, rel_rank_tol=1e-8):
    """Spectrum +-i beta_j of a g-skew endomorphism, with g-orthonormal frames."""
    d = bmat.shape[0]
    gh, gih = _sym_sqrt(g)
    S = gh @ bmat @ gih
    S = 0.5 * (S - S.T)
    nrm = np.linalg.norm(S, 2)
    tol = rank_tol if rank_tol is not None else rel_rank_tol * nrm
    lam, vec = np.linalg.eigh(1j * S)
    ambiguous = [x for x in np.abs(lam) if tol / 10 <= x <= tol * 10 and nrm > 0]
    if ambiguous:
        raise RankAmbiguityError(f"eigenvalue modulus {ambiguous[0]:.3e} within a decade of rank_tol {tol:.3e}")
    pos = [i for i in range(d) if lam[i] > tol]
    pos.sort(key=lambda i: -lam[i])
    s = len(pos)
    k = d - 2 * s
    betas = np.array([lam[i] for i in pos])
    u = np.zeros((d, s))
    v = np.zeros((d, s))
    for j, i in enumerate(pos):
        phi = gih @ vec[:, i]
        m = int(np.argmax(np.abs(phi) * (1 - 1e-12 * np.arange(d))))
        phase = 1j * np.conj(phi[m]) / abs(phi[m])
        psi = vec[:, i] * phase
        # psi = a + i b with S a = beta b, S b = -beta a
        u[:, j] = gih @ (math.sqrt(2) * psi.imag)
        v[:, j] = gih @ (math.sqrt(2) * psi.real)
    if k > 0:
        kv = np.linalg.eigh(S.T @ S)[1][:, :k]
        W = gih @ kv
        P = W @ W.T @ g
        w = _canonical_kernel(P, g)
    else:
        w = np.zeros((d, 0))
    return SkewSpectrum(None, betas, s, k, u, v, w, bmat, g)


def spectrum_at(spec, q, B=None):
    B = B or two_form(spec)
    q = np.asarray(q, dtype=float)
    bm = bmatrix_at(spec, B, q)
    sp = skew_eigen(bm, spec.metric_at(q), rel_rank_tol=float(spec.options.get("rank_tol", 1e-8)))
    sp.q = q
    return sp


def betas_at(spec, q, B=None):
    """Nonzero eigenvalue moduli at q, sorted descending (no frames)."""
    B = B or two_form(spec)
    g = spec.metric_at(q)
    _, gih = _sym_sqrt(g)
    S = gih @ B.at(q) @ gih
    lam = np.linalg.eigvalsh(1j * 0.5 * (S - S.T))
    nrm = max(abs(lam[0]), abs(lam[-1]))
    tol = float(spec.options.get("rank_tol", 1e-8)) * nrm
    return np.sort(lam[lam > tol])[::-1]


def intensity(spec, q, B=None):
    return float(np.sum(betas_at(spec, q, B)))


# ---------------------------------------------------------------------------
# Finite differences.  A central stencil is extrapolated over three step
# sizes (Richardson), which brings the error well below what a single
# central step can reach in double precision.

def _richardson(values):
    # values[i] computed with step h/2**i, error series in even powers of h
    table = [list(values)]
    for m in range(1, len(values)):
        f = 4.0 ** m
        prev = table[-1]
        table.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
    return table[-1][0]


def fd_gradient(f, q, h=None, levels=3):
    q = np.asarray(q, dtype=float)
    h = h if h is not None else 1e-2 * (1 + np.linalg.norm(q))
    g = np.zeros(len(q))
    for i in range(len(q)):
        vals = []
        for lvl in range(levels):
            hh = h / 2 ** lvl
            e = np.zeros(len(q))
            e[i] = hh
            vals.append((f(q + e) - f(q - e)) / (2 * hh))
        g[i] = _richardson(vals)
    return g


def fd_hessian(f, q, h=None, levels=3):
    q = np.asarray(q, dtype=float)
    d = len(q)
    h = h if h is not None else 2e-2 * (1 + np.linalg.norm(q))
    H = np.zeros((d, d))
    f0 = f(q)
    for i in range(d):
        for j in range(i, d):
            vals = []
            for lvl in range(levels):
                hh = h / 2 ** lvl
                ei = np.zeros(d)
                ei[i] = hh
                if i == j:
                    vals.append((f(q + ei) - 2 * f0 + f(q - ei)) / hh ** 2)
                else:
                    ej = np.zeros(d)
                    ej[j] = hh
                    vals.append((f(q + ei + ej) - f(q + ei - ej) - f(q - ei + ej) + f(q - ei - ej)) / (4 * hh ** 2))
            H[i, j] = H[j, i] = _richardson(vals)
    return H


def resonance_order(values, cap, tol=1e-9):
    """Smallest |alpha|_1 of an integer resonance among ``values`` (capped)."""
    v = [float(x) for x in values]
    if any(x <= 0 for x in v):
        raise ValueError("frequencies must be positive")
    m = len(v)
    if m == 0:
        return cap
    vmax = max(v)
    for n in range(1, cap):
        for alpha in _lattice_shell(m, n):
            if abs(sum(a * x for a, x in zip(alpha, v))) <= tol * vmax:
                return n
    return cap


def _lattice_shell(m, n):
    # integer vectors with |alpha|_1 = n, first nonzero entry positive
    def comps(m, n):
        if m == 1:
            yield (n,)
            return
        for a in range(n + 1):
            for rest in comps(m - 1, n - a):
                yield (a,) + rest

    for c in comps(m, n):
        nz = [i for i in range(m) if c[i]]
        for signs in itertools.product((1, -1), repeat=len(nz) - 1):
            a = list(c)
            for i, sg in zip(nz[1:], signs):
                a[i] = sg * a[i]
            yield tuple(a)


def find_well(spec, guess=None, max_iter=60, B=None):
    """Newton minimisation of the intensity with finite-difference derivatives."""
    B = B or two_form(spec)
    q = np.array([float(x) for x in (guess if guess is not None else spec.well_guess)])
    opts = spec.options
    gap_tol = float(opts.get("beta_gap_tol", 1e-6))

    def b(x):
        return intensity(spec, x, B)

    s0 = len(betas_at(spec, q, B))
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        bq = b(q)
        grad = fd_gradient(b, q)
        if np.linalg.norm(grad) < 1e-9 * max(1.0, bq):
            converged = True
            break
        H = fd_hessian(b, q)
        lam = np.linalg.eigvalsh(H)
        if lam[0] > 1e-10 * max(1.0, abs(lam[-1])):
            step = -np.linalg.solve(H, grad)
        else:
            step = -grad
        t = 1.0
        while t > 1e-12:
            trial = q + t * step
            if len(betas_at(spec, trial, B)) == s0 and b(trial) <= bq + 1e-14 * max(1.0, abs(bq)):
                break
            t *= 0.5
        else:
            break
        q = trial
    H = fd_hessian(b, q)
    b0 = b(q)
    grad = fd_gradient(b, q)
    if not converged:
        raise NonConvergenceError(f"well search did not converge in {max_iter} iterations "
                                  f"(|grad b| = {np.linalg.norm(grad):.3e} at {q.tolist()})")
    lam = np.linalg.eigvalsh(H)
    scale = max(1.0, abs(b0))
    if lam[0] <= 1e-6 * scale:
        raise DegenerateWellError(f"Hessian of b at {q.tolist()} has eigenvalue {lam[0]:.3e}")

    sp = spectrum_at(spec, q, B)
    betas = sp.betas
    gaps = [(betas[i] - betas[i + 1]) / betas[0] for i in range(len(betas) - 1)]
    a3 = all(gp > gap_tol for gp in gaps)
    # sampled neighbourhood of the well
    rad = 0.05 * max(1.0, float(min(spec.box)))
    collisions = []
    ranks = set()
    for off in itertools.product((-1, 0, 1), repeat=spec.dimension):
        x = q + rad * np.array(off)
        bx = betas_at(spec, x, B)
        ranks.add(len(bx))
        if any((bx[i] - bx[i + 1]) / bx[0] <= gap_tol for i in range(len(bx) - 1)):
            collisions.append(x.tolist())
    if not a3:
        raise AssumptionError(3, f"beta_j(q0) not distinct (relative gaps {gaps})")
    if collisions:
        raise AssumptionError(3, f"beta collision near the well at {collisions[0]}")

    samples = sample_points(spec)
    bvals = []
    for x in samples:
        bx = betas_at(spec, x, B)
        ranks.add(len(bx))
        bvals.append(float(np.sum(bx)))
    a2 = len(ranks) == 1
    sampled_min = min(bvals)
    boundary = [bv for x, bv in zip(samples, bvals)
                if any(abs(abs(xi) - float(L)) < 1e-12 for xi, L in zip(x, spec.box))]
    b_inf = min(boundary) if boundary else math.inf
    a1 = sampled_min >= b0 - 1e-9 * scale and b_inf > b0
    flags = {
        "assumption1": bool(a1),
        "assumption1_scope": "sampled",
        "assumption2": bool(a2),
        "assumption3": bool(a3),
        "assumption4": None,
    }
    diag = {
        "sampled_min_b": sampled_min,
        "sampled_boundary_min_b": b_inf,
        "ranks_seen": sorted(ranks),
        "beta_relative_gaps": gaps,
        "hessian_eigenvalues": lam.tolist(),
    }
    cap = int(opts.get("resonance_cap", 10))
    r1 = resonance_order(betas, cap) if len(betas) else cap
    return WellReport(q, b0, float(np.linalg.norm(grad)), H, betas, sp.s, sp.k,
                      flags, diag, r1, None, it)
