"""Ulam discretization of transfer-operator cocycles.

Densities live on the uniform grid of ``k`` cells ``A_i = [i/k, (i+1)/k)``
and are stored as vectors of cell values.  An :class:`UlamOperator` holds the
row-action matrix ``P[i, j] = m(A_i & T^-1 A_j) / m(A_i)``; the transfer
operator acts on a density vector ``v`` as ``P.T @ v``.
"""

import functools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .maps import MapParameter

FLOOR = 1e-10


class DensityConvergenceError(RuntimeError):
    """Pull-back iteration for the equivariant density did not settle."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


# -- norms ------------------------------------------------------------------

def weak_norm(v):
    """L1 norm of a grid function (column-wise for 2-d input)."""
    v = np.asarray(v)
    return np.abs(v).sum(axis=0) / v.shape[0]


def variation(v):
    v = np.asarray(v)
    return np.abs(np.diff(v, axis=0)).sum(axis=0)


def strong_norm(v):
    """Discrete BV norm: non-periodic variation plus L1."""
    return variation(v) + weak_norm(v)


def integral(v):
    v = np.asarray(v)
    return v.sum(axis=0) / v.shape[0]


@dataclass(frozen=True)
class NormPair:
    strong: float
    weak: float


def norms(v):
    return NormPair(float(strong_norm(v)), float(weak_norm(v)))


# -- single-map operators ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Row-action Ulam matrix (sparse), optionally twisted (complex)."""

    k: int
    matrix: sp.csr_matrix
    twist: Optional[tuple] = None
    fiber_index: Optional[int] = None

    @property
    def entries(self):
        return self.matrix.toarray()

    def apply(self, v):
        """Transfer a density vector (or columns of vectors)."""
        return self.matrix.T @ np.asarray(v)

    def __matmul__(self, other):
        """Cocycle product: ``self`` is applied first, ``other`` second."""
        return UlamOperator(self.k, (self.matrix @ other.matrix).tocsr())


def _check_grid(k):
    if int(k) != k or k < 2:
        raise ValueError(f"invalid Ulam grid size k={k}; need an integer k >= 2")
    return int(k)


@functools.lru_cache(maxsize=128)
def _ulam_csr(p: MapParameter, k: int):
    rows, cols, vals = [], [], []
    for b in range(p.n_branches):
        c0, c1 = p.breakpoints[b], p.breakpoints[b + 1]
        lo, hi = p.branch_image(b)
        ys = np.arange(np.floor(lo * k) + 1, np.ceil(hi * k)) / k
        ys = ys[(ys > lo) & (ys < hi)]
        xs = p.branch_inverse(b, ys)
        xc = np.arange(np.floor(c0 * k) + 1, np.ceil(c1 * k)) / k
        pts = np.unique(np.concatenate([[c0, c1], xs, xc]))
        pts = pts[(pts >= c0) & (pts <= c1)]
        a, e = pts[:-1], pts[1:]
        length = e - a
        mid = 0.5 * (a + e)
        i = np.clip(np.floor(mid * k).astype(np.int64), 0, k - 1)
        j = np.clip(np.floor(p.branch_eval(b, mid) * k).astype(np.int64), 0, k - 1)
        rows.append(i)
        cols.append(j)
        vals.append(length * k)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    m = m.tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


def ulam_matrix(p, k):
    """Ulam discretization of the transfer operator of ``p`` on ``k`` cells.

    Cell-to-cell transition measures are computed from exact branch
    preimages of the grid points (closed form for affine branches,
    64-step bisection for perturbed ones).
    """
    k = _check_grid(k)
    return UlamOperator(k, _ulam_csr(p, k))


def twisted_ulam(p, g, theta, k):
    """Twisted operator ``h -> L(exp(theta . g) h)`` as a complex Ulam matrix.

    ``g`` is a grid function of shape ``(k,)`` or ``(k, d)``; ``theta`` a
    complex scalar or d-vector with ``|theta| <= 1``.
    """
    k = _check_grid(k)
    g = np.asarray(g, dtype=np.float64).reshape(k, -1)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.complex128))
    if theta.shape[0] != g.shape[1]:
        raise ValueError("theta and g dimensions differ")
    if np.linalg.norm(theta) > 1.0 + 1e-12:
        raise ValueError("twist parameter must satisfy |theta| <= 1")
    w = np.exp(g @ theta)
    m = (sp.diags(w) @ _ulam_csr(p, k)).tocsr()
    return UlamOperator(k, m, twist=tuple(complex(t) for t in theta))


# -- cocycles ----------------------------------------------------------------

class Cocycle:
    """Transfer-operator cocycle of a map family driven along one base orbit."""

    def __init__(self, fam, sys, k, tol=1e-10, n_max=200):
        self.fam, self.sys, self.k = fam, sys, _check_grid(k)
        self.tol, self.n_max = tol, n_max
        self._mt = {}
        self._dens = {}

    def transposed(self, name):
        if name not in self._mt:
            self._mt[name] = _ulam_csr(self.fam[name], self.k).T.tocsr()
        return self._mt[name]

    def names(self, i0, n):
        if n <= 0:
            return []
        return self.sys.parameter_window(i0, i0 + n - 1)

    def step(self, v, i, weights=None):
        """Apply the operator of fiber ``i`` (after multiplying by ``weights``)."""
        if weights is not None:
            v = weights.reshape(weights.shape[0], *([1] * (np.ndim(v) - 1))) * v
        return self.transposed(self.sys.parameter_at(i)) @ v

    def push(self, v, i0, n):
        for name in self.names(i0, n):
            v = self.transposed(name) @ v
        return v

    def step_columns(self, V, fibers):
        """Apply to each column the operator of its own fiber."""
        fibers = np.asarray(fibers, dtype=np.int64)
        out = np.empty_like(V)
        if fibers.size == 0:
            return out
        lo, hi = int(fibers.min()), int(fibers.max())
        sym = self.sys.symbols(lo, hi)[fibers - lo]
        for s in np.unique(sym):
            cols = np.flatnonzero(sym == s)
            out[:, cols] = self.transposed(self.sys.alphabet[s]) @ V[:, cols]
        return out

    def pullback(self, i):
        """Equivariant density at fiber ``i`` as the limit of pushed-forward uniform densities."""
        k = self.k
        prev = np.ones(k)
        residuals = []
        for n in range(1, self.n_max + 1):
            v = self.push(np.ones(k), i - n, n)
            r = float(weak_norm(v - prev))
            residuals.append(r)
            if r < self.tol:
                return v / integral(v), r, n
            prev = v
        raise DensityConvergenceError(
            f"density at fiber {i} did not converge within {self.n_max} pull-back steps "
            f"(last residual {residuals[-1]:.3e}, k={k})", residuals)

    def density(self, i):
        return self.densities(i, 1)[0]

    def densities(self, i0, count):
        """Equivariant densities for fibers ``i0 .. i0+count-1`` (shape ``(count, k)``)."""
        out = np.empty((count, self.k))
        v = None
        for j in range(count):
            i = i0 + j
            if i in self._dens:
                v = self._dens[i]
            elif v is None:
                v = self.pullback(i)[0]
                self._dens[i] = v
            else:
                v = self.step(v, i - 1)
                v = v / integral(v)
                self._dens[i] = v
            out[j] = v
        return out


@functools.lru_cache(maxsize=32)
def cocycle(fam, sys, k, tol=1e-10, n_max=200):
    """Shared :class:`Cocycle` instance for ``(fam, sys, k)``."""
    return Cocycle(fam, sys, k, tol, n_max)


def compose_cocycle(fam, sys, start_index, n, k):
    """Ulam matrix of ``L_{sigma^{n-1} w} ... L_w`` with ``w`` at ``start_index``."""
    k = _check_grid(k)
    if n < 0:
        raise ValueError("cocycle length must be non-negative")
    m = sp.identity(k, format="csr")
    for name in sys.parameter_window(start_index, start_index + n - 1) if n else []:
        m = (m @ _ulam_csr(fam[name], k)).tocsr()
    return UlamOperator(k, m, fiber_index=start_index)


@dataclass
class FiberDensity:
    k: int
    values: np.ndarray
    fiber_index: int
    convergence_residual: float
    n_iterations: int = 0

    def integral(self):
        return float(integral(self.values))


def fiber_density(fam, sys, fiber_index, k, tol=1e-10, n_max=200):
    """Equivariant density ``h_w`` as the pull-back limit from ``sigma^-n w``.

    Raises :class:`DensityConvergenceError` (carrying the residual trace)
    if successive pull-backs do not agree to ``tol`` in L1 within ``n_max`` steps.
    """
    v, r, n = Cocycle(fam, sys, k, tol, n_max).pullback(fiber_index)
    return FiberDensity(int(k), v, int(fiber_index), r, n)


# -- decay and Lasota-Yorke diagnostics -----------------------------------

def envelope_fit(ns, values, floor=FLOOR):
    """Fit ``values <= C exp(-rate * n)`` by log-linear regression.

    The slope comes from least squares on points above ``floor``; the
    intercept is then raised so the envelope covers every point.  Returns
    ``(C, rate, residual)``; ``rate = inf`` when no point exceeds ``floor``.
    """
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    mask = values > floor
    if not mask.any():
        return 0.0, float("inf"), 0.0
    x, y = ns[mask], np.log(values[mask])
    if mask.sum() == 1:
        rate = -y[0] / x[0] if x[0] > 0 else 0.0
        return float(np.exp(y[0] + rate * x[0])), float(rate), 0.0
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (icpt + slope * x)) ** 2)))
    rate = -slope
    C = float(np.max(np.exp(y + rate * x)))
    return C, float(rate), resid


def random_step_functions(k, count, rng, max_jumps=8):
    """Random step functions with up to ``max_jumps`` jumps, shape ``(k, count)``."""
    out = np.empty((k, count))
    for c in range(count):
        m = rng.integers(1, max_jumps + 1)
        cuts = np.sort(rng.choice(np.arange(1, k), size=min(m, k - 1), replace=False))
        heights = rng.standard_normal(len(cuts) + 1)
        out[:, c] = np.repeat(heights, np.diff(np.concatenate([[0], cuts, [k]])))
    return out


def _test_vectors(k, n_random, seed, chunk=512):
    """Cell indicators, monotone 0/1 steps, then random step functions, in column chunks."""
    cells = np.arange(k)
    for a in range(0, k, chunk):
        b = min(a + chunk, k)
        yield (cells[:, None] == np.arange(a, b)[None, :]).astype(np.float64)
    for a in range(1, k, chunk):
        b = min(a + chunk, k)
        step = (cells[:, None] >= np.arange(a, b)[None, :]).astype(np.float64)
        yield np.concatenate([1.0 - step, step], axis=1)
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_random:
        m = min(chunk, n_random - done)
        yield random_step_functions(k, m, rng)
        done += m


def projection_defects(fam, sys, fiber_index, n_max, k, n_random=1000, seed=0, extra=None):
    """``||L^n_w - Q^n_w||`` (discrete BV operator norm) for ``n = 0 .. n_max``.

    ``Q^n_w h = <xi, h> h_{sigma^n w}``.  The norm is a lower-bound
    certificate obtained by maximizing over cell indicators, monotone step
    functions, ``n_random`` random step functions and any ``extra`` columns.
    """
    coc = cocycle(fam, sys, k)
    dens = coc.densities(fiber_index, n_max + 1)
    best = np.zeros(n_max + 1)
    chunks = _test_vectors(k, n_random, seed)
    if extra is not None:
        chunks = list(chunks) + [np.asarray(extra, dtype=np.float64).reshape(k, -1)]
    for H in chunks:
        base = strong_norm(H)
        mass = integral(H)
        V = H.copy()
        for n in range(n_max + 1):
            if n:
                V = coc.step(V, fiber_index + n - 1)
            D = V - np.outer(dens[n], mass)
            best[n] = max(best[n], float(np.max(strong_norm(D) / base)))
    return best


def projection_defect(fam, sys, fiber_index, n, k, **kw):
    return float(projection_defects(fam, sys, fiber_index, n, k, **kw)[n])


@dataclass
class DecayEstimate:
    D_const: float
    lam: float
    fit_range: tuple
    residual: float
    k: int
    trials: int

    @property
    def superexponential(self):
        return np.isinf(self.lam)

    @property
    def holds(self):
        return self.lam > 0

    def message(self):
        if self.superexponential:
            return "superexponential at this resolution"
        if not self.holds:
            return f"decay failure: fitted rate {self.lam:.4g} <= 0"
        return f"exponential decay with rate {self.lam:.4g}"

    def to_dict(self):
        return {"D": self.D_const, "lambda": self.lam, "fit_range": list(self.fit_range),
                "residual": self.residual, "k": self.k, "trials": self.trials,
                "holds": bool(self.holds), "message": self.message()}


def verify_decay(fam, sys, fiber_index, N, trials, k, seed=0, vectors=None):
    """Fit ``||L^n_w h|| <= D exp(-lambda n) ||h||`` over mean-zero step functions."""
    k = _check_grid(k)
    if vectors is None:
        H = random_step_functions(k, trials, np.random.default_rng(seed))
        H = H - integral(H)
    else:
        H = np.asarray(vectors, dtype=np.float64).reshape(k, -1)
        if np.any(np.abs(integral(H)) > 1e-12 * np.maximum(strong_norm(H), 1.0)):
            raise ValueError("decay test vectors must have zero mean (precondition h in B_0)")
    coc = cocycle(fam, sys, k)
    base = strong_norm(H)
    ratios = np.empty(N)
    V = H
    for n in range(1, N + 1):
        V = coc.step(V, fiber_index + n - 1)
        ratios[n - 1] = float(np.max(strong_norm(V) / base))
    D, lam, resid = envelope_fit(np.arange(1, N + 1), ratios)
    return DecayEstimate(D, lam, (1, N), resid, k, H.shape[1])


@dataclass
class LYEstimate:
    B1: float
    a: float
    B2: float
    holds: bool
    message: str
    k: int
    trials: int
    N: int

    def to_dict(self):
        return dict(B1=self.B1, a=self.a, B2=self.B2, holds=self.holds, message=self.message,
                    k=self.k, trials=self.trials, N=self.N)


def verify_lasota_yorke(fam, sys, N, trials, k, seed=0, window=10_000):
    """Sampled Lasota-Yorke constants ``||L^n h|| <= B1 a^n ||h|| + B2 ||h||_w``.

    Test vectors are random step functions started at random fibers in
    ``[0, window)``.  ``B2`` is the tail envelope of ``||L^n h|| / ||h||_w``
    over the second half of the horizon; ``(B1, a)`` is a log-linear
    envelope of the remaining excess.  If the tail keeps growing no ``a < 1``
    can work and the estimate is flagged as a violation.
    """
    k = _check_grid(k)
    rng = np.random.default_rng(seed)
    H = random_step_functions(k, trials, rng)
    H[:, : trials // 4] = np.abs(H[:, : trials // 4])
    starts = rng.integers(0, window, size=trials)
    coc = cocycle(fam, sys, k)
    base, w = strong_norm(H), weak_norm(H) / strong_norm(H)
    x = np.empty((N + 1, trials))
    x[0] = 1.0
    V = H
    for n in range(1, N + 1):
        V = coc.step_columns(V, starts + n - 1)
        x[n] = strong_norm(V) / base
    half = max(N // 2, 1)
    head = np.max(x[half] / w)
    tail = np.max(x[N] / w)
    if tail > head * (1 + 1e-9) + 1e-12:
        growth = (tail / head) ** (1.0 / max(N - half, 1))
        return LYEstimate(float("nan"), float(growth), float("inf"), False,
                          f"LY violation: strong/weak ratio grows by {growth:.4g} per step", k, trials, N)
    B2 = float(np.max(x[half:] / w))
    excess = np.max(x[1:] - B2 * w, axis=1)
    B1, rate, _ = envelope_fit(np.arange(1, N + 1), excess)
    a = float(np.exp(-rate))
    if a >= 1.0:
        return LYEstimate(B1, a, B2, False, f"LY violation: fitted a = {a:.4g} >= 1", k, trials, N)
    return LYEstimate(B1, a, B2, True, "ok", k, trials, N)


def weak_bound_ratio(fam, sys, g, t, n, k, fiber_index=0, trials=32, seed=0):
    """Largest ``||L^{it,n} v||_1 / ||v||_1`` over random vectors (at most one)."""
    coc = cocycle(fam, sys, k)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((k, trials)) + 1j * rng.standard_normal((k, trials))
    base = weak_norm(V)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    worst = 0.0
    for step in range(n):
        i = fiber_index + step
        w = np.exp(1j * (g.grid(i, k) @ t))
        V = coc.step(V, i, weights=w)
        worst = max(worst, float(np.max(weak_norm(V) / base)))
    return worst


# -- perturbations -------------------------------------------------------------

def _is_mixing(P, k, steps=100, seed=0):
    rng = np.random.default_rng(seed)
    H = random_step_functions(k, 8, rng)
    H = H - integral(H)
    V = H
    PT = P.T.tocsr()
    for _ in range(steps):
        V = PT @ V
    return bool(np.all(strong_norm(V) <= 0.5 * strong_norm(H)))


def perturbation_radius(reference, fam, k):
    """Largest strong-to-weak distance ``sup_{||h|| <= 1} ||(L' - L) h||_1`` over the family.

    The supremum is taken over the extreme monotone step functions
    ``1[0, j/k)``, ``1[j/k, 1)`` and the constant, each scaled to unit BV norm.
    """
    k = _check_grid(k)
    P = _ulam_csr(reference, k)
    if not _is_mixing(P, k):
        raise ValueError("reference map has no spectral gap at this resolution")
    ps = fam.params() if hasattr(fam, "params") else list(fam)
    j = np.arange(1, k)
    prefix_norm = 1.0 + j / k
    suffix_norm = 1.0 + (k - j) / k
    worst = 0.0
    for q in ps:
        if q == reference:
            continue
        Delta = (_ulam_csr(q, k) - P).toarray()
        cum = np.cumsum(Delta, axis=0)
        total = cum[-1]
        pre = cum[:-1]
        suf = total[None, :] - pre
        vals = np.concatenate([
            np.abs(pre).sum(axis=1) / k / prefix_norm,
            np.abs(suf).sum(axis=1) / k / suffix_norm,
            [np.abs(total).sum() / k],
        ])
        worst = max(worst, float(vals.max()))
    return worst


# -- characteristic functionals ----------------------------------------------

def _normalize_blocks(blocks, gap_inserts, d, rho):
    out = []
    shift = 0
    inserts = list(gap_inserts) if gap_inserts is not None else []
    if inserts and len(inserts) != len(blocks):
        raise ValueError("gap_inserts must give one delay per block")
    for idx, (s, e, t) in enumerate(blocks):
        if inserts:
            shift += int(inserts[idx])
        t = np.atleast_1d(np.asarray(t, dtype=np.float64)).reshape(d)
        if np.linalg.norm(t) > rho + 1e-12:
            raise ValueError(f"block {idx}: |t| exceeds rho={rho}")
        out.append((int(s) + shift, int(e) + shift, t))
    for idx, (s, e, _) in enumerate(out):
        if e <= s or s < 0:
            raise ValueError(f"block {idx} is empty or starts before time 0")
        if idx and s < out[idx - 1][1]:
            raise ValueError("invalid configuration: overlapping or unordered blocks")
    return out


def _thread(coc, g, v, fiber0, t0, blocks, until=None):
    """Push ``v`` (sitting at time ``t0``) through twisted/untwisted steps up to ``until``."""
    k = coc.k
    if until is not None:
        end = until
    else:
        end = blocks[-1][1] if blocks else t0
    bi = 0
    time = t0
    v = v.astype(np.complex128)
    while time < end:
        while bi < len(blocks) and blocks[bi][1] <= time:
            bi += 1
        if bi < len(blocks) and blocks[bi][0] <= time:
            i = fiber0 + time
            w = np.exp(1j * (g.grid(i, k) @ blocks[bi][2]))
            v = coc.step(v, i, weights=w)
            time += 1
        else:
            nxt = blocks[bi][0] if bi < len(blocks) else end
            nxt = min(nxt, end)
            v = coc.push(v, fiber0 + time, nxt - time)
            time = nxt
    return v


def char_functional(fam, sys, g, blocks, gap_inserts=(), k=1024, fiber_index=0, rho=1.0):
    """``E_w exp(i sum_j t_j . (A_{s_j} + ... + A_{e_j - 1}))`` under ``h_w``.

    ``blocks`` is a list of ``(start, end, t)`` with times relative to the
    fiber ``w = fiber_index``; ``gap_inserts`` optionally delays block ``j``
    and all later blocks by the given number of steps.
    """
    coc = cocycle(fam, sys, k)
    bl = _normalize_blocks(blocks, gap_inserts, g.d, rho)
    v = _thread(coc, g, coc.density(fiber_index), fiber_index, 0, bl)
    return complex(integral(v))


def _gap_terms(fam, sys, g, left_blocks, right_blocks, gap_k, k, fiber_index, rho):
    coc = cocycle(fam, sys, k)
    left = _normalize_blocks(left_blocks, None, g.d, rho)
    right = _normalize_blocks(right_blocks, None, g.d, rho)
    b = right[0][0]
    if left and b < left[-1][1]:
        raise ValueError("right blocks must start after the left blocks end")
    shifted = [(s + gap_k, e + gap_k, t) for s, e, t in right]
    h = coc.density(fiber_index)
    v_b = _thread(coc, g, h, fiber_index, 0, left, until=b)
    joint_v = coc.push(v_b, fiber_index + b, gap_k)
    joint = integral(_thread(coc, g, joint_v, fiber_index, b + gap_k, shifted))
    q_v = integral(v_b) * coc.density(fiber_index + b + gap_k)
    product = integral(_thread(coc, g, q_v, fiber_index, b + gap_k, shifted))
    return complex(joint), complex(product), v_b, b


def mixing_gap(fam, sys, g, left_blocks, right_blocks, gap_k, k, fiber_index=0, rho=1.0):
    """``|E(joint) - E(left) E(right shifted by gap_k)|`` via operator chains.

    The product term threads the left configuration, replaces the ``gap_k``
    untwisted steps by the rank-one projection ``Q^gap_k`` and continues
    with the right configuration.
    """
    joint, product, _, _ = _gap_terms(fam, sys, g, left_blocks, right_blocks, gap_k, k, fiber_index, rho)
    return abs(joint - product)


def mixing_envelope(fam, sys, g, left_blocks, right_blocks, gap_k, k, fiber_index=0, rho=1.0, **kw):
    """Upper bound ``||L^k - Q^k|| (||Re v|| + ||Im v||)`` for :func:`mixing_gap`.

    ``v`` is the left chain output at the start of the gap; the right
    twisted chain is an L1 contraction so it contributes a factor one.
    """
    _, _, v_b, b = _gap_terms(fam, sys, g, left_blocks, right_blocks, gap_k, k, fiber_index, rho)
    defect = projection_defect(fam, sys, fiber_index + b, gap_k, k,
                               extra=np.stack([v_b.real, v_b.imag], axis=1), **kw)
    return defect * float(strong_norm(v_b.real) + strong_norm(v_b.imag))


@dataclass
class MixingFit:
    gaps: list
    values: list
    envelope: list
    floor: float
    C: float
    c: float

    @property
    def dominated(self):
        return all(v <= e + self.floor for v, e in zip(self.values, self.envelope))

    def to_dict(self):
        return {"gaps": list(self.gaps), "values": list(self.values), "envelope": list(self.envelope),
                "floor": self.floor, "C": self.C, "c": self.c, "dominated": bool(self.dominated)}


def mixing_fit(fam, sys, g, left_blocks, right_blocks, gaps, k, fiber_index=0, rho=1.0, n_random=64):
    """Mixing gaps over ``gaps`` with their operator envelopes and an exponential fit.

    Values below the resolution floor ``|phi_k - phi_{k/2}|`` (the change of
    the product functional when the grid is halved) are grid artifacts and
    are excluded from the fit; if none remain the rate is ``inf``.
    """
    gaps = [int(x) for x in gaps]
    vals = []
    for gap in gaps:
        joint, product, v_b, b = _gap_terms(fam, sys, g, left_blocks, right_blocks, gap, k, fiber_index, rho)
        vals.append(abs(joint - product))
    # v_b and its start time do not depend on the gap length
    defects = projection_defects(fam, sys, fiber_index + b, max(gaps), k, n_random=n_random,
                                 extra=np.stack([v_b.real, v_b.imag], axis=1))
    scale = float(strong_norm(v_b.real) + strong_norm(v_b.imag))
    env = [float(defects[gap]) * scale for gap in gaps]
    coarse = _gap_terms(fam, sys, g, left_blocks, right_blocks, gaps[0], k // 2, fiber_index, rho)[1]
    fine = _gap_terms(fam, sys, g, left_blocks, right_blocks, gaps[0], k, fiber_index, rho)[1]
    floor = max(abs(fine - coarse), 1e-15)
    C, c, _ = envelope_fit(gaps, vals, floor=floor)
    return MixingFit(gaps, vals, env, floor, C, c)


def export_operator_csv(op, path, fiber_index=None):
    """Write a dense operator with a header row ``k, fiber_index, twist``."""
    fi = op.fiber_index if fiber_index is None else fiber_index
    M = op.entries
    with open(path, "w") as fh:
        fh.write(f"# k={op.k},fiber_index={fi},twist={list(op.twist) if op.twist else None}\n")
        if np.iscomplexobj(M):
            for row in M:
                fh.write(",".join(f"{z.real!r}{z.imag:+.17g}j" for z in row) + "\n")
        else:
            np.savetxt(fh, M, delimiter=",", fmt="%.17g")


def export_density_csv(density, path, header_extra=""):
    k = density.k
    with open(path, "w") as fh:
        fh.write(f"# k={k},fiber_index={density.fiber_index},twist=None{header_extra}\n")
        fh.write("cell,left,right,value\n")
        for i, val in enumerate(density.values):
            fh.write(f"{i},{i / k!r},{(i + 1) / k!r},{float(val)!r}\n")
