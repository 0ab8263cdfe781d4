"""Asymptotic covariance of Birkhoff sums from operator chains.

All expectations are grid-level: the equivariant densities and the
observables are paired on the Ulam grid, and correlations
``E_w[g_w * (g_{sigma^n w} o T^n_w)]`` are evaluated as
``integral(L^n_w(g_w h_w) * g_{sigma^n w})``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import transfer as tr
from .observables import CenteredObservable

DEGENERACY_THRESHOLD = 1e-6
DEFAULT_WINDOW = 512
DEFAULT_N_MAX = 64


def is_constant_driving(sys):
    return len(set(sys.alphabet)) == 1 or (sys.kind == "finite-periodic" and sys.period == 1)


def center_observable(g, densities):
    """Subtract fiberwise means ``h_w(g_w)``.

    ``densities`` is a :class:`~quenched_asip.transfer.Cocycle` (densities on
    demand), a mapping ``fiber -> FiberDensity``, or a single
    :class:`~quenched_asip.transfer.FiberDensity` used for every fiber.
    """
    if isinstance(densities, tr.FiberDensity):
        k = densities.k
        h = densities.values
        return CenteredObservable(g, lambda i: tr.integral(h[:, None] * g.grid(i, k)), constant=True)
    if isinstance(densities, tr.Cocycle):
        coc = densities
        return CenteredObservable(g, lambda i: tr.integral(coc.density(i)[:, None] * g.grid(i, coc.k)),
                                  constant=is_constant_driving(coc.sys))

    def mean_of(i):
        try:
            fd = densities[i]
        except KeyError:
            raise KeyError(f"no density supplied for fiber {i}") from None
        return tr.integral(fd.values[:, None] * g.grid(i, fd.k))

    return CenteredObservable(g, mean_of)


def _check_centered(coc, g, i0, count, tol=1e-8):
    dens = coc.densities(i0, count)
    G = g.grid_window(i0, count, coc.k)
    means = np.einsum("ck,ckd->cd", dens, G) / coc.k
    if np.max(np.abs(means)) > tol * max(g.sup_bound, 1.0):
        raise ValueError("observable is not centered fiberwise; use center_observable first")


def correlations(coc, g, i0, n_starts, max_lag, horizon=None, rel_tol=1e-16):
    """Correlation table ``C[s, L, a, b] = E_{sigma^{i0+s} w}[g^a (g^b_{+L} o T^L)]``.

    Chains are propagated as columns of one dense array, one column per
    ``(start, component)``.  Columns whose L1 mass falls below
    ``rel_tol`` times the initial scale are dropped (their remaining
    contributions are below rounding), as are columns reaching ``horizon``
    (when given, only ``s + L < horizon`` is needed).
    """
    k, d = coc.k, g.d
    count = n_starts + max_lag
    dens = coc.densities(i0, count)
    G = g.grid_window(i0, count, k)
    C = np.zeros((n_starts, max_lag + 1, d, d))
    U = (G[:n_starts] * dens[:n_starts, :, None]).transpose(1, 0, 2).reshape(k, n_starts * d)
    col_s = np.repeat(np.arange(n_starts), d)
    col_a = np.tile(np.arange(d), n_starts)
    scale = max(float(np.max(tr.weak_norm(U))) if U.size else 0.0, 1e-300)
    for L in range(max_lag + 1):
        if L:
            U = coc.step_columns(U, i0 + col_s + L - 1)
        if g.fiber_constant:
            vals = U.T @ G[0] / k
        else:
            vals = np.einsum("kc,ckb->cb", U, G[col_s + L]) / k
        C[col_s, L, col_a, :] = vals
        keep = tr.weak_norm(U) > rel_tol * scale
        if horizon is not None:
            keep &= col_s + L + 1 < horizon
        if not keep.all():
            U, col_s, col_a = U[:, keep], col_s[keep], col_a[keep]
        if U.shape[1] == 0:
            break
    return C


def _tail_bound(decay, coc, g, i0, count, N_max):
    if decay is None:
        return float("inf")
    if decay.superexponential:
        return 0.0
    if not decay.holds:
        return float("inf")
    dens = coc.densities(i0, count)
    G = g.grid_window(i0, count, coc.k)[..., 0]
    gh = float(np.max(tr.strong_norm((G * dens).T)))
    gsup = float(np.max(np.abs(G)))
    q = np.exp(-decay.lam)
    return 2.0 * decay.D_const * q ** (N_max + 1) / (1.0 - q) * gh * gsup


def sigma_scalar(fam, sys, g_v, fiber_index, N_max=DEFAULT_N_MAX, k=4096, window=DEFAULT_WINDOW, decay="auto"):
    """Green-Kubo variance of a centered scalar observable.

    Returns ``(sigma2, tail_bound)``.  Correlation terms are Birkhoff
    averages over ``window`` consecutive base fibers, truncated at lag
    ``N_max``; the tail bound comes from the decay estimate
    ``D exp(-lambda n)`` (``inf`` if decay is unavailable).
    """
    est = sigma_estimate(fam, sys, g_v, fiber_index, N_max, k, window, decay)
    return est.sigma2, est.tail_bound


@dataclass
class SigmaEstimate:
    sigma2: float
    tail_bound: float
    window_stderr: float
    gamma: np.ndarray


def _batch_stderr(x, n_batches=16):
    n_batches = min(n_batches, x.size)
    if n_batches < 2:
        return float("inf")
    means = np.array([b.mean() for b in np.array_split(x, n_batches)])
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def sigma_estimate(fam, sys, g_v, fiber_index, N_max=DEFAULT_N_MAX, k=4096, window=DEFAULT_WINDOW, decay="auto"):
    """As :func:`sigma_scalar`, also returning the lag profile and a window error bar.

    ``window_stderr`` is a batch-means standard error of the base-window
    Birkhoff average (zero for constant driving).
    """
    if g_v.d != 1:
        raise ValueError("sigma_scalar expects a scalar observable")
    coc = tr.cocycle(fam, sys, k)
    _check_centered(coc, g_v, fiber_index, window)
    if isinstance(decay, str):
        decay = tr.verify_decay(fam, sys, fiber_index, 20, 32, k)
    C = correlations(coc, g_v, fiber_index, window, N_max)[:, :, 0, 0]
    per_start = C[:, 0] + 2.0 * C[:, 1:].sum(axis=1)
    gamma = C.mean(axis=0)
    sigma2 = float(gamma[0] + 2.0 * gamma[1:].sum())
    return SigmaEstimate(sigma2, _tail_bound(decay, coc, g_v, fiber_index, window + N_max, N_max),
                         _batch_stderr(per_start), gamma)


@dataclass
class CovarianceReport:
    sigma2: np.ndarray
    truncation_N: int
    tail_bound: float
    min_eigenvalue: float
    degenerate_direction: Optional[np.ndarray]
    per_direction: dict = field(default_factory=dict)
    window: int = DEFAULT_WINDOW
    k: int = 0

    @property
    def degenerate(self):
        return self.degenerate_direction is not None

    def to_dict(self):
        return {
            "d": int(self.sigma2.shape[0]),
            "sigma2": [float(x) for x in self.sigma2.ravel()],
            "truncation_N": self.truncation_N,
            "tail_bound": self.tail_bound,
            "min_eigenvalue": self.min_eigenvalue,
            "degenerate_direction": None if self.degenerate_direction is None
            else [float(x) for x in self.degenerate_direction],
            "per_direction": [{"v": list(map(float, v)), "sigma2_v": s} for v, s in self.per_direction.items()],
            "window": self.window,
            "k": self.k,
        }


def _unit_sign(v):
    v = v / np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if nz.size and v[nz[0]] < 0 else v


def sigma_matrix(fam, sys, g, fiber_index, N_max=DEFAULT_N_MAX, k=4096, window=DEFAULT_WINDOW,
                 decay="auto", threads=1):
    """Covariance matrix by polarization of scalar Green-Kubo runs.

    Scalar runs on ``e_i`` and ``e_i + e_j`` are independent and may run
    concurrently; results are merged by direction index.
    """
    d = g.d
    if isinstance(decay, str):
        decay = tr.verify_decay(fam, sys, fiber_index, 20, 32, k)
    dirs = [tuple(np.eye(d)[i]) for i in range(d)]
    dirs += [tuple(np.eye(d)[i] + np.eye(d)[j]) for i in range(d) for j in range(i + 1, d)]

    def run(v):
        return sigma_scalar(fam, sys, g.dot(v), fiber_index, N_max, k, window, decay)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, dirs))
    else:
        results = [run(v) for v in dirs]
    per = {v: r[0] for v, r in zip(dirs, results)}
    S = np.zeros((d, d))
    for i in range(d):
        S[i, i] = per[dirs[i]]
    for i in range(d):
        for j in range(i + 1, d):
            v = tuple(np.eye(d)[i] + np.eye(d)[j])
            S[i, j] = S[j, i] = 0.5 * (per[v] - S[i, i] - S[j, j])
    tail = 1.5 * max(r[1] for r in results)
    w, V = np.linalg.eigh(S)
    degenerate = _unit_sign(V[:, 0]) if w[0] < DEGENERACY_THRESHOLD else None
    return CovarianceReport(S, N_max, tail, float(w[0]), degenerate, per, window, k)


@dataclass
class FiniteNCovariance:
    n_list: list
    matrices: list
    c1: float
    growth_exponent: float

    @property
    def degenerate(self):
        return self.growth_exponent < 0.5

    def to_dict(self):
        return {"n": list(self.n_list), "cov": [m.tolist() for m in self.matrices],
                "c1": self.c1, "growth_exponent": self.growth_exponent, "degenerate": bool(self.degenerate)}


def finite_n_covariance(fam, sys, g, fiber_index, n_list, k):
    """Exact grid-level ``Cov(S_n g)`` under ``h_w`` for each ``n`` in ``n_list``.

    ``c1`` is ``min_n lambda_min(Cov_n)/n``; the growth exponent is the
    log-log slope of ``lambda_min(Cov_n)`` in ``n`` (about 1 for
    nondegenerate sums, about 0 for coboundaries).
    """
    n_list = sorted(int(n) for n in n_list)
    nmax = n_list[-1]
    coc = tr.cocycle(fam, sys, k)
    _check_centered(coc, g, fiber_index, nmax)
    C = correlations(coc, g, fiber_index, nmax, nmax - 1, horizon=nmax)
    cs = np.cumsum(C, axis=0)
    mats = []
    for n in n_list:
        L = np.arange(n)
        terms = cs[n - L - 1, L]
        M = terms[0] + terms[1:].sum(axis=0) + terms[1:].sum(axis=0).T
        mats.append(0.5 * (M + M.T))
    mins = np.array([np.linalg.eigvalsh(M)[0] for M in mats])
    c1 = float(np.min(mins / np.array(n_list)))
    if len(n_list) > 1 and np.all(mins > 0):
        growth = float(np.polyfit(np.log(n_list), np.log(mins), 1)[0])
    else:
        growth = 0.0 if np.any(mins <= 0) else 1.0
    return FiniteNCovariance(n_list, mats, c1, growth)


def _directions(d, n_directions, seed=0):
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        ang = np.pi * np.arange(n_directions) / n_directions
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_directions, d))
    return np.concatenate([np.eye(d), V / np.linalg.norm(V, axis=1, keepdims=True)])


@dataclass
class CorrelationDecay:
    C0: float
    r: float
    max_lag: int

    @property
    def holds(self):
        return self.r < 1.0

    def to_dict(self):
        return {"C0": self.C0, "r": self.r, "max_lag": self.max_lag, "holds": bool(self.holds)}


def uniform_corr_decay(fam, sys, g, fiber_window, k_max_lag, k, n_directions=16):
    """Envelope ``|Cov(A_n . v, A_{n+l} . v)| <= C0 r^l`` over a fiber window and a direction net.

    ``fiber_window`` is ``(first_fiber, count)``.
    """
    i0, count = fiber_window
    coc = tr.cocycle(fam, sys, k)
    _check_centered(coc, g, i0, count)
    C = correlations(coc, g, i0, count, k_max_lag)
    V = _directions(g.d, n_directions)
    quad = np.abs(np.einsum("va,slab,vb->slv", V, C, V))
    env = quad[:, 1:, :].max(axis=(0, 2))
    C0, rate, _ = tr.envelope_fit(np.arange(1, k_max_lag + 1), env, floor=1e-15)
    if np.isinf(rate):
        return CorrelationDecay(0.0, 0.0, k_max_lag)
    return CorrelationDecay(C0, float(np.exp(-rate)), k_max_lag)
