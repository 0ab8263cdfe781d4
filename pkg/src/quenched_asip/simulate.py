"""Monte Carlo orbits under the quenched law and ASIP diagnostics.

Orbits iterate the true fiber maps in floating point.  Randomness (initial
points, jitter) comes from counter-based streams indexed by path and step,
so any split of the paths across workers gives identical results.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import _rng
from . import blocks as blk
from . import transfer as tr
from .maps import eval_map

DEFAULT_JITTER = 1e-15
MIN_PATHS = 100
_STEP_STRIDE = 1 << 32

_TAG_INITIAL = 1
_TAG_JITTER = 2


class StatisticalPowerError(ValueError):
    pass


def sample_initial(density, count, seed, first_path=0):
    """Inverse-CDF samples from a piecewise-constant grid density.

    Path ``first_path + i`` always receives the same point for a given seed.
    """
    values = density.values if isinstance(density, tr.FiberDensity) else np.asarray(density, dtype=np.float64)
    if count == 0:
        return np.empty(0)
    k = values.shape[0]
    mass = np.clip(values, 0.0, None) / k
    cum = np.cumsum(mass)
    u = _rng.uniforms(_rng.derive_key(seed, _TAG_INITIAL), first_path, count) * cum[-1]
    idx = np.minimum(np.searchsorted(cum, u, side="right"), k - 1)
    left = np.where(idx > 0, cum[idx - 1], 0.0)
    frac = np.clip((u - left) / np.where(mass[idx] > 0, mass[idx], 1.0), 0.0, 1.0 - 1e-16)
    return (idx + frac) / k


@dataclass
class PathEnsemble:
    n_steps: int
    n_paths: int
    checkpoints: np.ndarray
    sums: np.ndarray  # (n_paths, len(checkpoints), d)
    seed: int
    fiber_index: int
    jitter: float = 0.0

    def __post_init__(self):
        self._pos = {int(m): j for j, m in enumerate(self.checkpoints)}

    @property
    def d(self):
        return self.sums.shape[2]

    def at(self, m):
        """Sums ``S_m`` for every path, shape ``(n_paths, d)``."""
        try:
            return self.sums[:, self._pos[int(m)]]
        except KeyError:
            raise ValueError(f"checkpoint {m} was not recorded") from None

    def dyadic(self):
        return [int(m) for m in self.checkpoints if m == 0 or (m & (m - 1)) == 0 or m == self.n_steps]


def dyadic_checkpoints(n_steps):
    out = [0]
    m = 1
    while m < n_steps:
        out.append(m)
        m *= 2
    out.append(n_steps)
    return out


def block_checkpoints(N, beta, eps):
    """Every interval endpoint of levels ``0..N`` (invalid levels contribute their ends only)."""
    out = {0, 1}
    for n in range(N + 1):
        out.update((2 ** n, 2 ** (n + 1)))
        if blk.is_valid_level(n, beta, eps):
            for iv in blk.build_blocks(n, beta, eps).intervals:
                out.update((iv.start, iv.end))
    return sorted(out)


def diagnostic_checkpoints(n_steps, N, beta, eps, grain=64):
    """Dyadic times, block endpoints up to level ``N`` and all multiples of ``grain``."""
    out = set(dyadic_checkpoints(n_steps)) | set(range(0, n_steps + 1, grain))
    out |= {m for m in block_checkpoints(N, beta, eps) if m <= n_steps}
    return sorted(out)


def _has_dyadic(fam, sys):
    return any(fam[name].has_dyadic_slopes() for name in set(sys.alphabet))


def _run_chunk(fam, names, g, fiber_index, x, first_path, cps, seed, jitter):
    n_paths = x.shape[0]
    S = np.zeros((n_paths, g.d))
    out = np.empty((n_paths, len(cps), g.d))
    jkey = _rng.derive_key(seed, _TAG_JITTER)
    c = 0
    for step in range(cps[-1] + 1):
        while c < len(cps) and cps[c] == step:
            out[:, c] = S
            c += 1
        if step == cps[-1]:
            break
        S += g.values(x, fiber_index + step)
        x = eval_map(names[step], x)
        if jitter:
            u = _rng.uniforms(jkey, step * _STEP_STRIDE + first_path, n_paths)
            x = np.clip(x + jitter * (2.0 * u - 1.0), 0.0, 1.0)
    return out


def birkhoff_paths(fam, sys, g, fiber_index, n_steps, n_paths, checkpoints=None, seed=0,
                   initial_points=None, jitter=None, threads=1, k=4096):
    """Birkhoff sums ``S_m = sum_{i<m} g_{i}(T^i x)`` along independent orbits.

    Parameters
    ----------
    checkpoints : iterable of int, optional
        Times ``m`` at which ``S_m`` is stored; ``0`` and ``n_steps`` are
        always included.  Defaults to dyadic times.
    initial_points : array, optional
        Starting points; by default drawn from the equivariant density at
        ``fiber_index`` on a grid of ``k`` cells.
    jitter : float, optional
        Uniform perturbation magnitude added after each step; defaults to
        ``1e-15`` for families with dyadic slopes and 0 otherwise.
    """
    n_steps, n_paths = int(n_steps), int(n_paths)
    cps = set(dyadic_checkpoints(n_steps) if checkpoints is None else checkpoints) | {0, n_steps}
    cps = np.array(sorted(int(m) for m in cps))
    if cps[0] < 0 or cps[-1] > n_steps:
        raise ValueError("checkpoints must lie in [0, n_steps]")
    if jitter is None:
        jitter = DEFAULT_JITTER if _has_dyadic(fam, sys) else 0.0
    if initial_points is None:
        initial_points = sample_initial(tr.cocycle(fam, sys, k).density(fiber_index), n_paths, seed)
    x0 = np.asarray(initial_points, dtype=np.float64)
    if x0.shape != (n_paths,):
        raise ValueError("initial_points must have one entry per path")
    names = [fam[nm] for nm in sys.parameter_window(fiber_index, fiber_index + n_steps - 1)] if n_steps else []
    # fill lazily computed fiber means in a fixed order before threads share them
    if n_paths:
        if not g.fiber_constant:
            tr.cocycle(fam, sys, k).densities(fiber_index, max(n_steps, 1))
        for i in range(fiber_index, fiber_index + (n_steps if not g.fiber_constant else 1)):
            g.values(x0[:1], i)
    bounds = np.linspace(0, n_paths, max(1, min(threads, n_paths)) + 1).astype(int)

    def work(c):
        a, b = bounds[c], bounds[c + 1]
        return _run_chunk(fam, names, g, fiber_index, x0[a:b], a, cps, seed, jitter)

    if threads > 1 and n_paths > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(len(bounds) - 1)))
    else:
        parts = [work(c) for c in range(len(bounds) - 1)]
    sums = np.concatenate(parts, axis=0) if parts else np.zeros((0, len(cps), g.d))
    return PathEnsemble(n_steps, n_paths, cps, sums, int(seed), int(fiber_index), float(jitter))


@dataclass
class LevelSums:
    level: int
    decomposition: Optional[blk.BlockDecomposition]
    big: np.ndarray  # (n_paths, F, d) sums over I intervals
    gaps: np.ndarray  # (n_paths, F, d) sums over J intervals

    def total(self):
        return self.big.sum(axis=1) + self.gaps.sum(axis=1)


def block_sums(paths, beta, eps, N):
    """Sums ``X_{n,j}`` over the big blocks and the gaps of levels ``0..N``.

    Block sums are differences of recorded checkpoints, so the ensemble must
    have been generated with :func:`block_checkpoints`.  A level too short to
    carry big blocks yields one gap covering the whole level.
    """
    if paths.n_steps < 2 ** (N + 1):
        raise ValueError(f"paths have {paths.n_steps} steps; levels up to {N} need {2 ** (N + 1)}")
    out = []
    for n in range(N + 1):
        if not blk.is_valid_level(n, beta, eps):
            whole = (paths.at(2 ** (n + 1)) - paths.at(2 ** n))[:, None, :]
            out.append(LevelSums(n, None, np.zeros((paths.n_paths, 0, paths.d)), whole))
            continue
        dec = blk.build_blocks(n, beta, eps)
        big = np.stack([paths.at(iv.end) - paths.at(iv.start) for iv in dec.big], axis=1)
        gaps = np.stack([paths.at(iv.end) - paths.at(iv.start) for iv in dec.gaps], axis=1)
        out.append(LevelSums(n, dec, big, gaps))
    return out


def rate_table(p, deltas=(0.0, 0.01, 0.05)):
    """``a_p = p/(4(p-1))`` with the matching block exponent ``beta = p/(2(p-1))``."""
    ps = np.atleast_1d(p)
    rows = []
    for pv in ps:
        pv = float(pv)
        if not pv > 4:
            raise ValueError(f"p must exceed 4 (got {pv})")
        a = pv / (4 * (pv - 1))
        rows.append({"p": pv, "a_p": a, "beta": pv / (2 * (pv - 1)),
                     "exponents": {repr(float(dl)): a + float(dl) for dl in deltas}})
    return rows


def _directions(d):
    dirs = list(np.eye(d))
    if d == 2:
        dirs.append(np.array([1.0, 1.0]) / np.sqrt(2.0))
    return dirs


def window_variance_profile(paths, v, min_len=64):
    """Mean across disjoint windows of ``Var(S_{t+L} - S_t) . v`` for dyadic ``L``.

    Uses every window of length ``L`` whose endpoints were recorded.
    """
    cps = set(int(m) for m in paths.checkpoints)
    lens, vals, counts = [], [], []
    L = min_len
    while L <= paths.n_steps:
        starts = [t for t in range(0, paths.n_steps - L + 1, L) if t in cps and t + L in cps]
        if starts:
            var = [np.var((paths.at(t + L) - paths.at(t)) @ v, ddof=1) for t in starts]
            lens.append(L)
            vals.append(float(np.mean(var)))
            counts.append(len(starts))
        L *= 2
    return np.array(lens), np.array(vals), np.array(counts)


def variance_slope(paths, v, min_len=64):
    """Weighted regression slope of window variance against window length."""
    lens, vals, counts = window_variance_profile(paths, v, min_len)
    if lens.size < 2:
        m = paths.checkpoints[paths.checkpoints > 0]
        var = np.array([np.var(paths.at(t) @ v, ddof=1) for t in m])
        return float(np.polyfit(m, var, 1)[0]), m, var
    w = np.sqrt(counts) / lens
    return float(np.polyfit(lens, vals, 1, w=w)[0]), lens, vals


def block_correlations(levels, n_paths):
    """Empirical ``|corr(X_{n,j} . e_a, X_{n,j'} . e_a)|`` binned by the separation between blocks."""
    seps, cors = [], []
    for lv in levels:
        if lv.decomposition is None or lv.big.shape[1] < 2:
            continue
        big = lv.decomposition.big
        X = lv.big
        for a in range(X.shape[2]):
            Z = X[:, :, a] - X[:, :, a].mean(axis=0)
            sd = Z.std(axis=0)
            ok = sd > 0
            C = (Z.T @ Z) / n_paths / np.outer(np.where(ok, sd, 1), np.where(ok, sd, 1))
            F = len(big)
            for j in range(F):
                for jj in range(j + 1, F):
                    if ok[j] and ok[jj]:
                        seps.append(big[jj].start - big[j].end)
                        cors.append(abs(C[j, jj]))
    if not seps:
        return np.array([]), np.array([])
    seps, cors = np.array(seps), np.array(cors)
    edges = 2 ** np.arange(0, int(np.log2(seps.max())) + 2)
    centers, means = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (seps >= lo) & (seps < hi)
        if m.any():
            centers.append(float(np.sqrt(lo * hi)))
            means.append(float(cors[m].mean()))
    return np.array(centers), np.array(means)


@dataclass
class DiagnosticsReport:
    n_paths: int
    n_steps: int
    degenerate: bool
    directions: list
    ks_statistic: list = field(default_factory=list)
    p_value: list = field(default_factory=list)
    variance_slopes: list = field(default_factory=list)
    sigma2_v: list = field(default_factory=list)
    block_cov_min_eigen: dict = field(default_factory=dict)
    block_corr: dict = field(default_factory=dict)
    mixing_fit: Optional[dict] = None
    rate_table: list = field(default_factory=list)
    variance_profile: dict = field(default_factory=dict)
    bounded_variance: Optional[bool] = None

    def to_dict(self):
        return {
            "n_paths": self.n_paths, "n_steps": self.n_steps, "degenerate": self.degenerate,
            "directions": [list(map(float, v)) for v in self.directions],
            "ks_statistic": self.ks_statistic, "p_value": self.p_value,
            "variance_slopes": self.variance_slopes, "sigma2_v": self.sigma2_v,
            "block_cov_min_eigen": {str(n): x for n, x in self.block_cov_min_eigen.items()},
            "block_corr": self.block_corr, "mixing_fit": self.mixing_fit,
            "rate_table": self.rate_table, "variance_profile": self.variance_profile,
            "bounded_variance": self.bounded_variance,
        }


def asip_diagnostics(paths, sigma2, p=5.0, beta=None, eps=0.05, levels=None, deltas=(0.0, 0.01, 0.05),
                     mixing_fit=None):
    """Statistical consequences of the invariance principle.

    Parameters
    ----------
    paths : PathEnsemble
    sigma2 : CovarianceReport
    p : float
        Moment exponent (> 4) for the rate table; also fixes the default
        block exponent ``beta = p/(2(p-1))``.
    levels : sequence of int, optional
        Block levels for the covariance check; defaults to every level fully
        inside the simulated horizon.
    mixing_fit : dict, optional
        ``{"C": ..., "c": ...}`` from an operator mixing-gap fit, copied into
        the report.

    In degenerate mode (``sigma2.degenerate``) only the variance of the sums
    along the degenerate direction is tracked.
    """
    if paths.n_paths < MIN_PATHS:
        raise StatisticalPowerError(f"need at least {MIN_PATHS} paths for diagnostics (got {paths.n_paths})")
    table = rate_table(p, deltas)
    if beta is None:
        beta = table[0]["beta"]
    S2 = np.asarray(sigma2.sigma2, dtype=np.float64)
    n = paths.n_steps
    if sigma2.degenerate:
        v = np.asarray(sigma2.degenerate_direction, dtype=np.float64)
        ms = [m for m in paths.dyadic() if m > 0]
        var = {m: float(np.var(paths.at(m) @ v, ddof=1)) for m in ms}
        ref = var.get(64, var[ms[0]])
        bounded = all(var[m] <= 2.0 * ref for m in ms if m >= 64)
        return DiagnosticsReport(paths.n_paths, n, True, [v], rate_table=table,
                                 variance_profile={str(m): x for m, x in var.items()}, bounded_variance=bounded)
    rep = DiagnosticsReport(paths.n_paths, n, False, _directions(paths.d), rate_table=table, mixing_fit=mixing_fit)
    for v in rep.directions:
        s2v = float(v @ S2 @ v)
        z = (paths.at(n) @ v) / np.sqrt(n * s2v)
        ks = stats.kstest(z, "norm")
        slope, lens, vals = variance_slope(paths, v)
        rep.sigma2_v.append(s2v)
        rep.ks_statistic.append(float(ks.statistic))
        rep.p_value.append(float(ks.pvalue))
        rep.variance_slopes.append(slope)
        rep.variance_profile[repr([float(x) for x in v])] = {str(int(L)): float(x) for L, x in zip(lens, vals)}
    top = int(np.log2(n)) - 1
    if levels is None:
        levels = range(top + 1)
    if max(levels, default=-1) > top:
        raise ValueError(f"levels above {top} exceed the simulated horizon")
    if levels:
        sums = block_sums(paths, beta, eps, max(levels))
        for lv in sums:
            if lv.level in levels and lv.decomposition is not None:
                tot = lv.big.sum(axis=1)
                cov = np.atleast_2d(np.cov(tot, rowvar=False))
                rep.block_cov_min_eigen[lv.level] = float(np.linalg.eigvalsh(cov)[0] / 2 ** lv.level)
        seps, cors = block_correlations([lv for lv in sums if lv.level in levels], paths.n_paths)
        noise = 3.0 / np.sqrt(paths.n_paths)
        C, rate, _ = tr.envelope_fit(seps, cors, floor=noise) if seps.size else (0.0, float("inf"), 0.0)
        rep.block_corr = {"separation": seps.tolist(), "mean_abs_corr": cors.tolist(), "noise_floor": noise,
                          "C": C, "rate": rate}
    return rep


def export_paths_csv(paths, path, header_extra=""):
    """Write ``S_m`` at the dyadic checkpoints, one row per (path, checkpoint)."""
    ms = paths.dyadic()
    with open(path, "w", newline="") as fh:
        fh.write(f"# paths n_steps={paths.n_steps},n_paths={paths.n_paths},seed={paths.seed},"
                 f"fiber_index={paths.fiber_index},jitter={paths.jitter!r}{header_extra}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "m"] + [f"S{a}" for a in range(paths.d)])
        block = np.stack([paths.at(m) for m in ms], axis=1)
        for i in range(paths.n_paths):
            for j, m in enumerate(ms):
                w.writerow([i, m] + [repr(float(x)) for x in block[i, j]])
