"""Piecewise expanding maps of the unit interval.

Each branch has the form ``T(x) = s*x + o + a*sin(2*pi*(x - c)/L)`` on
``[c, c + L)``.  With ``a = 0`` the branch is affine; otherwise it is a C2
perturbation whose derivative bounds are available in closed form:
``|T'| >= |s| - 2*pi*|a|/L`` and ``|T''| <= |a|*(2*pi/L)**2``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

_TWO_PI = 2.0 * np.pi
_IMAGE_TOL = 1e-12


class NotExpandingError(ValueError):
    """Raised when the minimal expansion of a family is not larger than one."""


class CoveringUnverifiedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MapParameter:
    """A piecewise monotone map of [0, 1] with explicit branch data."""

    breakpoints: tuple
    slopes: tuple
    offsets: tuple
    amplitudes: tuple = None
    name: str = ""

    def __post_init__(self):
        c = tuple(float(v) for v in self.breakpoints)
        nb = len(c) - 1
        s = tuple(float(v) for v in self.slopes)
        o = tuple(float(v) for v in self.offsets)
        a = (0.0,) * nb if self.amplitudes is None else tuple(float(v) for v in self.amplitudes)
        object.__setattr__(self, "breakpoints", c)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "offsets", o)
        object.__setattr__(self, "amplitudes", a)
        if nb < 1 or c[0] != 0.0 or c[-1] != 1.0 or any(np.diff(c) <= 0):
            raise ValueError("breakpoints must increase strictly from 0 to 1")
        if not len(s) == len(o) == len(a) == nb:
            raise ValueError("need one slope, offset and amplitude per branch")
        for i in range(nb):
            L = c[i + 1] - c[i]
            if abs(s[i]) <= _TWO_PI * abs(a[i]) / L:
                raise ValueError(f"branch {i} of {self.name or 'map'} is not monotone")
            lo, hi = self.branch_image(i)
            if lo < -_IMAGE_TOL or hi > 1.0 + _IMAGE_TOL:
                raise ValueError(f"branch {i} of {self.name or 'map'} leaves [0, 1]")

    @property
    def n_branches(self):
        return len(self.slopes)

    @property
    def kind(self):
        return "affine" if not any(self.amplitudes) else "C2-nonlinear"

    def branch_eval(self, i, x):
        """Evaluate branch ``i``'s formula (extended to the closed interval)."""
        x = np.asarray(x, dtype=np.float64)
        c0, L = self.breakpoints[i], self.breakpoints[i + 1] - self.breakpoints[i]
        y = self.slopes[i] * x + self.offsets[i]
        if self.amplitudes[i]:
            y = y + self.amplitudes[i] * np.sin(_TWO_PI * (x - c0) / L)
        return y

    def branch_image(self, i):
        u = float(self.branch_eval(i, self.breakpoints[i]))
        v = float(self.branch_eval(i, self.breakpoints[i + 1]))
        return min(u, v), max(u, v)

    def branch_inverse(self, i, y):
        """Preimage of ``y`` under branch ``i``; ``y`` must lie in the branch image."""
        y = np.asarray(y, dtype=np.float64)
        if not self.amplitudes[i]:
            return (y - self.offsets[i]) / self.slopes[i]
        lo = np.full(y.shape, self.breakpoints[i])
        hi = np.full(y.shape, self.breakpoints[i + 1])
        sign = 1.0 if self.slopes[i] > 0 else -1.0
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = sign * (self.branch_eval(i, mid) - y) > 0
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return 0.5 * (lo + hi)

    def branch_index(self, x):
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, self.n_branches - 1)

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = self.branch_index(x)
        c = np.asarray(self.breakpoints)
        L = np.diff(c)[idx]
        a = np.asarray(self.amplitudes)[idx]
        return np.asarray(self.slopes)[idx] + a * _TWO_PI / L * np.cos(_TWO_PI * (x - c[idx]) / L)

    def min_expansion(self):
        c = np.asarray(self.breakpoints)
        L = np.diff(c)
        return float(np.min(np.abs(self.slopes) - _TWO_PI * np.abs(self.amplitudes) / L))

    def max_second_derivative(self):
        L = np.diff(np.asarray(self.breakpoints))
        return float(np.max(np.abs(self.amplitudes) * (_TWO_PI / L) ** 2))

    def has_dyadic_slopes(self):
        """True when some branch is affine with a power-of-two slope."""
        for s, a in zip(self.slopes, self.amplitudes):
            m, e = np.frexp(abs(s))
            if a == 0.0 and m == 0.5:
                return True
        return False

    def __call__(self, x):
        return eval_map(self, x)


def eval_map(p, x):
    """Evaluate ``T(x)``; branches are half-open except the last, which is closed."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise ValueError("eval_map: argument outside the domain [0, 1]")
    idx = p.branch_index(x)
    c = np.asarray(p.breakpoints)
    s = np.asarray(p.slopes)[idx]
    y = s * x + np.asarray(p.offsets)[idx]
    if any(p.amplitudes):
        L = np.diff(c)[idx]
        y = y + np.asarray(p.amplitudes)[idx] * np.sin(_TWO_PI * (x - c[idx]) / L)
    y = np.clip(y, 0.0, 1.0)
    return float(y) if y.ndim == 0 else y


@dataclass(frozen=True)
class FamilyConstants:
    b: int
    delta: float
    D_second: float
    covering_k: Optional[int] = None


@dataclass(frozen=True)
class MapFamily:
    """Finite alphabet of fiber maps, keyed by identifier."""

    maps: Mapping[str, MapParameter] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "maps", dict(self.maps))
        if not self.maps:
            raise ValueError("map family must contain at least one map")

    def __getitem__(self, name):
        try:
            return self.maps[name]
        except KeyError:
            raise KeyError(f"map {name!r} is not in the family") from None

    def __iter__(self):
        return iter(self.maps)

    def __len__(self):
        return len(self.maps)

    def __hash__(self):
        return hash(tuple(sorted(self.maps.items(), key=lambda kv: kv[0])))

    def params(self):
        return list(self.maps.values())


def family_constants(fam):
    """Exact branch-count, expansion and distortion bounds over the alphabet."""
    ps = fam.params() if isinstance(fam, MapFamily) else list(fam)
    b = max(p.n_branches for p in ps)
    delta = min(p.min_expansion() for p in ps)
    D = max(p.max_second_derivative() for p in ps)
    if delta <= 1.0:
        raise NotExpandingError(f"family is not expanding: min |T'| = {delta:g} <= 1")
    return FamilyConstants(b=b, delta=delta, D_second=D)


# -- covering ---------------------------------------------------------------

def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1] + _IMAGE_TOL:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return tuple(out)


def image_of_union(p, union):
    """Image of a finite union of intervals under ``p`` (as merged intervals)."""
    pieces = []
    c = p.breakpoints
    for a, b in union:
        for i in range(p.n_branches):
            lo, hi = max(a, c[i]), min(b, c[i + 1])
            if hi - lo <= _IMAGE_TOL:
                continue
            u, v = float(p.branch_eval(i, lo)), float(p.branch_eval(i, hi))
            pieces.append((max(min(u, v), 0.0), min(max(u, v), 1.0)))
    return _merge(pieces)


def _is_full(union):
    return len(union) == 1 and union[0][0] <= _IMAGE_TOL and union[0][1] >= 1.0 - _IMAGE_TOL


def _key(union):
    return tuple((round(a, 12), round(b, 12)) for a, b in union)


def verify_covering(fam, grid_resolution, k_max, intervals=None, max_frontier=200_000):
    """Smallest ``k`` such that every tested interval covers [0, 1] under every word of length ``k``.

    The tested intervals are the dyadic cells ``[j/R, (j+1)/R)`` for
    ``R = grid_resolution`` unless ``intervals`` is given.  Images are
    propagated exactly through every map of the alphabet; distinct images
    are deduplicated so the search is over reachable images rather than
    words.  Returns ``None`` (with a :class:`CoveringUnverifiedWarning`)
    when ``k_max`` is exhausted.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    ps = fam.params() if isinstance(fam, MapFamily) else list(fam)
    if intervals is None:
        intervals = [(j / grid_resolution, (j + 1) / grid_resolution) for j in range(grid_resolution)]
    frontier = {}
    for a, b in intervals:
        u = _merge([(float(a), float(b))])
        frontier[_key(u)] = u
    for k in range(1, k_max + 1):
        nxt = {}
        for u in frontier.values():
            for p in ps:
                img = image_of_union(p, u)
                nxt.setdefault(_key(img), img)
        if len(nxt) > max_frontier:
            raise RuntimeError("covering search exceeded the frontier budget")
        frontier = nxt
        if all(_is_full(u) for u in frontier.values()):
            return k
    warnings.warn(
        f"covering condition unverified up to k_max={k_max} at resolution {grid_resolution}",
        CoveringUnverifiedWarning,
        stacklevel=2,
    )
    return None


# -- constructors -------------------------------------------------------------

def beta_map(m, name=None):
    """``x -> m x mod 1`` for integer ``m >= 2``."""
    c = tuple(j / m for j in range(m + 1))
    return MapParameter(c, (float(m),) * m, tuple(-float(j) for j in range(m)), name=name or f"beta{m}")


def doubling():
    return beta_map(2, name="doubling")


def three_branch():
    """2x on [0,1/2), 2x-1 on [1/2,3/4), 2x-3/2 on [3/4,1]."""
    return MapParameter((0.0, 0.5, 0.75, 1.0), (2.0, 2.0, 2.0), (0.0, -1.0, -1.5), name="three_branch")


def perturbed_doubling(amplitude):
    """Doubling map plus ``amplitude*sin(4*pi*x)`` on each branch (endpoints fixed)."""
    return MapParameter((0.0, 0.5, 1.0), (2.0, 2.0), (0.0, -1.0), (amplitude, amplitude),
                        name=f"perturbed_doubling({amplitude:g})")


def trapping_map():
    """Expanding map with the invariant interval [0, 1/4): never covers."""
    return MapParameter((0.0, 0.125, 0.25, 1.0), (2.0, 2.0, 4.0 / 3.0), (0.0, -0.25, -1.0 / 3.0),
                        name="trapping")


def contracting_map(slope=0.9):
    return MapParameter((0.0, 1.0), (slope,), (0.0,), name=f"contracting({slope:g})")


PRESETS = {
    "doubling": doubling,
    "beta2": lambda: beta_map(2),
    "beta3": lambda: beta_map(3),
    "three_branch": three_branch,
    "trapping": trapping_map,
}


def from_dict(spec, name=""):
    """Build a map from a config entry: ``{"preset": ...}`` or explicit branch lists."""
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset is not None:
        if preset == "beta":
            return beta_map(int(spec["m"]), name=name or None)
        if preset == "perturbed_doubling":
            return perturbed_doubling(float(spec["amplitude"]))
        if preset == "contracting":
            return contracting_map(float(spec.get("slope", 0.9)))
        if preset not in PRESETS:
            raise ValueError(f"unknown map preset {preset!r}")
        return PRESETS[preset]()
    return MapParameter(tuple(spec["breakpoints"]), tuple(spec["slopes"]), tuple(spec["offsets"]),
                        tuple(spec["amplitudes"]) if "amplitudes" in spec else None, name=name)


def compose(first, second):
    """The affine map ``second o first`` with its full branch structure."""
    if first.kind != "affine" or second.kind != "affine":
        raise ValueError("compose supports affine maps only")
    cuts, slopes, offsets = [0.0], [], []
    for i in range(first.n_branches):
        a, b = first.breakpoints[i], first.breakpoints[i + 1]
        s, o = first.slopes[i], first.offsets[i]
        pts = {a, b}
        for c in second.breakpoints[1:-1]:
            x = (c - o) / s
            if a < x < b:
                pts.add(x)
        pts = sorted(pts)
        for lo, hi in zip(pts[:-1], pts[1:]):
            j = int(second.branch_index(s * 0.5 * (lo + hi) + o))
            slopes.append(second.slopes[j] * s)
            offsets.append(second.slopes[j] * o + second.offsets[j])
            cuts.append(hi)
    cuts[-1] = 1.0
    return MapParameter(tuple(cuts), tuple(slopes), tuple(offsets),
                        name=f"{second.name}o{first.name}")
