"""Fiberwise observables ``g_omega : [0, 1] -> R^d``.

Observables are evaluated pointwise along orbits and as grid functions
(values at cell midpoints) when paired with Ulam densities.
"""

import numpy as np

from .maps import eval_map


class Observable:
    """A good observable given by ``func(x, i) -> array of shape (len(x), d)``.

    ``i`` is the fiber index.  Observables that do not depend on the fiber
    set ``fiber_constant=True`` so grid values are computed once.
    """

    def __init__(self, func, d=1, sup_bound=1.0, name="", fiber_constant=True):
        self.func = func
        self.d = int(d)
        self.sup_bound = float(sup_bound)
        self.name = name
        self.fiber_constant = fiber_constant
        self._grid_cache = {}

    def __repr__(self):
        return f"Observable({self.name or 'anonymous'}, d={self.d})"

    def values(self, x, i):
        x = np.asarray(x, dtype=np.float64)
        out = np.asarray(self.func(x, i), dtype=np.float64)
        return out.reshape(x.shape[0], self.d) if x.ndim == 1 else out.reshape(self.d)

    def grid(self, i, k):
        """Values at the ``k`` cell midpoints, shape ``(k, d)``."""
        key = (0 if self.fiber_constant else int(i), int(k))
        if key not in self._grid_cache:
            mid = (np.arange(k) + 0.5) / k
            self._grid_cache[key] = self.values(mid, i)
        return self._grid_cache[key]

    def grid_window(self, i0, count, k):
        """Grid values for fibers ``i0 .. i0+count-1``, shape ``(count, k, d)``."""
        if self.fiber_constant:
            return np.broadcast_to(self.grid(i0, k), (count, k, self.d))
        return np.stack([self.grid(i0 + j, k) for j in range(count)])

    def dot(self, v):
        """Scalar observable ``v . g``."""
        v = np.asarray(v, dtype=np.float64).reshape(self.d)
        base = self

        def func(x, i):
            return base.values(x, i) @ v

        obs = Observable(func, 1, float(np.abs(v).sum()) * self.sup_bound,
                         name=f"{v.tolist()}.{self.name}", fiber_constant=self.fiber_constant)
        return obs


class CenteredObservable(Observable):
    """``g_omega - h_omega(g_omega)`` with fiber means supplied by ``mean_of``."""

    def __init__(self, base, mean_of, constant=False):
        super().__init__(self._centered, base.d, 2.0 * base.sup_bound, name=f"centered({base.name})",
                         fiber_constant=base.fiber_constant and constant)
        self.base = base
        self.mean_of = mean_of
        self._means = {}

    def mean(self, i):
        i = int(i)
        if i not in self._means:
            self._means[i] = np.asarray(self.mean_of(i), dtype=np.float64).reshape(self.d)
        return self._means[i]

    def _centered(self, x, i):
        return self.base.values(x, i) - self.mean(i)

    def grid(self, i, k):
        key = (0 if self.fiber_constant else int(i), int(k))
        if key not in self._grid_cache:
            self._grid_cache[key] = self.base.grid(i, k) - self.mean(i)
        return self._grid_cache[key]


def stack(*observables, name=None):
    """Concatenate scalar or vector observables into one vector observable."""
    d = sum(o.d for o in observables)

    def func(x, i):
        return np.concatenate([o.values(x, i) for o in observables], axis=-1)

    return Observable(func, d, max(o.sup_bound for o in observables),
                      name=name or "(" + ", ".join(o.name for o in observables) + ")",
                      fiber_constant=all(o.fiber_constant for o in observables))


def cosine(freq=1):
    return Observable(lambda x, i: np.cos(2 * np.pi * freq * x), 1, 1.0, name=f"cos(2pi*{freq}x)")


def sine(freq=1):
    return Observable(lambda x, i: np.sin(2 * np.pi * freq * x), 1, 1.0, name=f"sin(2pi*{freq}x)")


def identity():
    return Observable(lambda x, i: x, 1, 1.0, name="x")


def indicator(a, b):
    def func(x, i):
        return ((x >= a) & (x < b)).astype(np.float64)

    return Observable(func, 1, 1.0, name=f"1[{a:g},{b:g})")


def grid_table(values):
    """Piecewise-constant observable on a uniform grid with the given cell values."""
    table = np.asarray(values, dtype=np.float64)
    n = table.shape[0]
    table2 = table.reshape(n, -1)

    def func(x, i):
        idx = np.minimum((np.asarray(x) * n).astype(np.int64), n - 1)
        return table2[idx]

    return Observable(func, table2.shape[1], float(np.abs(table2).max()), name="table")


def coboundary(q, fam, sys):
    """``g_omega = q - q o T_omega``: a coboundary for the skew product."""

    def func(x, i):
        p = fam[sys.parameter_at(i)]
        return q.values(x, i) - q.values(eval_map(p, x), i + 1)

    constant = len(set(sys.alphabet)) == 1 and q.fiber_constant
    return Observable(func, q.d, 2.0 * q.sup_bound, name=f"coboundary({q.name})", fiber_constant=constant)
