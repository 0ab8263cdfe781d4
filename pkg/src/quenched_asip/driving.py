"""Base dynamics driving the choice of fiber maps.

The base system is represented by the orbit of a single point: a two-sided
sequence of alphabet symbols indexed by the integers.  Index ``i`` stands for
the fiber ``sigma^i(omega)``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _rng

KINDS = ("iid-bernoulli", "finite-periodic", "irrational-rotation")


@dataclass(frozen=True)
class DrivingSystem:
    """Reproducible two-sided stream of map identifiers.

    Parameters
    ----------
    kind : str
        One of ``"iid-bernoulli"``, ``"finite-periodic"`` or
        ``"irrational-rotation"``.
    alphabet : sequence of str
        Map identifiers; resolved against a :class:`~quenched_asip.maps.MapFamily`.
    master_seed : int
        Key of the counter-based stream (iid driving only).
    rotation_angle : float, optional
        Rotation number in (0, 1) for ``irrational-rotation``.
    period : int, optional
        Period for ``finite-periodic``; defaults to ``len(alphabet)``.
    """

    kind: str
    alphabet: tuple
    master_seed: int = 0
    rotation_angle: Optional[float] = None
    period: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        if self.kind not in KINDS:
            raise ValueError(f"unknown driving kind {self.kind!r}; expected one of {KINDS}")
        if not self.alphabet:
            raise ValueError("driving alphabet must be non-empty")
        if self.kind == "irrational-rotation":
            a = self.rotation_angle
            if a is None or not 0.0 < a < 1.0:
                raise ValueError("rotation_angle must lie in (0, 1)")
        if self.kind == "finite-periodic":
            if self.period is None:
                object.__setattr__(self, "period", len(self.alphabet))
            if self.period < 1:
                raise ValueError("period must be a positive integer")

    def symbols(self, i0, i1):
        """Alphabet positions for fiber indices ``i0..i1`` inclusive."""
        if i1 < i0:
            raise ValueError("parameter window requires i0 <= i1")
        n = len(self.alphabet)
        idx = np.arange(i0, i1 + 1, dtype=np.int64)
        if self.kind == "finite-periodic":
            return (idx % self.period) % n
        if self.kind == "irrational-rotation":
            phase = np.mod(idx.astype(np.float64) * self.rotation_angle, 1.0)
            return np.minimum((phase * n).astype(np.int64), n - 1)
        u = _rng.uniforms(self.master_seed, i0, i1 - i0 + 1)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def parameter_window(self, i0, i1):
        """Map identifiers for fibers ``i0..i1`` inclusive; negative indices allowed."""
        return [self.alphabet[s] for s in self.symbols(i0, i1)]

    def parameter_at(self, i):
        return self.alphabet[int(self.symbols(i, i)[0])]


def constant(name):
    """Driving that always selects the same map."""
    return DrivingSystem("finite-periodic", (name,), period=1)


def iid(alphabet: Sequence[str], seed=0):
    return DrivingSystem("iid-bernoulli", tuple(alphabet), master_seed=seed)


def periodic(word: Sequence[str]):
    return DrivingSystem("finite-periodic", tuple(word), period=len(word))


def rotation(alphabet: Sequence[str], angle=(5 ** 0.5 - 1) / 2):
    return DrivingSystem("irrational-rotation", tuple(alphabet), rotation_angle=angle)
