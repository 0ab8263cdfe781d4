"""Big/small block decomposition of dyadic time ranges.

Level ``n`` covers the time indices ``[2**n, 2**(n+1))``.  It is cut into
``F = 2**f`` pairs ``(J_j, I_j)`` with ``f = floor(beta*n)``: the ``J``
intervals are short gaps whose lengths follow the 2-adic valuation of ``j``,
the ``I`` intervals are the long summation blocks.
"""

import csv
import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List


class BlockParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    kind: str  # "I" or "J"
    j: int
    start: int
    length: int

    @property
    def end(self):
        return self.start + self.length


def _floor_mul(x, n):
    # decimal-exact floor(x*n): avoids 0.29*100 -> 28.999...
    return math.floor(Fraction(repr(float(x))) * n)


def _valuation(j):
    return (j & -j).bit_length() - 1


def check_parameters(beta, eps):
    if not 0.0 < beta < 1.0:
        raise BlockParameterError(f"beta must satisfy 0 < beta < 1 (got {beta})")
    if not 0.0 < eps < 1.0 - beta:
        raise BlockParameterError(f"eps must satisfy 0 < eps < 1 - beta (got eps={eps}, beta={beta})")


def total_gap_length(n, beta, eps):
    """``2^floor(eps n) * 2^(f-1) * (f+2)`` as an exact integer."""
    f, e = _floor_mul(beta, n), _floor_mul(eps, n)
    return (2 ** e) * (2 ** f) * (f + 2) // 2


@dataclass(frozen=True)
class BlockDecomposition:
    n: int
    beta: float
    eps: float
    f: int
    F: int
    intervals: tuple
    remainder_absorbed: int

    @property
    def start(self):
        return 2 ** self.n

    @property
    def stop(self):
        return 2 ** (self.n + 1)

    @property
    def big(self) -> List[Interval]:
        return [iv for iv in self.intervals if iv.kind == "I"]

    @property
    def gaps(self) -> List[Interval]:
        return [iv for iv in self.intervals if iv.kind == "J"]

    def gap_length(self):
        return sum(iv.length for iv in self.gaps)

    def rows(self):
        return [(self.n, iv.kind, iv.j, iv.start, iv.length) for iv in self.intervals]


@functools.lru_cache(maxsize=1024)
def build_blocks(n, beta, eps):
    """Decompose ``[2**n, 2**(n+1))`` into alternating ``J_0, I_0, ..., J_{F-1}, I_{F-1}``.

    Raises
    ------
    BlockParameterError
        If the parameters are out of range or the big blocks would be empty,
        i.e. ``2^(n-f) - (f+2) 2^(floor(eps n)-1) < 1`` after flooring.
    """
    check_parameters(beta, eps)
    n = int(n)
    if n < 0:
        raise BlockParameterError("level n must be nonnegative")
    f = _floor_mul(beta, n)
    F = 2 ** f
    unit = 2 ** _floor_mul(eps, n)
    free = 2 ** n - total_gap_length(n, beta, eps)
    big = free // F if free > 0 else 0
    if big < 1:
        nominal = Fraction(2 ** n, F) - Fraction((f + 2) * unit, 2)
        raise BlockParameterError(
            f"level {n} (beta={beta}, eps={eps}): big-block length 2^(n-f) - (f+2)*2^(floor(eps*n)-1) "
            f"= {float(nominal):g} must be at least 1")
    gaps = [unit * F] + [unit * 2 ** _valuation(j) for j in range(1, F)]
    remainder = free - big * F
    out, pos = [], 2 ** n
    for j in range(F):
        out.append(Interval("J", j, pos, gaps[j]))
        pos += gaps[j]
        length = big + (remainder if j == F - 1 else 0)
        out.append(Interval("I", j, pos, length))
        pos += length
    return BlockDecomposition(n, beta, eps, f, F, tuple(out), remainder)


def is_valid_level(n, beta, eps):
    try:
        build_blocks(n, beta, eps)
    except BlockParameterError:
        return False
    return True


def precedes(a, b, beta, eps):
    """``I_a`` lies to the left of ``I_b`` for block indices ``a = (n, j)``, ``b = (n', j')``."""
    (n1, j1), (n2, j2) = a, b
    s1 = build_blocks(n1, beta, eps).big[j1].start
    s2 = build_blocks(n2, beta, eps).big[j2].start
    return s1 < s2


@dataclass(frozen=True)
class GapCensus:
    N: int
    count: int
    bound: float
    invalid_levels: tuple

    @property
    def ratio(self):
        return self.count / self.bound


def gap_census(N, beta, eps, strict=False):
    """Number of gap integers in ``[1, 2**(N+1))`` and the reference bound.

    The bound is ``2^(eps (N+1)) 2^(beta N) (eps N + 2)`` (constant 1).
    Levels too short to carry a big block contain no summation block, so
    all of their integers are counted as gap; ``strict=True`` raises for
    them instead.
    """
    check_parameters(beta, eps)
    count, invalid = 0, []
    for n in range(N + 1):
        try:
            count += build_blocks(n, beta, eps).gap_length()
        except BlockParameterError:
            if strict:
                raise
            invalid.append(n)
            count += 2 ** n
    bound = 2.0 ** (eps * (N + 1)) * 2.0 ** (beta * N) * (eps * N + 2)
    return GapCensus(N, count, bound, tuple(invalid))


def export_blocks_csv(decomps, path, header_extra=""):
    """Write ``level,kind,j,start,length`` rows for each decomposition."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# blocks{',' + header_extra if header_extra else ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "kind", "j", "start", "length"])
        for d in decomps:
            w.writerows(d.rows())
