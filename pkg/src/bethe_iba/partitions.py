"""Partitions and the hole sets they induce in sector 0.

A partition nu = (nu_1 >= nu_2 >= ... >= nu_H) of N labels an excited
state.  Its finite holes are the quantum numbers

    {-H + nu'_l + (l - 1)}_{l=1..H},   nu' = parts in ascending order,

equivalently sigma(k) = nu_{H+1-k} - (H+1-k) with descending parts.
"""
from dataclasses import dataclass, field
from typing import Tuple

from .errors import AdmissibilityError, DomainError


@dataclass(frozen=True)
class Partition:
    parts: Tuple[int, ...] = ()

    def __post_init__(self):
        parts = tuple(sorted((int(v) for v in self.parts), reverse=True))
        if any(v <= 0 for v in parts):
            raise DomainError("partition parts must be positive", parts=parts)
        object.__setattr__(self, "parts", parts)

    @property
    def N(self):
        return sum(self.parts)

    @property
    def H(self):
        return len(self.parts)

    def __str__(self):
        return format_partition(self)


@dataclass(frozen=True)
class HoleSet:
    H: int
    finite_holes: Tuple[int, ...]
    kappa: int
    p_floor: float = field(default=0.0, compare=False)


def parse_partition(text):
    """Parse "3,1,1" (empty or blank string: ground state)."""
    text = (text or "").strip()
    if not text:
        return Partition(())
    try:
        parts = [int(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise DomainError(f"cannot parse partition {text!r}") from exc
    return Partition(tuple(parts))


def format_partition(nu):
    return ",".join(str(v) for v in nu.parts)


def min_momentum(N):
    """Smallest p with 2p >= N + 1/2."""
    return (N + 0.5) / 2.0


def check_admissible(N, p):
    if 2.0 * p < N + 0.5:
        raise AdmissibilityError(f"2p = {2 * p} < N + 1/2 = {N + 0.5}", N=N, p=p)


def holes_from_partition(nu, p):
    check_admissible(nu.N, p)
    asc = sorted(nu.parts)
    H = len(asc)
    holes = tuple(-H + v + l for l, v in enumerate(asc))
    return HoleSet(H, holes, -H, min_momentum(nu.N))


def partition_from_holes(h):
    sector, _ = invariants(h)
    if sector != 0:
        raise DomainError("only sector 0 hole sets correspond to partitions", sector=sector)
    holes = sorted(h.finite_holes)
    if len(set(holes)) != len(holes) or len(holes) != h.H:
        raise DomainError("finite holes must be H distinct integers", holes=holes)
    if holes and holes[0] <= h.kappa:
        raise DomainError("finite holes must lie above kappa", holes=holes)
    asc = [k + h.H - l for l, k in enumerate(holes)]
    return Partition(tuple(asc))


def invariants(h):
    """(sector, level) of a hole set."""
    sec = h.kappa + h.H
    lev = -((sec - h.kappa) * (sec + h.kappa - 1)) // 2 + sum(h.finite_holes)
    return sec, lev


def sigma_map(nu):
    """Return sigma as a dict {k: sigma(k)} for k = 1..H."""
    if not nu.parts:
        raise DomainError("sigma is defined for nonempty partitions")
    H = nu.H
    return {k: nu.parts[H - k] - (H + 1 - k) for k in range(1, H + 1)}


def partitions_of(N):
    """All partitions of N, each with descending parts (reverse lexicographic)."""
    def rec(n, cap):
        if n == 0:
            yield ()
            return
        for first in range(min(n, cap), 0, -1):
            for rest in rec(n - first, first):
                yield (first,) + rest
    return [Partition(t) for t in rec(N, N)]


def enumerate_level(N, p):
    check_admissible(N, p)
    return [holes_from_partition(nu, p) for nu in partitions_of(N)]
