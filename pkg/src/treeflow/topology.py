"""Index calculus for dyadic trees.

A tree with ``N`` levels has ``2**i`` branches at level ``i`` (``1 <= i <= N``)
below a root pipe that is not indexed.  Vectors over all non-root branches are
stored level-major: every level-1 entry, then every level-2 entry, and so on,
positions ascending within a level.  Branch ``(i, j)`` therefore lives at flat
index ``2**i - 2 + (j - 1)``.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

#: hard ceiling on tree depth for the index calculus (keeps 2**N in a word)
MAX_TOPOLOGY_LEVELS = 20


class _Branch(NamedTuple):
    level: int
    position: int


class BranchIndex(_Branch):
    """Location ``(level, position)`` of a non-root branch."""

    __slots__ = ()

    def __new__(cls, level: int, position: int) -> "BranchIndex":
        level, position = int(level), int(position)
        if level < 1:
            raise ValidationError(f"branch level must be >= 1, got {level}")
        if not 1 <= position <= 2**level:
            raise ValidationError(
                f"branch position must lie in [1, {2**level}] at level {level}, "
                f"got {position}")
        return super().__new__(cls, level, position)

    def parent(self) -> BranchIndex | None:
        """Mother branch, or ``None`` for a level-1 branch (whose mother is the root)."""
        if self.level == 1:
            return None
        return BranchIndex(self.level - 1, (self.position + 1) // 2)

    def children(self) -> tuple[BranchIndex, BranchIndex]:
        return (BranchIndex(self.level + 1, 2 * self.position - 1),
                BranchIndex(self.level + 1, 2 * self.position))

    def __str__(self) -> str:
        return f"{self.level},{self.position}"


Path = tuple  # tuple[BranchIndex, ...], ordered from level 1 down


def _check_levels(levels: int, cap: int = MAX_TOPOLOGY_LEVELS) -> int:
    if isinstance(levels, bool) or int(levels) != levels:
        raise ValidationError(f"level count must be an integer, got {levels!r}")
    levels = int(levels)
    if levels < 1:
        raise ValidationError(f"level count must be >= 1, got {levels}")
    if levels > cap:
        raise ValidationError(f"level count {levels} exceeds the cap of {cap}")
    return levels


def n_branches(levels: int) -> int:
    """Number of non-root branches, ``2**(N+1) - 2``."""
    return 2 ** (_check_levels(levels) + 1) - 2


def levels_for_size(size: int) -> int:
    """Invert :func:`n_branches`; raise if ``size`` is not of the form ``2**(N+1)-2``."""
    levels = (int(size) + 2).bit_length() - 2
    if levels < 1 or 2 ** (levels + 1) - 2 != size:
        raise ValidationError(
            f"a vector over the branches must have length 2**(N+1)-2, got {size}")
    return levels


def levels_for_outlets(count: int) -> int:
    """Invert ``2**N``; raise unless ``count`` is a power of two >= 2."""
    levels = int(count).bit_length() - 1
    if levels < 1 or 2**levels != count:
        raise ValidationError(
            f"an outlet vector must have length 2**N with N >= 1, got {count}")
    return levels


def level_slice(level: int) -> slice:
    """Slice of the level-major branch vector holding level ``level``."""
    return slice(2**level - 2, 2 ** (level + 1) - 2)


def flat_index(branch: BranchIndex | tuple[int, int]) -> int:
    level, position = BranchIndex(*branch)
    return 2**level - 2 + position - 1


def branch_set(levels: int) -> list[BranchIndex]:
    """All branches of an ``N``-level tree in canonical (level-major) order."""
    levels = _check_levels(levels)
    return [BranchIndex(i, j) for i in range(1, levels + 1)
            for j in range(1, 2**i + 1)]


def path_to(branch: BranchIndex | tuple[int, int]) -> Path:
    """Branches linking the root to ``branch``, level 1 first, ``branch`` last."""
    level, position = BranchIndex(*branch)
    positions = [position]
    for _ in range(level - 1):
        positions.append((positions[-1] + 1) // 2)
    return tuple(BranchIndex(k, m) for k, m in enumerate(reversed(positions), 1))


def subpath(path: Sequence[BranchIndex], s: int) -> Path:
    """The first ``s`` branches of ``path`` (empty for ``s == 0``)."""
    if not 0 <= s <= len(path):
        raise ValidationError(f"subpath length {s} outside [0, {len(path)}]")
    return tuple(path[:s])


def nu(a: int, b: int) -> int:
    """Smallest bit position from which the binary digits of ``a`` and ``b`` agree.

    Two outlets ``i`` and ``j`` of an ``N``-level tree share exactly
    ``N - nu(i - 1, j - 1)`` non-root branches.

    >>> nu(5, 7)
    2
    """
    if a < 0 or b < 0:
        raise ValidationError(f"nu is defined for non-negative integers, got ({a}, {b})")
    return (int(a) ^ int(b)).bit_length()


def nu_matrix(levels: int) -> np.ndarray:
    """``nu(i, j)`` for all ``0 <= i, j < 2**N`` as an integer array."""
    idx = np.arange(2 ** _check_levels(levels))
    xor = idx[:, None] ^ idx[None, :]
    out = np.zeros(xor.shape, dtype=np.int64)
    for bit in range(levels):
        out += xor >= (1 << bit)
    return out


def _as_positive(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    levels_for_size(arr.size)
    bad = np.flatnonzero(~(arr > 0))
    if bad.size:
        k = int(bad[0])
        raise ValidationError(f"{name}[{k}] must be > 0, got {arr[k]!r}")
    return arr


def xi_from_x(x) -> np.ndarray:
    """Cumulative ratios: each entry is the product of ``x`` along its path."""
    x = _as_positive(x, "x")
    xi = x.copy()
    for level in range(2, levels_for_size(x.size) + 1):
        xi[level_slice(level)] *= np.repeat(xi[level_slice(level - 1)], 2)
    return xi


def x_from_xi(xi) -> np.ndarray:
    """Per-bifurcation ratios recovered from cumulative ones; inverse of :func:`xi_from_x`."""
    xi = _as_positive(xi, "xi")
    x = xi.copy()
    for level in range(2, levels_for_size(xi.size) + 1):
        x[level_slice(level)] /= np.repeat(xi[level_slice(level - 1)], 2)
    return x


def path_mask(levels: int, outlet: int = 1) -> np.ndarray:
    """Boolean mask over the branch vector selecting ``path_to((N, outlet))``."""
    mask = np.zeros(n_branches(levels), dtype=bool)
    for branch in path_to((levels, outlet)):
        mask[flat_index(branch)] = True
    return mask
