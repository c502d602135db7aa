"""Lazy generation of the raw design space: factorizations x rank lists.

The space is huge (10^8.. for small layers, 10^30.. for transformer layers),
so everything here is a generator and the "how big is it" question is answered
closed-form by :func:`count_design_space` instead of by materializing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator

from .ttcore import CombinationShape, LayerShape, RankList, permutation_count

#: Interior rank values of the standard sweep: 1 plus every multiple of 8 up
#: to 3064 (the largest rank the benchmark sweep considers).
DEFAULT_RANK_VALUES: tuple[int, ...] = (1,) + tuple(range(8, 3065, 8))

RANK_MODES = ("uniform", "independent")
COUNT_RANK_MODES = ("dense-range", "listed")


@dataclass(frozen=True)
class EnumerationPolicy:
    """What part of the design space to generate and how to count it.

    ``rank_mode`` "uniform" puts the same value at every interior position
    (the usual single-R sweep); "independent" takes the Cartesian product.
    ``align_only`` emits one canonical representative per factor multiset.
    ``clamp_ranks`` lets the pruning pipeline clamp interior ranks to the
    maximal meaningful rank of each bond before costing.  ``count_rank_mode``
    picks the closed-form counting convention: "dense-range" counts every
    integer rank up to min(cap, max bond rank) per bond — the convention the
    reported design-space sizes use — while "listed" counts literally what
    :func:`rank_lists` yields.
    """

    max_d: int = 6
    rank_values: tuple[int, ...] = field(default=DEFAULT_RANK_VALUES)
    rank_mode: str = "uniform"
    align_only: bool = True
    clamp_ranks: bool = True
    count_rank_mode: str = "dense-range"

    def __post_init__(self) -> None:
        object.__setattr__(self, "rank_values", tuple(int(v) for v in self.rank_values))
        if self.max_d < 1:
            raise ValueError(f"max_d must be >= 1, got {self.max_d}")
        if not self.rank_values or any(v < 1 for v in self.rank_values):
            raise ValueError(f"rank_values must be non-empty, all >= 1: {self.rank_values}")
        if self.rank_mode not in RANK_MODES:
            raise ValueError(f"rank_mode must be one of {RANK_MODES}, got {self.rank_mode!r}")
        if self.count_rank_mode not in COUNT_RANK_MODES:
            raise ValueError(
                f"count_rank_mode must be one of {COUNT_RANK_MODES}, got {self.count_rank_mode!r}"
            )

    @property
    def rank_cap(self) -> int:
        return max(self.rank_values)


def factor_tuples(x: int, d: int) -> Iterator[tuple[int, ...]]:
    """Every multiset of ``d`` factors >= 2 with product ``x``, non-increasing.

    ``d = 1`` yields the single tuple ``(x,)`` (including ``x = 1``); otherwise
    the stream is empty when no such factorization exists (e.g. primes for
    d = 2).  Order: descending lexicographic, each tuple exactly once.
    """
    if x < 1 or d < 1:
        raise ValueError(f"x and d must be positive, got x={x} d={d}")
    if d == 1:
        yield (x,)
        return

    def rec(value: int, parts: int, cap: int) -> Iterator[tuple[int, ...]]:
        if parts == 1:
            if 2 <= value <= cap:
                yield (value,)
            return
        # The leading factor f needs value/f to still split into parts-1
        # factors each in [2, f], so f >= value^(1/parts).
        for f in range(min(value, cap), 1, -1):
            if value % f:
                continue
            if f ** parts < value:
                break
            for rest in rec(value // f, parts - 1, f):
                yield (f,) + rest

    yield from rec(x, d, x)


def _aligned_from_tuples(m_tuple: tuple[int, ...], n_tuple: tuple[int, ...]) -> CombinationShape:
    # factor_tuples yields non-increasing tuples: m is already descending,
    # n just needs reversing to ascend.
    return CombinationShape(m=m_tuple, n=tuple(reversed(n_tuple)))


def combination_shapes(layer: LayerShape, policy: EnumerationPolicy) -> Iterator[CombinationShape]:
    """All combination shapes of the layer, lazily, d ascending.

    With ``align_only`` each factor-multiset pair appears once, aligned
    (m descending, n ascending); otherwise every distinct (m-permutation,
    n-permutation) pair is emitted, ascending lexicographically.
    """
    for d in range(1, policy.max_d + 1):
        for m_tuple in factor_tuples(layer.m_out, d):
            for n_tuple in factor_tuples(layer.n_in, d):
                if policy.align_only:
                    yield _aligned_from_tuples(m_tuple, n_tuple)
                else:
                    for m_perm in sorted(set(itertools.permutations(m_tuple))):
                        for n_perm in sorted(set(itertools.permutations(n_tuple))):
                            yield CombinationShape(m=m_perm, n=n_perm)


def rank_lists(d: int, policy: EnumerationPolicy) -> Iterator[RankList]:
    """Admissible rank lists for a length-``d`` chain under the policy.

    Values exceeding the maximal meaningful rank of a bond are still emitted —
    clamping is a pruning concern, not a generation one.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    values = list(dict.fromkeys(policy.rank_values))  # dedupe, keep order
    if d == 1:
        yield RankList(r=(1, 1))
        return
    if policy.rank_mode == "uniform":
        for value in values:
            yield RankList(r=(1,) + (value,) * (d - 1) + (1,))
    else:
        for combo in itertools.product(values, repeat=d - 1):
            yield RankList(r=(1,) + combo + (1,))


def max_tt_ranks(shape: CombinationShape) -> tuple[int, ...]:
    """Maximal meaningful rank of each bond: min(prefix, suffix) of the
    products ``m_i * n_i`` — the unfolding rank bound of the layer matrix."""
    pair = [mi * ni for mi, ni in zip(shape.m, shape.n)]
    total = math.prod(pair)
    bounds = []
    prefix = 1
    for t in range(shape.d - 1):
        prefix *= pair[t]
        bounds.append(min(prefix, total // prefix))
    return tuple(bounds)


def _rank_count_for_pair(aligned: CombinationShape, policy: EnumerationPolicy) -> int:
    """Closed-form number of rank lists counted for one aligned shape."""
    d = aligned.d
    if policy.count_rank_mode == "listed":
        n_values = len(set(policy.rank_values))
        if d == 1:
            return 1
        return n_values if policy.rank_mode == "uniform" else n_values ** (d - 1)
    # dense-range: every integer rank 1..min(cap, bond bound), independently
    # per bond; bounds taken on the aligned representative so the whole
    # permutation class counts uniformly.
    count = 1
    for bound in max_tt_ranks(aligned):
        count *= min(policy.rank_cap, bound)
    return count


def count_design_space(layer: LayerShape, policy: EnumerationPolicy) -> int:
    """Exact size of the design space, no materialization.

    Permuted shapes are counted via :func:`permutation_count` instead of being
    enumerated; rank lists per the policy's ``count_rank_mode``.
    """
    total = 0
    for d in range(1, policy.max_d + 1):
        n_tuples = list(factor_tuples(layer.n_in, d))
        if not n_tuples:
            continue
        for m_tuple in factor_tuples(layer.m_out, d):
            for n_tuple in n_tuples:
                aligned = _aligned_from_tuples(m_tuple, n_tuple)
                shapes = 1 if policy.align_only else permutation_count(aligned)
                total += shapes * _rank_count_for_pair(aligned, policy)
    return total
