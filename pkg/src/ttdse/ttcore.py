"""Shape and cost algebra for tensor-train factorized fully-connected layers.

A dense layer ``y = W x + b`` with ``W`` of shape ``M x N`` is replaced by a
chain of ``d`` cores ``G_t`` of shape ``[r_{t-1}, n_t, m_t, r_t]`` where
``M = m_1 * ... * m_d``, ``N = n_1 * ... * n_d`` and the boundary ranks are
``r_0 = r_d = 1``.  Everything in this module is exact integer arithmetic on
Python ints — no floats, no overflow.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterator


class SweepBudgetError(RuntimeError):
    """Raised when an exhaustive sweep would exceed its configured budget."""


def _prod(values) -> int:
    return math.prod(values)


@dataclass(frozen=True)
class LayerShape:
    """A dense fully-connected layer: ``n_in`` inputs, ``m_out`` outputs."""

    n_in: int
    m_out: int

    def __post_init__(self) -> None:
        if self.n_in < 1 or self.m_out < 1:
            raise ValueError(f"layer dimensions must be >= 1, got {self}")


@dataclass(frozen=True)
class CombinationShape:
    """One factorization of a layer: ``m`` factors the outputs, ``n`` the inputs.

    Both tuples have the same length ``d``.  For ``d > 1`` every factor must be
    at least 2 (a factor of 1 just pads the chain with a degenerate core).
    """

    m: tuple[int, ...]
    n: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if len(self.m) != len(self.n):
            raise ValueError(f"m and n must have equal length, got {self}")
        if not self.m:
            raise ValueError("factorization must have at least one factor")
        low = 2 if len(self.m) > 1 else 1
        for factor in self.m + self.n:
            if factor < low:
                raise ValueError(
                    f"factors must be >= {low} for d={len(self.m)}, got {self}"
                )

    @property
    def d(self) -> int:
        return len(self.m)

    @property
    def m_out(self) -> int:
        return _prod(self.m)

    @property
    def n_in(self) -> int:
        return _prod(self.n)

    def layer(self) -> LayerShape:
        return LayerShape(n_in=self.n_in, m_out=self.m_out)


@dataclass(frozen=True)
class RankList:
    """Tensor-train ranks ``r_0 .. r_d`` with fixed boundary ``r_0 = r_d = 1``."""

    r: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", tuple(int(v) for v in self.r))
        if len(self.r) < 2:
            raise ValueError(f"rank list needs at least r_0 and r_d, got {self}")
        if self.r[0] != 1 or self.r[-1] != 1:
            raise ValueError(f"boundary ranks must be 1, got {self}")
        if any(v < 1 for v in self.r):
            raise ValueError(f"ranks must be >= 1, got {self}")

    @property
    def d(self) -> int:
        return len(self.r) - 1

    @property
    def interior(self) -> tuple[int, ...]:
        return self.r[1:-1]


@dataclass(frozen=True)
class CostMetrics:
    """Exact cost of one factorized (or dense) layer."""

    params: int
    flops: int
    per_layer_flops: tuple[int, ...]


def _check_same_d(shape: CombinationShape, ranks: RankList) -> None:
    if ranks.d != shape.d:
        raise ValueError(
            f"rank list has d={ranks.d} but shape has d={shape.d}"
        )


def memory_params(shape: CombinationShape, ranks: RankList) -> int:
    """Parameter count of the factorized layer (cores plus bias).

    ``M + sum_t r_{t-1} * m_t * n_t * r_t``.
    """
    _check_same_d(shape, ranks)
    total = shape.m_out  # bias
    for t in range(1, shape.d + 1):
        total += ranks.r[t - 1] * shape.m[t - 1] * shape.n[t - 1] * ranks.r[t]
    return total


def flops_layer(t: int, shape: CombinationShape, ranks: RankList) -> int:
    """FLOPs of the ``t``-th contraction (1-based) in the execution chain.

    ``2 * r_t * r_{t-1} * (m_t ... m_d) * (n_1 ... n_t)`` — two FLOPs per
    multiply-accumulate.
    """
    _check_same_d(shape, ranks)
    if not 1 <= t <= shape.d:
        raise IndexError(f"layer index t={t} outside 1..{shape.d}")
    m_suffix = _prod(shape.m[t - 1:])
    n_prefix = _prod(shape.n[:t])
    return 2 * ranks.r[t] * ranks.r[t - 1] * m_suffix * n_prefix


def flops_total(shape: CombinationShape, ranks: RankList) -> CostMetrics:
    """Total FLOPs (all contractions plus the bias add) and parameter count."""
    _check_same_d(shape, ranks)
    per_layer = tuple(flops_layer(t, shape, ranks) for t in range(1, shape.d + 1))
    return CostMetrics(
        params=memory_params(shape, ranks),
        flops=shape.m_out + sum(per_layer),
        per_layer_flops=per_layer,
    )


def dense_costs(layer: LayerShape) -> CostMetrics:
    """Cost of executing the layer densely: ``M*N + M`` params, ``2*M*N + M`` FLOPs."""
    m, n = layer.m_out, layer.n_in
    return CostMetrics(params=m * n + m, flops=2 * m * n + m, per_layer_flops=(2 * m * n,))


def align(shape: CombinationShape) -> CombinationShape:
    """Canonical representative: ``m`` sorted descending, ``n`` sorted ascending.

    This ordering minimizes both FLOPs and parameters over all permutations of
    the factor lists (the suffix/prefix products in the cost terms shrink
    fastest this way), so one aligned shape stands for the whole permutation
    class.
    """
    return CombinationShape(
        m=tuple(sorted(shape.m, reverse=True)),
        n=tuple(sorted(shape.n)),
    )


def permutation_count(shape: CombinationShape) -> int:
    """Number of distinct (m-permutation, n-permutation) pairs of the shape.

    ``(d!)^2`` divided by the factorials of the multiplicities of repeated
    factors in each list.
    """
    d = shape.d
    count = math.factorial(d) ** 2
    for mult in Counter(shape.m).values():
        count //= math.factorial(mult)
    for mult in Counter(shape.n).values():
        count //= math.factorial(mult)
    return count


def _distinct_permutations(values: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    seen = set()
    for perm in itertools.permutations(values):
        if perm not in seen:
            seen.add(perm)
            yield perm


def permutation_extremes(
    shape: CombinationShape,
    ranks: RankList,
    metric: str,
    *,
    max_d: int = 6,
) -> tuple[int, int]:
    """(max, min) of a cost metric over every factor permutation of the shape.

    The sweep is factorial in ``d``; shapes with ``d > max_d`` are refused.
    """
    if shape.d > max_d:
        raise SweepBudgetError(
            f"permutation sweep over d={shape.d} exceeds budget (max_d={max_d})"
        )
    if metric == "flops":
        evaluate = lambda s: flops_total(s, ranks).flops  # noqa: E731
    elif metric == "params":
        evaluate = lambda s: memory_params(s, ranks)  # noqa: E731
    else:
        raise ValueError(f"unknown metric {metric!r}")

    best = worst = None
    for m_perm in _distinct_permutations(shape.m):
        for n_perm in _distinct_permutations(shape.n):
            value = evaluate(CombinationShape(m=m_perm, n=n_perm))
            best = value if best is None else min(best, value)
            worst = value if worst is None else max(worst, value)
    return worst, best


def ratio_stats(
    shape: CombinationShape,
    ranks: RankList,
    *,
    max_d: int = 6,
) -> tuple[float, float]:
    """Where the aligned shape sits in the per-permutation cost range.

    For each metric (FLOPs, then parameters) returns
    ``(max - aligned) / (max - min)``: 1.0 means the aligned ordering is the
    best permutation, 0.0 the worst.  A degenerate range (max == min) yields
    1.0 by convention — the aligned shape trivially attains the minimum.
    """
    ratios = []
    for metric in ("flops", "params"):
        worst, best = permutation_extremes(shape, ranks, metric, max_d=max_d)
        if metric == "flops":
            aligned_value = flops_total(align(shape), ranks).flops
        else:
            aligned_value = memory_params(align(shape), ranks)
        if worst == best:
            ratios.append(1.0)
        else:
            ratios.append((worst - aligned_value) / (worst - best))
    return ratios[0], ratios[1]
