"""Design-space pruning pipeline: alignment -> vectorization -> initial-layer
-> scalability, with per-layer thread assignment for the survivors.

Stage counts mirror the five-column reduction reports; the first two columns
are computed closed-form (the raw space is never materialized), the last three
by running the stages over the materialized aligned candidates.
"""

from __future__ import annotations

import dataclasses
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .designspace import (
    EnumerationPolicy,
    combination_shapes,
    count_design_space,
    max_tt_ranks,
    rank_lists,
)
from .ttcore import (
    CombinationShape,
    CostMetrics,
    LayerShape,
    RankList,
    align,
    dense_costs,
    flops_total,
)


class BudgetExceeded(RuntimeError):
    """Raised when an installed wall-clock budget expires mid-pipeline."""


@dataclass(frozen=True)
class HardwareConfig:
    """Target-machine description driving pruning and kernel planning."""

    vector_bits: int = 256
    data_bits: int = 32
    threads: int = 4
    registers_available: int = 32
    l2_size_bytes: int = 1 << 20
    l2_assoc: int = 8
    thread_thresholds: tuple[int, ...] = (2_000_000, 4_000_000, 8_000_000)
    scalability_flops_floor: int = 8_000_000
    scalability_d_limit: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "thread_thresholds", tuple(self.thread_thresholds))
        for name in ("vector_bits", "data_bits", "threads", "registers_available",
                     "l2_size_bytes", "l2_assoc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.vector_bits % self.data_bits:
            raise ValueError(
                f"vector_bits ({self.vector_bits}) must be divisible by "
                f"data_bits ({self.data_bits})"
            )
        if self.l2_size_bytes % self.l2_assoc:
            raise ValueError("l2_size_bytes must be divisible by l2_assoc")
        if any(a >= b for a, b in zip(self.thread_thresholds, self.thread_thresholds[1:])):
            raise ValueError(f"thread_thresholds must strictly increase: {self.thread_thresholds}")

    @property
    def vl(self) -> int:
        """Vector lanes per register: vector_bits / data_bits."""
        return self.vector_bits // self.data_bits

    @property
    def l2_way_bytes(self) -> int:
        return self.l2_size_bytes // self.l2_assoc


@dataclass(frozen=True)
class TTSolution:
    """One factorized-layer candidate as it flows through the pipeline.

    ``costs`` and ``threads_per_layer`` are filled by the costing step and the
    scalability stage respectively; a fully-pruned survivor always carries
    both.
    """

    shape: CombinationShape
    ranks: RankList
    costs: CostMetrics | None = None
    threads_per_layer: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.ranks.d != self.shape.d:
            raise ValueError(
                f"rank list d={self.ranks.d} does not match shape d={self.shape.d}"
            )
        if self.threads_per_layer is not None:
            object.__setattr__(self, "threads_per_layer", tuple(self.threads_per_layer))
            if len(self.threads_per_layer) != self.shape.d:
                raise ValueError("threads_per_layer must have one entry per layer")


@dataclass
class StageReport:
    """Surviving-solution counts after each pipeline stage, table-row style."""

    layer: LayerShape
    n_initial: int = 0
    n_aligned: int = 0
    n_vectorized: int = 0
    n_initial_layer: int = 0
    n_scalability: int = 0
    convention: str = ""
    empty_survivors: bool = False

    def counts(self) -> tuple[int, int, int, int, int]:
        return (self.n_initial, self.n_aligned, self.n_vectorized,
                self.n_initial_layer, self.n_scalability)

    def to_dict(self) -> dict:
        row = dataclasses.asdict(self)
        row["layer"] = [self.layer.n_in, self.layer.m_out]
        return row


def stage_alignment(shapes: Iterable[CombinationShape]) -> Iterator[CombinationShape]:
    """Canonicalize and deduplicate: one aligned representative per multiset pair."""
    seen: set[tuple[tuple[int, ...], tuple[int, ...]]] = set()
    for shape in shapes:
        aligned = align(shape)
        key = (aligned.m, aligned.n)
        if key not in seen:
            seen.add(key)
            yield aligned


def stage_vectorization(solutions: Iterable[TTSolution], hw: HardwareConfig) -> Iterator[TTSolution]:
    """Keep solutions whose interior ranks are all positive multiples of vl."""
    vl = hw.vl
    for sol in solutions:
        if all(r % vl == 0 for r in sol.ranks.interior):
            yield sol


def stage_initial_layer(
    solutions: Iterable[TTSolution],
    layer: LayerShape,
    *,
    require_both: bool = True,
) -> Iterator[TTSolution]:
    """Keep solutions strictly cheaper than the dense layer.

    Default: strictly fewer FLOPs AND strictly fewer parameters;
    ``require_both=False`` relaxes to either.
    """
    dense = dense_costs(layer)
    for sol in solutions:
        if sol.costs is None:
            raise ValueError("stage_initial_layer needs costed solutions")
        flops_ok = sol.costs.flops < dense.flops
        params_ok = sol.costs.params < dense.params
        if (flops_ok and params_ok) if require_both else (flops_ok or params_ok):
            yield sol


def assign_threads(flops: int, hw: HardwareConfig) -> int:
    """Thread count for one contraction, by FLOPs breakpoints.

    Below the first threshold 1 thread, then one more per crossed breakpoint
    (boundaries round up: exactly 2e6 FLOPs already gets 2 threads), capped at
    the available cores.
    """
    return min(1 + bisect_right(list(hw.thread_thresholds), flops), hw.threads)


def stage_scalability(solutions: Iterable[TTSolution], hw: HardwareConfig) -> Iterator[TTSolution]:
    """Drop long chains whose heaviest contraction is too small to scale.

    A solution dies iff d > scalability_d_limit AND max per-layer FLOPs <
    scalability_flops_floor.  Survivors get their per-layer thread counts.
    """
    for sol in solutions:
        if sol.costs is None:
            raise ValueError("stage_scalability needs costed solutions")
        heaviest = max(sol.costs.per_layer_flops)
        if sol.shape.d > hw.scalability_d_limit and heaviest < hw.scalability_flops_floor:
            continue
        threads = tuple(assign_threads(f, hw) for f in sol.costs.per_layer_flops)
        yield dataclasses.replace(sol, threads_per_layer=threads)


def _clamped_rank_lists(
    shape: CombinationShape, policy: EnumerationPolicy
) -> Iterator[RankList]:
    """Rank lists for one shape, clamped per-bond to the unfolding bound and
    deduplicated (identical lists after clamping collapse to one candidate)."""
    if not policy.clamp_ranks:
        yield from rank_lists(shape.d, policy)
        return
    bounds = max_tt_ranks(shape)
    seen: set[tuple[int, ...]] = set()
    for ranks in rank_lists(shape.d, policy):
        clamped = (1,) + tuple(
            min(r, b) for r, b in zip(ranks.interior, bounds)
        ) + (1,)
        if clamped not in seen:
            seen.add(clamped)
            yield RankList(r=clamped)


def _cost(shape: CombinationShape, ranks: RankList) -> CostMetrics:
    return flops_total(shape, ranks)


def run_pipeline(
    layer: LayerShape,
    policy: EnumerationPolicy,
    hw: HardwareConfig,
    *,
    require_both: bool = True,
    should_abort: Callable[[], bool] | None = None,
) -> tuple[list[TTSolution], StageReport]:
    """Run the full pruning pipeline for one layer.

    The first two report columns (all permuted shapes x admissible ranks, and
    the same after alignment) are counted closed-form; the aligned candidates
    are then materialized with the policy's rank lists (clamped when the
    policy says so) and pushed through the remaining stages.  Survivors come
    back sorted by (flops, params) ascending.
    """
    report = StageReport(layer=layer)
    report.n_initial = count_design_space(
        layer, dataclasses.replace(policy, align_only=False)
    )
    report.n_aligned = count_design_space(
        layer, dataclasses.replace(policy, align_only=True)
    )
    report.convention = describe_convention(policy, require_both, hw)

    aligned_policy = dataclasses.replace(policy, align_only=True)

    def candidates() -> Iterator[TTSolution]:
        for shape in combination_shapes(layer, aligned_policy):
            if should_abort is not None and should_abort():
                raise BudgetExceeded(f"pipeline budget expired on layer {layer}")
            for ranks in _clamped_rank_lists(shape, policy):
                yield TTSolution(shape=shape, ranks=ranks)

    vectorized: list[TTSolution] = list(stage_vectorization(candidates(), hw))
    report.n_vectorized = len(vectorized)

    costed = (
        dataclasses.replace(sol, costs=_cost(sol.shape, sol.ranks))
        for sol in vectorized
    )
    kept = list(stage_initial_layer(costed, layer, require_both=require_both))
    report.n_initial_layer = len(kept)

    survivors = list(stage_scalability(kept, hw))
    report.n_scalability = len(survivors)
    report.empty_survivors = not survivors

    survivors.sort(key=lambda s: (s.costs.flops, s.costs.params))
    return survivors, report


def describe_convention(
    policy: EnumerationPolicy, require_both: bool, hw: HardwareConfig
) -> str:
    """One-line record of the counting/pruning convention behind a report."""
    rank_desc = (
        f"all integer ranks 1..min({policy.rank_cap}, bond bound)"
        if policy.count_rank_mode == "dense-range"
        else f"{len(set(policy.rank_values))} listed rank values"
    )
    return (
        f"cols 1-2 closed-form, independent per-bond ranks over {rank_desc}; "
        f"cols 3-5 materialized, {policy.rank_mode} ranks from "
        f"{len(set(policy.rank_values))} values"
        f"{', clamped to bond bound' if policy.clamp_ranks else ''}, "
        f"interior ranks multiples of vl={hw.vl}, "
        f"dominance {'AND' if require_both else 'OR'}, "
        f"scalability d>{hw.scalability_d_limit} & max layer FLOPs<"
        f"{hw.scalability_flops_floor:.0E}; max_d={policy.max_d}"
    )
