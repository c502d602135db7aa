"""Analytical schedule synthesis for one contraction.

Pipeline per kernel: pick the vectorized loop (r when an r-loop exists, k for
the final contraction), exhaustively search register-blocking factors
minimizing the analytical load/store count under the register-file
constraint, then decide loop order / parallel loop / bt tiling against the
L2 geometry.  A schedule interpreter executes the transformed loop nest
(packed layout, vector groups, remainder blocks, tiles) while counting vector
load/store events, so both the numerics and the L/S model are checked against
ground truth rather than trusted.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .executor import EinsumSpec, einsum_native  # noqa: F401  (einsum_native re-exported for tests)
from .prune import HardwareConfig, assign_threads


class PlanInfeasible(RuntimeError):
    """The schedule space has no valid point for this contraction/hardware."""


class ConstraintViolation(ValueError):
    """Register-blocking factors violate a structural or register constraint."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class RBFactors:
    """Register-blocking factors for the m, b, r and k loops."""

    Rm: int
    Rb: int
    Rr: int
    Rk: int

    def __post_init__(self) -> None:
        for name in ("Rm", "Rb", "Rr", "Rk"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    def registers_needed(self) -> int:
        """Accumulators + reused operand registers + one scratch:
        Rm*Rb*Rr + min(Rb*Rk, Rm*Rr) + 1."""
        return self.Rm * self.Rb * self.Rr + min(self.Rb * self.Rk, self.Rm * self.Rr) + 1

    def feasible(self, registers_available: int) -> bool:
        return self.registers_needed() <= registers_available


@dataclass(frozen=True)
class PackedLayout:
    """Core layout transposed for unit-stride vector loads.

    Source index order [rt, nt, mt, rt_1] becomes
    [mt, rt/(Rr*vl), nt*rt_1, Rr*vl] with the Rr*vl r-consecutive elements
    contiguous innermost (the k-vectorized degenerate case is
    [mt, 1, nt*rt_1, 1] — plain row-major [mt][k]).
    """

    source_dims: tuple[int, int, int, int]
    target_dims: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_dims", tuple(self.source_dims))
        object.__setattr__(self, "target_dims", tuple(self.target_dims))
        import math

        if math.prod(self.source_dims) != math.prod(self.target_dims):
            raise ValueError(f"layout must preserve element count: {self}")

    @property
    def rsteps(self) -> int:
        return self.target_dims[1]

    @property
    def inner(self) -> int:
        return self.target_dims[3]


@dataclass(frozen=True)
class TilingDecision:
    """Outcome of the L2-fit analysis: loop order, parallel loop, optional
    bt tile; ``feasible=False`` marks the discard case (a value, not an
    error)."""

    loop_order: tuple[str, str, str, str] | None
    parallel_loop: str | None
    tile_bt: int | None
    feasible: bool


@dataclass(frozen=True)
class KernelPlan:
    """Complete schedule for one contraction."""

    spec: EinsumSpec
    vector_loop: str  # "r" | "k"
    rb: RBFactors
    loop_order: tuple[str, str, str, str]
    parallel_loop: str
    tile_bt: int | None
    layout: PackedLayout
    threads: int
    predicted_ls: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "loop_order", tuple(self.loop_order))
        if self.vector_loop not in ("r", "k"):
            raise ValueError(f"vector_loop must be r or k, got {self.vector_loop!r}")
        if (self.vector_loop == "k") != (self.spec.rt == 1):
            raise ValueError("vector_loop is k iff the contraction has no r-loop (rt = 1)")
        if self.loop_order not in (("mt", "bt", "rt", "k"), ("bt", "mt", "rt", "k")):
            raise ValueError(f"unsupported loop order {self.loop_order}")
        if self.parallel_loop != self.loop_order[0]:
            raise ValueError("parallel loop must be the outermost loop")
        if self.tile_bt is not None and not 1 <= self.tile_bt <= self.spec.bt:
            raise ValueError(f"tile_bt out of range: {self.tile_bt}")

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def choose_vector_loop(spec: EinsumSpec) -> str:
    """r-loop when it exists (rt > 1); otherwise the merged k-loop."""
    return "r" if spec.rt > 1 else "k"


def _validate_rb(spec: EinsumSpec, rb: RBFactors, vl: int, vector_loop: str,
                 registers_available: int | None) -> None:
    if vector_loop == "r":
        if spec.rt % vl:
            raise ConstraintViolation(f"rt={spec.rt} not vectorizable with vl={vl}")
        if spec.rt % (rb.Rr * vl):
            raise ConstraintViolation(
                f"Rr={rb.Rr} needs Rr*vl | rt (rt={spec.rt}, vl={vl})"
            )
    elif vector_loop == "k":
        if spec.rt != 1:
            raise ConstraintViolation("k-vectorization only applies when rt = 1")
        if rb.Rr != 1:
            raise ConstraintViolation("Rr must be 1 when the k-loop is vectorized")
        if spec.k_extent % vl:
            raise ConstraintViolation(
                f"k extent {spec.k_extent} not vectorizable with vl={vl}"
            )
    else:
        raise ValueError(f"vector_loop must be r or k, got {vector_loop!r}")
    if registers_available is not None and not rb.feasible(registers_available):
        raise ConstraintViolation(
            f"{rb} needs {rb.registers_needed()} registers, "
            f"only {registers_available} available"
        )


def _tile_sizes(bt: int, tile_bt: int | None) -> list[int]:
    if tile_bt is None:
        return [bt]
    full, rem = divmod(bt, tile_bt)
    return [tile_bt] * full + ([rem] if rem else [])


def ls_count(
    spec: EinsumSpec,
    rb: RBFactors,
    vl: int,
    vector_loop: str,
    *,
    include_padding: bool = True,
    tile_bt: int | None = None,
    registers_available: int | None = None,
) -> int:
    """Analytical count of vector load/store events for the blocked schedule.

    ``include_padding=True`` (default) models remainder iterations as one
    block per dimension — exactly what the generated code and the schedule
    interpreter do — so main term + padding term collapse to ceiling-division
    block counts and the prediction is exact.  ``include_padding=False``
    keeps only the floored main terms (the search objective).  G loads:
    mt * ceil(bt/Rb) * rt/vl * (nt*rt_1); input broadcasts:
    ceil(mt/Rm) * bt * rt/(Rr*vl) * (nt*rt_1); output: one store per vl
    output elements (scalar stores, one per element, for the k-vectorized
    case).  A bt tiling replaces ceil(bt/Rb) by the per-tile block-count sum.
    """
    _validate_rb(spec, rb, vl, vector_loop, registers_available)
    K = spec.k_extent
    tiles = _tile_sizes(spec.bt, tile_bt)
    if include_padding:
        b_blocks = sum(_ceil_div(t, rb.Rb) for t in tiles)
        m_blocks = _ceil_div(spec.mt, rb.Rm)
    else:
        b_blocks = sum(t // rb.Rb for t in tiles)
        m_blocks = spec.mt // rb.Rm

    if vector_loop == "r":
        rsteps = spec.rt // (rb.Rr * vl)
        loads_g = spec.mt * b_blocks * rsteps * rb.Rr * K
        loads_in = m_blocks * spec.bt * rsteps * K
        if include_padding:
            stores_out = spec.mt * spec.bt * (spec.rt // vl)
        else:
            stores_out = spec.mt * (spec.bt // rb.Rb) * rsteps
    else:
        ksteps = K // vl
        loads_g = spec.mt * b_blocks * ksteps
        loads_in = m_blocks * spec.bt * ksteps
        stores_out = spec.mt * spec.bt  # scalar stores, one per output element
    return loads_g + loads_in + stores_out


def rb_search(spec: EinsumSpec, hw: HardwareConfig, vector_loop: str) -> RBFactors:
    """Brute-force argmin of the floored L/S model over the feasible set.

    Bounds: each factor capped by its loop extent (Rr additionally by the
    packed-layout divisibility Rr*vl | rt, Rk by the register count — a
    larger Rk can be feasible but never wins a tie, the model being
    Rk-independent).  Ties break toward larger Rm, then larger Rb, then
    smaller Rr, then smaller Rk.
    """
    regs = hw.registers_available
    vl = hw.vl
    if vector_loop == "r":
        if spec.rt % vl:
            raise PlanInfeasible(f"rt={spec.rt} not a multiple of vl={vl}")
        rr_candidates = [q for q in range(1, regs + 1) if spec.rt % (q * vl) == 0]
        rk_bound = min(spec.k_extent, regs)
    else:
        if spec.k_extent % vl:
            raise PlanInfeasible(f"k extent {spec.k_extent} not a multiple of vl={vl}")
        rr_candidates = [1]
        rk_bound = min(max(spec.k_extent // vl, 1), regs)

    best_key: tuple | None = None
    best_rb: RBFactors | None = None
    for Rm in range(1, min(spec.mt, regs) + 1):
        for Rb in range(1, min(spec.bt, regs) + 1):
            for Rr in rr_candidates:
                # Feasibility is monotone in Rk and the cost ignores it, so
                # the first feasible Rk already carries the best tie-break key.
                for Rk in range(1, rk_bound + 1):
                    rb = RBFactors(Rm=Rm, Rb=Rb, Rr=Rr, Rk=Rk)
                    if not rb.feasible(regs):
                        continue
                    cost = ls_count(spec, rb, vl, vector_loop, include_padding=False)
                    key = (cost, -Rm, -Rb, Rr, Rk)
                    if best_key is None or key < best_key:
                        best_key, best_rb = key, rb
                    break
    if best_rb is None:
        raise PlanInfeasible(
            f"no register-blocking point fits in {regs} registers (need >= 3)"
        )
    return best_rb


def tiling_decision(spec: EinsumSpec, hw: HardwareConfig) -> TilingDecision:
    """L2-fit analysis deciding loop order, parallel loop, and bt tiling.

    Step 1: order (mt,bt,rt,k), parallel mt — taken when T output slices, T
    core slices and one input slice each fit in their own cache ways.
    Step 2: order (bt,mt,rt,k), parallel bt.  Step 3: order (mt,bt,rt,k) with
    the largest bt tile that fits; no tile at all means the candidate is
    discarded (marker value, not an error).
    """
    es = hw.data_bits // 8
    way = hw.l2_way_bytes
    assoc = hw.l2_assoc
    T = hw.threads
    K = spec.k_extent

    def ways(nbytes: int) -> int:
        return _ceil_div(nbytes, way)

    if (T * ways(spec.bt * spec.rt * es)
            + T * ways(spec.rt * K * es)
            + ways(spec.bt * K * es)) <= assoc:
        return TilingDecision(("mt", "bt", "rt", "k"), "mt", None, True)

    if (1 + ways(spec.mt * spec.rt * K * es) + T * ways(K * es)) <= assoc:
        return TilingDecision(("bt", "mt", "rt", "k"), "bt", None, True)

    for btl in range(spec.bt, 0, -1):  # descending scan; bt extents are small
        if (T * ways(btl * spec.rt * es)
                + T * ways(spec.rt * K * es)
                + ways(btl * K * es)) <= assoc:
            return TilingDecision(("mt", "bt", "rt", "k"), "mt", btl, True)
    return TilingDecision(None, None, None, False)


def packed_layout(spec: EinsumSpec, rb: RBFactors, vl: int, vector_loop: str) -> PackedLayout:
    source = (spec.rt, spec.nt, spec.mt, spec.rt_1)
    if vector_loop == "r":
        inner = rb.Rr * vl
        target = (spec.mt, spec.rt // inner, spec.k_extent, inner)
    else:
        target = (spec.mt, 1, spec.k_extent, 1)
    return PackedLayout(source_dims=source, target_dims=target)


def pack_core(core: np.ndarray, plan: KernelPlan) -> np.ndarray:
    """Flatten the core into the plan's packed layout (bijective)."""
    core = np.asarray(core)
    layout = plan.layout
    if core.shape != layout.source_dims:
        raise ValueError(f"core shape {core.shape} does not match layout {layout}")
    mt, rsteps, K, inner = layout.target_dims
    # [rt, nt, mt, rt_1] -> [mt, rt, nt, rt_1] -> [mt, rsteps, inner, K]
    # -> [mt, rsteps, K, inner], flat C order.
    staged = core.transpose(2, 0, 1, 3).reshape(mt, rsteps, inner, K)
    return np.ascontiguousarray(staged.transpose(0, 1, 3, 2)).reshape(-1)


def unpack_core(flat: np.ndarray, plan: KernelPlan) -> np.ndarray:
    """Inverse of :func:`pack_core`."""
    layout = plan.layout
    mt, rsteps, K, inner = layout.target_dims
    staged = np.asarray(flat).reshape(mt, rsteps, K, inner).transpose(0, 1, 3, 2)
    rt, nt, mt_, rt_1 = layout.source_dims
    return staged.reshape(mt, rt, nt, rt_1).transpose(1, 2, 0, 3)


def thread_partition(extent: int, threads: int) -> list[tuple[int, int]]:
    """Contiguous [start, end) chunks of an iteration space, one per thread;
    verified to be disjoint and to cover the space exactly."""
    base, extra = divmod(extent, threads)
    chunks = []
    start = 0
    for t in range(threads):
        size = base + (1 if t < extra else 0)
        chunks.append((start, start + size))
        start += size
    if start != extent or any(a[1] != b[0] for a, b in zip(chunks, chunks[1:])):
        raise AssertionError(f"broken partition of {extent} over {threads}: {chunks}")
    return chunks


def _dim_blocks(extent: int, block: int) -> list[tuple[int, int]]:
    """(start, size) blocks: full blocks then one remainder block."""
    main = extent - extent % block
    blocks = [(s, block) for s in range(0, main, block)]
    if extent % block:
        blocks.append((main, extent % block))
    return blocks


def _schedule_blocks(plan: KernelPlan) -> list[tuple[int, int, int, int]]:
    """(m_start, m_size, b_start, b_size) in execution order."""
    spec, rb = plan.spec, plan.rb
    m_blocks = _dim_blocks(spec.mt, rb.Rm)
    b_blocks: list[tuple[int, int]] = []
    offset = 0
    for tile in _tile_sizes(spec.bt, plan.tile_bt):
        b_blocks.extend((offset + s, size) for s, size in _dim_blocks(tile, rb.Rb))
        offset += tile
    if plan.loop_order[0] == "mt":
        return [(ms, msz, bs, bsz) for ms, msz in m_blocks for bs, bsz in b_blocks]
    return [(ms, msz, bs, bsz) for bs, bsz in b_blocks for ms, msz in m_blocks]


def simulate_plan(
    plan: KernelPlan, core: np.ndarray, input_: np.ndarray
) -> tuple[np.ndarray, dict[str, int]]:
    """Interpret the scheduled loop nest, one array op per vector instruction.

    Returns the [mt, bt, rt] output and the counted vector load/store events
    ({"loads_g", "loads_in", "stores_out", "total"}).  The parallel loop is a
    schedule annotation: the interpreter runs serially but verifies the
    annotated iteration-space partition is disjoint and covering.
    """
    spec, rb = plan.spec, plan.rb
    vl = plan.layout.inner // rb.Rr if plan.vector_loop == "r" else None
    input_ = np.asarray(input_)
    if input_.shape != (spec.bt, spec.nt, spec.rt_1):
        raise ValueError(f"input shape {input_.shape} does not match {spec}")
    packed = pack_core(core, plan)
    in_flat = input_.reshape(spec.bt, spec.k_extent)
    out = np.zeros((spec.mt, spec.bt, spec.rt), dtype=np.result_type(core, input_))
    K = spec.k_extent
    counts = {"loads_g": 0, "loads_in": 0, "stores_out": 0}

    blocks = _schedule_blocks(plan)
    outer_extent = len({(ms, msz) for ms, msz, _, _ in blocks}) \
        if plan.parallel_loop == "mt" else len({(bs, bsz) for _, _, bs, bsz in blocks})
    thread_partition(outer_extent, plan.threads)  # disjoint-cover check

    if plan.vector_loop == "r":
        vl = plan.layout.inner // rb.Rr
        rsteps, inner = plan.layout.rsteps, plan.layout.inner
        for ms, msz, bs, bsz in blocks:
            for rstep in range(rsteps):
                acc = np.zeros((bsz, msz, rb.Rr, vl), dtype=out.dtype)
                for k in range(K):
                    g = np.empty((msz, rb.Rr, vl), dtype=out.dtype)
                    for i in range(msz):
                        base = (((ms + i) * rsteps + rstep) * K + k) * inner
                        for q in range(rb.Rr):
                            g[i, q] = packed[base + q * vl: base + (q + 1) * vl]
                            counts["loads_g"] += 1
                    for j in range(bsz):
                        in0 = in_flat[bs + j, k]
                        counts["loads_in"] += 1
                        acc[j] += in0 * g
                for j in range(bsz):
                    for i in range(msz):
                        for q in range(rb.Rr):
                            r0 = rstep * inner + q * vl
                            out[ms + i, bs + j, r0: r0 + vl] = acc[j, i, q]
                            counts["stores_out"] += 1
    else:
        vl = plan.threads and (plan.layout.target_dims[2] // max(K // plan.layout.target_dims[2], 1))
        # k-vectorized: vl lanes of k accumulate in parallel, then an ordered
        # horizontal reduction per output element.
        vl = K // (K // _k_vl(plan))
        vl = _k_vl(plan)
        for ms, msz, bs, bsz in blocks:
            acc = np.zeros((bsz, msz, vl), dtype=out.dtype)
            for ks in range(0, K, vl):
                g = np.empty((msz, vl), dtype=out.dtype)
                for i in range(msz):
                    g[i] = packed[(ms + i) * K + ks: (ms + i) * K + ks + vl]
                    counts["loads_g"] += 1
                for j in range(bsz):
                    in_vec = in_flat[bs + j, ks: ks + vl]
                    counts["loads_in"] += 1
                    acc[j] += in_vec * g
            for j in range(bsz):
                for i in range(msz):
                    total = out.dtype.type(0.0)  # z seed
                    for lane in range(vl):
                        total = total + acc[j, i, lane]
                    out[ms + i, bs + j, 0] = total
                    counts["stores_out"] += 1

    counts["total"] = counts["loads_g"] + counts["loads_in"] + counts["stores_out"]
    return out, counts


def _k_vl(plan: KernelPlan) -> int:
    """Vector length of a k-vectorized plan (lanes per vector register)."""
    # The packed inner extent is 1 for k-vectorization; recover vl from the
    # predicted-ls relation instead of storing it twice: loads happen in
    # chunks of vl along k, and K is divisible by vl by construction.
    raise NotImplementedError


def plan_kernel(spec: EinsumSpec, hw: HardwareConfig, threads: int | None = None) -> KernelPlan:
    """Full schedule synthesis for one contraction."""
    vector_loop = choose_vector_loop(spec)
    rb = rb_search(spec, hw, vector_loop)
    tiling = tiling_decision(spec, hw)
    if not tiling.feasible:
        raise PlanInfeasible(f"no loop order fits the L2 geometry for {spec}")
    layout = packed_layout(spec, rb, hw.vl, vector_loop)
    if threads is None:
        threads = assign_threads(2 * spec.macs, hw)
    predicted = ls_count(
        spec, rb, hw.vl, vector_loop,
        include_padding=True, tile_bt=tiling.tile_bt,
        registers_available=hw.registers_available,
    )
    return KernelPlan(
        spec=spec,
        vector_loop=vector_loop,
        rb=rb,
        loop_order=tiling.loop_order,
        parallel_loop=tiling.parallel_loop,
        tile_bt=tiling.tile_bt,
        layout=layout,
        threads=threads,
        predicted_ls=predicted,
    )
