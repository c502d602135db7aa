"""Numeric ground truth for the factorized layer.

Implements the dense reference, the native per-core contraction
``Output[m][b][r] = sum_{n,k} G[r][n][m][k] * Input[b][n][k]``, the full
chain (reshape, d contractions back-to-front, flatten, bias), dense
reconstruction from the cores, and a FLOP-counting twin of the chain that
never touches floating point.

Index linearization is row-major everywhere (the last factor of a tuple
varies fastest), pinned once here and shared by the forward and
reconstruction paths so they are comparable element-for-element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ttcore import CombinationShape, RankList, SweepBudgetError


@dataclass(frozen=True)
class EinsumSpec:
    """The five loop bounds of one contraction: out[m][b][r] over n and k."""

    mt: int
    bt: int
    nt: int
    rt: int
    rt_1: int

    def __post_init__(self) -> None:
        for name in ("mt", "bt", "nt", "rt", "rt_1"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def k_extent(self) -> int:
        """Merged contraction extent nt * rt_1 (the packed k axis)."""
        return self.nt * self.rt_1

    @property
    def macs(self) -> int:
        return self.mt * self.bt * self.nt * self.rt * self.rt_1


@dataclass(frozen=True)
class TTCores:
    """The d cores (core t shaped [r_{t-1}, n_t, m_t, r_t]) plus the bias."""

    cores: tuple[np.ndarray, ...]
    bias: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "cores", tuple(self.cores))
        object.__setattr__(self, "bias", np.asarray(self.bias))
        if not self.cores:
            raise ValueError("need at least one core")
        for core in self.cores:
            if core.ndim != 4:
                raise ValueError(f"cores must be rank-4, got shape {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[-1] != 1:
            raise ValueError("boundary ranks r0 and rd must be 1")
        for left, right in zip(self.cores, self.cores[1:]):
            if left.shape[-1] != right.shape[0]:
                raise ValueError(
                    f"rank chain broken: {left.shape} -> {right.shape}"
                )
        if self.bias.shape != (self.m_out,):
            raise ValueError(
                f"bias must have length {self.m_out}, got {self.bias.shape}"
            )

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> CombinationShape:
        return CombinationShape(
            m=tuple(core.shape[2] for core in self.cores),
            n=tuple(core.shape[1] for core in self.cores),
        )

    @property
    def ranks(self) -> RankList:
        return RankList(r=(1,) + tuple(core.shape[-1] for core in self.cores))

    @property
    def m_out(self) -> int:
        return math.prod(core.shape[2] for core in self.cores)

    @property
    def n_in(self) -> int:
        return math.prod(core.shape[1] for core in self.cores)


def dense_forward(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference dense layer: y = W x + b."""
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if W.ndim != 2 or x.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}")
    return W @ x + b


def einsum_native(G: np.ndarray, input_: np.ndarray, spec: EinsumSpec) -> np.ndarray:
    """One contraction, accumulated in (n, k)-ascending order.

    The accumulation performs one fused multiply-add per output element per
    (n, k) step, which makes it bit-identical to the scalar five-loop nest
    (and to the register-blocked r-vectorized schedule, which walks the merged
    k axis in the same order).
    """
    G = np.asarray(G)
    input_ = np.asarray(input_)
    if G.shape != (spec.rt, spec.nt, spec.mt, spec.rt_1):
        raise ValueError(f"G shape {G.shape} does not match spec {spec}")
    if input_.shape != (spec.bt, spec.nt, spec.rt_1):
        raise ValueError(f"input shape {input_.shape} does not match spec {spec}")
    out = np.zeros((spec.mt, spec.bt, spec.rt), dtype=np.result_type(G, input_))
    for n in range(spec.nt):
        for k in range(spec.rt_1):
            # out[m, b, r] += G[r, n, m, k] * input[b, n, k]
            out += G[:, n, :, k].T[:, None, :] * input_[None, :, n, k, None]
    return out


def layer_specs(shape: CombinationShape, ranks: RankList) -> list[EinsumSpec]:
    """Loop bounds of every contraction in the chain, indexed t = 1..d.

    The chain executes t = d first; the batch extent follows the reshape
    bookkeeping ``bt = layer_input_size / (nt * r_t)``, which closes to
    ``bt = (m_{t+1} ... m_d) * (n_1 ... n_{t-1})``.
    """
    if ranks.d != shape.d:
        raise ValueError(f"rank list d={ranks.d} does not match shape d={shape.d}")
    specs: list[EinsumSpec | None] = [None] * shape.d
    size = shape.n_in
    for t in range(shape.d, 0, -1):
        nt, mt = shape.n[t - 1], shape.m[t - 1]
        rt, rt_1 = ranks.r[t - 1], ranks.r[t]
        bt, rem = divmod(size, nt * rt_1)
        if rem:
            raise ValueError(f"chain bookkeeping broken at t={t}: {size} % {nt * rt_1}")
        specs[t - 1] = EinsumSpec(mt=mt, bt=bt, nt=nt, rt=rt, rt_1=rt_1)
        size = mt * bt * rt
    return specs  # type: ignore[return-value]


def tt_forward(cores: TTCores, x: np.ndarray) -> np.ndarray:
    """Run the factorized layer: d contractions from core d down to core 1.

    Between contractions the flat intermediate is reshaped to
    [bt, nt, r_t]; the final [m1, b1, 1] output flattens row-major to length
    M before the bias add.
    """
    x = np.asarray(x)
    shape, ranks = cores.shape, cores.ranks
    if x.shape != (shape.n_in,):
        raise ValueError(f"x must have length {shape.n_in}, got {x.shape}")
    specs = layer_specs(shape, ranks)
    cur = x
    for t in range(shape.d, 0, -1):
        spec = specs[t - 1]
        inp = cur.reshape(spec.bt, spec.nt, spec.rt_1)
        cur = einsum_native(cores.cores[t - 1], inp, spec).reshape(-1)
    return cur + cores.bias


def count_macs(shape: CombinationShape, ranks: RankList) -> tuple[tuple[int, ...], int]:
    """Multiply-accumulate count of each contraction, by walking the chain's
    loop bounds with a counter instead of arithmetic."""
    per_layer = tuple(spec.macs for spec in layer_specs(shape, ranks))
    return per_layer, sum(per_layer)


def tt_reconstruct(cores: TTCores, *, element_budget: int = 10**8) -> np.ndarray:
    """Materialize the dense M x N matrix the core chain represents.

    W[i1..id ; j1..jd] = prod_t G_t[:, j_t, i_t, :] (rank-matrix product),
    with both index tuples linearized row-major.  Refuses when any
    intermediate would exceed ``element_budget`` elements.
    """
    shape = cores.shape
    if shape.m_out * shape.n_in > element_budget:
        raise SweepBudgetError(
            f"reconstruction of {shape.m_out}x{shape.n_in} exceeds the "
            f"{element_budget}-element budget"
        )
    acc = np.ones((1, 1, 1), dtype=cores.cores[0].dtype)
    for core in cores.cores:
        r_prev, nt, mt, rt = core.shape
        a, b, _ = acc.shape
        if a * mt * b * nt * rt > element_budget:
            raise SweepBudgetError("reconstruction intermediate exceeds element budget")
        acc = np.einsum("abk,kjis->aibjs", acc, core).reshape(a * mt, b * nt, rt)
    return acc[:, :, 0]


def random_cores(
    shape: CombinationShape,
    ranks: RankList,
    seed: int,
    *,
    dtype=np.float64,
) -> TTCores:
    """Cores with entries uniform(-0.5, 0.5) scaled by (r_{t-1} r_t)^(-1/2),
    keeping reconstructed magnitudes O(1); bias uniform(-0.5, 0.5)."""
    if ranks.d != shape.d:
        raise ValueError(f"rank list d={ranks.d} does not match shape d={shape.d}")
    rng = np.random.default_rng(seed)
    cores = []
    for t in range(1, shape.d + 1):
        r_prev, r_next = ranks.r[t - 1], ranks.r[t]
        scale = 1.0 / math.sqrt(r_prev * r_next)
        core = rng.uniform(-0.5, 0.5, size=(r_prev, shape.n[t - 1], shape.m[t - 1], r_next))
        cores.append((core * scale).astype(dtype))
    bias = rng.uniform(-0.5, 0.5, size=shape.m_out).astype(dtype)
    return TTCores(cores=tuple(cores), bias=bias)
