"""Training objective over the flow grid and its exact parameter gradient.

total = w_d * dt_term + (2m - 1) * (w_c * cluster_term + w_g * norm_term)

All terms are evaluated at the reference points, whose trilinear stencil
into the grid is fixed, so every gradient flows back through the same
sparse scatter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterAssignment, cluster_loss_and_grad
from .distance_transform import DistanceTransform, sample_dt
from .errors import InvalidConfig
from .flow_grid import FlowGrid, Stencil, stencil
from .geometry import PointCloud


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 1.0
    lambda_c: float = 1.0
    lambda_gamma: float = 0.01

    def __post_init__(self):
        if min(self.lambda_d, self.lambda_c, self.lambda_gamma) < 0:
            raise InvalidConfig("loss weights must be non-negative")


@dataclass(frozen=True)
class Support:
    delta_t: int
    dt_field: DistanceTransform

    @property
    def weight(self) -> float:
        """Time-decay weight 1 / |delta_t|^2."""
        return 1.0 / float(self.delta_t) ** 2


@dataclass
class MultiScanContext:
    reference: PointCloud
    supports: list[Support]
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfig(f"half-window m must be >= 1, got {self.m}")
        seen = set()
        for s in self.supports:
            if s.delta_t == 0 or abs(s.delta_t) > self.m:
                raise InvalidConfig(f"support offset {s.delta_t} outside [-{self.m}, {self.m}] \\ {{0}}")
            if s.delta_t in seen:
                raise InvalidConfig(f"duplicate support offset {s.delta_t}")
            seen.add(s.delta_t)

    @property
    def side_scale(self) -> float:
        """(2m - 1) factor on the cluster and norm terms; uses the nominal m."""
        return float(2 * self.m - 1)


@dataclass
class LossBreakdown:
    total: float
    dt_term: float
    cluster_term: float
    norm_term: float
    rejected_fraction: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "dt_term": self.dt_term,
            "cluster_term": self.cluster_term,
            "norm_term": self.norm_term,
            "rejected_fraction": {str(k): v for k, v in self.rejected_fraction.items()},
        }


def _dt_eval(ctx: MultiScanContext, flows: np.ndarray):
    p = ctx.reference.points
    n = len(p)
    value = 0.0
    upstream = np.zeros_like(p)
    rejected = {}
    if n == 0:
        return value, upstream, {s.delta_t: 0.0 for s in ctx.supports}
    for s in ctx.supports:
        dist, grad, valid = sample_dt(s.dt_field, p + flows * s.delta_t)
        scale = s.weight / n
        value += scale * float(dist[valid].sum())
        upstream += (scale * s.delta_t) * grad
        rejected[s.delta_t] = float(1.0 - valid.mean())
    return value, upstream, rejected


def _norm_eval(flows: np.ndarray):
    n = len(flows)
    if n == 0:
        return 0.0, np.zeros_like(flows)
    norm = np.linalg.norm(flows, axis=1)
    unit = np.divide(flows, norm[:, None], out=np.zeros_like(flows), where=norm[:, None] > 0)
    return float(norm.sum() / n), unit / n


def _stencil_for(ctx: MultiScanContext, grid: FlowGrid, st: Stencil | None) -> Stencil:
    return st if st is not None else stencil(grid, ctx.reference.points)


def dt_loss_and_grad(ctx: MultiScanContext, grid: FlowGrid, grad_accum: np.ndarray,
                     st: Stencil | None = None) -> float:
    """Multi-scan distance term; adds its parameter gradient into ``grad_accum``.

    Each reference point is pushed by ``flow * delta_t`` into that support's
    distance field. Rejected samples add nothing but still count in N.
    """
    st = _stencil_for(ctx, grid, st)
    value, upstream, _ = _dt_eval(ctx, st.gather(grid.params))
    st.scatter(upstream, grad_accum)
    return value


def norm_loss_and_grad(reference: PointCloud, grid: FlowGrid, grad_accum: np.ndarray,
                       st: Stencil | None = None) -> float:
    """Per-point mean flow magnitude; subgradient 0 at zero flow."""
    st = st if st is not None else stencil(grid, reference.points)
    value, upstream = _norm_eval(st.gather(grid.params))
    st.scatter(upstream, grad_accum)
    return value


def total_loss_and_grad(ctx: MultiScanContext, grid: FlowGrid, clusters: ClusterAssignment,
                        w: LossWeights, grad_accum: np.ndarray,
                        st: Stencil | None = None) -> LossBreakdown:
    """Full objective; ``grad_accum`` (zeroed by the caller) receives d(total)/d(params)."""
    if len(clusters.cluster_id) != len(ctx.reference):
        raise InvalidConfig("cluster assignment does not match the reference cloud")
    st = _stencil_for(ctx, grid, st)
    flows = st.gather(grid.params)
    side = ctx.side_scale

    dt_val, dt_up, rejected = _dt_eval(ctx, flows)
    c_val, c_up = cluster_loss_and_grad(flows, clusters)
    n_val, n_up = _norm_eval(flows)

    upstream = w.lambda_d * dt_up + side * (w.lambda_c * c_up + w.lambda_gamma * n_up)
    st.scatter(upstream, grad_accum)
    total = w.lambda_d * dt_val + side * (w.lambda_c * c_val + w.lambda_gamma * n_val)
    return LossBreakdown(total, dt_val, c_val, n_val, rejected)
