"""Adam on the flow-grid parameters with patience-based early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterAssignment
from .errors import InvalidConfig, NonFiniteGradient
from .flow_grid import FlowGrid, stencil
from .losses import LossWeights, MultiScanContext, total_loss_and_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.05
    max_epochs: int = 500
    patience: int = 250
    min_delta: float = 0.01
    min_delta_mode: str = "absolute"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.0
    restore_best: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.max_epochs < 1:
            raise InvalidConfig("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise InvalidConfig("patience must lie in [0, max_epochs]")
        if self.min_delta < 0:
            raise InvalidConfig("min_delta must be non-negative")
        if self.min_delta_mode not in ("absolute", "relative"):
            raise InvalidConfig("min_delta_mode must be 'absolute' or 'relative'")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_adam > 0):
            raise InvalidConfig("invalid Adam moment parameters")
        if self.weight_decay != 0:
            raise InvalidConfig("weight decay is fixed at 0")


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    best_loss: float = float("inf")
    epochs_since_improvement: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def step(grid: FlowGrid, grad: np.ndarray, state: OptimState, cfg: OptimConfig) -> None:
    """One bias-corrected Adam update of ``grid.params`` in place."""
    if grad.shape != grid.params.shape:
        raise InvalidConfig(f"gradient shape {grad.shape} != params {grid.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"non-finite gradient at step {state.step + 1}")
    state.step += 1
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * grad
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - cfg.beta1 ** state.step)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.step)
    grid.params -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)


@dataclass
class FitResult:
    grid: FlowGrid
    log: list[dict] = field(default_factory=list)
    lowest_epoch: int = 0
    returned_epoch: int = 0
    stop_reason: str = "max_epochs"

    @property
    def epochs_run(self) -> int:
        return len(self.log)


def _improved(loss: float, best: float, cfg: OptimConfig) -> bool:
    if not np.isfinite(best):
        return True
    delta = cfg.min_delta if cfg.min_delta_mode == "absolute" else cfg.min_delta * abs(best)
    return loss < best - delta


def fit(ctx: MultiScanContext, clusters: ClusterAssignment, w: LossWeights,
        cfg: OptimConfig, grid: FlowGrid) -> FitResult:
    """Full-batch optimization of ``grid`` in place.

    ``state.best_loss`` drives patience and only moves on improvements of at
    least ``min_delta``. The grid keeps the parameters of the last evaluated
    epoch, or of the epoch with the lowest logged total when
    ``cfg.restore_best`` is set. Adam keeps jittering static corners around
    the non-smooth cluster and norm terms, so on scenes with few movers the
    zero initialization often has the lowest total even though later epochs
    track the movers.
    """
    st = stencil(grid, ctx.reference.points)
    state = OptimState.zeros_like(grid.params)
    grad = np.zeros_like(grid.params)
    result = FitResult(grid)
    best_params = grid.params.copy()
    lowest = float("inf")

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        grad.fill(0.0)
        br = total_loss_and_grad(ctx, grid, clusters, w, grad, st=st)
        entry = {"epoch": epoch, **br.to_json()}

        if br.total < lowest:
            lowest = br.total
            best_params = grid.params.copy()
            result.lowest_epoch = epoch
        if _improved(br.total, state.best_loss, cfg):
            state.best_loss = br.total
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
        entry["best_loss"] = state.best_loss

        stop = None
        if state.epochs_since_improvement >= cfg.patience:
            stop = "early_stop"
        elif epoch == cfg.max_epochs:
            stop = "max_epochs"
        else:
            try:
                step(grid, grad, state, cfg)
            except NonFiniteGradient as exc:
                entry["wall_ms"] = (time.perf_counter() - t0) * 1e3
                result.log.append(entry)
                raise NonFiniteGradient(f"epoch {epoch}: {exc}; last log entry {entry}") from exc
        entry["wall_ms"] = (time.perf_counter() - t0) * 1e3
        result.log.append(entry)
        if stop:
            result.stop_reason = stop
            break

    if cfg.restore_best:
        grid.params[:] = best_params
        result.returned_epoch = result.lowest_epoch
    else:
        result.returned_epoch = result.epochs_run
    log.debug("fit: %d epochs, returned epoch %d, stop=%s", result.epochs_run,
              result.returned_epoch, result.stop_reason)
    return result
