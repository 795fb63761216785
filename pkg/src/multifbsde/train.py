"""Optimization loops for the terminal-matching objectives.

Three modes share one engine:

* ``deep-fbsde``  joint training of y0 and the per-step networks on the
  original system;
* ``phase1``      joint training on the summed objective of several
  shifted systems sharing networks, y0 and noise;
* ``phase2``      networks only, on the original system, with y0 frozen
  at a supplied value.

Training data is a fixed budget of Brownian increments consumed in
deterministic sequential minibatches and reused across epochs.  Because
increments are index-addressable, budgets too large to hold in memory are
generated per batch with identical values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .autodiff import Tape
from .errors import ConfigError, DivergenceError, ParameterDomainError
from .model import CoefficientSet
from .network import MlpArch, StepNets, bind_step_nets, flatten_params
from .rollout import TimeGrid, detached_rollout, euler_rollout, multi_loss, terminal_mse
from .stochastics import BrownianBatch, brownian_rows, derive_seed, sample_brownian_batch

# Budgets above this many increment entries are generated per batch
# instead of materialized up front (identical draws either way).
_POOL_ENTRY_LIMIT = 2**25

_EVAL_SEED_LABEL = 101
_INIT_SEED_LABEL = 7

MODES = ("deep-fbsde", "phase1", "phase2")


@dataclass
class AdamState:
    """First/second moment accumulators of the Adam update."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (new theta, state)."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ParameterDomainError(
            f"length mismatch: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if not lr > 0:
        raise ParameterDomainError(f"learning rate must be positive, got {lr}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * np.square(grad)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps), state


@dataclass(frozen=True)
class TrainConfig:
    """Budget, schedule and mode of one training run.

    The full-scale defaults are 2^20 realizations in batches of 2^12 over
    10 epochs; :meth:`desk` shrinks them to a laptop-friendly profile.
    """

    m_train: int = 2**20
    batch_size: int = 2**12
    epochs: int = 10
    n_steps: int = 40
    lr0: float = 0.1
    lr_decay_rate: float = 0.5
    lr_hold_epochs: int = 3
    seed: int = 0
    y0_init: float = 0.0
    y0_lr_scale: float = 1.0
    y0_readout: str = "final"
    mode: str = "deep-fbsde"
    shift_preset: str = ""
    hidden: tuple = (20, 20, 20)
    init_scheme: str = "he-normal"
    shared_net: bool = False
    eval_samples: int = 2**12

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.y0_readout not in ("final", "tail-mean"):
            raise ConfigError(f"y0_readout must be 'final' or 'tail-mean', got {self.y0_readout!r}")
        if not self.y0_lr_scale > 0:
            raise ConfigError("y0_lr_scale must be positive")
        if self.m_train < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("m_train, batch_size and epochs must be positive")
        if self.m_train % self.batch_size != 0:
            raise ConfigError(
                f"m_train={self.m_train} is not divisible by batch_size={self.batch_size}"
            )
        if self.n_steps < 1:
            raise ConfigError("n_steps must be positive")

    @property
    def batches_per_epoch(self) -> int:
        return self.m_train // self.batch_size

    @property
    def iterations(self) -> int:
        return self.epochs * self.batches_per_epoch

    def desk(self) -> "TrainConfig":
        """Desk-scale profile: 2^16 realizations, batches of 2^10, 4 epochs."""
        return replace(self, m_train=2**16, batch_size=2**10, epochs=4)

    def landscape_budget(self) -> "TrainConfig":
        """Reduced per-grid-point budget for initial-value landscape scans."""
        return replace(self, m_train=2**16, batch_size=2**10, epochs=2)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """lr0 held for the first epochs, then exp(-decay_rate) per later epoch."""
    if iteration < 0:
        raise ParameterDomainError(f"iteration must be >= 0, got {iteration}")
    epoch = iteration // cfg.batches_per_epoch
    return cfg.lr0 * np.exp(-cfg.lr_decay_rate * max(0, epoch - cfg.lr_hold_epochs))


@dataclass
class TrainHistory:
    """Per-iteration trace: loss, current y0, learning rate, elapsed seconds."""

    losses: list = field(default_factory=list)
    y0s: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, loss: float, y0: float, lr: float, sec: float) -> None:
        self.losses.append(float(loss))
        self.y0s.append(float(y0))
        self.lrs.append(float(lr))
        self.seconds.append(float(sec))

    def __len__(self) -> int:
        return len(self.losses)

    def to_csv(self, path, include_seconds: bool = True) -> None:
        """CSV trace; ``include_seconds=False`` keeps reruns byte-identical."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = ["iteration", "loss", "y0", "lr"]
            if include_seconds:
                header.append("seconds")
            w.writerow(header)
            for i, (loss, y0, lr) in enumerate(zip(self.losses, self.y0s, self.lrs)):
                row = [i, repr(loss), repr(y0), repr(lr)]
                if include_seconds:
                    row.append(repr(self.seconds[i]))
                w.writerow(row)


class TrainResult(NamedTuple):
    nets: StepNets
    y0: float
    history: TrainHistory


def _increment_source(cfg: TrainConfig, grid: TimeGrid, k: int):
    """Minibatch provider over the training budget; both paths draw identically."""
    h = grid.h
    if cfg.m_train * grid.n_steps * k <= _POOL_ENTRY_LIMIT:
        pool = sample_brownian_batch(cfg.seed, cfg.m_train, grid.n_steps, k, h)

        def batch_at(lo, hi):
            return pool.slice_samples(lo, hi)
    else:
        def batch_at(lo, hi):
            rows = brownian_rows(cfg.seed, lo, hi, grid.n_steps, k, h)
            return BrownianBatch(rows, h, cfg.seed)

    return batch_at


def _fit(problem: CoefficientSet, cfg: TrainConfig, shifts, train_y0: bool,
         y0_value: float, init_nets: Optional[StepNets]) -> TrainResult:
    """Shared engine: sequential minibatch Adam on the chosen objective."""
    grid = TimeGrid(cfg.n_steps, problem.horizon)
    if init_nets is not None:
        nets = init_nets.copy()
        nets = replace(nets, y0=float(y0_value), train_y0=train_y0)
    else:
        arch = MlpArch(problem.d, problem.k, tuple(cfg.hidden), time_input=cfg.shared_net)
        nets = StepNets.init(arch, cfg.n_steps, seed=derive_seed(cfg.seed, _INIT_SEED_LABEL),
                             y0=float(y0_value), train_y0=train_y0,
                             scheme=cfg.init_scheme, shared=cfg.shared_net)
    batch_at = _increment_source(cfg, grid, problem.k)
    theta, unflatten = flatten_params(nets)
    adam = AdamState.init(theta.size)
    history = TrainHistory()

    for it in range(cfg.iterations):
        start = time.perf_counter()
        lr = lr_schedule(it, cfg)
        b = it % cfg.batches_per_epoch
        batch = batch_at(b * cfg.batch_size, (b + 1) * cfg.batch_size)
        tape = Tape()
        y0_arr = np.asarray(nets.y0, dtype=np.float64)
        y0_node = tape.parameter(y0_arr) if train_y0 else tape.constant(y0_arr)
        try:
            if shifts is None:
                loss_node = euler_rollout(problem, nets, y0_node, batch, grid, tape).loss_node
            else:
                loss_node, _ = multi_loss(problem, shifts, nets, y0_node, batch, grid, tape)
        except DivergenceError as err:
            raise DivergenceError(f"iteration {it}: {err}", step=err.step,
                                  sample=err.sample) from err
        grads = tape.backward(loss_node)
        bound = bind_step_nets(tape, nets)
        pieces = [grads[nid].ravel() for nid in bound.param_ids]
        if train_y0:
            pieces.append(np.atleast_1d(grads[y0_node]))
        prev = theta
        theta, adam = adam_step(adam, theta, np.concatenate(pieces), lr)
        if train_y0 and cfg.y0_lr_scale != 1.0:
            # per-group learning rate: the Adam step is linear in lr, so the
            # scalar y0 coordinate is rescaled after the joint update
            theta[-1] = prev[-1] + cfg.y0_lr_scale * (theta[-1] - prev[-1])
        nets = unflatten(theta)
        history.append(float(tape.value(loss_node)), nets.y0, lr,
                       time.perf_counter() - start)

    if not train_y0:
        return TrainResult(nets, float(y0_value), history)
    y0_out = float(nets.y0)
    if cfg.y0_readout == "tail-mean":
        y0_out = float(np.mean(history.y0s[-cfg.batches_per_epoch:]))
    return TrainResult(nets, y0_out, history)


def train(problem: CoefficientSet, cfg: TrainConfig, shifts=None,
          y0_fixed: Optional[float] = None,
          init_nets: Optional[StepNets] = None) -> TrainResult:
    """Run the configured mode; see the module docstring for the three modes.

    ``shifts`` (a list of drift shifts) is required for phase1 and
    rejected otherwise; ``y0_fixed`` is required for phase2, whose result
    echoes it unchanged.  ``init_nets`` warm-starts the network stack.
    """
    if cfg.mode == "phase1":
        if not shifts:
            raise ConfigError("phase1 needs a nonempty list of drift shifts")
        if y0_fixed is not None:
            raise ConfigError("phase1 trains y0; a fixed value cannot be supplied")
        return _fit(problem, cfg, shifts, True, cfg.y0_init, init_nets)
    if shifts:
        raise ConfigError(f"mode {cfg.mode!r} uses the unshifted system only")
    if cfg.mode == "deep-fbsde":
        if y0_fixed is not None:
            raise ConfigError("deep-fbsde trains y0; a fixed value cannot be supplied")
        return _fit(problem, cfg, None, True, cfg.y0_init, init_nets)
    if y0_fixed is None:
        raise ConfigError("phase2 needs the initial value approximated in phase1")
    return _fit(problem, cfg, None, False, float(y0_fixed), init_nets)


def held_out_batch(problem: CoefficientSet, cfg: TrainConfig,
                   m: Optional[int] = None) -> BrownianBatch:
    """Evaluation noise disjoint from the training budget (derived seed)."""
    grid = TimeGrid(cfg.n_steps, problem.horizon)
    return sample_brownian_batch(derive_seed(cfg.seed, _EVAL_SEED_LABEL),
                                 m or cfg.eval_samples, grid.n_steps, problem.k, grid.h)


def evaluate_mse(problem: CoefficientSet, nets: StepNets, y0: float,
                 batch: BrownianBatch, shifts=None) -> float:
    """Terminal MSE on a given batch (sum over shifts when provided)."""
    grid = TimeGrid(batch.n_steps, problem.horizon)
    if shifts is None:
        paths = detached_rollout(problem, nets, y0, batch, grid)
        return terminal_mse(paths, problem)
    from .model import shifted

    total = 0.0
    for s in shifts:
        sc = shifted(problem, s)
        total += terminal_mse(detached_rollout(sc, nets, y0, batch, grid), sc)
    return total


def mse_landscape(problem: CoefficientSet, y0_grid, cfg: TrainConfig, shifts=None):
    """Map y0 -> achievable terminal MSE with y0 pinned and networks trained.

    Each grid point trains a fresh stack (independent init seed) under the
    single- or multi-system objective and reports the final MSE on one
    shared held-out batch.  Returns a list of (y0, mse) pairs.
    """
    y0_grid = [float(v) for v in y0_grid]
    if not y0_grid:
        raise ConfigError("landscape scan needs a nonempty y0 grid")
    eval_batch = held_out_batch(problem, cfg)
    out = []
    for idx, y0 in enumerate(y0_grid):
        cfg_pt = replace(cfg, seed=derive_seed(cfg.seed, 1000 + idx))
        result = _fit(problem, cfg_pt, shifts, False, y0, None)
        out.append((y0, evaluate_mse(problem, result.nets, y0, eval_batch, shifts)))
    return out
