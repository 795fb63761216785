"""Euler-Maruyama simulation of the discrete (X, Y, Z) systems.

The same recursion drives three uses: the single-system terminal-matching
objective, the summed objective over a family of shifted systems sharing
one Brownian batch and one network stack, and gradient-free re-simulation
for evaluation.  Taped and detached rollouts execute identical kernels, so
their values agree to the last bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import EAGER, Tape
from .errors import DivergenceError, ParameterDomainError
from .model import CoefficientSet, ShiftedCoefficients, ZERO_SHIFT, shifted
from .network import (BoundStepNets, StepNets, augment_time, bind_step_nets,
                      mlp_apply, mlp_apply_eager)
from .stochastics import BrownianBatch


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant grid t_n = n * h on [0, horizon] with h = horizon / n_steps."""

    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ParameterDomainError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.horizon > 0:
            raise ParameterDomainError(f"horizon must be positive, got {self.horizon}")

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.h
        t[-1] = self.horizon  # exact endpoint regardless of rounding in h
        return t


@dataclass
class PathBatch:
    """Simulated discrete trajectories: X (M,N+1,d), Y (M,N+1), Z (M,N,k)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    grid: TimeGrid
    shift_label: str = ""

    @property
    def m(self) -> int:
        return self.x.shape[0]

    def to_csv(self, path) -> None:
        """Columns (sample, n, t, X_1..X_d, Y, Z_1..Z_k); Z is blank at n = N."""
        d, k = self.x.shape[2], self.z.shape[2]
        times = self.grid.times
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "n", "t"] + [f"X_{i+1}" for i in range(d)]
                       + ["Y"] + [f"Z_{i+1}" for i in range(k)])
            for m in range(self.x.shape[0]):
                for n in range(self.x.shape[1]):
                    z = [repr(v) for v in self.z[m, n]] if n < self.z.shape[1] else [""] * k
                    w.writerow([m, n, repr(times[n])]
                               + [repr(v) for v in self.x[m, n]]
                               + [repr(self.y[m, n])] + z)


@dataclass
class RolloutOutput:
    """Taped rollout result: trajectories plus the residual and loss nodes."""

    paths: PathBatch
    residual_node: int
    loss_node: int


def _as_shifted(coeffs) -> ShiftedCoefficients:
    if isinstance(coeffs, ShiftedCoefficients):
        return coeffs
    if isinstance(coeffs, CoefficientSet):
        return shifted(coeffs, ZERO_SHIFT)
    raise ParameterDomainError(f"expected coefficients, got {type(coeffs).__name__}")


def _check_geometry(sc: ShiftedCoefficients, nets: StepNets, batch: BrownianBatch,
                    grid: TimeGrid) -> None:
    if batch.h != grid.h:
        raise ParameterDomainError(
            f"batch step size {batch.h} differs from grid step size {grid.h}"
        )
    if batch.n_steps != grid.n_steps:
        raise ParameterDomainError(
            f"batch has {batch.n_steps} steps, grid has {grid.n_steps}"
        )
    if batch.k != sc.k:
        raise ParameterDomainError(
            f"increments are {batch.k}-dimensional, problem expects k={sc.k}"
        )
    if sc.d != sc.k:
        raise ParameterDomainError(
            "the backward update pairs Z with sigma*dW; this build requires k == d, "
            f"got d={sc.d}, k={sc.k}"
        )
    if nets is not None and not nets.shared and nets.n_nets != grid.n_steps:
        raise ParameterDomainError(
            f"stack has {nets.n_nets} networks, grid has {grid.n_steps} steps"
        )
    arch = None if nets is None else nets.arch
    if arch is not None and arch.input_dim != sc.d:
        raise ParameterDomainError(
            f"networks take {arch.input_dim}-dimensional inputs, state is {sc.d}-dimensional"
        )
    if arch is not None and arch.output_dim != sc.k:
        raise ParameterDomainError(
            f"networks produce {arch.output_dim}-dimensional outputs, Z is {sc.k}-dimensional"
        )


def _divergence_guard(value: np.ndarray, step: int, label: str) -> None:
    if not np.isfinite(value).all():
        bad = np.argwhere(~np.isfinite(value))
        sample = int(bad[0][0]) if bad.size else None
        raise DivergenceError(
            f"non-finite {label} at step {step}, first bad sample {sample}",
            step=step, sample=sample,
        )


def _run(ops, sc: ShiftedCoefficients, apply_net, y0_handle, increments: np.ndarray,
         grid: TimeGrid):
    """The shared recursion; ``ops`` selects taped or eager execution."""
    m = increments.shape[0]
    h = grid.h
    times = grid.times
    x = ops.constant(np.tile(sc.x0, (m, 1)))
    y = ops.add(ops.constant(np.zeros(m)), y0_handle)
    xs, ys, zs = [x], [y], []
    for n in range(grid.n_steps):
        t = float(times[n])
        z = apply_net(n, t, x)
        drift = sc.drift(ops, t, x, y, z)
        driver = sc.driver(ops, t, x, y, z)
        noise = ops.constant(increments[:, n, :] @ sc.sigma(t).T)
        x = ops.add(ops.add(x, ops.scale(drift, h)), noise)
        y = ops.add(ops.sub(y, ops.scale(driver, h)), ops.inner(z, noise))
        _divergence_guard(ops.value(x), n, f"state ({sc.label})")
        _divergence_guard(ops.value(y), n, f"value process ({sc.label})")
        xs.append(x)
        ys.append(y)
        zs.append(z)
    residual = ops.sub(y, sc.g(ops, x))
    loss = ops.scale(ops.sum(ops.square(residual)), 1.0 / m)
    return xs, ys, zs, residual, loss


def _collect_paths(ops, xs, ys, zs, grid, label) -> PathBatch:
    x = np.stack([np.asarray(ops.value(h)) for h in xs], axis=1)
    y = np.stack([np.asarray(ops.value(h)) for h in ys], axis=1)
    z = np.stack([np.asarray(ops.value(h)) for h in zs], axis=1)
    return PathBatch(x, y, z, grid, label)


def euler_rollout(coeffs, nets: StepNets, y0_node: int, batch: BrownianBatch,
                  grid: TimeGrid, tape: Tape) -> RolloutOutput:
    """Record the full discrete system on the tape.

    X steps with the (shifted) drift plus sigma * dW; Y steps backward-in-
    expectation with the (shifted) driver and the <Z, sigma dW> martingale
    term; Z_n is the step-n network applied to X_n.  The loss node holds
    the batch mean of the squared terminal mismatch Y_N - g(X_N).

    Network parameters are bound per tape with memoization, so repeated
    rollouts on one tape (the multi-system objective) share them.
    """
    sc = _as_shifted(coeffs)
    _check_geometry(sc, nets, batch, grid)
    bound = bind_step_nets(tape, nets)

    def apply_net(n, t, x):
        if nets.shared:
            return mlp_apply(bound.layers[0], augment_time(tape, x, t, sc.d), tape)
        return mlp_apply(bound.layers[n], x, tape)

    xs, ys, zs, residual, loss = _run(tape, sc, apply_net, y0_node,
                                      batch.increments, grid)
    paths = _collect_paths(tape, xs, ys, zs, grid, sc.label)
    return RolloutOutput(paths, residual, loss)


def multi_loss(base: CoefficientSet, shifts, nets: StepNets, y0_node: int,
               batch: BrownianBatch, grid: TimeGrid, tape: Tape):
    """Sum of terminal mean-squared errors over the shifted systems.

    All systems consume the identical Brownian batch and share the same
    network and y0 nodes; returns (total loss node, per-shift outputs).
    """
    if not shifts:
        raise ParameterDomainError("multi_loss needs at least one shift")
    outputs = [euler_rollout(shifted(base, s), nets, y0_node, batch, grid, tape)
               for s in shifts]
    total = outputs[0].loss_node
    for out in outputs[1:]:
        total = tape.add(total, out.loss_node)
    return total, outputs


def detached_rollout(coeffs, nets: StepNets, y0: float, batch: BrownianBatch,
                     grid: TimeGrid) -> PathBatch:
    """The identical recursion without a tape; values match euler_rollout bit for bit."""
    sc = _as_shifted(coeffs)
    _check_geometry(sc, nets, batch, grid)

    def apply_net(n, t, x):
        if nets.shared:
            return mlp_apply_eager(nets.nets[0], augment_time(EAGER, x, t, sc.d))
        return mlp_apply_eager(nets.nets[n], x)

    y0_handle = np.asarray(float(y0))
    xs, ys, zs, _, _ = _run(EAGER, sc, apply_net, y0_handle, batch.increments, grid)
    return _collect_paths(EAGER, xs, ys, zs, grid, sc.label)


def terminal_mse(paths: PathBatch, coeffs) -> float:
    """Mean squared terminal mismatch of an already simulated batch."""
    sc = _as_shifted(coeffs)
    res = paths.y[:, -1] - sc.g(EAGER, paths.x[:, -1, :])
    return float(np.mean(np.square(res)))
