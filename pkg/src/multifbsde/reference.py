"""Independent ground-truth solvers for the benchmark problems.

Everything here is deliberately disjoint from the tape/training machinery:
plain numpy recursions, ODE stepping and Monte Carlo, so the learned
solvers can be checked against genuinely independent code paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (DivergenceError, NumericalDomainError, ParameterDomainError,
                     StabilityError)
from .model import LqParams
from .rollout import PathBatch, TimeGrid
from .stochastics import BrownianBatch, standard_normal_matrix

_LOG_TINY = np.log(1e-300)


@dataclass
class RiccatiSolution:
    """Backward-ODE solution defining the LQ value function.

    v(t, x) = x^T P(t) x + x^T Q(t) + R(t), with P(T) = G, Q(T) = 0,
    R(T) = 0.  Arrays are indexed by ascending time node.
    """

    times: np.ndarray        # (J+1,)
    p: np.ndarray            # (J+1, d, d), symmetric at every node
    q: np.ndarray            # (J+1, d)
    r: np.ndarray            # (J+1,)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index_at(self, t: float) -> int:
        """Nearest grid node <= t (with a tiny tolerance for exact multiples)."""
        if t < 0 or t > self.horizon + 1e-12:
            raise ParameterDomainError(f"t={t} outside [0, {self.horizon}]")
        step = self.times[1] - self.times[0]
        return min(len(self.times) - 1, int(np.floor(t / step + 1e-9)))

    def to_csv(self, path) -> None:
        import csv

        d = self.p.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"P_{i+1}{j+1}" for i in range(d) for j in range(d)]
                       + [f"Q_{i+1}" for i in range(d)] + ["R"])
            for idx, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(v) for v in self.p[idx].ravel()]
                           + [repr(v) for v in self.q[idx]] + [repr(float(self.r[idx]))])


def solve_riccati(p: LqParams, steps: int) -> RiccatiSolution:
    """Explicit Euler backward from t = T, solving P, then Q, then R.

    P's equation is autonomous; Q consumes the stored P nodes and R the
    stored (P, Q) nodes, so the three sweeps match a simultaneous step.
    P is symmetrized after every step.
    """
    if steps < 1:
        raise ParameterDomainError(f"steps must be >= 1, got {steps}")
    d = p.d
    tau = p.horizon / steps
    m = p.control_weight
    ac = p.A @ p.C
    sst = p.sigma @ p.sigma.T

    pk = np.empty((steps + 1, d, d))
    qk = np.empty((steps + 1, d))
    rk = np.empty(steps + 1)
    pk[steps] = p.G
    qk[steps] = 0.0
    rk[steps] = 0.0

    for j in range(steps, 0, -1):
        cur = pk[j]
        dot = p.A.T @ cur + cur @ p.A + cur @ m @ cur - p.R_x
        nxt = cur - tau * dot
        pk[j - 1] = 0.5 * (nxt + nxt.T)
        if not np.isfinite(pk[j - 1]).all():
            raise DivergenceError(f"Riccati P blew up at node {j - 1}", step=j - 1)
    for j in range(steps, 0, -1):
        cur = qk[j]
        dot = p.A.T @ cur + pk[j] @ m @ cur - 2.0 * pk[j] @ ac
        qk[j - 1] = cur - tau * dot
        if not np.isfinite(qk[j - 1]).all():
            raise DivergenceError(f"Riccati Q blew up at node {j - 1}", step=j - 1)
    for j in range(steps, 0, -1):
        dot = 0.25 * qk[j] @ m @ qk[j] - qk[j] @ ac - np.trace(sst @ pk[j])
        rk[j - 1] = rk[j] - tau * dot
    times = np.arange(steps + 1) * tau
    times[-1] = p.horizon
    return RiccatiSolution(times, pk, qk, rk)


def lq_value(t: float, x: np.ndarray, sol: RiccatiSolution) -> float:
    """Quadratic value function x^T P(t) x + x^T Q(t) + R(t)."""
    x = np.asarray(x, dtype=np.float64)
    idx = sol.index_at(t)
    return float(x @ sol.p[idx] @ x + x @ sol.q[idx] + sol.r[idx])


def lq_gradient(t: float, x: np.ndarray, sol: RiccatiSolution) -> np.ndarray:
    """Spatial gradient 2 P(t) x + Q(t); the exact Markov map of the LQ problem."""
    idx = sol.index_at(t)
    return 2.0 * sol.p[idx] @ np.asarray(x, dtype=np.float64) + sol.q[idx]


def lq_reference_paths(p: LqParams, sol: RiccatiSolution, batch: BrownianBatch,
                       grid: TimeGrid) -> PathBatch:
    """Euler paths driven by the exact feedback Z = 2 P x + Q.

    X steps with drift A(C - X) - 1/2 B R_u^{-1} B^T Z; Y and Z are read
    off the Riccati solution along the path.
    """
    if batch.h != grid.h or batch.n_steps != grid.n_steps or batch.k != p.d:
        raise ParameterDomainError("Brownian batch does not match the grid/problem")
    m_samp = batch.m
    d = p.d
    h = grid.h
    times = grid.times
    mw = p.control_weight
    ac = p.A @ p.C

    x = np.empty((m_samp, grid.n_steps + 1, d))
    y = np.empty((m_samp, grid.n_steps + 1))
    z = np.empty((m_samp, grid.n_steps, d))
    x[:, 0] = p.x0
    for n in range(grid.n_steps + 1):
        t = float(times[n])
        idx = sol.index_at(t)
        zt = x[:, n] @ (2.0 * sol.p[idx]).T + sol.q[idx]
        y[:, n] = np.einsum("mi,ij,mj->m", x[:, n], sol.p[idx], x[:, n]) \
            + x[:, n] @ sol.q[idx] + sol.r[idx]
        if n == grid.n_steps:
            break
        z[:, n] = zt
        drift = (ac - x[:, n] @ p.A.T) - 0.5 * zt @ mw.T
        x[:, n + 1] = x[:, n] + drift * h + batch.increments[:, n, :] @ p.sigma.T
        if not np.isfinite(x[:, n + 1]).all():
            raise DivergenceError(f"reference state diverged at step {n}", step=n)
    return PathBatch(x, y, z, grid, "lq-reference")


def lq_control_cost(p: LqParams, sol: RiccatiSolution, batch: BrownianBatch,
                    grid: TimeGrid):
    """Monte Carlo cost of the Riccati feedback control; returns (mean, stderr).

    Simulates the controlled state with u* = -1/2 R_u^{-1} B^T (2 P x + Q)
    and accumulates the running plus terminal cost; an independent check
    that the value function is what the control problem actually attains.
    """
    paths = lq_reference_paths(p, sol, batch, grid)
    h = grid.h
    ru_inv = np.linalg.inv(p.R_u)
    cost = np.zeros(batch.m)
    for n in range(grid.n_steps):
        xn = paths.x[:, n]
        u = -0.5 * paths.z[:, n] @ (ru_inv @ p.B.T).T
        running = np.einsum("mi,ij,mj->m", xn, p.R_x, xn) \
            + np.einsum("mi,ij,mj->m", u, p.R_u, u)
        cost += running * h
    xt = paths.x[:, -1]
    cost += np.einsum("mi,ij,mj->m", xt, p.G, xt)
    return float(cost.mean()), float(cost.std(ddof=1) / np.sqrt(batch.m))


def mc_mean_logexp(samples, scale: float):
    """scale * log(mean(exp(s / scale))) with max-subtraction for stability."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ParameterDomainError("mc_mean_logexp needs a nonempty sample list")
    if not np.isfinite(scale) or scale == 0.0:
        raise ParameterDomainError(f"scale must be finite and nonzero, got {scale}")
    u = s / scale
    shift = u.max()
    return float(scale * (np.log(np.mean(np.exp(u - shift))) + shift))


def _logexp_mean_with_se(samples: np.ndarray, scale: float):
    """As mc_mean_logexp, plus a delta-method standard error of the estimate."""
    u = samples / scale
    shift = u.max()
    e = np.exp(u - shift)
    mean = e.mean()
    se_mean = e.std(ddof=1) / np.sqrt(e.size)
    value = scale * (np.log(mean) + shift)
    return float(value), float(abs(scale) * se_mean / mean)


def cole_hopf_control_value(t: float, x, g: Callable, r: float, sigma: float,
                            horizon: float, m: int, seed: int):
    """Exponential-transform Monte Carlo value of the controlled-BM problem.

    v(t, x) = -r sigma^2 log E[exp(-g(x + sigma sqrt(T - t) xi) / (r sigma^2))]
    over standard normal xi; returns (value, stderr).  ``g`` maps an
    (m, d) array of points to (m,) values.
    """
    if not (r > 0 and sigma > 0):
        raise ParameterDomainError("need r > 0 and sigma > 0")
    x = np.asarray(x, dtype=np.float64)
    if t > horizon:
        raise ParameterDomainError(f"t={t} beyond horizon {horizon}")
    if t == horizon:
        return float(g(x[None, :])[0]), 0.0
    xi = standard_normal_matrix(seed, m, x.shape[0])
    pts = x + sigma * np.sqrt(horizon - t) * xi
    return _logexp_mean_with_se(np.asarray(g(pts), dtype=np.float64), -r * sigma**2)


def cole_hopf_adr_value(t: float, x, g: Callable, alpha: float, beta: float,
                        horizon: float, m: int, seed: int):
    """Monte Carlo value of the reaction-free (gamma = 0) ADR problem.

    v(t, x) = (alpha / 2 beta) log E[exp((2 beta / alpha)
    g(x + sqrt(2 alpha (T - t)) xi))]; returns (value, stderr).  The
    diffusion scale is the problem's own sqrt(2 alpha), and the positive
    log-mean-exp scale makes the value dominate the plain heat average
    (Jensen).
    """
    if not (alpha > 0 and beta > 0):
        raise ParameterDomainError("need alpha > 0 and beta > 0")
    x = np.asarray(x, dtype=np.float64)
    if t > horizon:
        raise ParameterDomainError(f"t={t} beyond horizon {horizon}")
    if t == horizon:
        return float(g(x[None, :])[0]), 0.0
    xi = standard_normal_matrix(seed, m, x.shape[0])
    pts = x + np.sqrt(2.0 * alpha * (horizon - t)) * xi
    return _logexp_mean_with_se(np.asarray(g(pts), dtype=np.float64), alpha / (2.0 * beta))


@dataclass
class GridSolution2D:
    """Finite-difference solution of the transformed ADR equation at t = 0.

    ``u`` is the exponential-transformed field (positive everywhere), ``v``
    the back-transformed original unknown.  ``u_prev``/``v_prev`` hold the
    previous time level (t = dt) so consistency of the back-transform can
    be checked with a discrete residual.
    """

    xs: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_prev: np.ndarray
    v_prev: np.ndarray
    dt: float
    alpha: float
    beta: float
    gamma: float

    @property
    def dx(self) -> float:
        return float(self.xs[1] - self.xs[0])

    def value_at(self, point) -> float:
        """Bilinear interpolation of v at an interior point."""
        p = np.asarray(point, dtype=np.float64)
        lo, hi = self.xs[0], self.xs[-1]
        if not ((lo <= p[0] <= hi) and (lo <= p[1] <= hi)):
            raise ParameterDomainError(f"point {p} outside the grid [{lo}, {hi}]^2")
        fi = (p - lo) / self.dx
        i0 = np.minimum(fi.astype(int), len(self.xs) - 2)
        w = fi - i0
        v = self.v
        return float((1 - w[0]) * (1 - w[1]) * v[i0[0], i0[1]]
                     + w[0] * (1 - w[1]) * v[i0[0] + 1, i0[1]]
                     + (1 - w[0]) * w[1] * v[i0[0], i0[1] + 1]
                     + w[0] * w[1] * v[i0[0] + 1, i0[1] + 1])

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "u", "v"])
            for i, a in enumerate(self.xs):
                for j, b in enumerate(self.xs):
                    w.writerow([repr(float(a)), repr(float(b)),
                                repr(float(self.u[i, j])), repr(float(self.v[i, j]))])


def fd_solve_adr(alpha: float, beta: float, gamma: float, g: Callable,
                 n_x: int = 401, n_t: Optional[int] = None, horizon: float = 0.5,
                 halfwidth: float = 2.0, cell_average: int = 4) -> GridSolution2D:
    """Explicit 2-D scheme for the transformed equation u_t + alpha lap(u) = gamma u log u.

    Marches backward from u(T, x) = exp((2 beta / alpha) g(x)) on
    [-halfwidth, halfwidth]^2 with Dirichlet boundary values frozen at the
    terminal data, then back-transforms v = (alpha / 2 beta) log u.

    The terminal data is cell-averaged with a ``cell_average``-point
    midpoint rule per axis: for sharply ridged data (large beta) pointwise
    sampling loses the ridge mass and biases the value.  Exponents are
    floored at log(1e-300) so extreme beta cannot underflow u to exact
    zero; the affected far-field region lies many diffusion lengths from
    the reference points.

    ``n_t`` defaults to the smallest step count satisfying the explicit
    stability bound alpha dt / dx^2 <= 1/4; passing a violating n_t raises.
    """
    if not (alpha > 0 and beta > 0):
        raise ParameterDomainError("need alpha > 0 and beta > 0")
    if n_x < 33:
        raise ParameterDomainError(f"n_x must be >= 33, got {n_x}")
    if not horizon > 0 or not halfwidth > 0:
        raise ParameterDomainError("horizon and halfwidth must be positive")
    if cell_average < 1:
        raise ParameterDomainError("cell_average must be >= 1")
    xs = np.linspace(-halfwidth, halfwidth, n_x)
    dx = xs[1] - xs[0]
    limit = 0.25 * dx * dx / alpha
    if n_t is None:
        n_t = max(1, int(np.ceil(horizon / limit)))
    dt = horizon / n_t
    if dt > limit * (1.0 + 1e-12):
        raise StabilityError(
            f"explicit step dt={dt:.3e} violates alpha*dt/dx^2 <= 1/4 (needs dt <= {limit:.3e})"
        )

    scale = 2.0 * beta / alpha
    offsets = (np.arange(cell_average) + 0.5) / cell_average - 0.5
    u = np.zeros((n_x, n_x))
    for a in offsets:
        for b in offsets:
            g1, g2 = np.meshgrid(xs + a * dx, xs + b * dx, indexing="ij")
            pts = np.column_stack([g1.ravel(), g2.ravel()])
            vals = np.asarray(g(pts), dtype=np.float64).reshape(n_x, n_x)
            u += np.exp(np.maximum(scale * vals, _LOG_TINY))
    u /= cell_average**2

    u_prev = u.copy()
    for step in range(n_t):
        u_prev = u.copy()
        interior = u[1:-1, 1:-1]
        lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
               - 4.0 * interior) / (dx * dx)
        react = 0.0
        if gamma != 0.0:
            react = -gamma * interior * np.log(np.maximum(interior, 1e-300))
        u[1:-1, 1:-1] = interior + dt * (alpha * lap + react)
        if np.min(u) <= 0.0 or not np.isfinite(u).all():
            raise NumericalDomainError(
                f"transformed field left its positive domain at time step {step}"
            )

    inv = alpha / (2.0 * beta)
    v = inv * np.log(u)
    v_prev = inv * np.log(u_prev)
    return GridSolution2D(xs, u, v, u_prev, v_prev, dt, alpha, beta, gamma)
