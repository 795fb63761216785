"""FBSDE problem definitions and the drift-shift family.

A problem is a set of coefficient closures written against the tape
primitives (``ops`` is either a recording :class:`~multifbsde.autodiff.Tape`
or the eager twin), so the same definitions drive both trainable rollouts
and gradient-free re-simulation:

* ``b(ops, t, x, y, z)``  drift, batched vector
* ``sigma(t)``            diffusion factor, a plain (d x k) array
* ``f(ops, t, x, y, z)``  driver, batched scalar
* ``g(ops, x)``           terminal condition, batched scalar

A drift shift ``psi`` turns a problem into an equivalent one with drift
``b - psi`` and driver ``f + <z, psi>``: every member of the family solves
the same parabolic PDE and therefore shares the initial value ``Y_0``.

The diffusion factor is state-independent here (every shipped benchmark
uses a constant matrix), which keeps the noise term off the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import EAGER
from .errors import GraphConstructionError, ParameterDomainError


@dataclass(frozen=True)
class CoefficientSet:
    """One FBSDE problem: dynamics, driver, terminal cost and start point."""

    d: int
    k: int
    horizon: float
    x0: np.ndarray
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    label: str = ""

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ParameterDomainError(f"dimensions must be >= 1, got d={self.d}, k={self.k}")
        if not self.horizon > 0:
            raise ParameterDomainError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        if self.x0.shape != (self.d,):
            raise ParameterDomainError(f"x0 must have shape ({self.d},), got {self.x0.shape}")


@dataclass(frozen=True)
class DriftShift:
    """One member of the equivalent-FBSDE family; ``psi=None`` means identically zero."""

    label: str
    psi: Optional[Callable] = None


ZERO_SHIFT = DriftShift("zero", None)


@dataclass(frozen=True)
class ShiftedCoefficients:
    """A problem combined with a shift: drift b - psi, driver f + <z, psi>.

    The zero shift passes the base coefficients through untouched, so its
    rollout graph is identical to the unshifted one.
    """

    base: CoefficientSet
    shift: DriftShift

    def __post_init__(self):
        psi = self.shift.psi
        if psi is not None:
            if self.base.d != self.base.k:
                raise ParameterDomainError(
                    "drift shifts pair z with a d-dimensional psi; need k == d, "
                    f"got d={self.base.d}, k={self.base.k}"
                )
            probe = psi(EAGER, 0.0, np.zeros((1, self.base.d)), np.zeros(1),
                        np.zeros((1, self.base.k)))
            if np.shape(probe) != (1, self.base.d):
                raise GraphConstructionError(
                    f"shift {self.shift.label!r} returned shape {np.shape(probe)}, "
                    f"expected (1, {self.base.d})"
                )

    @property
    def d(self):
        return self.base.d

    @property
    def k(self):
        return self.base.k

    @property
    def horizon(self):
        return self.base.horizon

    @property
    def x0(self):
        return self.base.x0

    @property
    def sigma(self):
        return self.base.sigma

    @property
    def g(self):
        return self.base.g

    @property
    def label(self):
        return self.shift.label

    def drift(self, ops, t, x, y, z):
        if self.shift.psi is None:
            return self.base.b(ops, t, x, y, z)
        return ops.sub(self.base.b(ops, t, x, y, z), self.shift.psi(ops, t, x, y, z))

    def driver(self, ops, t, x, y, z):
        if self.shift.psi is None:
            return self.base.f(ops, t, x, y, z)
        return ops.add(self.base.f(ops, t, x, y, z),
                       ops.inner(z, self.shift.psi(ops, t, x, y, z)))


def shifted(base: CoefficientSet, shift: DriftShift) -> ShiftedCoefficients:
    return ShiftedCoefficients(base, shift)


def spread_cost_terminal(d: int) -> Callable:
    """g(x) = -|x_1 - x_2|: reward separating the first two coordinates."""
    if d < 2:
        raise ParameterDomainError("the spread terminal cost needs d >= 2")
    e = np.zeros(d)
    e[0], e[1] = 1.0, -1.0

    def g(ops, x):
        return ops.scale(ops.abs(ops.inner(ops.constant(e), x)), -1.0)

    return g


@dataclass(frozen=True)
class LqParams:
    """Linear-quadratic problem data.

    Dynamics A(C - x) + Bu with additive noise ``sigma``; running cost
    <R_x x, x> + <R_u u, u>; terminal cost <G x, x>.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma: np.ndarray
    R_x: np.ndarray
    R_u: np.ndarray
    G: np.ndarray
    x0: np.ndarray
    horizon: float

    def __post_init__(self):
        for name in ("A", "B", "C", "sigma", "R_x", "R_u", "G", "x0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.A.shape[0]
        ell = self.B.shape[1]
        if self.A.shape != (d, d) or self.sigma.shape != (d, d):
            raise ParameterDomainError("A and sigma must be square d x d matrices")
        if self.B.shape != (d, ell):
            raise ParameterDomainError(f"B must be d x ell, got {self.B.shape}")
        if self.C.shape != (d,) or self.x0.shape != (d,):
            raise ParameterDomainError("C and x0 must be d-vectors")
        if not self.horizon > 0:
            raise ParameterDomainError("horizon must be positive")
        if np.linalg.matrix_rank(self.B) != ell:
            raise ParameterDomainError("B must have full column rank")
        for name, m in (("R_x", self.R_x), ("G", self.G)):
            if m.shape != (d, d) or not np.allclose(m, m.T):
                raise ParameterDomainError(f"{name} must be symmetric d x d")
            if np.linalg.eigvalsh(m).min() < -1e-10:
                raise ParameterDomainError(f"{name} must be positive semidefinite")
        if self.R_u.shape != (ell, ell) or not np.allclose(self.R_u, self.R_u.T):
            raise ParameterDomainError("R_u must be symmetric ell x ell")
        try:
            np.linalg.cholesky(self.R_u)
        except np.linalg.LinAlgError:
            raise ParameterDomainError("R_u must be positive definite") from None

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def ell(self) -> int:
        return self.B.shape[1]

    @property
    def control_weight(self) -> np.ndarray:
        """B R_u^{-1} B^T, the matrix the optimal feedback acts through."""
        return self.B @ np.linalg.solve(self.R_u, self.B.T)


def lq_default_params() -> LqParams:
    """The six-dimensional LQ benchmark shipped with the CLI."""
    return LqParams(
        A=np.diag([1.0, 2.0, 3.0, 1.0, 2.0, 3.0]),
        B=np.array([[1.0, -1.0], [1.0, 1.0], [0.5, 1.0], [1.0, -1.0], [0.0, -1.0], [0.0, 1.0]]),
        C=np.array([-0.2, -0.1, 0.0, 0.0, 0.1, 0.2]),
        sigma=np.diag([0.2, 1.0, 0.2, 1.0, 0.2, 1.0]),
        R_x=np.diag([25.0, 1.0, 25.0, 1.0, 25.0, 1.0]),
        R_u=np.eye(2),
        G=np.diag([1.0, 25.0, 1.0, 25.0, 1.0, 25.0]),
        x0=np.full(6, 0.1),
        horizon=0.5,
    )


def lq_problem(p: LqParams) -> CoefficientSet:
    """FBSDE whose solution is the LQ value function and its gradient.

    Drift A(C - x) - (1/2) B R_u^{-1} B^T z, driver <R_x x, x> +
    (1/4) <R_u^{-1} B^T z, B^T z>, terminal <G x, x>.
    """
    d = p.d
    neg_a = -p.A
    ac = p.A @ p.C
    m = p.control_weight
    bt = p.B.T
    ru_inv = np.linalg.inv(p.R_u)
    sig = p.sigma.copy()

    def b(ops, t, x, y, z):
        reversal = ops.affine(ops.constant(neg_a), ops.constant(ac), x)
        steering = ops.scale(ops.matvec(ops.constant(m), z), -0.5)
        return ops.add(reversal, steering)

    def f(ops, t, x, y, z):
        state_cost = ops.inner(ops.matvec(ops.constant(p.R_x), x), x)
        w = ops.matvec(ops.constant(bt), z)
        control_cost = ops.scale(ops.inner(ops.matvec(ops.constant(ru_inv), w), w), 0.25)
        return ops.add(state_cost, control_cost)

    def g(ops, x):
        return ops.inner(ops.matvec(ops.constant(p.G), x), x)

    return CoefficientSet(d=d, k=d, horizon=p.horizon, x0=p.x0, b=b,
                          sigma=lambda t: sig, f=f, g=g, label="lq")


def controlled_bm_problem(d: int = 2, r: float = 1.0, sigma: float = 0.25,
                          x0=(-0.1, 0.1), horizon: float = 0.5,
                          g: Optional[Callable] = None) -> CoefficientSet:
    """Controlled Brownian motion: drift -z/r, driver ||z||^2 / (2r), sigma*I noise."""
    if not r > 0:
        raise ParameterDomainError(f"control weight r must be positive, got {r}")
    if not sigma > 0:
        raise ParameterDomainError(f"noise level sigma must be positive, got {sigma}")
    sig = sigma * np.eye(d)

    def b(ops, t, x, y, z):
        return ops.scale(z, -1.0 / r)

    def f(ops, t, x, y, z):
        return ops.scale(ops.inner(z, z), 0.5 / r)

    return CoefficientSet(d=d, k=d, horizon=horizon, x0=np.asarray(x0, dtype=np.float64),
                          b=b, sigma=lambda t: sig,
                          f=f, g=g if g is not None else spread_cost_terminal(d),
                          label="controlled-bm")


def adr_problem(alpha: float, beta: float, gamma: float = 0.0, x0=(-0.1, 0.1),
                horizon: float = 0.5, g: Optional[Callable] = None) -> CoefficientSet:
    """Advection-diffusion-reaction FBSDE: drift beta*z, driver beta*||z||^2 - gamma*y."""
    if not alpha > 0:
        raise ParameterDomainError(f"diffusivity alpha must be positive, got {alpha}")
    if not beta > 0:
        raise ParameterDomainError(f"gradient coupling beta must be positive, got {beta}")
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[0]
    sig = np.sqrt(2.0 * alpha) * np.eye(d)

    def b(ops, t, x, y, z):
        return ops.scale(z, beta)

    def f(ops, t, x, y, z):
        quad = ops.scale(ops.inner(z, z), beta)
        if gamma == 0.0:
            return quad
        return ops.sub(quad, ops.scale(y, gamma))

    return CoefficientSet(d=d, k=d, horizon=horizon, x0=x0, b=b, sigma=lambda t: sig,
                          f=f, g=g if g is not None else spread_cost_terminal(d),
                          label="adr")


def _lq_state_reversion(p: LqParams) -> Callable:
    """The state-feedback drift part b_1(x) = A(C - x)."""
    neg_a = -p.A
    ac = p.A @ p.C

    def b1(ops, x):
        return ops.affine(ops.constant(neg_a), ops.constant(ac), x)

    return b1


_XI_MAPS = {
    "identity": lambda ops, x: x,
    "neg-sin": lambda ops, x: ops.scale(ops.sin(x), -1.0),
    "x-cos": lambda ops, x: ops.mul(x, ops.cos(x)),
}


def _xi_exp_clamp(ops, x):
    # 1 - exp(min(1, max(-1, x))), the clamp built from relu
    one = ops.constant(1.0)
    low = ops.sub(ops.relu(ops.add(x, one)), one)
    clamped = ops.sub(one, ops.relu(ops.sub(one, low)))
    return ops.sub(one, ops.exp(clamped))


_XI_MAPS["exp-clamp"] = _xi_exp_clamp

LQ_PRESETS = ("K1", "K2", "K3", "K4", "xi-identity", "xi-neg-sin", "xi-x-cos", "xi-exp-clamp")
CBM_PRESETS = ("K1", "K2")
ADR_PRESETS = ("K1", "K2")


def shift_preset(problem_id: str, preset_id: str, *, lq: Optional[LqParams] = None,
                 r: Optional[float] = None, beta: Optional[float] = None) -> list:
    """The named shift families used by the benchmark experiments.

    LQ presets are built from b_1(x) = A(C - x): K1..K4 give
    (0), (0, b1), (0, b1, -b1), (0, b1, -b1, -0.5 b1); the xi presets give
    (b1 o xi, -(b1 o xi), 0) for coordinate-wise maps xi.  The
    controlled-BM K2 preset pairs the original system with the decoupled
    one (psi = -z/r); the ADR K2 preset uses psi = -(beta/2) z.
    """
    if problem_id == "lq":
        if lq is None:
            raise ParameterDomainError("LQ presets need the LqParams they are built from")
        b1 = _lq_state_reversion(lq)

        def shift_from(fn, label, scale=1.0):
            if scale == 1.0:
                return DriftShift(label, lambda ops, t, x, y, z: fn(ops, x))
            return DriftShift(label, lambda ops, t, x, y, z: ops.scale(fn(ops, x), scale))

        if preset_id in ("K1", "K2", "K3", "K4"):
            ladder = [ZERO_SHIFT,
                      shift_from(b1, "b1"),
                      shift_from(b1, "neg-b1", -1.0),
                      shift_from(b1, "neg-half-b1", -0.5)]
            return ladder[: int(preset_id[1])]
        if preset_id.startswith("xi-"):
            xi = _XI_MAPS.get(preset_id[3:])
            if xi is None:
                raise ParameterDomainError(f"unknown LQ preset {preset_id!r}")
            composed = lambda ops, x: b1(ops, xi(ops, x))
            return [shift_from(composed, f"b1-{preset_id}"),
                    shift_from(composed, f"neg-b1-{preset_id}", -1.0),
                    ZERO_SHIFT]
        raise ParameterDomainError(f"unknown LQ preset {preset_id!r}")

    if problem_id == "controlled-bm":
        if preset_id == "K1":
            return [ZERO_SHIFT]
        if preset_id == "K2":
            if r is None:
                raise ParameterDomainError("controlled-BM presets need the control weight r")
            return [ZERO_SHIFT,
                    DriftShift("decouple", lambda ops, t, x, y, z: ops.scale(z, -1.0 / r))]
        raise ParameterDomainError(f"unknown controlled-BM preset {preset_id!r}")

    if problem_id == "adr":
        if preset_id == "K1":
            return [ZERO_SHIFT]
        if preset_id == "K2":
            if beta is None:
                raise ParameterDomainError("ADR presets need the gradient coupling beta")
            return [ZERO_SHIFT,
                    DriftShift("half-beta-z", lambda ops, t, x, y, z: ops.scale(z, -0.5 * beta))]
        raise ParameterDomainError(f"unknown ADR preset {preset_id!r}")

    raise ParameterDomainError(f"unknown problem id {problem_id!r}")
