"""Leray-Lions flux functions a(x, y): coercive, growth-bounded, monotone
maps of (solution value, gradient) used in the divergence-form operator.

Built-in kinds:

* ``p_laplace``:             a(x, y) = |y|^(p-2) y
* ``regularized_p_laplace``: a(x, y) = (1 + |y|)^(p-2) y
* ``linear``:                a(x, y) = y
* ``custom``:                user-supplied callables.

For p < 2 the p-Laplace Jacobian is singular at y = 0; Newton solvers use
the smoothed flux (eps^2 + |y|^2)^((p-2)/2) y controlled by
``newton_epsilon``.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

P_LAPLACE = "p_laplace"
REGULARIZED_P_LAPLACE = "regularized_p_laplace"
LINEAR_DIFFUSION = "linear"
CUSTOM = "custom"


@dataclass(frozen=True)
class FluxModel:
    """A flux a(x, y) with growth exponent p and structure constants c1, c2.

    c1 and c2 are the declared coercivity/growth constants:
    a(x,y).y >= c1 |y|^p and |a(x,y)| <= c2 (1 + |y|^(p-1)).
    """

    kind: str
    p: float
    c1: float = 1.0
    c2: float = 1.0
    newton_epsilon: float = 0.0
    fn: Callable | None = field(default=None, compare=False)
    jac: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"p must be > 1, got {self.p}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")

    @property
    def p_conjugate(self):
        return self.p / (self.p - 1.0)

    @property
    def p_hat(self):
        return max(2.0, self.p_conjugate)

    @property
    def is_linear(self):
        return self.kind == LINEAR_DIFFUSION or (self.kind == P_LAPLACE and self.p == 2.0)


def p_laplace(p, newton_epsilon=None):
    if newton_epsilon is None:
        newton_epsilon = 1e-6 if p < 2.0 else 0.0
    return FluxModel(P_LAPLACE, p, newton_epsilon=newton_epsilon)


def regularized_p_laplace(p):
    # |a| = (1+r)^(p-2) r <= 2^(p-2) (1 + r^(p-1)) for p >= 2 (and <= 1 + r^(p-1)
    # for p <= 2), so the declared growth constant must carry the 2^(p-2) factor
    return FluxModel(REGULARIZED_P_LAPLACE, p, c2=max(1.0, 2.0 ** (p - 2.0)))


def linear_diffusion():
    return FluxModel(LINEAR_DIFFUSION, 2.0)


def custom_flux(p, fn, jac=None, c1=1.0, c2=1.0):
    """Wrap a user flux fn(x, y) -> (n, d); the assumption probe is the
    validation tool for the declared constants."""
    return FluxModel(CUSTOM, p, c1=c1, c2=c2, fn=fn, jac=jac)


def eval_flux(model, x, y):
    """Evaluate a(x, y) for batched values x (n,) and gradients y (n, d)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise ValueError("flux arguments must be finite")
    if model.kind == LINEAR_DIFFUSION:
        return y.copy()
    if model.kind == P_LAPLACE:
        r = np.linalg.norm(y, axis=1)
        w = np.zeros_like(r)
        nz = r > 0
        w[nz] = r[nz] ** (model.p - 2.0)
        return w[:, None] * y
    if model.kind == REGULARIZED_P_LAPLACE:
        r = np.linalg.norm(y, axis=1)
        return ((1.0 + r) ** (model.p - 2.0))[:, None] * y
    return np.asarray(model.fn(x, y), dtype=float).reshape(y.shape)


def eval_flux_smoothed(model, x, y, eps):
    """The eps-smoothed p-Laplace flux used inside Newton; other kinds are
    already smooth and returned unchanged."""
    if model.kind == P_LAPLACE and eps > 0.0:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        r2 = np.sum(y**2, axis=1)
        return ((eps**2 + r2) ** ((model.p - 2.0) / 2.0))[:, None] * y
    return eval_flux(model, x, y)


def eval_flux_jacobian(model, x, y):
    """Jacobian in y of the (smoothed) flux, batched: returns (n, d, d)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, d = y.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    if model.kind == LINEAR_DIFFUSION:
        return eye.copy()
    if model.kind == P_LAPLACE:
        eps2 = model.newton_epsilon**2
        r2 = np.sum(y**2, axis=1) + eps2
        r2 = np.maximum(r2, 1e-300)
        a = r2 ** ((model.p - 2.0) / 2.0)
        b = (model.p - 2.0) * r2 ** ((model.p - 4.0) / 2.0)
        return a[:, None, None] * eye + b[:, None, None] * np.einsum("ni,nj->nij", y, y)
    if model.kind == REGULARIZED_P_LAPLACE:
        r = np.linalg.norm(y, axis=1)
        a = (1.0 + r) ** (model.p - 2.0)
        out = a[:, None, None] * eye.copy()
        nz = r > 0
        if np.any(nz):
            b = (model.p - 2.0) * (1.0 + r[nz]) ** (model.p - 3.0) / r[nz]
            out[nz] += b[:, None, None] * np.einsum("ni,nj->nij", y[nz], y[nz])
        return out
    if model.jac is not None:
        return np.asarray(model.jac(x, y), dtype=float).reshape(n, d, d)
    return _fd_jacobian(model, x, y)


def _fd_jacobian(model, x, y, h=1e-7):
    n, d = y.shape
    out = np.empty((n, d, d))
    for k in range(d):
        dy = np.zeros_like(y)
        dy[:, k] = h
        out[:, :, k] = (eval_flux(model, x, y + dy) - eval_flux(model, x, y - dy)) / (2 * h)
    return out


@dataclass
class ProbeReport:
    """Outcome of randomized checks of coercivity, growth and monotonicity."""

    n_samples: int
    coercivity_violations: int
    growth_violations: int
    monotonicity_violations: int
    tight_c1: float
    tight_c2: float

    @property
    def passed(self):
        return (
            self.coercivity_violations == 0
            and self.growth_violations == 0
            and self.monotonicity_violations == 0
        )


def probe_assumptions(model, n_samples, value_range=5.0, grad_range=5.0, rng_seed=0, dim=2, slack=1e-12):
    """Sample (x, y, z) uniformly and count violations of the three structure
    inequalities beyond the given slack; report empirically tight constants."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x = rng.uniform(-value_range, value_range, n_samples)
    y = rng.uniform(-grad_range, grad_range, (n_samples, dim))
    z = rng.uniform(-grad_range, grad_range, (n_samples, dim))

    ay = eval_flux(model, x, y)
    az = eval_flux(model, x, z)
    ry = np.linalg.norm(y, axis=1)

    coer = np.sum(ay * y, axis=1) - model.c1 * ry**model.p
    growth = model.c2 * (1.0 + ry ** (model.p - 1.0)) - np.linalg.norm(ay, axis=1)
    mono = np.sum((ay - az) * (y - z), axis=1)

    nz = ry > 1e-12
    tight_c1 = float(np.min(np.sum(ay * y, axis=1)[nz] / ry[nz] ** model.p)) if nz.any() else np.inf
    tight_c2 = float(np.max(np.linalg.norm(ay, axis=1) / (1.0 + ry ** (model.p - 1.0))))

    return ProbeReport(
        n_samples=n_samples,
        coercivity_violations=int(np.sum(coer < -slack)),
        growth_violations=int(np.sum(growth < -slack)),
        monotonicity_violations=int(np.sum(mono < -slack)),
        tight_c1=tight_c1,
        tight_c2=tight_c2,
    )
