"""Truncated Karhunen-Loeve Q-Wiener increments and the pointwise
multiplicative noise operator.

The driving process is W(t) = sum_k q_k W_k(t) e_k with independent scalar
Wiener processes W_k, truncated at k_max modes. The spectral basis consists
of sine products on the bounding rectangle, which are L^2-orthonormal when
the domain fills the rectangle. The noise operator maps a state v to the
multiplication operator k |-> f0(v(.)) k(.).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

F0_KINDS = ("zero", "constant", "identity", "tanh", "custom")


class SineBasis:
    """Sine-product eigenbasis on a bounding rectangle, L^2-orthonormal."""

    def __init__(self, bbox, k_max):
        bbox = np.asarray(bbox, dtype=float)
        self.bbox = bbox
        self.dim = bbox.shape[1]
        self.k_max = k_max
        self.lengths = bbox[1] - bbox[0]
        if self.dim == 1:
            self.modes = np.arange(1, k_max + 1)[:, None]
        else:
            # deterministic enumeration of (i, j) pairs by increasing frequency
            n = int(np.ceil(np.sqrt(k_max))) + 2
            pairs = [(i, j) for i in range(1, n + 1) for j in range(1, n + 1)]
            pairs.sort(key=lambda ij: (ij[0] ** 2 + ij[1] ** 2, ij[0], ij[1]))
            self.modes = np.array(pairs[:k_max])
        self.norm = np.sqrt(2.0**self.dim / np.prod(self.lengths))

    def values(self, points):
        """Basis values at (n, dim) points, as an (n, k_max) array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (points - self.bbox[0]) / self.lengths  # (n, dim) in [0,1]
        out = np.ones((len(points), self.k_max))
        for d in range(self.dim):
            out *= np.sin(np.pi * np.outer(rel[:, d], self.modes[:, d]))
        return self.norm * out

    def sup_norms(self):
        return np.full(self.k_max, self.norm)


@dataclass(frozen=True)
class NoiseModel:
    """Truncated Q-Wiener spectrum plus the scalar multiplier f0."""

    k_max: int
    q: np.ndarray
    basis: SineBasis
    f0: Callable
    f0_kind: str
    F1: float
    F2: float

    @property
    def trace(self):
        """Trace of the covariance in the series representation: sum q_k^2."""
        return float(np.sum(self.q**2))

    @property
    def is_zero(self):
        return self.f0_kind == "zero" or np.all(self.q == 0.0)


def make_noise(bbox, k_max, spectrum_s=1.5, f0="tanh", f0_constant=1.0, q=None, F1=None, F2=None):
    """Build a noise model on the bounding box of the domain.

    The default spectrum is q_k = k^(-s). Growth constants default to valid
    bounds for the built-in multipliers: bounded f0 gives an additive-type
    bound (F1 = 0, F2 = sup|f0|^2); the identity multiplier is bounded
    through the sup norms of the truncated basis.
    """
    basis = SineBasis(np.asarray(bbox, dtype=float), k_max)
    if q is None:
        q = np.arange(1, k_max + 1, dtype=float) ** (-spectrum_s)
    q = np.asarray(q, dtype=float).reshape(k_max)
    if np.any(q < 0):
        raise ValueError("spectrum coefficients must be nonnegative")

    if isinstance(f0, (list, tuple, np.ndarray)) and not isinstance(f0, str):
        table = np.asarray(f0, dtype=float).reshape(-1, 2)
        if len(table) < 1 or np.any(np.diff(table[:, 0]) <= 0):
            raise ValueError("f0 table needs strictly increasing sample points")
        kind, fn = "custom", _TableMultiplier(table)
        # np.interp clamps outside the table, so the multiplier is bounded
        F1 = 0.0 if F1 is None else F1
        F2 = float(np.max(np.abs(table[:, 1])) ** 2) if F2 is None else F2
    elif callable(f0):
        kind, fn = "custom", f0
        if F1 is None or F2 is None:
            raise ValueError("custom f0 requires explicit F1 and F2")
    elif f0 == "zero":
        kind, fn = "zero", _zero_multiplier
        F1, F2 = 0.0, 0.0
    elif f0 == "constant":
        kind, fn = "constant", _ConstantMultiplier(f0_constant)
        F1 = 0.0 if F1 is None else F1
        F2 = f0_constant**2 if F2 is None else F2
    elif f0 == "identity":
        kind, fn = "identity", _identity_multiplier
        # |f(v)k| <= ||k||_inf |v|; ||k||_inf <= sqrt(sum_k sup|e_k|^2) for unit k
        F1 = float(np.sum(basis.sup_norms() ** 2)) if F1 is None else F1
        F2 = 0.0 if F2 is None else F2
    elif f0 == "tanh":
        kind, fn = "tanh", np.tanh
        F1 = 0.0 if F1 is None else F1
        F2 = 1.0 if F2 is None else F2
    else:
        raise ValueError(f"unknown f0 {f0!r}; expected callable or one of {F0_KINDS}")
    return NoiseModel(k_max, q, basis, fn, kind, float(F1), float(F2))


def _zero_multiplier(s):
    return np.zeros_like(s)


def _identity_multiplier(s):
    return s


class _ConstantMultiplier:
    def __init__(self, c):
        self.c = float(c)

    def __call__(self, s):
        return np.full_like(s, self.c)


class _TableMultiplier:
    """Piecewise-linear interpolation of a (points, values) table, clamped to
    the edge values outside the sampled range."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def __call__(self, s):
        return np.interp(s, self.table[:, 0], self.table[:, 1])


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (master seed, sample, time).

    Distinct stream ids are statistically independent; the same key is
    bit-reproducible regardless of sampling order or worker placement.
    """

    master_seed: int
    sample_index: int
    time_index: int

    def generator(self):
        ss = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.sample_index, self.time_index)
        )
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseIncrement:
    """One sampled Wiener increment: coeffs_k = q_k sqrt(dt) xi_k."""

    coeffs: np.ndarray
    dt: float

    @property
    def k_norm_sq(self):
        """Squared norm of the increment in the covariance space."""
        return float(np.sum(self.coeffs**2))


def sample_increment(noise, rng, dt):
    """Draw a Q-Wiener increment over a step of length dt from a stream."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    xi = gen.standard_normal(noise.k_max)
    return NoiseIncrement(noise.q * np.sqrt(dt) * xi, float(dt))


def apply_noise(noise, gd, v, inc, points=None):
    """Evaluate x -> f0(Pi_D v(x)) * sum_k coeffs_k e_k(x).

    By default the result is sampled at the quadrature points of the
    discretisation, ready for right-hand-side assembly.
    """
    pts = gd.quad_x if points is None else np.atleast_2d(points)
    vals = gd.reconstruct(v) if points is None else gd.reconstruct(v, pts)
    return noise.f0(vals) * (noise.basis.values(pts) @ inc.coeffs)


@dataclass
class GrowthReport:
    n_trials: int
    violations: int
    max_excess: float

    @property
    def passed(self):
        return self.violations == 0


def growth_check(noise, gd, trials=1000, amplitude=1.0, rng_seed=0, slack=1e-10):
    """Verify ||f(v) k||^2 <= F1 ||Pi v||^2 + F2 for random states v and
    random unit elements k of the truncated covariance space."""
    rng = np.random.default_rng(rng_seed)
    E = noise.basis.values(gd.quad_x)  # (n_q, k_max)
    violations = 0
    max_excess = -np.inf
    for _ in range(trials):
        v = amplitude * rng.standard_normal(gd.n_dofs)
        a = rng.standard_normal(noise.k_max)
        a /= np.linalg.norm(a)
        vals = gd.reconstruct(v)
        fk = noise.f0(vals) * (E @ a)
        lhs = float(np.sum(gd.quad_w * fk**2))
        rhs = noise.F1 * float(np.sum(gd.quad_w * vals**2)) + noise.F2
        excess = lhs - rhs
        max_excess = max(max_excess, excess)
        if excess > slack:
            violations += 1
    return GrowthReport(trials, violations, max_excess)
