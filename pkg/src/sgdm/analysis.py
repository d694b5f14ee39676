"""Monte Carlo estimator suite: energy and moment estimators, time-translate
and dual-norm increment statistics, fractional time-regularity norms of
piecewise-constant paths, noise-accumulator statistics, and the exact
single-unknown linear-scheme oracle.

Estimators consume iterables of trajectories and reduce in sample order, so
reports are bit-identical however the samples were produced.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .scheme import run_trajectory


# -- streaming statistics ------------------------------------------------------


@dataclass
class MeanSE:
    mean: float
    se: float
    n: int


class RunningStat:
    """Streaming mean and standard error."""

    def __init__(self):
        self.n = 0
        self.s = 0.0
        self.s2 = 0.0

    def add(self, x):
        x = float(x)
        self.n += 1
        self.s += x
        self.s2 += x * x

    def result(self):
        if self.n == 0:
            return MeanSE(math.nan, math.nan, 0)
        mean = self.s / self.n
        if self.n == 1:
            return MeanSE(mean, 0.0, 1)
        var = max(self.s2 - self.n * mean * mean, 0.0) / (self.n - 1)
        return MeanSE(mean, math.sqrt(var / self.n), self.n)


class RunningVector:
    """Streaming elementwise mean, standard error, sample variance and max."""

    def __init__(self, size):
        self.n = 0
        self.s = np.zeros(size)
        self.s2 = np.zeros(size)
        self.max = np.full(size, -np.inf)

    def add(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        self.s += x
        self.s2 += x * x
        self.max = np.maximum(self.max, x)

    @property
    def mean(self):
        return self.s / self.n

    @property
    def se(self):
        if self.n < 2:
            return np.zeros_like(self.s)
        return np.sqrt(self.variance / self.n)

    @property
    def variance(self):
        if self.n < 2:
            return np.zeros_like(self.s)
        return np.maximum(self.s2 - self.n * self.mean**2, 0.0) / (self.n - 1)

    @property
    def variance_se(self):
        """Standard error of the sample variance under approximate normality."""
        return self.variance * np.sqrt(2.0 / max(self.n - 1, 1))


def loglog_slope(x, y):
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.column_stack([lx, np.ones_like(lx)])
    sol, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(sol[0])


# -- piecewise-constant-in-time paths ------------------------------------------


@dataclass
class TimePath:
    """Function (0, T] -> L^2 that is constant on N uniform intervals.

    ``values[n]`` are the quadrature-point values on (n dt, (n+1) dt];
    ``weights`` are the spatial quadrature weights.
    """

    dt: float
    values: np.ndarray
    weights: np.ndarray

    @property
    def n_intervals(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.dt * self.n_intervals

    def sq_distance_matrix(self):
        """Pairwise squared L^2 distances of the interval values."""
        g = (self.values * self.weights) @ self.values.T
        d = np.diag(g)
        return np.maximum(d[:, None] + d[None, :] - 2.0 * g, 0.0)


def u_path(traj):
    """Time path of the scheme solution (value u^(n+1) on interval n)."""
    gd = traj.sgd.gd
    vals = (gd.P @ traj.u[1:].T).T
    return TimePath(traj.sgd.dt, vals, gd.quad_w)


def m_path(traj):
    """Time path of the accumulated noise sums."""
    return TimePath(traj.sgd.dt, traj.m_partial, traj.sgd.gd.quad_w)


def continuous_translate(path, rho):
    """Exact value of int_0^{T-rho} ||g(t+rho) - g(t)||^2 dt for a
    piecewise-constant path, from the overlap structure of the intervals."""
    T, dt, N = path.T, path.dt, path.n_intervals
    if not 0.0 < rho < T:
        raise ValueError(f"rho must lie in (0, T), got {rho}")
    D2 = path.sq_distance_matrix()
    ell = min(int(rho / dt), N - 1)
    r = rho - ell * dt
    if r >= dt:  # floating point at an interval boundary
        ell, r = ell + 1, 0.0
    total = 0.0
    for n in range(N - ell - 1):
        total += (dt - r) * D2[n + ell, n] + r * D2[n + ell + 1, n]
    total += (dt - r) * D2[N - 1, N - 1 - ell]
    return float(total)


def fractional_norm(path, beta, q_exp=2.0):
    """Slobodeckij-type time-regularity integral of a piecewise-constant path:

        int_0^T ( int_0^{T-rho} ||g(s+rho) - g(s)||^q ds ) rho^(-1-beta q) drho

    i.e. the q-th power of the fractional norm. The inner integral is a
    piecewise-linear function of rho whose breakpoints are the time-grid
    lags; each piece is integrated exactly with the antiderivatives of
    rho^(-1-beta q) and rho^(-beta q).
    """
    if not 0.0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 1/2), got {beta}")
    if q_exp < 1.0:
        raise ValueError(f"q_exp must be >= 1, got {q_exp}")
    c = beta * q_exp
    if c >= 1.0:
        raise ValueError(f"beta * q must be < 1 for piecewise-constant paths, got {c}")
    N, dt = path.n_intervals, path.dt
    D = path.sq_distance_matrix() ** (q_exp / 2.0)

    total = 0.0
    for ell in range(N):
        idx = np.arange(N - ell)
        A = dt * float(np.sum(D[idx + ell, idx])) if ell > 0 else 0.0
        head = np.arange(N - ell - 1)
        B = float(np.sum(D[head + ell + 1, head] - D[head + ell, head])) - D[N - 1, N - 1 - ell]
        a, b = ell * dt, (ell + 1) * dt
        I2 = (b ** (1.0 - c) - a ** (1.0 - c)) / (1.0 - c)
        if ell == 0:
            total += B * I2
        else:
            I1 = (a ** (-c) - b ** (-c)) / c
            total += A * I1 + B * (I2 - a * I1)
    return float(total)


# -- dual norm of reconstructed elements ----------------------------------------


class DualNormSolver:
    """Computes |v|_* = sup { <v, Pi phi> : ||Pi phi||_2 + ||grad phi||_p <= 1 }
    for elements v = Pi w of the reconstructed space.

    For p = 2 the maximizer lies on the one-parameter path
    phi = (M + mu K)^(-1) M w, reducing the sup to a scalar search carried
    out in the generalized eigenbasis of (M, K); this is exact up to the
    scalar-search resolution. For p != 2 a reweighted sequence of such
    solves is used and the best feasible ratio found is returned (a certified
    lower bound).
    """

    _MU_GRID = np.logspace(-9.0, 9.0, 181)

    def __init__(self, gd, p=2.0):
        self.gd = gd
        self.p = p
        M = gd.mass.toarray()
        K = gd.stiffness.toarray()
        lam, Y = sla.eigh(M, K)  # Y^T K Y = I, Y^T M Y = diag(lam)
        self.lam = np.maximum(lam, 0.0)
        self.Y = Y
        self.YM = Y.T @ M

    def _values_at(self, e2, mu):
        # e2: (m, n) squared eigen-coordinates; mu: (m,) per-row parameters
        r = 1.0 / (self.lam[None, :] + mu[:, None])
        num = np.sum(e2 * r, axis=1)
        pi2 = np.sum(e2 * self.lam[None, :] * r * r, axis=1)
        gr2 = np.sum(e2 * r * r, axis=1)
        den = np.sqrt(np.maximum(pi2, 0.0)) + np.sqrt(np.maximum(gr2, 0.0))
        return num / np.maximum(den, 1e-300)

    def batch(self, W):
        """Dual norms of the rows of W (DOF coefficients), p = 2 only."""
        if self.p != 2.0:
            raise ValueError("batch path implemented for p = 2")
        W = np.atleast_2d(np.asarray(W, dtype=float))
        m = len(W)
        e2 = (W @ self.YM.T) ** 2
        grid = self._MU_GRID
        vals = np.column_stack([self._values_at(e2, np.full(m, mu)) for mu in grid])
        best = vals.max(axis=1)
        arg = vals.argmax(axis=1)
        # golden-section refinement on log(mu) around the best grid point
        a = np.log(grid[np.maximum(arg - 1, 0)])
        b = np.log(grid[np.minimum(arg + 1, len(grid) - 1)])
        invphi = (np.sqrt(5.0) - 1.0) / 2.0
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = self._values_at(e2, np.exp(c))
        fd = self._values_at(e2, np.exp(d))
        for _ in range(60):
            go_right = fc < fd
            a = np.where(go_right, c, a)
            b = np.where(go_right, b, d)
            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            fc = self._values_at(e2, np.exp(c))
            fd = self._values_at(e2, np.exp(d))
            best = np.maximum(best, np.maximum(fc, fd))
        return best

    def value(self, w):
        """Dual norm of a single element given by DOF coefficients w."""
        w = np.asarray(w, dtype=float)
        if np.linalg.norm(w) == 0.0:
            return 0.0
        if self.p == 2.0:
            return float(self.batch(w[None, :])[0])
        return self._value_general(w)

    def _value_general(self, w, n_iter=40):
        gd = self.gd
        c = gd.mass @ w

        def ratio(phi):
            den = gd.lp_norm(phi, 2.0) + gd.grad_lp_norm(phi, self.p)
            return abs(c @ phi) / den if den > 0 else 0.0

        # start from the p=2 maximizer
        e2 = (w @ self.YM.T)[None, :] ** 2
        vals = np.array([self._values_at(e2, np.array([mu]))[0] for mu in self._MU_GRID])
        mu0 = self._MU_GRID[vals.argmax()]
        phi = self.Y @ ((self.Y.T @ c) / (self.lam + mu0))
        best = ratio(phi)
        for _ in range(n_iter):
            s = gd.lp_norm(phi, 2.0)
            t = gd.grad_lp_norm(phi, self.p)
            if s <= 0 or t <= 0:
                break
            g = (gd.G @ phi).reshape(gd.mesh.n_cells, gd.dim)
            mag = np.linalg.norm(g, axis=1)
            eps = 1e-14 * max(mag.max(), 1e-300)
            wcell = gd.mesh.cell_measures * (mag + eps) ** (self.p - 2.0)
            H = gd.mass.toarray() / s + (
                gd.G.T @ sp.diags(np.repeat(wcell, gd.dim)) @ gd.G
            ).toarray() * t ** (1.0 - self.p)
            phi_new = np.linalg.solve(H + 1e-300 * np.eye(len(c)), c)
            move = np.linalg.norm(phi_new - phi) / max(np.linalg.norm(phi_new), 1e-300)
            phi = phi_new
            best = max(best, ratio(phi))
            if move < 1e-10:
                break

        # gradient-ascent polish on the ratio itself
        def grad_log_ratio(v):
            s = gd.lp_norm(v, 2.0)
            t = gd.grad_lp_norm(v, self.p)
            g = (gd.G @ v).reshape(gd.mesh.n_cells, gd.dim)
            mag = np.linalg.norm(g, axis=1)
            wcell = gd.mesh.cell_measures * mag ** (self.p - 2.0)
            dden = (gd.mass @ v) / max(s, 1e-300) + gd.G.T @ (
                np.repeat(wcell, gd.dim) * g.ravel()
            ) * max(t, 1e-300) ** (1.0 - self.p)
            return c / (c @ v) - dden / max(s + t, 1e-300)

        from .indicators import _ascend_ratio

        val, _ = _ascend_ratio(
            phi if c @ phi > 0 else -phi,
            lambda v: abs(c @ v) / (gd.lp_norm(v, 2.0) + gd.grad_lp_norm(v, self.p)),
            grad_log_ratio,
            n_iter=200,
        )
        return float(max(best, val))


def dual_norm(gd, w, p=2.0):
    """Dual norm of the reconstructed element Pi w (w are DOF coefficients)."""
    return DualNormSolver(gd, p).value(np.asarray(w, dtype=float))


# -- ensemble estimators ---------------------------------------------------------


@dataclass
class EstimatorReport:
    """Aggregated Monte Carlo statistics of one trajectory ensemble."""

    n_samples: int = 0
    p: float = 2.0
    alpha: float = 0.5
    beta: float = 0.25
    energy_max_l2_sq: MeanSE = None
    grad_lp_p: MeanSE = None
    increment_sum: MeanSE = None
    higher_moments: dict = field(default_factory=dict)
    grad_moments: dict = field(default_factory=dict)
    translate_table: dict = field(default_factory=dict)
    dual_increment_table: dict = field(default_factory=dict)
    martingale_h_beta: MeanSE = None
    martingale_sup_r: MeanSE = None
    martingale_sq_by_step: list = None
    increment_pair_mean: MeanSE = None
    extra: RunningVector = None

    def translate_slope(self, dt):
        ells = sorted(self.translate_table)
        return loglog_slope([ell * dt for ell in ells], [self.translate_table[e].mean for e in ells])

    def dual_slope(self, dt, r):
        ells = sorted(ell for (ell, rr) in self.dual_increment_table if rr == r)
        return loglog_slope(
            [ell * dt for ell in ells],
            [self.dual_increment_table[(e, r)].mean for e in ells],
        )


class EnsembleAccumulator:
    """One-pass computation of the estimator suite over a trajectory stream."""

    def __init__(
        self,
        sgd,
        p,
        moment_qs=(1, 2, 3),
        translate_ells=(1, 2, 4, 8),
        dual_ells=(1, 2, 4, 8),
        dual_r=2,
        beta=0.25,
        martingale_r=2,
        with_dual=True,
        with_martingale=True,
        extra_fn=None,
    ):
        if dual_r < 1 or (dual_r & (dual_r - 1)) != 0:
            raise ValueError(f"dual-norm exponent r must be a power of two, got {dual_r}")
        self.sgd = sgd
        self.p = p
        self.moment_qs = tuple(moment_qs)
        N = sgd.n_steps
        self.translate_ells = tuple(e for e in translate_ells if 1 <= e <= N - 1)
        self.dual_ells = tuple(e for e in dual_ells if 1 <= e <= N - 1)
        self.dual_r = dual_r
        self.beta = beta
        self.martingale_r = martingale_r
        self.with_dual = with_dual
        self.with_martingale = with_martingale
        self._dual = DualNormSolver(sgd.gd, 2.0) if with_dual else None
        gd = sgd.gd
        self._phi_quad = None
        if gd.n_dofs:
            e0 = np.zeros(gd.n_dofs)
            e0[0] = 1.0
            self._phi_quad = gd.P @ e0

        self.extra_fn = extra_fn
        self.extra = None
        self.stats = {
            "energy": RunningStat(),
            "grad": RunningStat(),
            "incr": RunningStat(),
        }
        self.moments = {q: RunningStat() for q in self.moment_qs}
        self.grad_moments = {q: RunningStat() for q in self.moment_qs}
        self.translate = {e: RunningStat() for e in self.translate_ells}
        self.dual = {e: RunningStat() for e in self.dual_ells}
        self.mart_h = RunningStat()
        self.mart_sup = RunningStat()
        self.mart_sq = [RunningStat() for _ in range(N)]
        self.pair_mean = RunningStat()
        self.n_samples = 0

    def summarize(self, traj):
        """Per-sample pathwise quantities; reduction happens in add_summary
        strictly in sample order so reports do not depend on worker count."""
        sgd, gd = self.sgd, self.sgd.gd
        N, dt = sgd.n_steps, sgd.dt
        w = gd.quad_w
        VV = (gd.P @ traj.u.T).T  # (N+1, n_q) node values
        gram = (VV * w) @ VV.T
        d2 = np.maximum(np.diag(gram)[:, None] + np.diag(gram)[None, :] - 2 * gram, 0.0)

        out = {}
        out["max_sq"] = float(np.diag(gram)[1:].max())
        g_all = (gd.G @ traj.u.T).reshape(gd.mesh.n_cells, gd.dim, N + 1)
        mag = np.sqrt(np.sum(g_all**2, axis=1))  # (n_cells, N+1)
        grad_p_by_node = gd.mesh.cell_measures @ mag**self.p
        out["grad_total"] = float(dt * np.sum(grad_p_by_node[1:]))
        out["incr_sum"] = float(np.sum(d2[np.arange(1, N + 1), np.arange(N)]))
        out["translate"] = {}
        for ell in self.translate_ells:
            idx = np.arange(1, N - ell + 1)
            out["translate"][ell] = float(dt * np.sum(d2[idx + ell, idx]))
        if self.with_dual and gd.n_dofs:
            out["dual"] = {}
            for ell in self.dual_ells:
                idx = np.arange(1, N - ell + 1)
                rows = traj.u[idx + ell] - traj.u[idx]
                out["dual"][ell] = float(np.mean(self._dual.batch(rows) ** self.dual_r))
        if self.with_martingale:
            mp = m_path(traj)
            out["mart_h"] = fractional_norm(mp, self.beta, 2.0)
            m_norms_sq = np.sum(w * traj.m_partial**2, axis=1)
            out["m_sq"] = m_norms_sq
            out["mart_sup"] = float(m_norms_sq.max() ** (self.martingale_r / 2.0))
            if self._phi_quad is not None:
                incs = np.diff(
                    traj.m_partial, axis=0, prepend=np.zeros((1, traj.m_partial.shape[1]))
                )
                out["pairs"] = incs @ (w * self._phi_quad)
        if self.extra_fn is not None:
            out["extra"] = np.asarray(self.extra_fn(traj), dtype=float)
        return out

    def add_summary(self, out):
        self.stats["energy"].add(out["max_sq"])
        self.stats["grad"].add(out["grad_total"])
        self.stats["incr"].add(out["incr_sum"])
        for q in self.moment_qs:
            self.moments[q].add(out["max_sq"] ** (2 ** (q - 1)))
            self.grad_moments[q].add(out["grad_total"] ** (2 ** (q - 1)))
        for ell, val in out["translate"].items():
            self.translate[ell].add(val)
        for ell, val in out.get("dual", {}).items():
            self.dual[ell].add(val)
        if self.with_martingale and "mart_h" in out:
            self.mart_h.add(out["mart_h"])
            self.mart_sup.add(out["mart_sup"])
            for n, v in enumerate(out["m_sq"]):
                self.mart_sq[n].add(float(v))
            for v in out.get("pairs", ()):
                self.pair_mean.add(float(v))
        if "extra" in out:
            if self.extra is None:
                self.extra = RunningVector(len(out["extra"]))
            self.extra.add(out["extra"])
        self.n_samples += 1

    def add(self, traj):
        self.add_summary(self.summarize(traj))

    def report(self):
        rep = EstimatorReport(
            n_samples=self.n_samples,
            p=self.p,
            alpha=min(0.5, 1.0 / self.p),
            beta=self.beta,
            energy_max_l2_sq=self.stats["energy"].result(),
            grad_lp_p=self.stats["grad"].result(),
            increment_sum=self.stats["incr"].result(),
            higher_moments={q: s.result() for q, s in self.moments.items()},
            grad_moments={q: s.result() for q, s in self.grad_moments.items()},
            translate_table={e: s.result() for e, s in self.translate.items()},
            dual_increment_table={(e, self.dual_r): s.result() for e, s in self.dual.items()},
        )
        if self.with_martingale:
            rep.martingale_h_beta = self.mart_h.result()
            rep.martingale_sup_r = self.mart_sup.result()
            rep.martingale_sq_by_step = [s.result() for s in self.mart_sq]
            rep.increment_pair_mean = self.pair_mean.result()
        rep.extra = self.extra
        return rep


def iter_trajectories(sgd, flux_model, noise, u0, master_seed, n_samples, cfg=None, start=0):
    """Generate trajectories for consecutive sample indices, reusing one
    stepper (factorizations, dense operators) across the whole ensemble."""
    from .scheme import Stepper

    u0_vec = sgd.gd.interpolate(u0) if callable(u0) else np.asarray(u0, dtype=float)
    stepper = Stepper(sgd, flux_model, noise, cfg)
    for s in range(start, start + n_samples):
        yield run_trajectory(sgd, flux_model, noise, u0_vec, master_seed, s, cfg, _stepper=stepper)


_WORKER_STATE = {}


def _ensemble_worker_init(sgd, flux_model, noise, u0_vec, master_seed, cfg, acc_kwargs):
    from .scheme import Stepper

    _WORKER_STATE["args"] = (sgd, flux_model, noise, u0_vec, master_seed, cfg)
    _WORKER_STATE["stepper"] = Stepper(sgd, flux_model, noise, cfg)
    _WORKER_STATE["acc"] = EnsembleAccumulator(sgd, **acc_kwargs)


def _ensemble_worker_task(sample_index):
    sgd, flux_model, noise, u0_vec, master_seed, cfg = _WORKER_STATE["args"]
    traj = run_trajectory(
        sgd, flux_model, noise, u0_vec, master_seed, sample_index, cfg,
        _stepper=_WORKER_STATE["stepper"],
    )
    return _WORKER_STATE["acc"].summarize(traj)


def run_ensemble(sgd, flux_model, noise, u0, master_seed, n_samples, acc_kwargs=None, cfg=None, workers=1):
    """Run a sample ensemble and reduce it to an EstimatorReport.

    Per-sample summaries are computed independently (optionally in parallel
    workers) and reduced strictly in sample order, so the report is
    bit-identical for any worker count.
    """
    acc_kwargs = dict(acc_kwargs or {})
    acc_kwargs.setdefault("p", flux_model.p)
    acc = EnsembleAccumulator(sgd, **acc_kwargs)
    u0_vec = sgd.gd.interpolate(u0) if callable(u0) else np.asarray(u0, dtype=float)
    if workers <= 1:
        for traj in iter_trajectories(sgd, flux_model, noise, u0_vec, master_seed, n_samples, cfg):
            acc.add(traj)
        return acc.report()
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(
        workers,
        initializer=_ensemble_worker_init,
        initargs=(sgd, flux_model, noise, u0_vec, master_seed, cfg, acc_kwargs),
    ) as pool:
        chunk = max(1, n_samples // (workers * 16))
        for summary in pool.imap(_ensemble_worker_task, range(n_samples), chunksize=chunk):
            acc.add_summary(summary)
    return acc.report()


def energy_estimators(trajs, p, moment_qs=(1, 2, 3)):
    """Plug-in Monte Carlo means with standard errors of the energy-type
    pathwise quantities (max L^2 norm, gradient p-power, increment sum,
    higher moments)."""
    trajs = list(trajs)
    if len(trajs) == 0:
        raise ValueError("need at least one trajectory")
    acc = EnsembleAccumulator(
        trajs[0].sgd, p, moment_qs=moment_qs, translate_ells=(), dual_ells=(),
        with_dual=False, with_martingale=False,
    )
    for t in trajs:
        acc.add(t)
    return acc.report()


def time_translate_estimator(trajs, ells):
    """Monte Carlo table ell -> E[dt * sum_n ||Pi u^(n+ell) - Pi u^(n)||^2]."""
    trajs = list(trajs)
    N = trajs[0].sgd.n_steps
    for ell in ells:
        if not 1 <= ell <= N - 1:
            raise ValueError(f"lag {ell} outside 1..{N - 1}")
    acc = EnsembleAccumulator(
        trajs[0].sgd, trajs[0].flux.p, translate_ells=ells, dual_ells=(),
        with_dual=False, with_martingale=False,
    )
    for t in trajs:
        acc.add(t)
    return acc.report().translate_table


def dual_increment_estimator(trajs, ells, r=2, p=None):
    """Monte Carlo table (ell, r) -> E[ |Pi u^(n+ell) - Pi u^(n)|_*^r ]
    (averaged over n); r must be a power of two."""
    trajs = list(trajs)
    acc = EnsembleAccumulator(
        trajs[0].sgd, p or trajs[0].flux.p, translate_ells=(), dual_ells=ells,
        dual_r=r, with_martingale=False,
    )
    for t in trajs:
        acc.add(t)
    return acc.report().dual_increment_table


def martingale_stats(trajs, beta=0.25, r=2):
    """Fractional-norm and sup statistics of the accumulated noise sums plus
    the zero-mean increment check."""
    trajs = list(trajs)
    acc = EnsembleAccumulator(
        trajs[0].sgd, trajs[0].flux.p, translate_ells=(), dual_ells=(),
        beta=beta, martingale_r=r, with_dual=False,
    )
    for t in trajs:
        acc.add(t)
    return acc.report()


# -- oracles and convergence studies ---------------------------------------------


def ou_exact_moments(mass, stiffness, noise_gain, u0_coeff, dt, n_steps):
    """Exact mean/variance recursion of the single-unknown linear scheme

        u^(n+1) = (m u^n + g sqrt(dt) xi_n) / (m + dt k),

    with m the reconstruction mass, k the gradient stiffness and g the noise
    gain (multiplier constant x spectrum coefficient x basis load)."""
    a = mass / (mass + dt * stiffness)
    b2 = (noise_gain**2) * dt / (mass + dt * stiffness) ** 2
    means = np.empty(n_steps + 1)
    variances = np.empty(n_steps + 1)
    means[0], variances[0] = u0_coeff, 0.0
    for n in range(n_steps):
        means[n + 1] = a * means[n]
        variances[n + 1] = a * a * variances[n] + b2
    return means, variances


def pathwise_lp_difference(traj_coarse, traj_fine, p):
    """Space-time L^p distance of two piecewise-constant scheme solutions on
    nested discretisations (fine time grid refines the coarse one)."""
    gd_f = traj_fine.sgd.gd
    Nf, Nc = traj_fine.sgd.n_steps, traj_coarse.sgd.n_steps
    if Nf % Nc != 0:
        raise ValueError("fine step count must be a multiple of the coarse one")
    ratio = Nf // Nc
    E = traj_coarse.sgd.gd.reconstruction_matrix(gd_f.quad_x)
    total = 0.0
    for j in range(Nf):
        fine_vals = gd_f.P @ traj_fine.u[j + 1]
        coarse_vals = E @ traj_coarse.u[j // ratio + 1]
        total += traj_fine.sgd.dt * float(np.sum(gd_f.quad_w * np.abs(fine_vals - coarse_vals) ** p))
    return total ** (1.0 / p)


def coupled_increments(noise, master_seed, sample_index, n_fine, dt_fine, n_levels):
    """Wiener increments shared across refinement levels: the finest-level
    increments are drawn first, then summed pairwise for each coarser level.
    Returns a list, coarsest first, of (n_steps, k_max) coefficient arrays."""
    from .noise import RngStream, sample_increment

    fine = np.array(
        [
            sample_increment(noise, RngStream(master_seed, sample_index, n + 1), dt_fine).coeffs
            for n in range(n_fine)
        ]
    )
    levels = [fine]
    for _ in range(n_levels - 1):
        prev = levels[-1]
        levels.append(prev.reshape(len(prev) // 2, 2, -1).sum(axis=1))
    return levels[::-1]


def coupled_refinement_study(sgds, flux_model, noise, u0, master_seed, n_samples, p, cfg=None):
    """Mean pathwise L^p(space-time) differences between consecutive
    refinement levels under a common noise path per sample.

    ``sgds`` are space-time discretisations ordered coarse to fine with
    doubling step counts. Returns a list of MeanSE, one per consecutive pair.
    """
    n_levels = len(sgds)
    for a, b in zip(sgds[:-1], sgds[1:]):
        if b.n_steps != 2 * a.n_steps:
            raise ValueError("levels must double the step count")
    stats = [RunningStat() for _ in range(n_levels - 1)]
    n_fine = sgds[-1].n_steps
    for s in range(n_samples):
        incs = coupled_increments(noise, master_seed, s, n_fine, sgds[-1].dt, n_levels)
        trajs = [
            run_trajectory(sgd, flux_model, noise, u0, master_seed, s, cfg, increments=inc)
            for sgd, inc in zip(sgds, incs)
        ]
        for i in range(n_levels - 1):
            stats[i].add(pathwise_lp_difference(trajs[i], trajs[i + 1], p))
    return [st.result() for st in stats]


def deterministic_errors(sgds, flux_model, noise, u0, exact, master_seed=0, cfg=None):
    """Max-in-time L^2 errors against an exact solution (t, points) -> values
    for the noise-free scheme, one per discretisation level."""
    errs = []
    for sgd in sgds:
        traj = run_trajectory(sgd, flux_model, noise, u0, master_seed, 0, cfg)
        gd = sgd.gd
        worst = 0.0
        for n, t in enumerate(sgd.t_grid):
            diff = gd.P @ traj.u[n] - exact(t, gd.quad_x)
            worst = max(worst, math.sqrt(float(np.sum(gd.quad_w * diff**2))))
        errs.append(worst)
    return errs
