"""Implicit Euler steps, full trajectories and their pathwise identities."""

import json

import numpy as np
import pytest

from sgdm import build_gd, build_uniform_interval
from sgdm.flux import custom_flux, linear_diffusion, p_laplace
from sgdm.noise import NoiseIncrement, RngStream, make_noise, sample_increment
from sgdm.scheme import (
    SolverConfig,
    SpaceTimeGD,
    StepFailure,
    energy_identity_residual,
    run_trajectory,
    save_trajectory,
    solve_step,
)

from conftest import sin_pi, zero_field


@pytest.fixture(scope="module")
def setup16():
    gd = build_gd(build_uniform_interval(16, 0.0, 1.0), "p1")
    sgd = SpaceTimeGD(gd, T=0.5, n_steps=16)
    noise = make_noise(gd.mesh.bounding_box, 8, f0="tanh")
    return sgd, noise


class TestSolveStep:
    def test_single_dof_hand_formula(self, single_dof_gd):
        sgd = SpaceTimeGD(single_dof_gd, T=0.1, n_steps=10)
        noise = make_noise(single_dof_gd.mesh.bounding_box, 1, f0="zero")
        u0 = np.array([0.7])
        u1, res, _ = solve_step(sgd, linear_diffusion(), noise, u0, NoiseIncrement(np.zeros(1), sgd.dt))
        m, k = 1.0 / 3.0, 4.0  # hand integration of the hat on two cells
        assert abs(u1[0] - 0.7 * m / (m + sgd.dt * k)) <= 1e-12
        assert res <= 1e-12

    def test_zero_state_zero_increment_fixed_point(self, setup16):
        sgd, noise = setup16
        u0 = np.zeros(sgd.gd.n_dofs)
        inc = NoiseIncrement(np.zeros(noise.k_max), sgd.dt)
        u1, res, _ = solve_step(sgd, p_laplace(3.0), noise, u0, inc)
        np.testing.assert_allclose(u1, 0.0, atol=1e-14)

    def test_p3_residual_and_energy_identity(self, setup16):
        sgd, noise = setup16
        gd = sgd.gd
        rng = np.random.default_rng(8)
        u_n = rng.standard_normal(gd.n_dofs)
        inc = NoiseIncrement(np.zeros(noise.k_max), sgd.dt)
        flux = p_laplace(3.0)
        u1, res, _ = solve_step(sgd, flux, noise, u_n, inc)
        assert res <= 1e-10
        # identity from testing the step equation with u^{n+1}
        from sgdm.scheme import Stepper

        stepper = Stepper(sgd, flux, noise)
        lhs = (
            0.5 * gd.l2_inner(u1, u1)
            + 0.5 * gd.l2_inner(u1 - u_n, u1 - u_n)
            + sgd.dt * float(stepper._flux_vector(u1) @ u1)
        )
        rhs = 0.5 * gd.l2_inner(u_n, u_n)
        assert abs(lhs - rhs) <= 1e-9

    def test_linear_superposition(self, setup16):
        sgd, noise = setup16
        flux = linear_diffusion()
        rng = np.random.default_rng(9)
        u_a, u_b = rng.standard_normal((2, sgd.gd.n_dofs))
        inc_a = sample_increment(noise, RngStream(1, 0, 1), sgd.dt)
        inc_b = sample_increment(noise, RngStream(1, 1, 1), sgd.dt)
        out_a, _, _ = solve_step(sgd, flux, noise, u_a, inc_a)
        out_b, _, _ = solve_step(sgd, flux, noise, u_b, inc_b)
        both, _, _ = solve_step(
            sgd, flux, noise, u_a + u_b, NoiseIncrement(inc_a.coeffs + inc_b.coeffs, sgd.dt)
        )
        # noise multiplier must be state-independent for superposition
        noise_add = make_noise(sgd.gd.mesh.bounding_box, noise.k_max, f0="constant")
        out_a, _, _ = solve_step(sgd, flux, noise_add, u_a, inc_a)
        out_b, _, _ = solve_step(sgd, flux, noise_add, u_b, inc_b)
        both, _, _ = solve_step(
            sgd, flux, noise_add, u_a + u_b, NoiseIncrement(inc_a.coeffs + inc_b.coeffs, sgd.dt)
        )
        np.testing.assert_allclose(both, out_a + out_b, atol=1e-12)

    def test_nonconvergence_carries_best_iterate(self, setup16):
        sgd, noise = setup16
        # a rough start on a strongly nonlinear flux cannot reach 1e-10 in one
        # Newton and one frozen-weight iteration
        cfg = SolverConfig(max_newton=1, max_fixed_point=1)
        rng = np.random.default_rng(10)
        with pytest.raises(StepFailure) as exc:
            solve_step(sgd, p_laplace(6.0), noise, 50.0 * rng.standard_normal(sgd.gd.n_dofs),
                       NoiseIncrement(np.zeros(noise.k_max), sgd.dt), cfg)
        assert exc.value.best_iterate.shape == (sgd.gd.n_dofs,)
        assert exc.value.residual_norm > 0

    def test_trajectory_abort_reports_step(self, setup16):
        sgd, noise = setup16
        cfg = SolverConfig(max_newton=1, max_fixed_point=1)
        big = lambda x: 50.0 * np.sin(np.pi * np.atleast_2d(x)[:, 0])
        with pytest.raises(StepFailure) as exc:
            run_trajectory(sgd, p_laplace(6.0), noise, big, 1, 0, cfg)
        assert exc.value.step_index == 0


class TestTrajectory:
    def test_single_step_equals_solve_step(self, setup16):
        sgd_1 = SpaceTimeGD(setup16[0].gd, T=0.5 / 16, n_steps=1)
        noise = setup16[1]
        flux = p_laplace(3.0)
        traj = run_trajectory(sgd_1, flux, noise, sin_pi, master_seed=3, sample_index=5)
        inc = sample_increment(noise, RngStream(3, 5, 1), sgd_1.dt)
        u1, _, _ = solve_step(sgd_1, flux, noise, traj.u[0], inc)
        np.testing.assert_array_equal(traj.u[1], u1)

    def test_deterministic_in_seed(self, setup16):
        sgd, noise = setup16
        a = run_trajectory(sgd, p_laplace(3.0), noise, sin_pi, 21, 4)
        b = run_trajectory(sgd, p_laplace(3.0), noise, sin_pi, 21, 4)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.m_partial, b.m_partial)

    def test_initial_value_is_interpolant(self, setup16):
        sgd, noise = setup16
        traj = run_trajectory(sgd, linear_diffusion(), noise, sin_pi, 0, 0)
        np.testing.assert_array_equal(traj.u[0], sgd.gd.interpolate(sin_pi))

    def test_residuals_below_tolerance(self, setup16):
        sgd, noise = setup16
        traj = run_trajectory(sgd, p_laplace(3.0), noise, sin_pi, 2, 7)
        assert np.all(traj.per_step_residuals <= 1e-10)

    def test_zero_noise_matches_deterministic(self, setup16):
        sgd, _ = setup16
        silent = make_noise(sgd.gd.mesh.bounding_box, 8, f0="zero")
        loud_off = make_noise(sgd.gd.mesh.bounding_box, 8, q=np.zeros(8), f0="tanh")
        a = run_trajectory(sgd, p_laplace(3.0), silent, sin_pi, 5, 0)
        b = run_trajectory(sgd, p_laplace(3.0), loud_off, sin_pi, 5, 0)
        np.testing.assert_array_equal(a.u, b.u)

    def test_adaptedness_prefix_invariance(self, setup16):
        sgd, noise = setup16
        flux = p_laplace(3.0)
        incs = np.array(
            [sample_increment(noise, RngStream(13, 0, n + 1), sgd.dt).coeffs for n in range(sgd.n_steps)]
        )
        base = run_trajectory(sgd, flux, noise, sin_pi, 13, 0, increments=incs)
        tampered = incs.copy()
        tampered[10:] *= -3.0
        other = run_trajectory(sgd, flux, noise, sin_pi, 13, 0, increments=tampered)
        np.testing.assert_array_equal(base.u[: 10 + 1], other.u[: 10 + 1])
        assert not np.array_equal(base.u[11], other.u[11])

    def test_martingale_partial_sums_start_at_first_increment(self, setup16):
        sgd, noise = setup16
        traj = run_trajectory(sgd, p_laplace(3.0), noise, sin_pi, 17, 2)
        gd = sgd.gd
        inc = sample_increment(noise, RngStream(17, 2, 1), sgd.dt)
        z0 = noise.f0(gd.reconstruct(traj.u[0])) * (noise.basis.values(gd.quad_x) @ inc.coeffs)
        np.testing.assert_allclose(traj.m_partial[0], z0, atol=1e-14)

    def test_energy_identity_residual_small(self, setup16):
        sgd, noise = setup16
        traj = run_trajectory(sgd, p_laplace(3.0), noise, sin_pi, 23, 1)
        bound = 10.0 * 1e-10 * (1.0 + max(np.linalg.norm(traj.u[n]) for n in range(sgd.n_steps + 1)))
        assert energy_identity_residual(traj) <= bound

    def test_energy_identity_zero_path(self, setup16):
        sgd, _ = setup16
        silent = make_noise(sgd.gd.mesh.bounding_box, 2, f0="zero")
        traj = run_trajectory(sgd, p_laplace(3.0), silent, zero_field, 1, 1)
        assert energy_identity_residual(traj) <= 1e-14

    def test_energy_identity_grows_with_loose_tolerance(self, setup16):
        sgd, noise = setup16
        flux = p_laplace(3.0)
        tight = run_trajectory(sgd, flux, noise, sin_pi, 29, 0, SolverConfig(newton_tol=1e-12))
        loose = run_trajectory(sgd, flux, noise, sin_pi, 29, 0, SolverConfig(newton_tol=1e-3))
        assert energy_identity_residual(loose) > energy_identity_residual(tight)

    def test_pathwise_energy_inequality(self, setup16):
        # the summed estimate with the coercivity constant c1 = 1 of the flux
        sgd, noise = setup16
        gd = sgd.gd
        flux = p_laplace(3.0)
        for s in range(5):
            traj = run_trajectory(sgd, flux, noise, sin_pi, 31, s)
            VV = (gd.P @ traj.u.T).T
            norms_sq = np.sum(gd.quad_w * VV**2, axis=1)
            incs_sq = np.sum(gd.quad_w * np.diff(VV, axis=0) ** 2, axis=1)
            grads = np.array([gd.grad_lp_norm(traj.u[n + 1], 3.0) ** 3 for n in range(sgd.n_steps)])
            # noise terms reconstructed from the stored path
            used = traj.increments
            fnorm_sq = np.array(
                [noise.F1 * norms_sq[n] + noise.F2 for n in range(sgd.n_steps)]
            )
            dw_sq = np.sum(used**2, axis=1)
            pair = np.array(
                [
                    np.sum(gd.quad_w * (traj.m_partial[n] - (traj.m_partial[n - 1] if n else 0.0)) * VV[n])
                    for n in range(sgd.n_steps)
                ]
            )
            for k in range(sgd.n_steps):
                lhs = (
                    0.5 * norms_sq[k + 1]
                    + 0.25 * np.sum(incs_sq[: k + 1])
                    + flux.c1 * sgd.dt * np.sum(grads[: k + 1])
                )
                rhs = 0.5 * norms_sq[0] + np.sum(fnorm_sq[: k + 1] * dw_sq[: k + 1]) + np.sum(pair[: k + 1])
                assert lhs <= rhs + 1e-8

    def test_dump_roundtrip(self, setup16, tmp_path):
        sgd, noise = setup16
        traj = run_trajectory(sgd, linear_diffusion(), noise, sin_pi, 37, 0)
        csv = tmp_path / "traj.csv"
        sidecar = tmp_path / "traj.json"
        save_trajectory(traj, csv, sidecar, config_hash="abc")
        lines = csv.read_text().splitlines()
        assert lines[0] == "step,dof_index,value"
        assert len(lines) == 1 + (sgd.n_steps + 1) * sgd.gd.n_dofs
        meta = json.loads(sidecar.read_text())
        assert meta["master_seed"] == 37
        assert meta["config_hash"] == "abc"
        step, dof, value = lines[1 + sgd.gd.n_dofs].split(",")
        assert (int(step), int(dof)) == (1, 0)
        assert float(value) == traj.u[1, 0]
