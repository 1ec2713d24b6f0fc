"""Small worked examples with hand-derived expected values, one per documented case."""

import math

import numpy as np
import pytest
from scipy import optimize, stats

from mkvlan.cli import ExperimentConfig, histogram_table, run
from mkvlan.errors import ModelStructureError
from mkvlan.inference import ContrastData, contrast, estimate, fisher_exact, rate_study
from mkvlan.lan import LocalPerturbation, clt_condition_sums, ks_normal, lan_harness, log_lr_exact, z_field, zeta_hat_diff, zeta_hat_drift
from mkvlan.measure import EmpiricalMeasure, TangentMeasure, integrate_tangent, wasserstein_1d, wasserstein_sliced
from mkvlan.model import MeanFieldOU, MeasureSnapshot, ModelSpec, TanhInteraction, ThetaPair, mean_of, validate_model
from mkvlan.oracle import (conditional_moments_mc, ou_logpdf, ou_scores, ou_transition, ou_variance,
                           taylor_mean_identity_check)
from mkvlan.rng import NoiseStream
from mkvlan.simulate import SimConfig, euler_step, restart_tangents, simulate_particles, simulate_with_tangents

TH = ThetaPair(1.0, 1.0)


class ConstantStub(ModelSpec):
    """``b = theta1 * c`` (or zero) and ``a = a0 I``; ``a0 = 0`` is degenerate."""

    model_id = "constant_stub"
    drift_linear_in_theta1 = True
    scalar_diffusion = True
    depends_on_measure = False

    def __init__(self, c=0.0, a0=0.0, scale_drift=True, cols=None):
        self.c, self.a0, self.scale_drift, self.cols = c, a0, scale_drift, cols

    def drift(self, theta1, x, mu):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, (theta1 if self.scale_drift else 1.0) * self.c)

    def diffusion(self, theta2, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return self.a0 * np.broadcast_to(np.eye(d, self.cols or d), x.shape[:-1] + (d, self.cols or d)).copy()

    def d_drift_dtheta1(self, theta1, x, mu):
        return np.full_like(np.asarray(x, dtype=float), self.c if self.scale_drift else 0.0)

    def d_diffusion_dtheta2(self, theta2, x):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    def grad_x_drift(self, theta1, x, mu):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    def grad_x_diffusion_col(self, theta2, x, r):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    def lfd_drift(self, theta1, x, y, mu):
        return np.zeros(np.shape(x))

    def grad_y_lfd_drift(self, theta1, x, y, mu):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    def initial_law(self, normals):
        return np.zeros_like(normals)

    def ellipticity_bounds(self, theta2):
        return self.a0, self.a0

    def diffusion_scale(self, theta2, x):
        return np.full(np.shape(x)[:-1], self.a0)

    def d_diffusion_scale_dtheta2(self, theta2, x):
        return np.zeros(np.shape(x)[:-1])

    def drift_feature(self, x, mu):
        return np.full_like(np.asarray(x, dtype=float), self.c)


# ---------------------------------------------------------------------------
# model


def test_ou_derivative_checks_are_tight():
    rep = validate_model(MeanFieldOU(kappa=0.0), TH, probes=100)
    for name in ("d_drift_dtheta1", "d_diffusion_dtheta2", "grad_x_drift", "grad_x_diffusion_col"):
        assert rep.get(name).worst < 1e-6


def test_tanh_ellipticity_range():
    rep = validate_model(TanhInteraction(kappa=1.0, eps=0.5), ThetaPair(1.0, 2.0), probes=100)
    lo, hi = rep.get("ellipticity").observed_range
    assert 0.75 * 2.0 - 1e-12 <= lo and hi <= 1.25 * 2.0 + 1e-12
    assert lo < 0.8 * 2.0 and hi > 1.2 * 2.0


def test_non_square_diffusion_is_a_structural_error():
    with pytest.raises(ModelStructureError):
        validate_model(ConstantStub(a0=1.0, cols=2), TH, probes=3)


def test_snapshot_means():
    assert mean_of(MeasureSnapshot(np.array([1.0, 3.0])))[0] == 2.0
    assert mean_of(MeasureSnapshot.dirac([5.0]))[0] == 5.0
    z = np.random.default_rng(0).normal(size=1000)
    assert abs(mean_of(MeasureSnapshot(z))[0]) < 4 / math.sqrt(1000)


# ---------------------------------------------------------------------------
# simulate


def test_euler_step_degenerate_cases():
    mu = MeasureSnapshot.dirac([0.0])
    x = np.array([[0.3]])
    np.testing.assert_array_equal(euler_step(x, mu, TH, 0.1, np.ones((1, 1)), ConstantStub()), x)
    out = euler_step(x, mu, TH, 0.1, np.ones((1, 1)), ConstantStub(c=2.0, scale_drift=False))
    assert out[0, 0] == 0.3 + 0.1 * 2.0


def test_euler_step_mean_on_ou():
    noise = NoiseStream(1).normals(np.arange(100_000), 0, 1)
    out = euler_step(np.zeros((100_000, 1)), MeasureSnapshot.dirac([0.0]), TH, 0.1, noise, MeanFieldOU())
    assert abs(out.mean()) < 4 * math.sqrt(0.1) / math.sqrt(1e5)


def test_degenerate_stub_stays_put():
    g = simulate_particles(SimConfig(5, 4, 1.0, ConstantStub(), TH, allow_degenerate=True))
    assert np.all(g.states == g.states[:, :1])


def test_mean_flow_of_particles():
    N = 4000
    g = simulate_particles(SimConfig(N, 20, 1.0, MeanFieldOU(kappa=0.5, init_mean=1.0, init_std=0.5), TH, seed=2))
    assert abs(g.states[:, -1, 0].mean() - math.exp(-0.5)) < 5 / math.sqrt(N)


def test_zero_forcing_tangents_and_initial_condition():
    _, tan = simulate_with_tangents(SimConfig(4, 3, 1.0, ConstantStub(c=0.0, a0=1.0), TH))
    assert np.all(tan.d_theta1 == 0)
    _, tan = simulate_with_tangents(SimConfig(4, 3, 1.0, TanhInteraction(), TH))
    assert np.all(tan.d_theta2[:, 0] == 0)


def test_tangent_against_crn_difference_at_horizon():
    c = SimConfig(100, 10, 1.0, MeanFieldOU(kappa=0.5, init_mean=1.0), TH, seed=3)
    _, tan = simulate_with_tangents(c)
    e = 1e-4
    fd = (simulate_particles(c.replace(theta=TH.replace(1 + e, 1.0))).states[:, -1]
          - simulate_particles(c.replace(theta=TH.replace(1 - e, 1.0))).states[:, -1]) / (2 * e)
    assert np.linalg.norm(fd - tan.d_theta1[:, -1]) / np.linalg.norm(fd) < 1e-2


def test_restart_block_tangent_is_delta_times_z():
    # over one block the restarted tangent is delta * z up to O(delta^{3/2}) in L2 over particles
    m = MeanFieldOU(kappa=0.5, init_mean=1.0, init_std=0.5)
    errs = []
    for n in (20, 80):
        c = SimConfig(400, n, 1.0, m, TH, seed=4, substeps=8)
        g, tan = simulate_with_tangents(c)
        k = n // 2
        r = restart_tangents(tan, k)
        from mkvlan.oracle import ou_z_field
        z = ou_z_field(1.0, 0.5, 1.0, g.times[k], g.states[:, k])
        errs.append(math.sqrt(np.mean((r.d_theta1[:, k + 1] - g.delta * z) ** 2)))
    # a 4x smaller step shrinks an O(delta^{3/2}) remainder about 8x
    assert errs[0] / errs[1] > 5


def test_restart_reads_zero_at_restart_step():
    _, tan = simulate_with_tangents(SimConfig(6, 5, 1.0, TanhInteraction(), TH))
    r = restart_tangents(tan, 2)
    assert np.all(r.d_theta1[:, 2] == 0)


# ---------------------------------------------------------------------------
# measure


def test_wasserstein_worked_values():
    A = MeasureSnapshot(np.array([0.5, 1.5]))
    assert wasserstein_1d(A, A) == 0.0
    for order in (1, 2, 3):
        assert wasserstein_1d(MeasureSnapshot.dirac([0.0]), MeasureSnapshot.dirac([1.0]), order) == 1.0
    a2, b2 = MeasureSnapshot(np.array([0.0, 1.0])), MeasureSnapshot(np.array([2.0, 5.0]))
    assert wasserstein_1d(a2, b2, 2) == pytest.approx(math.sqrt(10.0), abs=1e-12)


def test_sliced_translation_with_fixed_directions():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(12, 2))
    c = np.array([0.7, -1.2])
    dirs = np.array([[1.0, 0.0], [0.6, 0.8]])
    got = wasserstein_sliced(MeasureSnapshot(A), MeasureSnapshot(A + c), order=2, directions=dirs)
    expected = float(np.mean(np.abs(dirs @ c)))
    assert got == pytest.approx(expected, rel=1e-12)
    assert wasserstein_sliced(MeasureSnapshot(A), MeasureSnapshot(A), directions=dirs) == 0.0


def test_integrate_tangent_simple_cases():
    base = MeasureSnapshot(np.random.default_rng(2).normal(size=(5, 2)))
    ident = lambda y: np.broadcast_to(np.eye(2), y.shape[:1] + (2, 2))
    assert np.all(integrate_tangent(TangentMeasure(base, np.zeros((5, 2))), ident) == 0)
    v = np.array([0.3, -0.2])
    np.testing.assert_allclose(integrate_tangent(TangentMeasure(base, np.tile(v, (5, 1))), ident), v)


def test_mean_tangent_matches_mean_flow_derivative():
    N = 4000
    g, tan = simulate_with_tangents(SimConfig(N, 20, 1.0, MeanFieldOU(kappa=0.5, init_mean=1.0, init_std=0.5),
                                              TH, seed=5))
    tm = TangentMeasure(EmpiricalMeasure(g.states[:, -1]), tan.d_theta1[:, -1])
    got = float(np.squeeze(integrate_tangent(tm, lambda y: np.ones(y.shape))))
    assert abs(got - (-0.5 * math.exp(-0.5))) < 5 / math.sqrt(N)


# ---------------------------------------------------------------------------
# oracle


def test_transition_worked_values():
    tr = ou_transition(TH, 0.0, 0.0, 0.0, [0.0], 0.1)
    assert tr.mean[0] == 0.0
    assert tr.cov[0, 0] == pytest.approx((1 - math.exp(-0.2)) / 2, rel=1e-12)
    assert tr.cov[0, 0] == pytest.approx(0.0906346, abs=1e-7)
    tiny = ou_transition(ThetaPair(1.0, 2.0), 0.0, 0.0, 0.0, [0.4], 1e-12)
    assert tiny.mean[0] == pytest.approx(0.4, rel=1e-11)
    assert tiny.cov[0, 0] == pytest.approx(4e-12, rel=1e-9)
    for dt in (0.01, 0.5, 3.0):
        assert ou_transition(TH, 1.0, 2.0, 0.3, [2.0], dt).mean[0] == pytest.approx(2.0, rel=1e-14)


def test_log_density_worked_values():
    assert float(np.squeeze(ou_logpdf(1.0, 1.0, 0.0, 0.0, 0.0, [[0.0]], [[0.0]], 1e-300))) != 0  # finite guard
    from mkvlan.oracle import GaussianTransition
    g = GaussianTransition(np.zeros(1), np.eye(1))
    assert g.log_density([0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert g.log_density([0.0]) == pytest.approx(-0.918939, abs=1e-6)
    tr = ou_transition(TH, 0.5, 1.0, 0.2, [0.3], 0.1)
    assert tr.log_density(tr.mean + 0.07) == pytest.approx(tr.log_density(tr.mean - 0.07), rel=1e-14)


def test_conditional_moments_stub_and_symmetry():
    est = conditional_moments_mc(ConstantStub(c=2.0, scale_drift=False), TH, 0.0, [0.5], 0.1,
                                 [MeasureSnapshot.dirac([0.0])] * 4, 16, seed=1)
    assert est.mean[0] == pytest.approx(0.5 + 0.2, rel=1e-14) and est.cov[0, 0] == 0.0
    est = conditional_moments_mc(TanhInteraction(dimension=3), TH, 0.0, [0.1, 0.2, 0.3], 0.1,
                                 [MeasureSnapshot(np.zeros((2, 3)))] * 4, 64, seed=2)
    assert np.array_equal(est.cov, est.cov.T) and np.all(np.linalg.eigvalsh(est.cov) >= -1e-15)


def test_conditional_moments_against_oracle():
    m = MeanFieldOU(kappa=0.5, init_mean=1.0)
    from mkvlan.oracle import mean_flow
    h = 0.05 / 32
    path = [MeasureSnapshot.dirac([mean_flow(1.0, 0.5, 1.0, 0.3 + s * h)]) for s in range(32)]
    est = conditional_moments_mc(m, TH, 0.3, [0.2], 0.05, path, 20000, seed=3)
    tr = ou_transition(TH, 0.5, 1.0, 0.3, [0.2], 0.05)
    assert abs(est.mean[0] - tr.mean[0]) < 4 * est.mean_se[0]
    assert abs(est.cov[0, 0] - tr.cov[0, 0]) < 4 * est.cov_se[0, 0]


def test_taylor_identity_worked_values():
    assert taylor_mean_identity_check(TH, (0.0, 1.0), 10, 2, 0.5, 0.1) == 0.0
    assert taylor_mean_identity_check(TH, (1.0, 1.0), 10, 2, 0.5, 0.1, l=0.0) == 0.0
    r1 = taylor_mean_identity_check(TH, (1.0, 0.0), 100, 2, 0.5, 0.1)
    r2 = taylor_mean_identity_check(TH, (1.0, 0.0), 100, 4, 0.5, 0.05)
    assert r1 / r2 == pytest.approx(4.0, rel=0.1)


# ---------------------------------------------------------------------------
# lan


def test_z_field_worked_values():
    m = MeanFieldOU(kappa=0.0)
    mu = EmpiricalMeasure(np.array([[0.1], [0.4]]))
    x = np.array([[0.7], [-0.2]])
    np.testing.assert_allclose(z_field(m, TH, 0.0, x, mu, TangentMeasure(mu, np.ones((2, 1)))), -x)
    # kappa = 0.5 at T = 1 from the particle system with tangents
    N = 4000
    mk = MeanFieldOU(kappa=0.5, init_mean=1.0, init_std=0.5)
    g, tan = simulate_with_tangents(SimConfig(N, 20, 1.0, mk, TH, seed=6))
    mu = EmpiricalMeasure(g.states[:, -1])
    z0 = z_field(mk, TH, 1.0, np.zeros((1, 1)), mu, TangentMeasure(mu, tan.d_theta1[:, -1]))
    assert abs(float(z0[0, 0]) - 0.15163) < 5 / math.sqrt(N)
    # zero velocities leave only the explicit parameter derivative
    t = TanhInteraction(kappa=0.8)
    bare = z_field(t, TH, 0.0, x, mu, TangentMeasure(mu, np.zeros((N, 1))))
    np.testing.assert_allclose(bare, t.d_drift_dtheta1(1.0, x, mu))


def test_drift_score_tracks_exact_score_on_one_transition():
    # single transition, N=1: zeta_hat vs (u/sqrt N) int_0^1 d_theta1 log p dl, L2 gap of order delta
    m = MeanFieldOU(kappa=0.0)
    gaps = []
    for n in (10, 40):
        delta = 1.0 / n
        x0 = 0.8
        rng = np.random.default_rng(7)
        y = ou_transition(TH, 0.0, 0.0, 0.0, [x0], delta).mean[0] + math.sqrt(ou_variance(1, 1, delta)) * rng.normal(size=10_000)
        from mkvlan.simulate import TrajectoryGrid
        g = TrajectoryGrid(np.array([[[x0], [0.0]]]), delta)
        p = LocalPerturbation(TH, 1.0, 0.0, 1, delta)
        zh = zeta_hat_drift(g, None, p, m, next_states=y[:, None, None, None])[:, 0, 0]
        nodes, w = np.polynomial.legendre.leggauss(8)
        ex = np.zeros_like(y)
        for l, wl in zip(0.5 * (nodes + 1), 0.5 * w):
            s1, _ = ou_scores(1.0 + l, 1.0, 0.0, 0.0, 0.0, np.full((y.size, 1), x0), y[:, None], delta)
            ex += wl * np.ravel(s1)
        gaps.append(math.sqrt(np.mean((zh - ex) ** 2)))
    assert gaps[1] < gaps[0] / 2.5


def test_diffusion_score_spot_value():
    # d = 1, a = theta2: integrand (1 / theta2(l)^3) ((dX - dm)^2 - V), scaled by v / sqrt(N delta)
    m = MeanFieldOU(kappa=0.0)
    from mkvlan.simulate import TrajectoryGrid
    delta, x0, x1 = 0.1, 1.0, 0.9
    g = TrajectoryGrid(np.array([[[x0], [x1]]]), delta)
    p = LocalPerturbation(TH, 0.0, 1.0, 1, delta)
    got = float(zeta_hat_diff(g, p, m, quadrature_order=12)[0, 0])
    mean = math.exp(-delta) * x0

    def integrand(l):
        t2 = 1.0 + l * math.sqrt(delta)
        return ((x1 - mean) ** 2 - t2**2 * (1 - math.exp(-2 * delta)) / 2) / t2**3

    from scipy.integrate import quad
    assert got == pytest.approx(quad(integrand, 0, 1)[0] / math.sqrt(delta), rel=1e-10)


def test_log_lr_worked_values():
    from mkvlan.simulate import TrajectoryGrid
    m = MeanFieldOU(kappa=0.0)
    g = TrajectoryGrid(np.array([[[1.0], [0.9]]]), 0.1)
    p = LocalPerturbation(TH, 1.0, 0.0, 1, 0.1)
    ref = (ou_transition(ThetaPair(2.0, 1.0), 0, 0, 0, [1.0], 0.1).log_density([0.9])
           - ou_transition(TH, 0, 0, 0, [1.0], 0.1).log_density([0.9]))
    assert log_lr_exact(g, TH, p, m) == pytest.approx(ref, rel=1e-12)
    assert log_lr_exact(g, TH, LocalPerturbation(TH, 0.0, 0.0, 1, 0.1), m) == 0.0
    big = simulate_particles(SimConfig(50, 10, 1.0, MeanFieldOU(kappa=0.5, init_mean=1.0), TH, scheme="exact"))
    q = LocalPerturbation.for_grid(TH, 1.0, 1.0, big)
    fwd = log_lr_exact(big, TH, q, MeanFieldOU(kappa=0.5, init_mean=1.0))
    back = log_lr_exact(big, q.theta_plus, q.reversed(), MeanFieldOU(kappa=0.5, init_mean=1.0))
    assert fwd == pytest.approx(-back, rel=1e-12)


def test_zero_perturbation_harness():
    rep = lan_harness(SimConfig(30, 5, 1.0, MeanFieldOU(), TH, scheme="exact"), (0.0, 0.0), 5, seed=1)
    assert np.all(rep.z_values == 0)
    assert ks_normal(rep.z_values, 0.0, rep.sigma2_target) == (0.0, 1.0)
    assert histogram_table(rep.z_values, 0.0, 0.0) == [(0.0, 5, 1.0)]


@pytest.mark.slow
def test_drift_only_lan_limit():
    m = MeanFieldOU(kappa=0.0, init_std=math.sqrt(0.5))
    rep = lan_harness(SimConfig(2000, 50, 1.0, m, TH, scheme="exact"), (1.0, 0.0), 500, seed=21)
    assert abs(rep.mean + 0.25) < 3 * rep.se_mean
    assert abs(rep.var - 0.5) < 0.15 * 0.5


def test_clt_sums_trivial_cases():
    g = simulate_particles(SimConfig(20, 4, 1.0, MeanFieldOU(), TH, scheme="exact"))
    zero = clt_condition_sums(g, LocalPerturbation.for_grid(TH, 0.0, 0.0, g), MeanFieldOU(), 8, seed=1)
    assert np.all(zero.values == 0)
    drift = clt_condition_sums(g, LocalPerturbation.for_grid(TH, 1.0, 0.0, g), MeanFieldOU(), 8, seed=1)
    assert np.all(drift.values[3:] == 0)


# ---------------------------------------------------------------------------
# inference


def test_contrast_on_drift_exact_data():
    m = ConstantStub(c=0.5, a0=0.7)
    X = np.cumsum(np.full((3, 6, 1), 0.1 * 1.3 * 0.5), axis=1)
    from mkvlan.simulate import TrajectoryGrid
    g = TrajectoryGrid(X, 0.5)
    assert contrast(g, ThetaPair(1.3, 1.0), m) == pytest.approx(5 * 3 * math.log(0.49), rel=1e-12)


def test_profile_vertex_matches_numerical_minimiser():
    m = TanhInteraction(kappa=0.6)
    g = simulate_particles(SimConfig(60, 20, 1.0, m, TH, seed=8))
    data = ContrastData(g, m)
    vertex = data.profile_theta1(1.0, (-10, 10))
    res = optimize.minimize_scalar(lambda t: data.value(t, 1.0), bracket=(0.0, 2.0), tol=1e-12)
    assert vertex == pytest.approx(res.x, abs=1e-8)


@pytest.mark.slow
def test_contrast_identifies_truth_against_box_corners():
    m = MeanFieldOU(kappa=0.5, init_mean=1.0, init_std=0.7)
    corners = [(-10, 1e-3), (-10, 10), (10, 1e-3), (10, 10)]
    wins = 0
    for r in range(100):
        g = simulate_particles(SimConfig(1000, 50, 1.0, m, TH, seed=r, scheme="exact"))
        c0 = contrast(g, TH, m)
        wins += all(c0 < contrast(g, ThetaPair(*c), m) for c in corners)
    assert wins >= 95


def test_estimate_from_truth_on_noiseless_drift_data():
    # zero diffusion is outside the box, so "noiseless" means noise-balanced: see test_inference
    from test_inference import balanced_grid
    g = balanced_grid(1.0, 0.5, 40, 10, seed=9)
    res = estimate(g, MeanFieldOU(kappa=0.5), ThetaPair(1.0, 0.5))
    assert res.converged
    assert res.theta_hat.theta1 == pytest.approx(1.0, abs=1e-8)
    assert res.theta_hat.theta2 == pytest.approx(0.5, abs=1e-7)


@pytest.mark.slow
def test_estimate_within_efficiency_yardstick():
    m = MeanFieldOU(kappa=0.0, init_std=MeanFieldOU.stationary_std(1.0, 0.5))
    th = ThetaPair(1.0, 0.5)
    info = fisher_exact(m, th, 1.0)
    N, delta = 1000, 1 / 50
    # The Euler contrast on exactly simulated data shrinks theta2 by about theta2 * delta / 2,
    # which is comparable to the 3 SD band for theta2; this check is kept at full strength.
    hits = 0
    for r in range(100):
        g = simulate_particles(SimConfig(N, 50, 1.0, m, th, seed=r, scheme="exact"))
        est = estimate(g, m, th).theta_hat
        hits += (abs(est.theta1 - 1) < 3 / math.sqrt(N * info.sigma_b)
                 and abs(est.theta2 - 0.5) < 3 * math.sqrt(delta / N) / math.sqrt(info.sigma_a))
    assert hits >= 95


def test_far_apart_starts_agree():
    m = TanhInteraction(kappa=0.6)
    g = simulate_particles(SimConfig(100, 20, 1.0, m, TH, seed=10))
    a = estimate(g, m, ThetaPair(-5.0, 0.05)).theta_hat
    b = estimate(g, m, ThetaPair(8.0, 7.0)).theta_hat
    assert a.theta1 == pytest.approx(b.theta1, abs=1e-6) and a.theta2 == pytest.approx(b.theta2, abs=1e-6)


@pytest.mark.slow
def test_rmse_rates_per_tier():
    m = MeanFieldOU(kappa=0.0, init_std=math.sqrt(0.5))
    rep = rate_study(m, TH, [250, 1000], {250: 50, 1000: 50}, 150, seed=12)
    assert rep.rows[0].rmse_theta1 / rep.rows[1].rmse_theta1 == pytest.approx(2.0, rel=0.25)
    rep = rate_study(m, TH, [300, 301], {300: 50, 301: 100}, 150, seed=13)
    assert rep.rows[1].rmse_theta2 / rep.rows[0].rmse_theta2 == pytest.approx(1 / math.sqrt(2), rel=0.25)


def test_single_replication_rmse():
    m = MeanFieldOU(kappa=0.5, init_mean=1.0)
    rep = rate_study(m, TH, [30], {30: 5}, 1, seed=3)
    g = simulate_particles(SimConfig(30, 5, 1.0, m, TH, seed=__import__("mkvlan.rng").rng.derive_seed(3, 30, 0),
                                     scheme="exact"))
    est = estimate(g, m, TH).theta_hat
    assert rep.rows[0].rmse_theta1 == pytest.approx(abs(est.theta1 - 1.0), rel=1e-12)


# ---------------------------------------------------------------------------
# runner


def test_unknown_model_id_exits_1(tmp_path, capsys):
    from mkvlan.cli import main
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nseed = 1\n[model]\nid = mystery\n")
    assert main(["--config", str(ini), "--out", str(tmp_path / "o")]) == 1
    assert "model.id" in capsys.readouterr().err


def test_lan_check_smoke_and_rerun(tmp_path):
    cfg = ExperimentConfig.from_mapping({
        "run": {"subcommand": "lan-check", "seed": 4},
        "model": {"id": "mean_field_ou"},
        "sim": {"n_particles": 100, "n_steps": 10, "scheme": "exact"},
        "experiment": {"replications": 10}})
    quiet = lambda *a, **k: None
    assert run(cfg, tmp_path / "a", threads=1, log=quiet) == 0
    assert run(cfg, tmp_path / "b", threads=1, log=quiet) == 0
    import json
    assert "ks_pvalue" in json.loads((tmp_path / "a" / "lan_report.json").read_text())
    for name in ("lan_replications.csv", "z_histogram.csv", "z_qq.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_histogram_of_500_values():
    z = np.random.default_rng(3).normal(-1.25, math.sqrt(2.5), 500)
    rows = histogram_table(z, -1.25, 2.5)
    assert len(rows) == 30
    width = (z.max() - z.min()) / 30
    assert rows[0][0] - width / 2 == pytest.approx(z.min()) and rows[-1][0] + width / 2 == pytest.approx(z.max())
    assert abs(sum(r[2] for r in rows) * width - 1.0) < 1e-6


def test_empty_histogram_csv_is_header_only(tmp_path):
    from mkvlan.cli import OutputSet, emit_plot_data
    from mkvlan.lan import LanReport
    out = OutputSet(tmp_path, "csv")
    out.prepare()
    emit_plot_data(LanReport({}, 1.0, 1.0, 0.5, 2.0, np.zeros(0)), out)
    assert (tmp_path / "z_histogram.csv").read_text() == "bin_center,count,target_density\n"
    assert (tmp_path / "z_qq.csv").read_text() == "theoretical,sample\n"
