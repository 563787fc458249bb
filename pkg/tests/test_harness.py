"""Closed-loop harness tests: trajectory evaluation, episode oracles, tracking
metrics, the training loop and the controller comparison."""

import math
from dataclasses import replace

import numpy as np
import pytest

from immunepd import (EpisodeConfig, Gains, ImmunePidBaselineParams,
                      IntegrationError, LumpedParams, NetTopology,
                      NominalParams, PlantState, SuppressorNet, Trajectory,
                      TrainingDiverged, apply_update, bptt_deltas, compare,
                      cost, eval_trajectory, init_weights, metrics,
                      run_episode, train, tune_baseline, weight_gradient)

LP = LumpedParams(a2=7.6, a1=0.0234, a0=0.26)
NOM = NominalParams(a2=7.6, a1=0.0234)
G = Gains(kp=100.0, kd=20.0)


def cfg_for(controller, tf=1.0, dt=1e-3, x0=PlantState(0.0, 0.0),
            traj=Trajectory(kind="sinusoid"), suppressor_on=True):
    return EpisodeConfig(t0=0.0, tf=tf, dt=dt, x0=x0, controller=controller,
                         suppressor_on=suppressor_on, trajectory=traj)


# ------------------------------------------------------------- trajectories

def test_sinusoid_at_zero():
    traj = Trajectory(kind="sinusoid", amplitude=2.0, omega=3.0)
    pos, vel, acc = eval_trajectory(traj, 0.0)
    assert pos == 0.0
    assert vel == pytest.approx(6.0)
    assert acc == 0.0


def test_constant_trajectory():
    traj = Trajectory(kind="constant", value=0.7)
    for t in (0.0, 1.3, 10.0):
        assert eval_trajectory(traj, t) == (0.7, 0.0, 0.0)


def test_smooth_step_endpoints():
    traj = Trajectory(kind="smooth-step", target=0.5, rise_time=2.0)
    assert eval_trajectory(traj, 0.0) == (0.0, 0.0, 0.0)
    pos, vel, acc = eval_trajectory(traj, 2.0)
    assert (pos, vel, acc) == (0.5, 0.0, 0.0)
    assert eval_trajectory(traj, 5.0) == (0.5, 0.0, 0.0)
    mid = eval_trajectory(traj, 1.0)
    assert mid[0] == pytest.approx(0.25)  # half target at half rise time


@pytest.mark.parametrize("traj", [
    Trajectory(kind="sinusoid", amplitude=1.3, omega=2.1),
    Trajectory(kind="smooth-step", target=0.8, rise_time=1.5),
    Trajectory(kind="constant", value=-0.4),
])
def test_trajectory_derivative_consistency(traj):
    # central differences of the position reproduce the stated derivatives
    # at second order
    hs = (1e-3, 5e-4)
    for t in (0.31, 0.77, 1.24):
        errs_v, errs_a = [], []
        for h in hs:
            pm = eval_trajectory(traj, t - h)[0]
            p0, v0, a0 = eval_trajectory(traj, t)
            pp = eval_trajectory(traj, t + h)[0]
            errs_v.append(abs((pp - pm) / (2 * h) - v0))
            errs_a.append(abs((pp - 2 * p0 + pm) / h ** 2 - a0))
        assert errs_v[0] < 1e-5 and errs_a[0] < 1e-4
        # quadratic shrink unless already at rounding noise
        if errs_v[0] > 1e-12:
            assert errs_v[1] < 0.5 * errs_v[0]


def test_trajectory_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        Trajectory(kind="ramp")


def test_episode_config_validation():
    with pytest.raises(ValueError, match="dt"):
        cfg_for("pd-only", dt=-1.0)
    with pytest.raises(ValueError, match="tf"):
        EpisodeConfig(t0=1.0, tf=0.5, dt=1e-3, x0=PlantState(0, 0))
    with pytest.raises(ValueError, match="positive integer"):
        EpisodeConfig(t0=0.0, tf=1.0, dt=0.3, x0=PlantState(0, 0))
    with pytest.raises(ValueError, match="controller"):
        cfg_for("fuzzy")


# ----------------------------------------------------------------- episodes

def test_oracle_holds_gravity_compensated_equilibrium():
    # start exactly on a constant target: oracle compensation keeps e
    # identically zero
    cfg = cfg_for("oracle-compensation", traj=Trajectory(kind="constant", value=0.3),
                  x0=PlantState(0.3, 0.0))
    log = run_episode(cfg, LP, NOM, G)
    assert np.all(log.e == 0.0)
    assert np.all(log.theta == 0.3)


@pytest.fixture(scope="module")
def oracle_log():
    # e(0) = 0.1, e_dot(0) = 0 against a constant zero target
    cfg = cfg_for("oracle-compensation", tf=1.0, dt=1e-4,
                  x0=PlantState(-0.1, 0.0),
                  traj=Trajectory(kind="constant", value=0.0))
    return run_episode(cfg, LP, NOM, G)


def test_oracle_matches_critically_damped_solution(oracle_log):
    analytic = (0.1 + oracle_log.t) * np.exp(-10.0 * oracle_log.t)
    assert np.max(np.abs(oracle_log.e - analytic)) < 1e-9


def test_oracle_log_identities(oracle_log):
    log = oracle_log
    assert np.array_equal(log.v, log.v_h - log.v_s)  # exact decomposition
    assert np.array_equal(log.e, log.theta_d - log.theta)
    assert np.max(np.abs(log.d + log.v_s)) < 1e-12  # v_s cancels d exactly
    assert np.array_equal(log.E, G.kd * log.e_dot + G.kp * log.e)


def test_oracle_residual_shrinks_quadratically():
    # the residual a2_hat*(e_dd + kd*e_d + kp*e), reconstructed from the
    # logged e by central differences, is pure reconstruction error: O(dt^2)
    def residual(dt):
        cfg = cfg_for("oracle-compensation", tf=1.0, dt=dt,
                      x0=PlantState(-0.1, 0.0),
                      traj=Trajectory(kind="constant", value=0.0))
        log = run_episode(cfg, LP, NOM, G)
        e = log.e
        edd = (e[2:] - 2 * e[1:-1] + e[:-2]) / dt ** 2
        ed = (e[2:] - e[:-2]) / (2 * dt)
        res = NOM.a2 * (edd + G.kd * ed + G.kp * e[1:-1])
        return np.max(np.abs(res))

    r1, r2 = residual(1e-3), residual(5e-4)
    assert r1 < 5e-3
    assert 3.0 < r1 / r2 < 5.5


def test_pd_only_refinement_fourth_order():
    # suppressor-off closed loop against a 10x finer reference
    def final_theta(dt):
        cfg = cfg_for("pd-only", tf=1.0, dt=dt,
                      traj=Trajectory(kind="sinusoid"))
        return run_episode(cfg, LP, NOM, G).theta_end

    diffs = [abs(final_theta(dt) - final_theta(dt / 10))
             for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(diffs[i] / diffs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


def test_pure_feedforward_exactness():
    # no disturbance at all (a0 = 0, nominal exact) and zero initial error:
    # tracking stays below 1e-8 over the whole episode
    lp = LumpedParams(a2=7.6, a1=0.0234, a0=0.0)
    cfg = cfg_for("pd-only", tf=10.0, x0=PlantState(0.0, 1.0),
                  traj=Trajectory(kind="sinusoid"))
    log = run_episode(cfg, lp, NOM, G)
    assert np.max(np.abs(log.e)) < 1e-8
    assert abs(log.e_end) < 1e-8


def test_episode_determinism_bit_identical():
    topo = NetTopology(p=4)
    net = SuppressorNet(topo, init_weights(topo, 0.3, 5))
    cfg = cfg_for("neural-immune-pd", tf=2.0)
    a = run_episode(cfg, LP, NOM, G, net=net)
    b = run_episode(cfg, LP, NOM, G, net=net)
    for name in ("t", "theta_d", "theta", "e", "e_dot", "v", "v_h", "v_s", "E", "d"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.theta_end == b.theta_end


def test_neural_decomposition_and_error_columns():
    topo = NetTopology(p=3)
    net = SuppressorNet(topo, init_weights(topo, 0.4, 8))
    log = run_episode(cfg_for("neural-immune-pd", tf=1.0), LP, NOM, G, net=net)
    assert np.array_equal(log.v, log.v_h - log.v_s)
    assert np.any(log.v_s != 0.0)
    assert np.array_equal(log.e, log.theta_d - log.theta)


def test_baseline_episode_runs_and_logs():
    bp = ImmunePidBaselineParams(K0=1.0, eta=0.3, sigma=1.0,
                                 kp_i=760.0, ki_i=300.0, kd_i=152.0)
    log = run_episode(cfg_for("immune-pid-baseline", tf=2.0), LP, NOM, G,
                      baseline=bp)
    assert np.array_equal(log.v, log.v_h - log.v_s)
    assert np.all(log.v_s == 0.0)  # baseline owns the whole voltage
    assert metrics(log).rmse < 0.5


def test_episode_requires_controller_inputs():
    with pytest.raises(ValueError, match="net"):
        run_episode(cfg_for("neural-immune-pd"), LP, NOM, G)
    with pytest.raises(ValueError, match="baseline"):
        run_episode(cfg_for("immune-pid-baseline"), LP, NOM, G)


def test_unstable_loop_raises():
    cfg = cfg_for("pd-only", tf=60.0, dt=1.0,
                  traj=Trajectory(kind="constant", value=1.0))
    with pytest.raises(IntegrationError):
        run_episode(cfg, LP, NOM, Gains(kp=1e6, kd=2e3))


# ------------------------------------------------------------------ metrics

def test_metrics_zero_error():
    cfg = cfg_for("oracle-compensation", traj=Trajectory(kind="constant", value=0.3),
                  x0=PlantState(0.3, 0.0))
    m = metrics(run_episode(cfg, LP, NOM, G))
    assert m.rmse == 0.0
    assert m.max_abs_e == 0.0
    assert m.settle_time == 0.0


def test_metrics_constant_error_rmse():
    log = run_episode(cfg_for("pd-only", tf=0.01), LP, NOM, G)
    log.e[:] = 0.1
    m = metrics(log)
    assert m.rmse == pytest.approx(0.1)
    assert m.max_abs_e == pytest.approx(0.1)


def test_metrics_settle_time_never_inside_band():
    log = run_episode(cfg_for("pd-only", tf=0.01), LP, NOM, G)
    log.theta_d[:] = 1.0
    log.e[:] = 0.5
    assert metrics(log).settle_time == math.inf


def test_metrics_rmse_matches_analytic_integral(oracle_log):
    # closed form of the mean of (0.1 + t)^2 exp(-20 t) over [0, 1]
    lam = 20.0
    c = 0.1

    def antider(t):
        q = (c + t) ** 2 / lam + 2 * (c + t) / lam ** 2 + 2 / lam ** 3
        return -math.exp(-lam * t) * q

    mean_sq = antider(1.0) - antider(0.0)
    assert metrics(oracle_log).rmse == pytest.approx(math.sqrt(mean_sq), rel=1e-3)


# ----------------------------------------------------------------- training

def short_cfg():
    return cfg_for("neural-immune-pd", tf=0.5, x0=PlantState(0.0, 1.0))


def test_train_eta_zero_keeps_cost_and_weights():
    topo = NetTopology(p=3)
    rep = train(short_cfg(), LP, NOM, G, topo, epochs=3, eta=0.0, seed=4)
    assert np.all(rep.costs == rep.costs[0])
    assert np.array_equal(rep.net.weights, init_weights(topo, 0.3, 4))


def test_train_single_epoch_equals_manual_composition():
    topo = NetTopology(p=4)
    cfg = short_cfg()
    init_scale, seed, eta = 0.25, 11, 1e-3
    rep = train(cfg, LP, NOM, G, topo, epochs=1, eta=eta, seed=seed,
                init_scale=init_scale)

    W0 = init_weights(topo, init_scale, seed)
    log = run_episode(cfg, LP, NOM, G, net=SuppressorNet(topo, W0),
                      record_net=True)
    E = log.error_series(G)
    deltas = bptt_deltas(topo, W0, log.x_traj, log.s_traj, E)
    W1 = apply_update(W0, weight_gradient(deltas, log.x_traj), eta)
    assert np.array_equal(rep.net.weights, W1)
    assert rep.costs[0] == cost(E)


def test_train_reports_are_deterministic():
    topo = NetTopology(p=3)
    r1 = train(short_cfg(), LP, NOM, G, topo, epochs=4, eta=1e-3, seed=2)
    r2 = train(short_cfg(), LP, NOM, G, topo, epochs=4, eta=1e-3, seed=2)
    assert np.array_equal(r1.costs, r2.costs)
    assert np.array_equal(r1.net.weights, r2.net.weights)


def test_train_error_sign_flips_update_direction():
    topo = NetTopology(p=3)
    rp = train(short_cfg(), LP, NOM, G, topo, epochs=1, eta=1e-3, seed=3,
               error_sign=1)
    rm = train(short_cfg(), LP, NOM, G, topo, epochs=1, eta=1e-3, seed=3,
               error_sign=-1)
    W0 = init_weights(topo, 0.3, 3)
    assert np.allclose(rp.net.weights - W0, -(rm.net.weights - W0))


def test_train_divergence_detected():
    topo = NetTopology(p=6)
    with pytest.raises((TrainingDiverged, IntegrationError)):
        train(cfg_for("neural-immune-pd", tf=2.0, x0=PlantState(0.0, 0.0)),
              LP, NOM, G, topo, epochs=30, eta=10.0, seed=0)


def test_train_rejects_bad_arguments():
    topo = NetTopology(p=2)
    with pytest.raises(ValueError, match="epochs"):
        train(short_cfg(), LP, NOM, G, topo, epochs=0, eta=1e-3, seed=0)
    with pytest.raises(ValueError, match="error_sign"):
        train(short_cfg(), LP, NOM, G, topo, epochs=1, eta=1e-3, seed=0,
              error_sign=2)


# --------------------------------------------------------------- comparison

def test_identical_episodes_give_identical_metrics():
    topo = NetTopology(p=3)
    net = SuppressorNet(topo, init_weights(topo, 0.2, 6))
    cfg = cfg_for("neural-immune-pd", tf=1.0)
    m1 = metrics(run_episode(cfg, LP, NOM, G, net=net))
    m2 = metrics(run_episode(cfg, LP, NOM, G, net=net))
    assert m1 == m2


def test_oracle_beats_pd_only():
    # start on the trajectory so the rmse difference is purely the
    # uncompensated vs cancelled disturbance
    traj = Trajectory(kind="sinusoid")
    x0 = PlantState(0.0, 1.0)
    pd = metrics(run_episode(cfg_for("pd-only", tf=5.0, traj=traj, x0=x0),
                             LP, NOM, G))
    orc = metrics(run_episode(cfg_for("oracle-compensation", tf=5.0, traj=traj,
                                      x0=x0), LP, NOM, G))
    assert orc.rmse <= pd.rmse
    assert orc.rmse < 1e-6 < pd.rmse


def test_compare_pairs_logs_and_metrics():
    topo = NetTopology(p=3)
    net = SuppressorNet(topo, init_weights(topo, 0.2, 6))
    bp = ImmunePidBaselineParams(K0=1.0, eta=0.3, sigma=1.0,
                                 kp_i=760.0, ki_i=300.0, kd_i=152.0)
    cfg = cfg_for("neural-immune-pd", tf=2.0)
    result = compare(cfg, LP, NOM, G, net, bp)
    assert len(result.neural_log) == len(result.baseline_log) == 2000
    assert result.neural_metrics == metrics(result.neural_log)
    assert result.baseline_metrics == metrics(result.baseline_log)
    # identical trajectory and initial state on both sides
    assert np.array_equal(result.neural_log.theta_d, result.baseline_log.theta_d)
    assert result.neural_log.theta[0] == result.baseline_log.theta[0]


def test_tune_baseline_picks_lowest_rmse_point():
    cfg = cfg_for("immune-pid-baseline", tf=2.0)
    inner = (760.0, 300.0, 152.0)
    best = tune_baseline(cfg, LP, NOM, G, inner,
                         k0_grid=(0.5, 1.0), eta_grid=(0.0, 0.3),
                         sigma_grid=(1.0,))
    rmses = {}
    for K0 in (0.5, 1.0):
        for eta in (0.0, 0.3):
            bp = ImmunePidBaselineParams(K0=K0, eta=eta, sigma=1.0,
                                         kp_i=inner[0], ki_i=inner[1], kd_i=inner[2])
            log = run_episode(cfg, LP, NOM, G, baseline=bp)
            rmses[(K0, eta)] = metrics(log).rmse
    assert rmses[(best.K0, best.eta)] == min(rmses.values())


# ------------------------------------------------------------------- CSV

def test_episode_csv_format(tmp_path):
    log = run_episode(cfg_for("pd-only", tf=0.01), LP, NOM, G)
    path = tmp_path / "episode.csv"
    log.write_csv(path)
    text = path.read_text()
    lines = text.splitlines()
    assert lines[0] == "t,theta_d,theta,e,e_dot,v,v_h,v_s,E,d"
    assert len(lines) == 11
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert np.allclose(data["theta"], log.theta, rtol=0, atol=0)
    # byte-identical on re-run
    log2 = run_episode(cfg_for("pd-only", tf=0.01), LP, NOM, G)
    path2 = tmp_path / "episode2.csv"
    log2.write_csv(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_train_csv_format(tmp_path):
    rep = train(short_cfg(), LP, NOM, G, NetTopology(p=2), epochs=2,
                eta=1e-3, seed=0)
    path = tmp_path / "train.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,J,rmse,max_abs_e"
    assert len(lines) == 4  # epochs 0..2
    assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 1, 2]
