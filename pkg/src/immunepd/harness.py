"""Closed-loop episode execution, training loop, metrics and comparison.

An episode integrates the plant under one of four controllers:

  pd-only              helper voltage alone (suppressor forced to zero)
  oracle-compensation  helper plus the exact equivalent disturbance, which
                       cancels it and leaves the ideal error dynamics
                       e_dd + kd*e_d + kp*e = 0
  neural-immune-pd     helper minus the recurrent suppressor output
  immune-pid-baseline  the reconstructed immune PID controller

The two analytic feedback modes (pd-only, oracle-compensation) are pure
functions of time and state, so their control law is evaluated inside the
Runge-Kutta stages and the closed loop integrates at full 4th order.  The
sampled modes (neural, baseline) compute one voltage per step and hold it
over the step (zero-order hold), matching the discrete-time training
algorithm.  Logged rows always carry the step-start values, and
v = v_h - v_s holds exactly on every row.

Training repeats the same episode: each epoch runs the closed loop with the
current weights, collects the post-step error series, backpropagates it
through the recorded network trajectory and applies one batch weight update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (Gains, ImmunePidBaseline, ImmunePidBaselineParams,
                      tracking_helper, ControlSample)
from .plant import (IntegrationError, LumpedParams, NominalParams, PlantState,
                    dynamics_rhs, equivalent_disturbance, step)
from .suppressor import (DEFAULT_INIT_SCALE, NetState, SuppressorNet,
                         apply_update, bptt_deltas, cost, forward_step,
                         immune_error, init_weights, suppressor_output,
                         weight_gradient, zero_state)

CONTROLLERS = ("neural-immune-pd", "immune-pid-baseline", "pd-only",
               "oracle-compensation")

TRAJECTORY_KINDS = ("sinusoid", "smooth-step", "constant")

EPISODE_CSV_HEADER = "t,theta_d,theta,e,e_dot,v,v_h,v_s,E,d"
TRAIN_CSV_HEADER = "epoch,J,rmse,max_abs_e"


class TrainingDiverged(RuntimeError):
    """Raised when the episode cost exceeds 1e6 times its initial value."""


@dataclass(frozen=True)
class Trajectory:
    """Desired trajectory, twice continuously differentiable by construction.

    sinusoid     theta_d = amplitude * sin(omega * t)
    smooth-step  quintic blend from 0 to target over rise_time, zero first
                 and second derivatives at both ends
    constant     theta_d = value
    """

    kind: str = "sinusoid"
    amplitude: float = 1.0   # [rad]
    omega: float = 1.0       # [rad/s]
    target: float = 0.0      # smooth-step final angle [rad]
    rise_time: float = 1.0   # smooth-step rise time [s]
    value: float = 0.0       # constant angle [rad]

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "smooth-step" and not self.rise_time > 0.0:
            raise ValueError("rise_time must be > 0")


def eval_trajectory(traj: Trajectory, t: float):
    """Closed-form (theta_d, theta_d_dot, theta_d_ddot) at time t >= 0."""
    if traj.kind == "sinusoid":
        A, w = traj.amplitude, traj.omega
        wt = w * t
        return A * math.sin(wt), A * w * math.cos(wt), -A * w * w * math.sin(wt)
    if traj.kind == "constant":
        return traj.value, 0.0, 0.0
    # smooth-step: c * (10 tau^3 - 15 tau^4 + 6 tau^5) on [0, rise_time]
    c, Tr = traj.target, traj.rise_time
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if t >= Tr:
        return c, 0.0, 0.0
    tau = t / Tr
    q = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)
    dq = tau ** 2 * (30.0 - 60.0 * tau + 30.0 * tau ** 2) / Tr
    ddq = tau * (60.0 - 180.0 * tau + 120.0 * tau ** 2) / (Tr * Tr)
    return c * q, c * dq, c * ddq


@dataclass(frozen=True)
class EpisodeConfig:
    """Timing, initial state, controller selection and trajectory of one run."""

    t0: float
    tf: float
    dt: float
    x0: PlantState
    controller: str = "pd-only"
    suppressor_on: bool = True
    trajectory: Trajectory = field(default_factory=Trajectory)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        if not self.tf > self.t0:
            raise ValueError("tf must be > t0")
        span = self.tf - self.t0
        n = round(span / self.dt)
        if n < 1 or abs(n * self.dt - span) > 1e-6 * self.dt:
            raise ValueError("(tf - t0)/dt must be a positive integer")

    @property
    def n_steps(self) -> int:
        return round((self.tf - self.t0) / self.dt)


@dataclass
class EpisodeLog:
    """Per-step time series of one closed-loop run plus the terminal sample.

    The terminal fields hold the state after the last plant step (one dt past
    the last logged row); training needs the error there.  When the episode
    ran the suppressor with recording enabled, x_traj/s_traj hold the network
    state trajectories (n_steps+1 rows, initial state first).
    """

    t: np.ndarray
    theta_d: np.ndarray
    theta: np.ndarray
    e: np.ndarray
    e_dot: np.ndarray
    v: np.ndarray
    v_h: np.ndarray
    v_s: np.ndarray
    E: np.ndarray
    d: np.ndarray
    t_end: float
    theta_d_end: float
    theta_end: float
    e_end: float
    e_dot_end: float
    x_traj: np.ndarray | None = None
    s_traj: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)

    def error_series(self, g: Gains) -> np.ndarray:
        """Post-step errors E(k) for k = 1..n, i.e. the logged E column
        shifted by one step plus the terminal error."""
        e_term = immune_error(self.e_end, self.e_dot_end, g)
        return np.append(self.E[1:], e_term)

    def write_csv(self, path) -> None:
        cols = (self.t, self.theta_d, self.theta, self.e, self.e_dot,
                self.v, self.v_h, self.v_s, self.E, self.d)
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(EPISODE_CSV_HEADER + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


@dataclass(frozen=True)
class Metrics:
    rmse: float        # sqrt(mean e^2) [rad]
    max_abs_e: float   # [rad]
    settle_time: float  # [s]; inf when |e| never stays inside the band


@dataclass
class TrainReport:
    """Per-epoch training record: row l holds the episode run with weights
    that have received l updates, so costs[0] is the untrained episode and
    costs[-1] the fully trained one."""

    costs: np.ndarray
    rmses: np.ndarray
    max_abs_es: np.ndarray
    net: SuppressorNet
    checkpoint: str | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(TRAIN_CSV_HEADER + "\n")
            for l, (J, r, m) in enumerate(zip(self.costs, self.rmses,
                                              self.max_abs_es)):
                fh.write(f"{l},{J:.17g},{r:.17g},{m:.17g}\n")


@dataclass
class ComparisonResult:
    neural_log: EpisodeLog
    baseline_log: EpisodeLog
    neural_metrics: Metrics
    baseline_metrics: Metrics
    baseline_params: ImmunePidBaselineParams


def _rk4_law(theta: float, theta_dot: float, t: float, dt: float, law,
             lp: LumpedParams):
    """RK4 step with the voltage law evaluated inside each stage."""
    a2, a1, a0 = lp.a2, lp.a1, lp.a0

    def f(t_, th, om):
        v = law(t_, th, om)
        return om, (v - a1 * om - a0 * math.cos(th)) / a2

    half = 0.5 * dt
    try:
        k1t, k1o = f(t, theta, theta_dot)
        k2t, k2o = f(t + half, theta + half * k1t, theta_dot + half * k1o)
        k3t, k3o = f(t + half, theta + half * k2t, theta_dot + half * k2o)
        k4t, k4o = f(t + dt, theta + dt * k3t, theta_dot + dt * k3o)
    except ValueError as exc:  # cos of a non-finite stage value
        raise IntegrationError(
            f"non-finite stage value at t={t}: theta={theta}, "
            f"theta_dot={theta_dot}") from exc
    th_next = theta + dt * (k1t + 2.0 * k2t + 2.0 * k3t + k4t) / 6.0
    om_next = theta_dot + dt * (k1o + 2.0 * k2o + 2.0 * k3o + k4o) / 6.0
    if not (math.isfinite(th_next) and math.isfinite(om_next)):
        raise IntegrationError(
            f"non-finite state at t={t + dt}: theta={th_next}, theta_dot={om_next}")
    return th_next, om_next


def run_episode(cfg: EpisodeConfig, lp: LumpedParams, nom: NominalParams,
                g: Gains, net: SuppressorNet | None = None,
                baseline: ImmunePidBaselineParams | None = None,
                record_net: bool = False) -> EpisodeLog:
    """Run one closed-loop episode and log every step.

    Per step: evaluate the trajectory, form e and e_dot from the known
    states, form the control-rate input as the backward difference of the
    two previously applied voltages (zero until both exist, so the
    suppressor never depends on the voltage it is about to shape), compute
    the helper voltage, obtain v_s from the configured source, apply
    v = v_h - v_s and advance the plant.

    The rate input is the raw difference v(k-1) - v(k-2), not divided by dt:
    the 1/dt normalization turns the net's own per-step output changes into
    rail-slamming hidden inputs and makes the rate-to-output feedback
    unstable beyond weight magnitudes of order dt, while the raw difference
    carries the same information at a loop gain independent of dt.
    """
    n = cfg.n_steps
    kp, kd = g.kp, g.kd
    traj = cfg.trajectory
    mode = cfg.controller

    neural = mode == "neural-immune-pd"
    use_net = neural and cfg.suppressor_on
    if use_net and net is None:
        raise ValueError("neural-immune-pd with the suppressor on needs a net")

    ctrl = None
    if mode == "immune-pid-baseline":
        if baseline is None:
            raise ValueError("immune-pid-baseline needs baseline parameters")
        ctrl = ImmunePidBaseline(baseline, cfg.dt)

    staged = mode in ("pd-only", "oracle-compensation")
    if staged:
        oracle = mode == "oracle-compensation"
        da2 = lp.a2 - nom.a2
        da1 = lp.a1 - nom.a1

        def law(t_, th, om):
            p_, vd_, ad_ = eval_trajectory(traj, t_)
            vh = nom.a2 * (ad_ + kd * (vd_ - om) + kp * (p_ - th)) + nom.a1 * om
            if not oracle:
                return vh
            # nominal acceleration the helper voltage imposes; the matching
            # disturbance is added back so the true plant follows it exactly
            tdd = (vh - nom.a1 * om) / nom.a2
            return vh + da2 * tdd + da1 * om + lp.a0 * math.cos(th)

    cols = {name: np.empty(n) for name in
            ("t", "theta_d", "theta", "e", "e_dot", "v", "v_h", "v_s", "E", "d")}
    x_traj = s_traj = None
    state: NetState | None = None
    if use_net:
        state = zero_state(net.topo)
        if record_net:
            x_traj = np.zeros((n + 1, net.topo.n_cells))
            s_traj = np.zeros((n + 1, net.topo.n_cells))

    theta = cfg.x0.theta
    theta_dot = cfg.x0.theta_dot
    v1 = v2 = 0.0  # two previously applied voltages, for the v_dot estimate
    for k in range(n):
        t = cfg.t0 + k * cfg.dt
        th_d, thd_d, thdd_d = eval_trajectory(traj, t)
        e = th_d - theta
        e_dot = thd_d - theta_dot
        dv = (v1 - v2) if k >= 2 else 0.0
        sample = ControlSample(e=e, e_dot=e_dot, u_dot=dv,
                               theta_dot=theta_dot, theta_dd_d=thdd_d)
        v_h = tracking_helper(sample, nom, g)

        if use_net:
            state = forward_step(net.topo, net.weights, state, (e, e_dot, dv))
            v_s = suppressor_output(state)
            if record_net:
                x_traj[k + 1] = state.x
                s_traj[k + 1] = state.s
            v = v_h - v_s
        elif ctrl is not None:
            v = ctrl.update(e)
            v_h, v_s = v, 0.0
        elif staged and oracle:
            v = law(t, theta, theta_dot)
            v_s = v_h - v  # equals minus the equivalent disturbance
        else:
            v_s = 0.0
            v = v_h

        here = PlantState(theta=theta, theta_dot=theta_dot)
        tdd = dynamics_rhs(here, v, lp)
        cols["t"][k] = t
        cols["theta_d"][k] = th_d
        cols["theta"][k] = theta
        cols["e"][k] = e
        cols["e_dot"][k] = e_dot
        cols["v"][k] = v
        cols["v_h"][k] = v_h
        cols["v_s"][k] = v_s
        cols["E"][k] = immune_error(e, e_dot, g)
        cols["d"][k] = equivalent_disturbance(tdd, theta_dot, theta, lp, nom)

        if staged:
            theta, theta_dot = _rk4_law(theta, theta_dot, t, cfg.dt, law, lp)
        else:
            nxt = step(here, v, lp, cfg.dt)
            theta, theta_dot = nxt.theta, nxt.theta_dot
        v2, v1 = v1, v

    t_end = cfg.t0 + n * cfg.dt
    th_d, thd_d, _ = eval_trajectory(traj, t_end)
    return EpisodeLog(**cols, t_end=t_end, theta_d_end=th_d, theta_end=theta,
                      e_end=th_d - theta, e_dot_end=thd_d - theta_dot,
                      x_traj=x_traj, s_traj=s_traj)


def metrics(log: EpisodeLog) -> Metrics:
    """Tracking metrics of one episode.

    settle_time is the first time after which |e| stays below 2% of the peak
    desired angle (floored at 1e-9 for all-zero trajectories); inf when the
    band is still violated at the end of the log, t0 when it never is.
    """
    if len(log) == 0:
        raise ValueError("episode log is empty")
    e = log.e
    rmse = float(np.sqrt(np.mean(e ** 2)))
    max_abs = float(np.max(np.abs(e)))
    peak = max(float(np.max(np.abs(log.theta_d))), abs(log.theta_d_end), 1e-9)
    thr = 0.02 * peak
    violations = np.nonzero(np.abs(e) >= thr)[0]
    if violations.size == 0:
        settle = float(log.t[0])
    elif violations[-1] == len(log) - 1:
        settle = math.inf
    else:
        settle = float(log.t[violations[-1] + 1])
    return Metrics(rmse=rmse, max_abs_e=max_abs, settle_time=settle)


def train(cfg: EpisodeConfig, lp: LumpedParams, nom: NominalParams, g: Gains,
          topo, epochs: int, eta: float, seed: int,
          init_scale: float = DEFAULT_INIT_SCALE,
          error_sign: int = 1) -> TrainReport:
    """Batch-train the suppressor by repeating the configured episode.

    Epoch l runs the closed loop with the current weights, computes the
    post-step error series and the cost J(l), then applies one gradient
    update.  A final evaluation episode follows the last update, so the
    report has epochs+1 rows and J(epochs) reflects all updates.  error_sign
    (+1 or -1) flips the error injected into the backward pass without
    touching the reported cost; raises TrainingDiverged when J exceeds 1e6
    times J(0).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if error_sign not in (1, -1):
        raise ValueError("error_sign must be +1 or -1")
    run_cfg = replace(cfg, controller="neural-immune-pd", suppressor_on=True)

    W = init_weights(topo, init_scale, seed)
    costs = np.empty(epochs + 1)
    rmses = np.empty(epochs + 1)
    maxes = np.empty(epochs + 1)
    for l in range(epochs + 1):
        net = SuppressorNet(topo=topo, weights=W)
        log = run_episode(run_cfg, lp, nom, g, net=net, record_net=True)
        E = log.error_series(g)
        costs[l] = cost(E)
        m = metrics(log)
        rmses[l] = m.rmse
        maxes[l] = m.max_abs_e
        if costs[l] > 1e6 * costs[0]:
            raise TrainingDiverged(
                f"cost {costs[l]:.3e} at epoch {l} exceeds 1e6 x J(0)={costs[0]:.3e}")
        if l < epochs:
            deltas = bptt_deltas(topo, W, log.x_traj, log.s_traj,
                                 error_sign * E)
            G = weight_gradient(deltas, log.x_traj)
            W = apply_update(W, G, eta)
    return TrainReport(costs=costs, rmses=rmses, max_abs_es=maxes,
                       net=SuppressorNet(topo=topo, weights=W))


def compare(cfg: EpisodeConfig, lp: LumpedParams, nom: NominalParams,
            g: Gains, net: SuppressorNet,
            baseline: ImmunePidBaselineParams) -> ComparisonResult:
    """Run the trained neural controller and the immune PID baseline on the
    identical trajectory and initial state and pair up their metrics."""
    neural_cfg = replace(cfg, controller="neural-immune-pd", suppressor_on=True)
    base_cfg = replace(cfg, controller="immune-pid-baseline")
    nlog = run_episode(neural_cfg, lp, nom, g, net=net)
    blog = run_episode(base_cfg, lp, nom, g, baseline=baseline)
    return ComparisonResult(neural_log=nlog, baseline_log=blog,
                            neural_metrics=metrics(nlog),
                            baseline_metrics=metrics(blog),
                            baseline_params=baseline)


K0_GRID = (0.5, 1.0, 2.0, 5.0)
ETA_GRID = (0.0, 0.3, 0.6)
SIGMA_GRID = (0.1, 1.0, 10.0)


def tune_baseline(cfg: EpisodeConfig, lp: LumpedParams, nom: NominalParams,
                  g: Gains, inner: tuple[float, float, float],
                  k0_grid=K0_GRID, eta_grid=ETA_GRID,
                  sigma_grid=SIGMA_GRID) -> ImmunePidBaselineParams:
    """Grid-search the baseline's (K0, eta, sigma) for lowest episode RMSE
    with the inner PID gains held fixed.  Unstable grid points are skipped."""
    kp_i, ki_i, kd_i = inner
    base_cfg = replace(cfg, controller="immune-pid-baseline")
    best = None
    best_rmse = math.inf
    for K0 in k0_grid:
        for eta in eta_grid:
            for sigma in sigma_grid:
                params = ImmunePidBaselineParams(K0=K0, eta=eta, sigma=sigma,
                                                 kp_i=kp_i, ki_i=ki_i, kd_i=kd_i)
                try:
                    log = run_episode(base_cfg, lp, nom, g, baseline=params)
                except IntegrationError:
                    continue
                rmse = metrics(log).rmse
                if rmse < best_rmse:
                    best, best_rmse = params, rmse
    if best is None:
        raise IntegrationError("every baseline grid point went unstable")
    return best
