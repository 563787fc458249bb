"""Fully recurrent suppressor network and its batch training rule.

The suppressor term v_s is produced by a small fully recurrent network with
three input cells (fed the tracking error e, its rate e_dot and the control
rate v_dot), p hidden cells with a bipolar sigmoid activation, and one linear
output cell, N = 4 + p cells in total.  Cells are laid out
[inputs | hidden | output]; weight w[j, i] connects cell i's output at step k
to cell j's net input at step k+1.  The input rows of the weight matrix are
identically zero (input cells take external input only) and the output row
is nonzero only on the hidden columns; see `mask_structure` for why the
output cell must not read the input cells directly.

Training is per-episode batch gradient descent: after a closed-loop episode,
the recorded per-step error E(k) = kd*e_dot(k) + kp*e(k) is injected at the
output cell and propagated backwards through the recorded state trajectory,
and the accumulated gradient updates the weights once.  The closed-loop
dependence of e on the weights through the plant is deliberately not
differentiated (the input and error sequences are treated as exogenous data
within an epoch), so the deltas are the exact gradient of the error-weighted
output sum `error_output_coupling`, which is what `gradient_check` verifies
by central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import Gains

N_INPUTS = 3

# Tuned defaults.  The hidden activations need strong recurrent drive to
# carry the nonzero-mean features that disturbance cancellation requires (the
# cell model has no bias terms), and a gentle output gain keeps the batch
# weight updates inside the stable-step envelope of the fixed learning rate.
DEFAULT_STEEPNESS = 4.0
DEFAULT_OUT_GAIN = 0.5
DEFAULT_INIT_SCALE = 0.3
DEFAULT_LEARNING_RATE = 1e-3


@dataclass(frozen=True)
class NetTopology:
    """Network shape: p hidden cells, sigmoid steepness T, output gain a."""

    p: int        # hidden cell count
    T: float = DEFAULT_STEEPNESS  # hidden sigmoid steepness
    a: float = DEFAULT_OUT_GAIN   # output cell linear gain

    def __post_init__(self):
        if not (isinstance(self.p, int) and self.p >= 1):
            raise ValueError("p must be a positive integer")
        if not self.T > 0.0:
            raise ValueError("T must be > 0")
        if not self.a > 0.0:
            raise ValueError("a must be > 0")

    @property
    def n_cells(self) -> int:
        return N_INPUTS + 1 + self.p

    @property
    def hidden(self) -> slice:
        return slice(N_INPUTS, N_INPUTS + self.p)

    @property
    def output(self) -> int:
        return N_INPUTS + self.p


@dataclass(frozen=True)
class NetState:
    """Cell outputs x and net inputs s at one step.  Hidden components of x
    lie in (-1, 1); the output cell is unbounded linear."""

    x: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class SuppressorNet:
    """Topology plus its current weight matrix."""

    topo: NetTopology
    weights: np.ndarray


def zero_state(topo: NetTopology) -> NetState:
    n = topo.n_cells
    return NetState(x=np.zeros(n), s=np.zeros(n))


def mask_structure(M: np.ndarray) -> np.ndarray:
    """Pin the structurally zero entries of a weight or gradient matrix in
    place and return it (cells are laid out [inputs | hidden | output]).

    Input rows are zero (input cells take external input only).  The output
    row is zero outside the hidden columns: the linear output cell combines
    hidden features only.  A direct input-to-output weight would couple the
    control-rate input back into the control as a delayed derivative
    feedback with gain w/dt, which destabilizes the closed loop for any
    weight magnitude above a fraction of dt, and a linear output self-loop
    diverges for |a*w| > 1; reading only the bounded hidden cells keeps the
    suppressor output bounded for all weights.
    """
    out = M.shape[0] - 1
    M[:N_INPUTS, :] = 0.0
    M[out, :N_INPUTS] = 0.0
    M[out, out] = 0.0
    return M


def init_weights(topo: NetTopology, scale: float, seed: int) -> np.ndarray:
    """Uniform random weights in [-scale, scale] wherever the structure
    allows (hidden rows, and the hidden columns of the output row), zero
    elsewhere.  Deterministic given the seed."""
    if scale < 0.0:
        raise ValueError("scale must be >= 0")
    n = topo.n_cells
    rng = np.random.default_rng(seed)
    W = rng.uniform(-scale, scale, size=(n, n))
    return mask_structure(W)


def _check_weights(topo: NetTopology, W: np.ndarray) -> None:
    n = topo.n_cells
    if W.shape != (n, n):
        raise ValueError(f"weight matrix must be {n}x{n}, got {W.shape}")


def forward_step(topo: NetTopology, W: np.ndarray, state: NetState,
                 inputs) -> NetState:
    """One recursion step: hidden/output cells read the previous outputs
    through W, input cells pass the external inputs straight through.

    The hidden activation (1 - exp(-T*s)) / (1 + exp(-T*s)) is evaluated as
    tanh(T*s/2), which is the same function; the output cell is a*s.
    """
    _check_weights(topo, W)
    u = np.asarray(inputs, dtype=float)
    if u.shape != (N_INPUTS,):
        raise ValueError(f"expected {N_INPUTS} external inputs, got shape {u.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        s = W @ state.x
    s[:N_INPUTS] = u
    x = np.empty_like(s)
    x[:N_INPUTS] = u
    h = topo.hidden
    x[h] = np.tanh(0.5 * topo.T * s[h])
    x[topo.output] = topo.a * s[topo.output]
    return NetState(x=x, s=s)


def suppressor_output(state: NetState) -> float:
    """Network output v_s: the output cell's value (cells are laid out with
    the output cell last)."""
    return float(state.x[-1])


def immune_error(e: float, e_dot: float, g: Gains) -> float:
    """Per-step training error E = kd*e_dot + kp*e (same form as the PD
    helper)."""
    return g.kd * e_dot + g.kp * e


def cost(errors) -> float:
    """Episode cost: half the sum of squared per-step errors."""
    E = np.asarray(errors, dtype=float)
    if E.size == 0:
        raise ValueError("error series must be non-empty")
    return 0.5 * float(E @ E)


def run_teacher_forced(topo: NetTopology, W: np.ndarray, inputs,
                       state: NetState | None = None):
    """Feed a fixed input sequence (n, 3) from the given (default zero)
    state; returns the state trajectories x[0..n] and s[0..n]."""
    u = np.asarray(inputs, dtype=float)
    n = u.shape[0]
    st = zero_state(topo) if state is None else state
    x_traj = np.zeros((n + 1, topo.n_cells))
    s_traj = np.zeros((n + 1, topo.n_cells))
    x_traj[0] = st.x
    s_traj[0] = st.s
    for k in range(n):
        st = forward_step(topo, W, st, u[k])
        x_traj[k + 1] = st.x
        s_traj[k + 1] = st.s
    return x_traj, s_traj


def error_output_coupling(topo: NetTopology, W: np.ndarray, inputs,
                          errors) -> float:
    """Sum over the episode of E(k) times the network output at step k.

    With the input and error sequences held fixed, this is the scalar
    objective whose exact weight gradient the delta recursion computes: the
    error is injected at the output cell instead of being differentiated
    through the plant, so the squared-error cost itself has no direct weight
    dependence under teacher forcing.  Used as the independent forward-only
    target of `gradient_check`.
    """
    E = np.asarray(errors, dtype=float)
    x_traj, _ = run_teacher_forced(topo, W, inputs)
    return float(E @ x_traj[1:, topo.output])


def bptt_deltas(topo: NetTopology, W: np.ndarray, x_traj: np.ndarray,
                s_traj: np.ndarray, errors, *,
                derivative_scale: float = 1.0) -> np.ndarray:
    """Backward delta recursion over a recorded episode.

    x_traj/s_traj are the (n+1, N) trajectories from the forward passes and
    errors the n per-step values E(k) aligned with x_traj[1:].  The terminal
    delta has a*E at the output cell and zeros elsewhere; earlier steps obey

        delta(k) = F(k) * (E(k)*e_out + W^T delta(k+1))

    where F(k) is the diagonal of activation derivatives at step k, computed
    from the stored outputs: (T/2)*(1 - x**2) for hidden cells, a for the
    output cell, 0 for input cells.

    derivative_scale is a verification hook that mis-scales the hidden
    derivative factors so tests can prove the gradient checker detects a
    broken backward pass; leave at 1.0 otherwise.
    """
    _check_weights(topo, W)
    E = np.asarray(errors, dtype=float)
    n = E.shape[0]
    if n == 0:
        raise ValueError("error series must be non-empty")
    if x_traj.shape[0] != n + 1 or s_traj.shape[0] != n + 1:
        raise ValueError(
            f"trajectory length {x_traj.shape[0]} does not match {n} errors")

    N = topo.n_cells
    h = topo.hidden
    out = topo.output
    deltas = np.zeros((n, N))
    deltas[n - 1, out] = topo.a * E[n - 1]
    Wt = W.T
    half_T = 0.5 * topo.T
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n - 2, -1, -1):
            back = Wt @ deltas[m + 1]
            back[out] += E[m]
            x = x_traj[m + 1]
            fac = np.zeros(N)
            fac[h] = half_T * (1.0 - x[h] ** 2) * derivative_scale
            fac[out] = topo.a
            deltas[m] = fac * back
    return deltas


def weight_gradient(deltas: np.ndarray, x_traj: np.ndarray) -> np.ndarray:
    """Accumulated gradient G[j, i] = sum_k delta[j](k+1) * x[i](k).

    Structurally zero weights are frozen parameters, not trained, so the
    corresponding gradient entries are pinned to exact zeros.
    """
    n = deltas.shape[0]
    if x_traj.shape[0] != n + 1:
        raise ValueError(
            f"x trajectory length {x_traj.shape[0]} does not match {n} deltas")
    return mask_structure(deltas.T @ x_traj[:-1])


def apply_update(W: np.ndarray, G: np.ndarray, eta: float) -> np.ndarray:
    """Gradient step W - eta*G, structural zeros kept exactly zero."""
    if eta < 0.0:
        raise ValueError("eta must be >= 0")
    return mask_structure(W - eta * G)


def gradient_check(topo: NetTopology, seed: int, steps: int = 20,
                   eps: float = 1e-6, weight_scale: float = 0.5,
                   derivative_scale: float = 1.0) -> float:
    """Max relative error between the delta-recursion gradient and central
    finite differences of `error_output_coupling` on a random teacher-forced
    episode.  Elements with |gradient| <= 1e-8 (the structural zeros) are
    skipped."""
    rng = np.random.default_rng(seed)
    W = init_weights(topo, weight_scale, seed)
    inputs = rng.uniform(-1.0, 1.0, size=(steps, N_INPUTS))
    errors = rng.uniform(-1.0, 1.0, size=steps)

    x_traj, s_traj = run_teacher_forced(topo, W, inputs)
    deltas = bptt_deltas(topo, W, x_traj, s_traj, errors,
                         derivative_scale=derivative_scale)
    G = weight_gradient(deltas, x_traj)

    max_rel = 0.0
    for jrow in range(N_INPUTS, topo.n_cells):
        for i in range(topo.n_cells):
            Wp = W.copy()
            Wp[jrow, i] += eps
            Wm = W.copy()
            Wm[jrow, i] -= eps
            fd = (error_output_coupling(topo, Wp, inputs, errors)
                  - error_output_coupling(topo, Wm, inputs, errors)) / (2.0 * eps)
            g = G[jrow, i]
            if abs(g) > 1e-8:
                rel = abs(g - fd) / max(abs(g), abs(fd))
                max_rel = max(max_rel, rel)
    return max_rel


def save_weights(path, net: SuppressorNet) -> None:
    """Plain-text checkpoint: first line `N p T a`, then N rows of N values,
    full round-trip precision."""
    topo = net.topo
    W = net.weights
    _check_weights(topo, W)
    lines = [f"{topo.n_cells} {topo.p} {topo.T:.17g} {topo.a:.17g}"]
    for row in W:
        lines.append(" ".join(f"{w:.17g}" for w in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(path) -> SuppressorNet:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}: malformed checkpoint header")
        n, p = int(header[0]), int(header[1])
        T, a = float(header[2]), float(header[3])
        topo = NetTopology(p=p, T=T, a=a)
        if topo.n_cells != n:
            raise ValueError(f"{path}: cell count {n} inconsistent with p={p}")
        W = np.loadtxt(fh, ndmin=2)
    if W.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} weights, got {W.shape}")
    return SuppressorNet(topo=topo, weights=mask_structure(W))
