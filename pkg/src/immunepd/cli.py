"""Batch command-line front end.

Runs are described by a flat key-value config file (one ``key = value`` per
line, ``#`` comments, bracketed section headers for grouping).  Every key has
a documented default, so an empty config runs the reference parameter set
(a2=7.6, a1=0.0234, a0=0.26, K_P=100, K_D=20).  ``--set key=value`` overrides
file keys, and the dedicated ``--seed``/``--out`` flags override both.  Each
command echoes the fully resolved configuration into the output directory as
``effective.cfg``, which re-parses to an equivalent configuration.

Subcommands: simulate, train, compare, gradcheck, sweep.
Exit codes: 0 ok, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

from .control import Gains, ImmunePidBaselineParams, check_critical_damping
from .harness import (CONTROLLERS, TRAJECTORY_KINDS, EpisodeConfig, Trajectory,
                      TrainingDiverged, compare, metrics, run_episode, train,
                      tune_baseline)
from .plant import (IntegrationError, LumpedParams, NominalParams,
                    PhysicalParams, PlantState, lump)
from .suppressor import (DEFAULT_INIT_SCALE, DEFAULT_LEARNING_RATE,
                         DEFAULT_OUT_GAIN, DEFAULT_STEEPNESS, NetTopology,
                         SuppressorNet, gradient_check, init_weights,
                         load_weights, save_weights)


class ConfigError(ValueError):
    pass


# key registry: name -> (section, type tag, default)
#   type tags: float, int, bool, str, choice:<...>, floats (comma list)
_LUMPED_KEYS = ("a2", "a1", "a0")
_PHYSICAL_KEYS = ("J_c", "m", "r", "B", "g", "J_m", "B_m", "j", "R", "L",
                  "k_t", "k_v")

_KEYS: dict[str, tuple[str, str, object]] = {
    "a2": ("plant", "float", 7.6),
    "a1": ("plant", "float", 0.0234),
    "a0": ("plant", "float", 0.26),
    **{k: ("plant", "float", None) for k in _PHYSICAL_KEYS},
    "a2_hat": ("nominal", "float", None),   # defaults to the effective a2
    "a1_hat": ("nominal", "float", None),   # defaults to the effective a1
    "K_P": ("gains", "float", 100.0),
    "K_D": ("gains", "float", 20.0),
    "p": ("network", "int", 6),
    "T": ("network", "float", DEFAULT_STEEPNESS),
    "a": ("network", "float", DEFAULT_OUT_GAIN),
    "init_scale": ("network", "float", DEFAULT_INIT_SCALE),
    "eta": ("training", "float", DEFAULT_LEARNING_RATE),
    "epochs": ("training", "int", 50),
    "seed": ("training", "int", 0),
    "error_sign": ("training", "int", 1),
    "checkpoint": ("training", "str", ""),
    "gradcheck_fudge": ("training", "float", 1.0),
    "trajectory": ("trajectory", "choice:" + ",".join(TRAJECTORY_KINDS), "sinusoid"),
    "amplitude": ("trajectory", "float", 1.0),
    "omega": ("trajectory", "float", 1.0),
    "target": ("trajectory", "float", 0.0),
    "rise_time": ("trajectory", "float", 1.0),
    "value": ("trajectory", "float", 0.0),
    "t0": ("episode", "float", 0.0),
    "tf": ("episode", "float", 10.0),
    "dt": ("episode", "float", 1e-3),
    # default initial state sits on the default sinusoid trajectory
    # (theta_d(0) = 0, theta_d_dot(0) = amplitude*omega = 1); a zero-velocity
    # start injects a kick transient whose training gradients overwhelm the
    # fixed learning rate
    "theta0": ("episode", "float", 0.0),
    "theta_dot0": ("episode", "float", 1.0),
    "controller": ("episode", "choice:" + ",".join(CONTROLLERS), "pd-only"),
    "suppressor": ("episode", "bool", True),
    "K0": ("baseline", "float", 1.0),
    "baseline_eta": ("baseline", "float", 0.3),
    "sigma": ("baseline", "float", 1.0),
    "kp_i": ("baseline", "float", 760.0),
    "ki_i": ("baseline", "float", 300.0),
    "kd_i": ("baseline", "float", 152.0),
    "sweep_kp": ("sweep", "floats", (100.0,)),
    "sweep_kd": ("sweep", "floats", (20.0,)),
    "out_dir": ("output", "str", "out"),
}

_SECTIONS = ("plant", "nominal", "gains", "network", "training", "trajectory",
             "episode", "baseline", "sweep", "output")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (defaults applied)."""

    lumped: LumpedParams | None
    physical: PhysicalParams | None
    nominal: NominalParams
    gains: Gains
    topo: NetTopology
    init_scale: float
    eta: float
    epochs: int
    seed: int
    error_sign: int
    checkpoint: str
    gradcheck_fudge: float
    trajectory: Trajectory
    t0: float
    tf: float
    dt: float
    theta0: float
    theta_dot0: float
    controller: str
    suppressor_on: bool
    baseline: ImmunePidBaselineParams
    sweep_kp: tuple
    sweep_kd: tuple
    out_dir: str
    warnings: tuple = field(default=(), compare=False)
    explicit: frozenset = field(default=frozenset(), compare=False)

    @property
    def effective_lumped(self) -> LumpedParams:
        return self.lumped if self.lumped is not None else lump(self.physical)

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(t0=self.t0, tf=self.tf, dt=self.dt,
                             x0=PlantState(self.theta0, self.theta_dot0),
                             controller=self.controller,
                             suppressor_on=self.suppressor_on,
                             trajectory=self.trajectory)


def _convert(key: str, raw: str, where: str):
    _, tag, _ = _KEYS[key]
    try:
        if tag == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
        if tag == "int":
            return int(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError
        if tag == "floats":
            vals = tuple(float(part) for part in raw.split(","))
            if not vals or not all(math.isfinite(v) for v in vals):
                raise ValueError
            return vals
        if tag.startswith("choice:"):
            choices = tag.split(":", 1)[1].split(",")
            if raw not in choices:
                raise ConfigError(
                    f"{where}: {key}: must be one of {', '.join(choices)}, got {raw!r}")
            return raw
        return raw  # str
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{where}: {key}: expected {tag}, got {raw!r}") from None


def _parse_lines(text: str, values: dict, where_prefix: str = "line") -> None:
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{where_prefix} {lineno}"
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[key] = _convert(key, raw, where)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse a config document into a validated RunConfig.

    overrides (already key -> raw string) are applied on top of the file
    content; unknown keys, type errors and invariant violations raise
    ConfigError naming the offending key (with its line for file keys).
    """
    values: dict = {}
    _parse_lines(text, values)
    explicit_file = set(values)
    if overrides:
        for key, raw in overrides.items():
            if key not in _KEYS:
                raise ConfigError(f"--set: unknown key {key!r}")
            values[key] = _convert(key, raw, "--set")
    explicit = frozenset(values)

    def get(key):
        return values.get(key, _KEYS[key][2])

    lumped_given = any(k in explicit for k in _LUMPED_KEYS)
    physical_given = any(k in explicit for k in _PHYSICAL_KEYS)
    if lumped_given and physical_given:
        raise ConfigError(
            "exactly one of the lumped (a2, a1, a0) and physical parameter "
            "blocks may be given, got both")
    try:
        if physical_given:
            missing = [k for k in _PHYSICAL_KEYS if k not in explicit]
            if missing:
                raise ConfigError(
                    f"physical parameter block incomplete, missing: {', '.join(missing)}")
            physical = PhysicalParams(**{k: values[k] for k in _PHYSICAL_KEYS})
            lumped = None
            eff = lump(physical)
        else:
            physical = None
            lumped = LumpedParams(a2=get("a2"), a1=get("a1"), a0=get("a0"))
            eff = lumped
        nominal = NominalParams(
            a2=get("a2_hat") if "a2_hat" in explicit else eff.a2,
            a1=get("a1_hat") if "a1_hat" in explicit else eff.a1)
        gains = Gains(kp=get("K_P"), kd=get("K_D"))
        topo = NetTopology(p=get("p"), T=get("T"), a=get("a"))
        baseline = ImmunePidBaselineParams(
            K0=get("K0"), eta=get("baseline_eta"), sigma=get("sigma"),
            kp_i=get("kp_i"), ki_i=get("ki_i"), kd_i=get("kd_i"))
        trajectory = Trajectory(kind=get("trajectory"), amplitude=get("amplitude"),
                                omega=get("omega"), target=get("target"),
                                rise_time=get("rise_time"), value=get("value"))
        cfg = RunConfig(
            lumped=lumped, physical=physical, nominal=nominal, gains=gains,
            topo=topo, init_scale=get("init_scale"), eta=get("eta"),
            epochs=get("epochs"), seed=get("seed"),
            error_sign=get("error_sign"), checkpoint=get("checkpoint"),
            gradcheck_fudge=get("gradcheck_fudge"), trajectory=trajectory,
            t0=get("t0"), tf=get("tf"), dt=get("dt"), theta0=get("theta0"),
            theta_dot0=get("theta_dot0"), controller=get("controller"),
            suppressor_on=get("suppressor"), baseline=baseline,
            sweep_kp=get("sweep_kp"), sweep_kd=get("sweep_kd"),
            out_dir=get("out_dir"),
            warnings=tuple(_collect_warnings(gains)),
            explicit=explicit)
        cfg.episode_config()  # validate timing invariants
        if cfg.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        if cfg.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if cfg.eta < 0.0:
            raise ConfigError("eta: must be >= 0")
        if cfg.error_sign not in (1, -1):
            raise ConfigError("error_sign: must be 1 or -1")
        if cfg.init_scale < 0.0:
            raise ConfigError("init_scale: must be >= 0")
        return cfg
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _collect_warnings(gains: Gains):
    if not check_critical_damping(gains):
        yield (f"gains violate the critical-damping relation K_D^2 = 4*K_P "
               f"({gains.kd}^2 = {gains.kd ** 2:g} vs {4.0 * gains.kp:g})")


def _fmt(key: str, val) -> str:
    tag = _KEYS[key][1]
    if tag == "float":
        return f"{val:.17g}"
    if tag == "bool":
        return "on" if val else "off"
    if tag == "floats":
        return ",".join(f"{v:.17g}" for v in val)
    return str(val)


def render_config(cfg: RunConfig) -> str:
    """Serialize the resolved configuration; re-parsing yields an equal one."""
    vals = {
        "a2_hat": cfg.nominal.a2, "a1_hat": cfg.nominal.a1,
        "K_P": cfg.gains.kp, "K_D": cfg.gains.kd,
        "p": cfg.topo.p, "T": cfg.topo.T, "a": cfg.topo.a,
        "init_scale": cfg.init_scale, "eta": cfg.eta, "epochs": cfg.epochs,
        "seed": cfg.seed, "error_sign": cfg.error_sign,
        "checkpoint": cfg.checkpoint, "gradcheck_fudge": cfg.gradcheck_fudge,
        "trajectory": cfg.trajectory.kind, "amplitude": cfg.trajectory.amplitude,
        "omega": cfg.trajectory.omega, "target": cfg.trajectory.target,
        "rise_time": cfg.trajectory.rise_time, "value": cfg.trajectory.value,
        "t0": cfg.t0, "tf": cfg.tf, "dt": cfg.dt, "theta0": cfg.theta0,
        "theta_dot0": cfg.theta_dot0, "controller": cfg.controller,
        "suppressor": cfg.suppressor_on,
        "K0": cfg.baseline.K0, "baseline_eta": cfg.baseline.eta,
        "sigma": cfg.baseline.sigma, "kp_i": cfg.baseline.kp_i,
        "ki_i": cfg.baseline.ki_i, "kd_i": cfg.baseline.kd_i,
        "sweep_kp": cfg.sweep_kp, "sweep_kd": cfg.sweep_kd,
        "out_dir": cfg.out_dir,
    }
    if cfg.physical is not None:
        vals.update({k: getattr(cfg.physical, k) for k in _PHYSICAL_KEYS})
    else:
        vals.update({"a2": cfg.lumped.a2, "a1": cfg.lumped.a1, "a0": cfg.lumped.a0})

    lines = []
    for section in _SECTIONS:
        keys = [k for k in _KEYS if _KEYS[k][0] == section and k in vals]
        if not keys:
            continue
        lines.append(f"[{section}]")
        for k in keys:
            if k == "checkpoint" and vals[k] == "":
                continue
            lines.append(f"{k} = {_fmt(k, vals[k])}")
        lines.append("")
    return "\n".join(lines)


def _echo_config(cfg: RunConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "effective.cfg"), "w",
              encoding="ascii", newline="\n") as fh:
        fh.write(render_config(cfg))


def _load_net(cfg: RunConfig, require_checkpoint: bool) -> SuppressorNet:
    if cfg.checkpoint:
        if not os.path.exists(cfg.checkpoint):
            raise ConfigError(f"checkpoint: {cfg.checkpoint!r} not found")
        return load_weights(cfg.checkpoint)
    if require_checkpoint:
        raise ConfigError("checkpoint: a trained weights file is required")
    return SuppressorNet(topo=cfg.topo,
                         weights=init_weights(cfg.topo, cfg.init_scale, cfg.seed))


def _metrics_line(tag: str, m) -> str:
    return (f"{tag}: rmse={m.rmse:.6g} rad, max|e|={m.max_abs_e:.6g} rad, "
            f"settle_time={m.settle_time:.6g} s")


def cmd_simulate(cfg: RunConfig) -> int:
    ep = cfg.episode_config()
    net = baseline = None
    if cfg.controller == "neural-immune-pd" and cfg.suppressor_on:
        net = _load_net(cfg, require_checkpoint=False)
    if cfg.controller == "immune-pid-baseline":
        baseline = cfg.baseline
    log = run_episode(ep, cfg.effective_lumped, cfg.nominal, cfg.gains,
                      net=net, baseline=baseline)
    _echo_config(cfg)
    log.write_csv(os.path.join(cfg.out_dir, "episode.csv"))
    print(_metrics_line(f"episode[{cfg.controller}]", metrics(log)))
    return 0


def cmd_train(cfg: RunConfig) -> int:
    report = train(cfg.episode_config(), cfg.effective_lumped, cfg.nominal,
                   cfg.gains, cfg.topo, epochs=cfg.epochs, eta=cfg.eta,
                   seed=cfg.seed, init_scale=cfg.init_scale,
                   error_sign=cfg.error_sign)
    _echo_config(cfg)
    ckpt = os.path.join(cfg.out_dir, "weights.txt")
    save_weights(ckpt, report.net)
    report.checkpoint = ckpt
    report.write_csv(os.path.join(cfg.out_dir, "train.csv"))
    J0, Jn = report.costs[0], report.costs[-1]
    print(f"train: J(0)={J0:.6g}, J({cfg.epochs})={Jn:.6g}, "
          f"ratio={Jn / J0:.4f}, final rmse={report.rmses[-1]:.6g} rad")
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    net = _load_net(cfg, require_checkpoint=True)
    ep = cfg.episode_config()
    lp = cfg.effective_lumped
    pinned = {"K0", "baseline_eta", "sigma"} <= cfg.explicit
    if pinned:
        baseline = cfg.baseline
    else:
        baseline = tune_baseline(ep, lp, cfg.nominal, cfg.gains,
                                 inner=(cfg.baseline.kp_i, cfg.baseline.ki_i,
                                        cfg.baseline.kd_i))
        print(f"baseline tuned: K0={baseline.K0:g}, eta={baseline.eta:g}, "
              f"sigma={baseline.sigma:g}")
    result = compare(ep, lp, cfg.nominal, cfg.gains, net, baseline)
    _echo_config(cfg)
    result.neural_log.write_csv(os.path.join(cfg.out_dir, "episode_neural.csv"))
    result.baseline_log.write_csv(os.path.join(cfg.out_dir, "episode_baseline.csv"))
    nm, bm = result.neural_metrics, result.baseline_metrics
    winner = ("neural-immune-pd" if nm.rmse < bm.rmse else "immune-pid-baseline")
    with open(os.path.join(cfg.out_dir, "summary.csv"), "w",
              encoding="ascii", newline="\n") as fh:
        fh.write("method,rmse,max_abs_e,settle_time,best\n")
        for name, m in (("neural-immune-pd", nm), ("immune-pid-baseline", bm)):
            fh.write(f"{name},{m.rmse:.17g},{m.max_abs_e:.17g},"
                     f"{m.settle_time:.17g},{int(name == winner)}\n")
    print(_metrics_line("neural-immune-pd", nm))
    print(_metrics_line("immune-pid-baseline", bm))
    print(f"lower rmse: {winner}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    err = gradient_check(cfg.topo, seed=cfg.seed,
                         derivative_scale=cfg.gradcheck_fudge)
    _echo_config(cfg)
    print(f"max relative gradient error: {err:.3e}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    ep = cfg.episode_config()
    lp = cfg.effective_lumped
    net = baseline = None
    if cfg.controller == "neural-immune-pd" and cfg.suppressor_on:
        net = _load_net(cfg, require_checkpoint=False)
    if cfg.controller == "immune-pid-baseline":
        baseline = cfg.baseline
    _echo_config(cfg)
    path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("K_P,K_D,critical,rmse,max_abs_e,settle_time\n")
        for kp in cfg.sweep_kp:
            for kd in cfg.sweep_kd:
                try:
                    g = Gains(kp=kp, kd=kd)
                except ValueError as exc:
                    raise ConfigError(f"sweep gains: {exc}") from None
                log = run_episode(ep, lp, cfg.nominal, g, net=net,
                                  baseline=baseline)
                m = metrics(log)
                crit = int(check_critical_damping(g))
                fh.write(f"{kp:.17g},{kd:.17g},{crit},{m.rmse:.17g},"
                         f"{m.max_abs_e:.17g},{m.settle_time:.17g}\n")
                print(f"K_P={kp:g} K_D={kd:g} critical={crit} "
                      f"rmse={m.rmse:.6g} settle={m.settle_time:.6g}")
    print(f"sweep written to {path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="immunepd",
        description="Neural immune PD tracking control simulation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="config file path")
        cmd.add_argument("--out", help="output directory (overrides out_dir)")
        cmd.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            if not os.path.exists(args.config):
                raise ConfigError(f"config file {args.config!r} not found")
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        overrides: dict[str, str] = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            overrides[key.strip()] = raw.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out_dir"] = args.out
        cfg = parse_config(text, overrides)
        for w in cfg.warnings:
            print(f"warning: {w}", file=sys.stderr)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
