"""Render tracking-control figures from immunepd CSV files.

Four figure kinds, matching the simulator's two CSV contracts:

  tracking   desired vs actual angle over time      (episode CSV)
  error      tracking error over time               (episode CSV)
  compare    two error series overlaid              (two episode CSVs)
  cost       training cost over epochs              (train CSV)

Inputs are read-only; rendering touches nothing but the output image.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EPISODE_COLUMNS = ("t", "theta_d", "theta", "e", "e_dot",
                   "v", "v_h", "v_s", "E", "d")
TRAIN_COLUMNS = ("epoch", "J", "rmse", "max_abs_e")

KINDS = ("tracking", "error", "compare", "cost")

# decay rate of the analytic overlay: half the default derivative gain
# (K_D/2 = 10); the CSV itself carries no gain information
ANALYTIC_DECAY = 10.0


class HeaderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    xlabel: str = ""
    ylabel: str = ""
    analytic: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        need = 2 if self.kind == "compare" else 1
        if len(self.inputs) != need:
            raise ValueError(f"{self.kind} needs {need} input file(s), "
                             f"got {len(self.inputs)}")


def read_csv(path, expected: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read a delimited file whose header must match `expected` exactly;
    a mismatch names the offending column."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file {path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise HeaderMismatch(f"{path}: empty file, expected header "
                             f"{','.join(expected)}")
    header = tuple(rows[0])
    if header != expected:
        for i, name in enumerate(expected):
            if i >= len(header) or header[i] != name:
                got = header[i] if i < len(header) else "<missing>"
                raise HeaderMismatch(
                    f"{path}: column {i + 1} is {got!r}, expected {name!r}")
        raise HeaderMismatch(f"{path}: {len(header)} columns, expected "
                             f"{len(expected)}")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    if data.size == 0:
        raise HeaderMismatch(f"{path}: no data rows")
    return {name: data[:, i] for i, name in enumerate(expected)}


def analytic_error_curve(t: np.ndarray, e0: float, e_dot0: float) -> np.ndarray:
    """Critically damped error solution (e0 + (e_dot0 + lam*e0)*t)*exp(-lam*t)
    seeded from the episode's first sample."""
    lam = ANALYTIC_DECAY
    return (e0 + (e_dot0 + lam * e0) * (t - t[0])) * np.exp(-lam * (t - t[0]))


def _new_axes():
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.grid(True, alpha=0.3)
    return fig, ax


def render(spec: FigureSpec) -> str:
    """Render the figure described by spec and return the output path."""
    if spec.kind == "cost":
        data = read_csv(spec.inputs[0], TRAIN_COLUMNS)
        fig, ax = _new_axes()
        ax.plot(data["epoch"], data["J"], marker="o", ms=3)
        ax.set_xlabel(spec.xlabel or "epoch")
        ax.set_ylabel(spec.ylabel or "cost J")
        ax.set_title("Training cost")
    elif spec.kind == "compare":
        a = read_csv(spec.inputs[0], EPISODE_COLUMNS)
        b = read_csv(spec.inputs[1], EPISODE_COLUMNS)
        fig, ax = _new_axes()
        ax.plot(a["t"], a["e"], label=Path(spec.inputs[0]).stem)
        ax.plot(b["t"], b["e"], "--", label=Path(spec.inputs[1]).stem)
        ax.set_xlabel(spec.xlabel or "time [s]")
        ax.set_ylabel(spec.ylabel or "tracking error [rad]")
        ax.set_title("Error comparison")
        ax.legend()
    else:
        data = read_csv(spec.inputs[0], EPISODE_COLUMNS)
        fig, ax = _new_axes()
        if spec.kind == "tracking":
            ax.plot(data["t"], data["theta_d"], "--", label="desired")
            ax.plot(data["t"], data["theta"], label="actual")
            ax.set_ylabel(spec.ylabel or "angle [rad]")
            ax.set_title("Trajectory tracking")
            ax.legend()
        else:  # error
            ax.plot(data["t"], data["e"], label="error")
            if spec.analytic:
                overlay = analytic_error_curve(data["t"], data["e"][0],
                                               data["e_dot"][0])
                ax.plot(data["t"], overlay, ":", label="critically damped")
                ax.legend()
            ax.set_ylabel(spec.ylabel or "tracking error [rad]")
            ax.set_title("Error convergence")
        ax.set_xlabel(spec.xlabel or "time [s]")
    fig.tight_layout()
    fig.savefig(spec.output)
    plt.close(fig)
    return spec.output
