"""Adaptive Dormand-Prince 5(4) integration with dense output.

Trajectories terminate at the first of: horizon reached, blow-up
(norm >= blowup threshold), domain exit (boundary distance <= margin),
or step-size underflow.  Dense output is per-step cubic Hermite, which
reproduces stored nodes exactly and is 4th-order accurate between them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .expr import DomainFault
from .system import VectorFieldSpec

# Dormand-Prince RK5(4)7M tableau (FSAL)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B5 - _B4


class Termination(enum.Enum):
    REACHED_HORIZON = "reached-horizon"
    BLOW_UP = "blow-up"
    DOMAIN_EXIT = "domain-exit"
    STEP_UNDERFLOW = "step-underflow"


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-12
    initial_step: Optional[float] = None
    max_step: float = 0.25
    t_max: float = 100.0
    blowup_norm: float = 1e8
    domain_margin: float = 1e-12

    def __post_init__(self):
        if min(self.rtol, self.atol, self.max_step, self.t_max,
               self.blowup_norm, self.domain_margin) <= 0:
            raise ValueError("integrator parameters must be positive")
        if not math.isfinite(self.t_max):
            raise ValueError("horizon must be finite")

    def with_overrides(self, **kwargs) -> "IntegratorConfig":
        return replace(self, **kwargs)


class Trajectory:
    """A numerically integrated (or pushed-forward) integral curve."""

    __slots__ = ("system", "x0", "ts", "xs", "fs", "termination",
                 "termination_time", "kind")

    def __init__(self, system, x0, ts, xs, fs, termination,
                 termination_time, kind="integrated"):
        self.system = system
        self.x0 = np.asarray(x0, dtype=float)
        self.ts = np.asarray(ts, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.fs = np.asarray(fs, dtype=float)
        self.termination = termination
        self.termination_time = termination_time
        self.kind = kind

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    @property
    def dimension(self) -> int:
        return self.xs.shape[1]

    def sample(self, t: float) -> np.ndarray:
        """Dense-output state at time t in [0, t_end]."""
        return self.sample_many([t])[0]

    def sample_many(self, ts: Sequence[float]) -> np.ndarray:
        tq = np.asarray(ts, dtype=float)
        if tq.size and (tq.min() < self.ts[0] - 1e-14 or
                        tq.max() > self.ts[-1] + 1e-14):
            raise ValueError(
                f"sample time outside recorded span "
                f"[{self.ts[0]}, {self.ts[-1]}]")
        tq = np.clip(tq, self.ts[0], self.ts[-1])
        idx = np.searchsorted(self.ts, tq, side="right") - 1
        idx = np.clip(idx, 0, len(self.ts) - 2)
        t0 = self.ts[idx]
        h = self.ts[idx + 1] - t0
        th = ((tq - t0) / h)[:, None]
        x0, x1 = self.xs[idx], self.xs[idx + 1]
        f0, f1 = self.fs[idx], self.fs[idx + 1]
        hh = h[:, None]
        # cubic Hermite, exact at both endpoints
        out = ((1 - th) * x0 + th * x1
               + th * (th - 1) * ((1 - 2 * th) * (x1 - x0)
                                  + (th - 1) * hh * f0 + th * hh * f1))
        exact = th[:, 0] == 0.0
        if np.any(exact):
            out[exact] = x0[exact]
        exact1 = th[:, 0] == 1.0
        if np.any(exact1):
            out[exact1] = x1[exact1]
        return out

    def dense_times(self, per_step: int = 10) -> np.ndarray:
        """A grid at `per_step` times the accepted-step density."""
        pieces = [np.linspace(self.ts[i], self.ts[i + 1], per_step,
                              endpoint=False)
                  for i in range(len(self.ts) - 1)]
        pieces.append(self.ts[-1:])
        return np.concatenate(pieces)

    def to_csv(self, path) -> None:
        n = self.dimension
        with open(path, "w", newline="\n") as fh:
            fh.write("t," + ",".join(f"x{i + 1}" for i in range(n)) + "\n")
            for t, x in zip(self.ts, self.xs):
                row = ",".join(f"{v:.17g}" for v in x)
                fh.write(f"{t:.17g},{row}\n")


def _rhs(system: VectorFieldSpec, x: np.ndarray) -> np.ndarray:
    return system(x)


def _error_norm(err, x_old, x_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(x_old), np.abs(x_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(system, x0, f0, cfg):
    d0 = float(np.linalg.norm(x0))
    d1 = float(np.linalg.norm(f0))
    if d1 < 1e-10 or d0 < 1e-10:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    return min(h, cfg.max_step, cfg.t_max)


def integrate(system: VectorFieldSpec, x0, config: Optional[IntegratorConfig]
              = None) -> Trajectory:
    """Integral curve from x0 at t = 0 up to the first termination event."""
    cfg = config or IntegratorConfig()
    x = np.asarray(x0, dtype=float)
    if x.shape != (system.dimension,):
        raise ValueError(
            f"initial condition has shape {x.shape}, expected "
            f"({system.dimension},)")
    if not system.domain.contains(x):
        raise ValueError(f"initial condition {x.tolist()} outside domain")

    ts = [0.0]
    xs = [x.copy()]
    f = _rhs(system, x)
    if not np.all(np.isfinite(f)):
        raise ValueError("vector field not finite at the initial condition")
    fs = [f.copy()]

    t = 0.0
    h = config.initial_step if config and config.initial_step else \
        _initial_step(system, x, f, cfg)
    h = min(h, cfg.max_step, cfg.t_max)
    err_prev = 1.0
    termination = None
    term_time = None
    k = np.empty((7, x.size))

    while True:
        if t >= cfg.t_max:
            termination = Termination.REACHED_HORIZON
            term_time = t
            break
        h = min(h, cfg.max_step)
        last = t + h >= cfg.t_max
        if last:
            h = cfg.t_max - t
        h_min = 1e-12 * max(1.0, abs(t))
        if h < h_min:
            termination = Termination.STEP_UNDERFLOW
            term_time = t
            break

        failed = False
        k[0] = f
        try:
            for i in range(1, 7):
                xi = x + h * sum(a * k[j] for j, a in enumerate(_A[i]))
                k[i] = _rhs(system, xi)
            x_new = x + h * (_B5 @ k)
            err = h * (_E @ k)
            if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(err))):
                failed = True
        except (DomainFault, FloatingPointError, OverflowError):
            failed = True

        if failed:
            h *= 0.5
            if h < h_min:
                # repeated rejection right at the boundary counts as exit
                termination = (Termination.DOMAIN_EXIT
                               if system.domain.boundary_distance(x)
                               < 2 * cfg.domain_margin
                               else Termination.STEP_UNDERFLOW)
                term_time = t
                break
            continue

        err_norm = _error_norm(err, x, x_new, cfg.rtol, cfg.atol)
        if err_norm > 1.0:
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            continue

        if not system.domain.contains(x_new):
            h *= 0.5
            if h < h_min:
                termination = Termination.DOMAIN_EXIT
                term_time = t
                break
            continue

        # accept
        t = cfg.t_max if last else t + h
        x = x_new
        f = k[6].copy()  # FSAL
        ts.append(t)
        xs.append(x.copy())
        fs.append(f.copy())

        if float(np.linalg.norm(x)) >= cfg.blowup_norm:
            termination = Termination.BLOW_UP
            term_time = t
            break
        if system.domain.boundary_distance(x) <= cfg.domain_margin:
            termination = Termination.DOMAIN_EXIT
            term_time = t
            break

        # PI step controller
        if err_norm == 0.0:
            factor = 5.0
        else:
            factor = 0.9 * err_norm ** -0.14 * err_prev ** 0.08
            factor = min(5.0, max(0.2, factor))
        err_prev = max(err_norm, 1e-10)
        h *= factor

    return Trajectory(system, x0, ts, xs, fs, termination, term_time)


def sample(traj: Trajectory, t: float) -> np.ndarray:
    return traj.sample(t)


def is_equilibrium(system: VectorFieldSpec, x, tol: float) -> bool:
    """True iff the max-norm of the field at x is within tol."""
    if not system.domain.contains(x):
        raise ValueError("point outside domain")
    return float(np.max(np.abs(system(x)))) <= tol
