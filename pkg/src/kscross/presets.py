"""Named experiment configurations.

The 2-D presets use the unit disk with the initial density
``80(x^2+y^2-1)^2(x-0.1)^2 + 5`` (mass 43 pi/5) and c0 = 0; the 3-D presets
use the unit ball with ``10 + 80(x^2+y^2+z^2-1)^2(x-0.4)^2``.
"""
from __future__ import annotations

import math

from .config import RunConfig
from .grid import Ball, Box
from .model import ModelParams
from .solver import StepperConfig

RHO0_2D = "80*(x^2+y^2-1)^2*(x-0.1)^2+5"
RHO0_3D = "10+80*(x^2+y^2+z^2-1)^2*(x-0.4)^2"

DISK = Ball((0.0, 0.0), 1.0)
BALL = Ball((0.0, 0.0, 0.0), 1.0)

# rho_max beyond this counts as blow-up in the disk runs.  At N=128 the
# mass could at most reach ~1e5 in one cell; bounded runs stay near 1e2.
DISK_HARD_CAP = 1e4

_fast = StepperConfig(tau=1e-3, tau_max=0.05, fd_floor=0.005, hard_cap=DISK_HARD_CAP)
# the long runs settle onto a bounded profile, so larger steps are harmless there
_long = StepperConfig(tau=1e-3, tau_max=0.5, fd_floor=0.005, hard_cap=DISK_HARD_CAP)


def _disk(delta: float, n: float, t_end: float, resolution: int = 128,
          stepper: StepperConfig = _fast, **extra) -> RunConfig:
    return RunConfig(
        model=ModelParams(m=0.5, n=n, delta=delta, alpha=1, dim=2),
        region=DISK, resolution=(resolution, resolution), stepper=stepper,
        t_end=t_end, initial_rho=RHO0_2D, initial_c="0", **extra,
    )


def _ball(delta: float, n: float, t_end: float, resolution: int = 48) -> RunConfig:
    return RunConfig(
        model=ModelParams(m=1.0, n=n, delta=delta, alpha=1, dim=3),
        region=BALL, resolution=(resolution,) * 3,
        stepper=StepperConfig(tau=1e-3, tau_max=0.05, hard_cap=1e5),
        t_end=t_end, initial_rho=RHO0_3D, initial_c="0",
    )


PRESETS = {
    "ks2d-fast-blowup": lambda: _disk(0.0, 1.5, 1.0, snapshot_times=(0.0, 0.15)),
    "ks2d-fast-cross": lambda: _disk(0.005, 1.5, 10.0, stepper=_long, snapshot_times=(0.0, 10.0)),
    # templates for the n- and delta-sweeps
    "ks2d-n-sweep": lambda: _disk(0.005, 1.5, 50.0, resolution=96, stepper=_long),
    "ks2d-delta-sweep": lambda: _disk(1e-4, 1.5, 0.15),
    "ks3d-blowup": lambda: _ball(0.0, 1.5, 1.0),
    "ks3d-cross": lambda: _ball(0.005, 1.5, 10.0),
    "decay-1d": lambda: RunConfig(
        model=ModelParams(m=1.0, n=2.0, delta=1.0, alpha=0, dim=1),
        region=Box((0.0,), (1.0,)), resolution=(200,),
        stepper=StepperConfig(tau=0.01, tau_max=0.01),
        t_end=6.0, initial_rho="1+0.3*cos(pi*x)", initial_c="0",
        poincare_const=1.0 / math.pi, decay_window=(0.5, 6.0),
    ),
    "constant": lambda: RunConfig(
        model=ModelParams(m=1.0, n=2.0, delta=0.1, alpha=1, dim=1),
        region=Box((0.0,), (1.0,)), resolution=(50,),
        stepper=StepperConfig(tau=0.01, tau_max=0.01),
        t_end=1.0, initial_rho="2", initial_c="2",
    ),
}


def get_preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None
