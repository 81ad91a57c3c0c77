"""Controlled Lorenz dynamics as a symbolic-regression experiment.

The task: find a control law u(x, y, z) that, injected additively into one
channel of the Lorenz system, steers the chaotic trajectory to the origin.
Candidates are scored by four objectives: the RMSE of each state component
against zero over a fixed integration grid, plus expression length.

Integration is classical fixed-step RK4 on n samples including both
endpoints; divergence is represented in-band (non-finite states, infinite
error objectives), never raised.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .assessment import Measure
from .constopt import ConstOptProblem, optimize_constants
from .errors import ParseError
from .evolution import Individual
from .expressions import (
    Expression,
    PrimitiveSet,
    build_pset,
    compile_callable,
    constant_names,
    length,
    parse_prefix,
)
from .protocol import ExperimentHandler, serve


class Channel(enum.Enum):
    """Which state derivative receives the additive actuation term."""

    Y = "y"
    Z = "z"
    NONE = "none"


@dataclass(frozen=True)
class LorenzParams:
    """Classic chaotic-regime parameters by default."""

    s: float = 10.0  # Prandtl number
    r: float = 28.0  # Rayleigh number
    b: float = 8.0 / 3.0  # aspect-ratio parameter

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.s, self.r, self.b)):
            raise ValueError("Lorenz parameters must be finite")


@dataclass(frozen=True)
class SimSetup:
    """One experiment definition: dynamics, grid, and actuation channel."""

    params: LorenzParams = LorenzParams()
    initial_state: tuple[float, float, float] = (10.0, 1.0, 5.0)
    t0: float = 0.0
    tn: float = 100.0
    n: int = 5000
    channel: Channel = Channel.Y

    def __post_init__(self) -> None:
        # accept the plain string spelling ("y", "z", "none") so configs and
        # CLI flags do not have to import the enum
        if not isinstance(self.channel, Channel):
            object.__setattr__(self, "channel", Channel(self.channel))
        if not self.tn > self.t0:
            raise ValueError("need tn > t0")
        if self.n < 2:
            raise ValueError("need at least 2 samples")
        if len(self.initial_state) != 3 or not all(
            math.isfinite(v) for v in self.initial_state
        ):
            raise ValueError("initial state must be 3 finite reals")


def default_setup(channel: Channel = Channel.Y) -> SimSetup:
    """The benchmark grid: start (10, 1, 5), 5000 samples over [0, 100]."""
    return SimSetup(channel=channel)


@dataclass(frozen=True)
class Trajectory:
    times: tuple[float, ...]
    states: tuple[tuple[float, float, float], ...]

    @property
    def diverged(self) -> bool:
        # divergence short-circuits, so the last sample tells the story
        return not all(math.isfinite(v) for v in self.states[-1])


ControlFn = Callable[[float, float, float], float]


def rhs(
    state: tuple[float, float, float],
    params: LorenzParams,
    u_value: float,
    channel: Channel,
) -> tuple[float, float, float]:
    """Controlled Lorenz vector field at one point."""
    x, y, z = state
    dx = params.s * (y - x)
    dy = params.r * x - y - x * z
    dz = x * y - params.b * z
    if channel is Channel.Y:
        dy += u_value
    elif channel is Channel.Z:
        dz += u_value
    return dx, dy, dz


def integrate(setup: SimSetup, control: ControlFn | None) -> Trajectory:
    """Fixed-step RK4 over the setup grid.

    ``control`` may be None only for the uncontrolled channel.  When a state
    goes non-finite the remaining samples are filled with nan so the
    trajectory always has exactly ``setup.n`` samples.
    """
    params = setup.params
    s, r, b = params.s, params.r, params.b
    n = setup.n
    h = (setup.tn - setup.t0) / (n - 1)
    channel = setup.channel
    if control is None and channel is not Channel.NONE:
        raise ValueError(f"channel {channel.value} needs a control function")

    # Per-channel derivative closures keep the hot loop branch-free and
    # arithmetically identical to rhs().
    if channel is Channel.Y:
        def deriv(x: float, y: float, z: float):
            return (
                s * (y - x),
                r * x - y - x * z + control(x, y, z),
                x * y - b * z,
            )
    elif channel is Channel.Z:
        def deriv(x: float, y: float, z: float):
            return (
                s * (y - x),
                r * x - y - x * z,
                x * y - b * z + control(x, y, z),
            )
    else:
        def deriv(x: float, y: float, z: float):
            return s * (y - x), r * x - y - x * z, x * y - b * z

    times = tuple(setup.t0 + i * h for i in range(n))
    x, y, z = setup.initial_state
    states: list[tuple[float, float, float]] = [(x, y, z)]
    half = h / 2.0
    sixth = h / 6.0
    isfinite = math.isfinite
    for i in range(1, n):
        dx1, dy1, dz1 = deriv(x, y, z)
        dx2, dy2, dz2 = deriv(x + half * dx1, y + half * dy1, z + half * dz1)
        dx3, dy3, dz3 = deriv(x + half * dx2, y + half * dy2, z + half * dz2)
        dx4, dy4, dz4 = deriv(x + h * dx3, y + h * dy3, z + h * dz3)
        x = x + sixth * (dx1 + 2.0 * (dx2 + dx3) + dx4)
        y = y + sixth * (dy1 + 2.0 * (dy2 + dy3) + dy4)
        z = z + sixth * (dz1 + 2.0 * (dz2 + dz3) + dz4)
        if not (isfinite(x) and isfinite(y) and isfinite(z)):
            tail = n - i
            states.extend([(math.nan, math.nan, math.nan)] * tail)
            break
        states.append((x, y, z))
    return Trajectory(times, tuple(states))


def _rmse_to_zero(samples: Sequence[float]) -> float:
    total = math.fsum(v * v for v in samples)
    return math.sqrt(total / len(samples))


def objectives(
    expr: Expression,
    constants: Mapping[str, float] | None,
    setup: SimSetup,
) -> tuple[float, float, float, float]:
    """Score one control law: (rmse_x, rmse_y, rmse_z, length).

    Unresolved symbolic constants default to 1.0 (the documented server
    behavior).  A diverging trajectory yields infinite error objectives;
    the length objective never depends on the simulation.
    """
    size = float(length(expr))
    control = None
    if setup.channel is not Channel.NONE:
        control = compile_callable(expr, ("x", "y", "z"), constants)
    trajectory = integrate(setup, control)
    if trajectory.diverged:
        return (math.inf, math.inf, math.inf, size)
    columns = zip(*trajectory.states)
    gammas = tuple(_rmse_to_zero(column) for column in columns)
    if not all(math.isfinite(g) for g in gammas):
        return (math.inf, math.inf, math.inf, size)
    return (*gammas, size)


def lorenz_pset() -> PrimitiveSet:
    """The benchmark alphabet: arithmetic plus Exp/Sin, states, one constant."""
    return build_pset(
        {"Add": 2, "Sub": 2, "Mul": 2, "Neg": 1, "Exp": 1, "Sin": 1},
        ["x", "y", "z"],
        ["k"],
    )


def make_measures(setup: SimSetup) -> list[Measure]:
    """Four objectives as measures sharing one simulation per candidate.

    The three error measures consult a memo keyed on the canonical prefix
    string, so assessing an individual runs exactly one integration.
    """
    memo: dict[str, tuple[float, float, float]] = {}

    def gammas_for(ind: Individual) -> tuple[float, float, float]:
        key = ind.key()
        hit = memo.get(key)
        if hit is None:
            if len(memo) > 8192:  # crude bound, full precision not needed twice
                memo.clear()
            hit = objectives(ind.expr, ind.constants, setup)[:3]
            memo[key] = hit
        return hit

    return [
        Measure("rmse_x", lambda ind: gammas_for(ind)[0]),
        Measure("rmse_y", lambda ind: gammas_for(ind)[1]),
        Measure("rmse_z", lambda ind: gammas_for(ind)[2]),
        Measure("length", lambda ind: float(length(ind.expr))),
    ]


def make_fit_constants(
    setup: SimSetup, max_iterations: int = 30
) -> Callable[[Individual], None]:
    """Constant-fitting hook: least-squares on the stacked error objectives.

    The length objective is constant in the fitted values and excluded.
    """

    def fit(ind: Individual) -> None:
        names = constant_names(ind.expr)
        if not names:
            return

        def residual(values: Sequence[float]) -> Sequence[float]:
            constants = dict(zip(names, values))
            return objectives(ind.expr, constants, setup)[:3]

        outcome = optimize_constants(
            ConstOptProblem(
                ind.expr, names, residual, max_iterations=max_iterations
            )
        )
        ind.constants = dict(zip(names, outcome.values))

    return fit


class LorenzHandler(ExperimentHandler):
    """Experiment server for the control task.

    Expressions arrive as prefix strings; a symbolic ``k`` without a numeric
    literal is evaluated at the default 1.0 (the protocol carries no
    constant channel).  Unparseable entries score +inf everywhere.
    """

    objective_count = 4

    def __init__(self, setup: SimSetup | None = None) -> None:
        self.setup = setup if setup is not None else default_setup()
        self.pset = lorenz_pset()

    def on_config(self) -> dict:
        primitives: dict[str, int] = {
            prim.name: prim.arity for prim in self.pset.functions
        }
        for name in self.pset.terminals:
            primitives[name] = 0
        return {"primitives": primitives, "constants": list(self.pset.constants)}

    def evaluate_expression(self, text: str) -> tuple[float, ...]:
        expr = parse_prefix(text, self.pset)  # ParseError contained by base
        return objectives(expr, None, self.setup)


def lorenz_server(endpoint: str, setup: SimSetup | None = None) -> None:
    """Serve the control experiment until a client sends SHUTDOWN."""
    serve(endpoint, LorenzHandler(setup))


def write_trajectory_csv(path: str | os.PathLike, trajectory: Trajectory) -> None:
    """Dump a trajectory as ``t,x,y,z`` rows for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "x", "y", "z"])
        for t, (x, y, z) in zip(trajectory.times, trajectory.states):
            writer.writerow([repr(t), repr(x), repr(y), repr(z)])
