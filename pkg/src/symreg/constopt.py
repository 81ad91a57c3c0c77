"""Numeric fitting of symbolic constants inside a candidate expression.

A candidate like ``Mul k x`` carries the symbolic constant ``k``; before its
fitness is scored, ``k`` is tuned by damped least squares on a residual
vector supplied by the caller.  The optimizer is deterministic and total:
non-finite residuals are handled in-band, never raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConstOptError
from .expressions import Expression, constant_names

# Forward-difference step scale, sqrt of machine epsilon.
_SQRT_EPS = math.sqrt(float(np.finfo(float).eps))

DEFAULT_MAX_ITERATIONS = 30
DEFAULT_TOLERANCE = 1e-10

_LAMBDA_INIT = 1e-3
_LAMBDA_SHRINK = 0.1
_LAMBDA_GROW = 10.0
_LAMBDA_MAX = 1e12


@dataclass
class ConstOptProblem:
    """One fitting problem: which constants to tune and how to score them.

    ``residual_fn`` maps a constant-value vector (ordered like
    ``constant_names``) to a residual vector of fixed length; it must return
    non-finite entries rather than raise.  Every residual call is typically
    a full experiment run, so ``max_iterations`` is kept small.
    """

    expr: Expression
    constant_names: tuple[str, ...]
    residual_fn: Callable[[Sequence[float]], Sequence[float]]
    initial_guess: tuple[float, ...] = field(default=())
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        self.constant_names = tuple(self.constant_names)
        if self.constant_names != constant_names(self.expr):
            raise ConstOptError(
                "constant_names must match the constant terminals of expr: "
                f"{self.constant_names!r} vs {constant_names(self.expr)!r}"
            )
        if not self.initial_guess:
            self.initial_guess = (1.0,) * len(self.constant_names)
        else:
            self.initial_guess = tuple(float(v) for v in self.initial_guess)
        if len(self.initial_guess) != len(self.constant_names):
            raise ConstOptError("initial_guess length must match constant_names")
        if self.max_iterations < 1:
            raise ConstOptError("max_iterations must be >= 1")


class ConstOptOutcome(NamedTuple):
    values: tuple[float, ...]
    residual_norm: float
    iterations: int


def _call_residual(
    fn: Callable[[Sequence[float]], Sequence[float]], x: np.ndarray
) -> np.ndarray:
    out = np.asarray(fn(tuple(float(v) for v in x)), dtype=float)
    if out.ndim != 1:
        raise ConstOptError(f"residual_fn must return a vector, got shape {out.shape}")
    return out


def _jacobian(
    fn: Callable[[Sequence[float]], Sequence[float]],
    x: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """Forward-difference Jacobian, one residual call per constant."""
    m, n = r.size, x.size
    jac = np.empty((m, n))
    for i in range(n):
        h = _SQRT_EPS * max(1.0, abs(x[i]))
        probe = x.copy()
        probe[i] += h
        jac[:, i] = (_call_residual(fn, probe) - r) / h
    return jac


def optimize_constants(problem: ConstOptProblem) -> ConstOptOutcome:
    """Fit the problem's constants by Levenberg-Marquardt.

    Returns the best values seen, the residual 2-norm there, and the number
    of iterations run.  With no constants the residual is evaluated once and
    the guess returned unchanged; a non-finite initial residual returns the
    guess with an infinite norm so the caller can assign worst fitness.
    The reported cost never exceeds the initial cost.
    """
    fn = problem.residual_fn
    x = np.asarray(problem.initial_guess, dtype=float)
    r = _call_residual(fn, x)

    if not problem.constant_names:
        return ConstOptOutcome((), float(np.linalg.norm(r)), 0)
    if not np.all(np.isfinite(r)):
        return ConstOptOutcome(tuple(x), math.inf, 0)

    cost = float(r @ r)
    best_x, best_cost = x.copy(), cost
    lam = _LAMBDA_INIT
    tol = problem.tolerance
    iterations = 0

    for _ in range(problem.max_iterations):
        iterations += 1
        jac = _jacobian(fn, x, r)
        if not np.all(np.isfinite(jac)):
            break  # constants sit at a cliff; keep the best point found
        gradient = jac.T @ r
        if float(np.max(np.abs(gradient), initial=0.0)) < tol:
            break
        approx_hessian = jac.T @ jac
        diag = np.diag(approx_hessian).copy()
        diag[diag <= 0.0] = 1.0

        # Retry with stronger damping until a step lowers the cost.
        cost_before = cost
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(
                    approx_hessian + lam * np.diag(diag), -gradient
                )
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_GROW
                continue
            candidate = x + step
            r_new = _call_residual(fn, candidate)
            if np.all(np.isfinite(r_new)):
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    x, r, cost = candidate, r_new, cost_new
                    lam = max(lam * _LAMBDA_SHRINK, 1e-12)
                    accepted = True
                    break
            lam *= _LAMBDA_GROW
        if not accepted:
            break
        if cost < best_cost:
            best_x, best_cost = x.copy(), cost
        if cost_before - cost <= tol * max(cost_before, 1.0):
            break

    return ConstOptOutcome(
        tuple(float(v) for v in best_x), math.sqrt(best_cost), iterations
    )
