"""Closed-form references for the exponential memory kernel and the semigroup case."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .operator_core import SuperOperator

#: below this distance from gamma = 1 the critical branch is used
CRITICAL_RADIUS = 1e-8


class Branch(str, enum.Enum):
    UNDER = "under"
    CRITICAL = "critical"
    OVER = "over"


@dataclass(frozen=True)
class FBranchResult:
    value: float
    branch: Branch


def branch_of(gamma: float) -> Branch:
    if abs(gamma - 1.0) < CRITICAL_RADIUS:
        return Branch.CRITICAL
    return Branch.UNDER if gamma < 1.0 else Branch.OVER


def _f(kappa: float, gamma: float, t, branch: Branch):
    t = np.asarray(t, dtype=float)
    decay = np.exp(-kappa * gamma * t)
    if branch is Branch.CRITICAL:
        return np.exp(-kappa * t) * (1.0 + kappa * t)
    if branch is Branch.UNDER:
        root = np.sqrt(1.0 - gamma**2)
        w = kappa * root * t
        return decay * (np.cos(w) + gamma / root * np.sin(w))
    root = np.sqrt(gamma**2 - 1.0)
    w = kappa * root * t
    # cosh/sinh are rewritten with exp(-(gamma - root) kappa t) to avoid overflow
    grow = np.exp(-kappa * (gamma - root) * t)
    shrink = np.exp(-kappa * (gamma + root) * t)
    return 0.5 * (grow + shrink) + 0.5 * gamma / root * (grow - shrink)


def f_closed_form(kappa: float, gamma: float, t) -> FBranchResult:
    """Solution of ``f' = -int_0^t k(t-s) f(s) ds``, ``f(0) = 1``.

    The kernel is ``k(t) = kappa**2 exp(-2 kappa gamma t)``. ``t`` may be a
    scalar or an array; ``value`` has the matching shape.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not gamma >= 0:
        raise ValueError("gamma must be nonnegative")
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    branch = branch_of(gamma)
    value = _f(kappa, gamma, t, branch)
    if np.ndim(value) == 0:
        value = float(value)
    return FBranchResult(value, branch)


def f_is_nonnegative(kappa: float, gamma: float, t_max: float,
                     grid: int = 1000) -> Tuple[bool, Optional[float]]:
    """Scan ``f`` on ``[0, t_max]`` and locate the first sign change.

    Returns ``(True, None)`` if no negative value is found, otherwise
    ``(False, t0)`` where ``t0`` is the first zero, refined by bisection.
    """
    if grid < 100:
        raise ValueError("grid must be >= 100")
    ts = np.linspace(0.0, t_max, grid + 1)
    vals = f_closed_form(kappa, gamma, ts).value
    neg = np.nonzero(vals < 0)[0]
    if neg.size == 0:
        return True, None
    k = int(neg[0])
    lo, hi = ts[k - 1], ts[k]
    root = brentq(lambda t: f_closed_form(kappa, gamma, t).value, lo, hi, xtol=1e-14)
    return False, float(root)


def expm_superop(L: SuperOperator, t: float) -> SuperOperator:
    """``exp(t L)`` (scaling-and-squaring Pade)."""
    if not np.all(np.isfinite(L.matrix)):
        raise ValueError("generator has non-finite entries")
    return SuperOperator(expm(t * L.matrix))


def semigroup_solution(L: SuperOperator, lam: float, t: float) -> SuperOperator:
    """``cosh(lam t) exp(t L)``, which solves the semigroup-kernel modified equation."""
    return np.cosh(lam * t) * expm_superop(L, t)
