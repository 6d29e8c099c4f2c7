"""Laplace-domain checks of solver output.

Only real ``p > 0`` are used. For a trajectory ``X_t`` solving
``dX/dt = G X + int K(t-s) X_s ds`` the transform must satisfy

    (p id - G - K_hat(p)) X_hat(p) = id           (left)
    X_hat(p) (p id - G - K_hat(p)) = id           (right)
    X_hat = R0 + R0 C_hat X_hat                   (factored)

where the kernel is split as ``K = C + D`` and ``R0 = (p id - G - D_hat)^{-1}``.
For master-equation trajectories ``C`` is the CP part ``B_t`` and ``D`` the
compensator ``Z_t``; for modified-equation trajectories ``D = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad_vec

from .generators import KernelFamily, KernelSpec
from .operator_core import SuperOperator
from .volterra import Trajectory

MIN_DECAY = 20.0


class HorizonError(ValueError):
    pass


def truncation_estimate(traj: Trajectory, p: float) -> float:
    t_max = float(traj.times[-1])
    return float(np.linalg.norm(traj.samples[-1], 2) * np.exp(-p * t_max) / p)


def laplace_of_trajectory(traj: Trajectory, p: float,
                          min_decay: float = MIN_DECAY) -> SuperOperator:
    """Trapezoid rule for ``int_0^{t_max} exp(-p t) X_t dt``.

    Raises
    ------
    HorizonError
        If ``p * t_max < min_decay``; lower ``min_decay`` to override.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    t_max = float(traj.times[-1])
    if p * t_max < min_decay:
        raise HorizonError(
            f"p * t_max = {p * t_max:g} < {min_decay:g}; horizon too short for p={p}"
        )
    w = np.exp(-p * traj.times)
    w[0] *= 0.5
    w[-1] *= 0.5
    return SuperOperator(traj.dt * np.tensordot(w, traj.samples, axes=1))


def _family_hat(family: KernelFamily, p: float, horizon: Optional[float]) -> np.ndarray:
    dd = family.dim * family.dim
    if family.is_zero:
        return np.zeros((dd, dd), dtype=complex)
    if family.exp_form is not None:
        return family.exp_form.hat(p)
    if horizon is None:
        raise ValueError("kernel has no closed-form transform; pass a horizon")
    val, _ = quad_vec(lambda t: np.exp(-p * t) * family.matrix_at(t), 0.0, horizon,
                      epsabs=1e-12, epsrel=1e-10)
    return val


def kernel_hat(kernel: Union[KernelSpec, KernelFamily], p: float,
               horizon: Optional[float] = None) -> SuperOperator:
    """Laplace transform of a kernel at real ``p``.

    A :class:`KernelSpec` is transformed as its full kernel ``B_t + Z_t``.
    Exponential kernels use the closed form; others need a finite
    ``horizon`` for numerical quadrature.
    """
    family = kernel.memory() if isinstance(kernel, KernelSpec) else kernel
    return SuperOperator(_family_hat(family, p, horizon))


@dataclass
class ResolventReport:
    p_values: list
    residual_direct: list = field(default_factory=list)
    residual_right: list = field(default_factory=list)
    residual_factored: list = field(default_factory=list)
    truncation_estimate: list = field(default_factory=list)
    allowance: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        if self.errors:
            return False
        for rd, rr, rf, a in zip(self.residual_direct, self.residual_right,
                                 self.residual_factored, self.allowance):
            if max(rd, rr, rf) > a:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "p_values": list(self.p_values),
            "residual_direct": self.residual_direct,
            "residual_right": self.residual_right,
            "residual_factored": self.residual_factored,
            "truncation_estimate": self.truncation_estimate,
            "tol": self.tol,
            "errors": {str(k): v for k, v in self.errors.items()},
            "passed": self.passed,
        }


def abscissa_margin(g: SuperOperator, *families: KernelFamily) -> float:
    """Smallest admissible ``p``: ``1.1 * max(0.5, growth bound)``."""
    bound = float(np.max(np.linalg.eigvals(g.matrix).real))
    for fam in families:
        if fam.exp_form is not None and not fam.is_zero:
            bound = max(bound, fam.exp_form.abscissa())
    return 1.1 * max(0.5, bound)


def verify_resolvent(traj: Trajectory, generator: SuperOperator,
                     kernel: Union[KernelSpec, KernelFamily, None],
                     p_values: Sequence[float], tol: float = 1e-3,
                     horizon: Optional[float] = None,
                     min_decay: float = MIN_DECAY,
                     enforce_margin: bool = True) -> ResolventReport:
    """Compute left, right and factored resolvent residuals at each ``p``.

    ``kernel`` is a :class:`KernelSpec` for ``A`` (master) and ``N``
    (normalization) trajectories, or the CP family ``B_t`` for ``V``
    (modified) trajectories; ``None`` means no memory.
    """
    d = generator.dim
    dd = d * d
    eye = np.eye(dd)
    if kernel is None:
        cp_fam, rest_fam = KernelFamily.zero(d), KernelFamily.zero(d)
    elif isinstance(kernel, KernelFamily):
        cp_fam, rest_fam = kernel, KernelFamily.zero(d)
    elif traj.label == "N":
        cp_fam, rest_fam = KernelFamily.zero(d), kernel.compensator()
    else:
        cp_fam, rest_fam = kernel.cp_part, kernel.compensator()

    margin = abscissa_margin(generator, cp_fam, rest_fam)
    report = ResolventReport(list(p_values), tol=tol)
    g = generator.matrix
    for p in p_values:
        if enforce_margin and p < margin:
            raise ValueError(f"p={p} is below the abscissa margin {margin:.3g}")
        xhat = laplace_of_trajectory(traj, p, min_decay).matrix
        trunc = truncation_estimate(traj, p)
        c_hat = _family_hat(cp_fam, p, horizon)
        r_hat = _family_hat(rest_fam, p, horizon)
        shifted = p * eye - g - r_hat
        full = shifted - c_hat
        report.truncation_estimate.append(trunc)
        report.allowance.append(tol + trunc * float(np.linalg.norm(full, 2)))
        report.residual_direct.append(float(np.linalg.norm(full @ xhat - eye, 2)))
        report.residual_right.append(float(np.linalg.norm(xhat @ full - eye, 2)))
        try:
            if np.linalg.cond(shifted) > 1e12:
                raise np.linalg.LinAlgError("near-singular")
            r0 = np.linalg.inv(shifted)
        except np.linalg.LinAlgError as exc:
            report.errors[p] = f"singular (p id - G - D_hat): {exc}"
            report.residual_factored.append(float("nan"))
            continue
        report.residual_factored.append(
            float(np.linalg.norm(xhat - r0 - r0 @ c_hat @ xhat, 2))
        )
    return report
