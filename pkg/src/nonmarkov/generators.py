"""Markovian generators and memory kernels.

All maps use the Heisenberg convention: a CP map ``F`` is given by Kraus
operators ``v_k`` through ``F(a) = sum_k v_k^dagger a v_k``. The Schrodinger
picture is reached with :func:`~nonmarkov.operator_core.adjoint`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .operator_core import (
    DimensionError,
    SuperOperator,
    _as_operator,
    apply,
    certify,
    is_hermitian,
)

SMOOTHNESS = ("continuous", "piecewise-continuous")


def commutator_map(h) -> np.ndarray:
    """Matrix of ``a -> i[h, a]``."""
    h = _as_operator(h)
    eye = np.eye(h.shape[0], dtype=complex)
    return 1j * (np.kron(eye, h) - np.kron(h.T, eye))


def anticommutator_map(x) -> np.ndarray:
    """Matrix of ``a -> {x, a}``."""
    x = _as_operator(x)
    eye = np.eye(x.shape[0], dtype=complex)
    return np.kron(eye, x) + np.kron(x.T, eye)


@dataclass(frozen=True)
class GkslSpec:
    """Hamiltonian ``h`` and Kraus operators of the CP map ``F``."""

    h: np.ndarray
    kraus: Sequence[np.ndarray] = ()

    def __post_init__(self):
        h = _as_operator(self.h)
        if not is_hermitian(h):
            raise ValueError("Hamiltonian is not Hermitian")
        kraus = tuple(_as_operator(v) for v in self.kraus)
        for v in kraus:
            if v.shape != h.shape:
                raise DimensionError(f"Kraus operator shape {v.shape} != {h.shape}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "kraus", kraus)

    @property
    def dim(self) -> int:
        return self.h.shape[0]


def gksl(spec: GkslSpec) -> SuperOperator:
    """Generator ``L a = i[h, a] + F a - 1/2 {F(1), a}``."""
    d = spec.dim
    f = SuperOperator.from_kraus(spec.kraus, d)
    f1 = apply(f, np.eye(d))
    return SuperOperator(commutator_map(spec.h) + f.matrix - 0.5 * anticommutator_map(f1))


@dataclass(frozen=True)
class ExpForm:
    """Closed exponential structure ``K(t) = coef * exp(t G) @ base``.

    ``G`` is either ``-rate * id`` (``rate`` set) or a full superoperator
    (``generator`` set). Solvers use this to update history sums recursively.
    """

    coef: float
    base: np.ndarray
    rate: Optional[float] = None
    generator: Optional[np.ndarray] = None

    def step_factor(self, dt: float):
        """``exp(dt G)`` as a scalar or a matrix."""
        if self.generator is None:
            return np.exp(-self.rate * dt)
        return expm(dt * self.generator)

    def hat(self, p: float) -> np.ndarray:
        """Laplace transform at real ``p`` (right of the abscissa)."""
        if self.generator is None:
            if p <= -self.rate:
                raise ValueError(f"p={p} is not right of the abscissa {-self.rate}")
            return self.coef / (p + self.rate) * self.base
        n = self.generator.shape[0]
        shifted = p * np.eye(n) - self.generator
        abscissa = float(np.max(np.linalg.eigvals(self.generator).real))
        if p <= abscissa:
            raise ValueError(f"p={p} is not right of the abscissa {abscissa}")
        return self.coef * np.linalg.solve(shifted, self.base)

    def abscissa(self) -> float:
        if self.generator is None:
            return -self.rate
        return float(np.max(np.linalg.eigvals(self.generator).real))


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """A time-indexed superoperator family ``t -> K(t)`` on M_d.

    ``fn`` returns the ``(d**2, d**2)`` matrix at time ``t`` and must be a pure
    function of ``t``.
    """

    dim: int
    fn: Callable[[float], np.ndarray]
    exp_form: Optional[ExpForm] = None
    smoothness: str = "continuous"
    is_zero: bool = False

    def __post_init__(self):
        if self.smoothness not in SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {SMOOTHNESS}")

    def matrix_at(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError(f"kernel evaluated at negative time {t}")
        return np.asarray(self.fn(t), dtype=complex)

    def at(self, t: float) -> SuperOperator:
        return SuperOperator(self.matrix_at(t))

    def on_grid(self, times) -> np.ndarray:
        """Stack of kernel matrices, shape ``(len(times), d**2, d**2)``."""
        times = np.asarray(times, dtype=float)
        dd = self.dim * self.dim
        if self.is_zero:
            return np.zeros((times.size, dd, dd), dtype=complex)
        if self.exp_form is not None and self.exp_form.generator is None:
            ef = self.exp_form
            w = ef.coef * np.exp(-ef.rate * times)
            return w[:, None, None] * ef.base[None]
        return np.stack([self.matrix_at(t) for t in times])

    def __add__(self, other: "KernelFamily") -> "KernelFamily":
        if self.dim != other.dim:
            raise DimensionError("kernel dimension mismatch")
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        ef = None
        a, b = self.exp_form, other.exp_form
        if (a is not None and b is not None and a.generator is None
                and b.generator is None and a.rate == b.rate):
            # same decay: fold into one term with coef 1
            ef = ExpForm(1.0, a.coef * a.base + b.coef * b.base, rate=a.rate)
        smooth = ("continuous" if self.smoothness == other.smoothness == "continuous"
                  else "piecewise-continuous")
        f, g = self.fn, other.fn
        return KernelFamily(self.dim, lambda t: f(t) + g(t), ef, smooth)

    @classmethod
    def zero(cls, d: int) -> "KernelFamily":
        dd = d * d
        return cls(d, lambda t: np.zeros((dd, dd), dtype=complex), is_zero=True)

    @classmethod
    def exponential(cls, coef: float, base, rate: float) -> "KernelFamily":
        """``K(t) = coef * exp(-rate t) * base``."""
        base = np.array(base.matrix if isinstance(base, SuperOperator) else base,
                        dtype=complex)
        base.flags.writeable = False
        d = int(round(np.sqrt(base.shape[0])))
        return cls(d, lambda t: coef * np.exp(-rate * t) * base,
                   ExpForm(coef, base, rate=float(rate)))

    @classmethod
    def semigroup(cls, generator: SuperOperator, weight: float = 1.0) -> "KernelFamily":
        """``K(t) = weight * exp(t L)``; CP whenever ``L`` is a GKSL generator."""
        g = np.array(generator.matrix)
        g.flags.writeable = False
        eye = np.eye(g.shape[0], dtype=complex)
        return cls(generator.dim, lambda t: weight * expm(t * g),
                   ExpForm(weight, eye, generator=g))

    @classmethod
    def from_kraus(cls, kraus_fn: Callable[[float], Sequence], d: int,
                   smoothness: str = "continuous") -> "KernelFamily":
        """Time-dependent Heisenberg Kraus family ``t -> [v_k(t)]``."""
        return cls(d, lambda t: SuperOperator.from_kraus(kraus_fn(t), d).matrix,
                   smoothness=smoothness)


def check_cp_family(family: KernelFamily, times, tol: float = 1e-9) -> None:
    """Raise if ``family`` fails CP certification at any of ``times``."""
    if family.is_zero:
        return
    for t in np.atleast_1d(times):
        cert = certify(family.at(float(t)), tol=tol)
        if not cert.is_cp:
            raise ValueError(
                f"kernel is not CP at t={t:g} "
                f"(min Choi eigenvalue {cert.min_choi_eigenvalue:.3e})"
            )


def compensator_matrix(b_t: np.ndarray, h_t=None) -> np.ndarray:
    """Matrix of ``Z a = -1/2 {B(1), a} + i[h, a]`` for a given ``B``."""
    d = int(round(np.sqrt(b_t.shape[0])))
    one = np.eye(d, dtype=complex).reshape(-1, order="F")
    b1 = (b_t @ one).reshape((d, d), order="F")
    z = -0.5 * anticommutator_map(b1)
    if h_t is not None:
        z = z + commutator_map(h_t)
    return z


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Memory kernel ``L_t = B_t + Z_t`` with CP part ``B_t``.

    The compensator ``Z_t a = -1/2 {B_t(1), a} + i[h_t, a]`` is rebuilt on
    demand, so ``L_t(1) = 0`` holds by construction.

    Parameters
    ----------
    cp_part : KernelFamily
        The CP family ``B_t``.
    h_t : callable, optional
        ``t -> h_t`` Hermitian operator; ``None`` means ``h_t = 0``.
    validate_times : sequence of float, optional
        Times at which ``B_t`` is certified CP on construction.
    """

    cp_part: KernelFamily
    h_t: Optional[Callable[[float], np.ndarray]] = None
    validate_times: Optional[Sequence[float]] = field(default=(0.0, 0.5, 1.0, 2.0, 5.0))

    def __post_init__(self):
        if self.validate_times is not None:
            check_cp_family(self.cp_part, self.validate_times)
            if self.h_t is not None:
                for t in self.validate_times:
                    if not is_hermitian(self.h_t(t)):
                        raise ValueError(f"h_t is not Hermitian at t={t:g}")

    @property
    def dim(self) -> int:
        return self.cp_part.dim

    def compensator(self) -> KernelFamily:
        """``Z_t`` as a kernel family."""
        b = self.cp_part
        if b.is_zero and self.h_t is None:
            return KernelFamily.zero(self.dim)
        h_t = self.h_t

        def z(t):
            return compensator_matrix(b.matrix_at(t), None if h_t is None else h_t(t))

        ef = None
        if h_t is None and b.exp_form is not None and b.exp_form.generator is None:
            zb = compensator_matrix(b.exp_form.base)
            ef = ExpForm(b.exp_form.coef, zb, rate=b.exp_form.rate)
        return KernelFamily(self.dim, z, ef, b.smoothness)

    def memory(self) -> KernelFamily:
        """The full kernel ``L_t = B_t + Z_t``."""
        return self.cp_part + self.compensator()

    @classmethod
    def zero(cls, d: int) -> "KernelSpec":
        return cls(KernelFamily.zero(d))


def kernel_at(k: KernelSpec, t: float):
    """Return ``(B_t, Z_t, L_t)`` as superoperators."""
    if t < 0:
        raise ValueError(f"kernel evaluated at negative time {t}")
    b = k.cp_part.matrix_at(t)
    h = None if k.h_t is None else k.h_t(t)
    z = compensator_matrix(b, h)
    return SuperOperator(b), SuperOperator(z), SuperOperator(b + z)


def ls_kernel(kappa: float, gamma: float, t):
    """Exponential memory function ``kappa**2 * exp(-2 kappa gamma t)``."""
    return kappa**2 * np.exp(-2.0 * kappa * gamma * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class LidarShabaniParams:
    kappa: float
    gamma: float
    channel: SuperOperator

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        cert = certify(self.channel)
        if not cert.is_cp:
            raise ValueError(
                f"channel is not CP (min Choi eigenvalue {cert.min_choi_eigenvalue:.3e})"
            )
        if cert.unitality_residual > 1e-9:
            raise ValueError(f"channel is not unital (residual {cert.unitality_residual:.3e})")


def lidar_shabani(p: LidarShabaniParams) -> KernelSpec:
    """Kernel ``B_t = k(t) B``, ``h_t = 0`` with the exponential memory function.

    With ``B`` unital the compensator is ``-k(t) id``, so the master equation
    with ``L = 0`` reads ``dA/dt = int k(t-s) (B - id) A_s ds``.
    """
    family = KernelFamily.exponential(p.kappa**2, p.channel, 2.0 * p.kappa * p.gamma)
    return KernelSpec(family, validate_times=(0.0,))


def dephasing_channel(d: int = 2) -> SuperOperator:
    """``a -> sigma_z a sigma_z`` generalised to ``diag(+1, -1, +1, ...)``."""
    z = np.diag([(-1.0) ** i for i in range(d)]).astype(complex)
    return SuperOperator.from_kraus([z])
