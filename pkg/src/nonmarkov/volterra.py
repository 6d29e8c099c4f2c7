"""Time-domain solvers for memory master equations.

Every solver integrates a superoperator-valued Volterra integro-differential
equation

    dX/dt = G X + int_0^t K(t - s) X_s ds,    X_0 = id

(or its right-multiplied mirror ``dX/dt = X G + int X_s K(t - s) ds``) on a
uniform grid. The history integral is a composite trapezoid rule; each step
is an explicit Euler predictor followed by fixed-point corrections of the
implicit trapezoid rule. When the kernel has exponential structure the
history sum is updated recursively in O(1) per step; the result is the same
discretization as the direct O(n) sum, up to rounding.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft

from .generators import KernelFamily, KernelSpec, check_cp_family
from .operator_core import (
    DEFAULT_TOL,
    DEFAULT_TOL_STRICT,
    CpCertificate,
    SuperOperator,
    Verdict,
    certify,
    classify,
    min_choi_eigenvalues,
)

LABELS = ("A", "N", "V", "dual")


class SolverError(RuntimeError):
    """Non-finite values or another unrecoverable integration failure."""


class StabilityWarning(RuntimeWarning):
    pass


class ConvergenceError(RuntimeError):
    """Series iteration did not reach the tolerance within ``max_order``."""

    def __init__(self, message, increment, result):
        super().__init__(message)
        self.increment = increment
        self.result = result


class PositivityFloorError(ValueError):
    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_max: float
    corrector_iterations: int = 2
    history_quadrature: str = "trapezoid"

    def __post_init__(self):
        if not self.dt > 0 or not self.t_max > 0:
            raise ValueError("dt and t_max must be positive")
        if self.corrector_iterations < 1:
            raise ValueError("corrector_iterations must be >= 1")
        if self.history_quadrature != "trapezoid":
            raise ValueError(f"unsupported quadrature {self.history_quadrature!r}")
        ratio = self.t_max / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise ValueError(f"t_max/dt = {ratio} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of a superoperator family on a uniform time grid.

    ``samples`` has shape ``(n + 1, d**2, d**2)``; ``samples[k]`` is the matrix
    at ``times[k]``.
    """

    d: int
    times: np.ndarray
    samples: np.ndarray
    label: str = "A"
    base_label: Optional[str] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        times = np.asarray(self.times, dtype=float)
        samples = np.asarray(self.samples, dtype=complex)
        dd = self.d * self.d
        if samples.ndim != 3 or samples.shape[1:] != (dd, dd):
            raise ValueError(f"samples must have shape (n, {dd}, {dd})")
        if len(times) != len(samples):
            raise ValueError("times and samples differ in length")
        if len(times) > 1:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            dt = (times[-1] - times[0]) / (len(times) - 1)
            if np.max(np.abs(steps - dt)) > 1e-9 * max(dt, times[-1]):
                raise ValueError("time grid is not uniform")
        times.flags.writeable = False
        samples.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "samples", samples)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, k: int) -> SuperOperator:
        return SuperOperator(self.samples[k])

    def at(self, t: float) -> SuperOperator:
        """Sample at the grid point nearest to ``t``."""
        k = int(round((t - self.times[0]) / self.dt)) if self.dt else 0
        if not 0 <= k < len(self.times) or abs(self.times[k] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not on the grid")
        return self[k]

    def apply(self, a) -> np.ndarray:
        """``X_t(a)`` for every sample, shape ``(n + 1, d, d)``."""
        v = np.asarray(a, dtype=complex).reshape(-1, order="F")
        out = self.samples @ v
        return out.reshape(len(self.times), self.d, self.d, order="F")

    def unitality_residuals(self) -> np.ndarray:
        one = np.eye(self.d, dtype=complex)
        return np.linalg.norm(self.apply(one) - one, 2, axis=(1, 2))

    def trace_residuals(self) -> np.ndarray:
        """``max_ij |tr(X_t(E_ij)) - tr(E_ij)|`` per sample."""
        one = np.eye(self.d, dtype=complex).reshape(-1, order="F")
        rows = one @ self.samples  # row i + j*d: tr(X_t(E_ij))
        return np.max(np.abs(rows - one), axis=1)


def _stability_check(g: np.ndarray, kernel: KernelFamily, cfg: SolverConfig) -> None:
    if kernel.is_zero:
        kint = 0.0
    else:
        coarse = np.linspace(0.0, cfg.t_max, 257)
        mats = np.stack([kernel.matrix_at(t) for t in coarse])
        if not np.all(np.isfinite(mats)):
            raise SolverError("kernel has non-finite values")
        kint = float(np.trapezoid(np.linalg.norm(mats, 2, axis=(1, 2)), coarse))
    if not np.all(np.isfinite(g)):
        raise SolverError("generator has non-finite values")
    bound = float(np.max(np.abs(np.linalg.eigvals(g)))) if g.size else 0.0
    score = cfg.dt * (bound + kint)
    if score >= 0.5:
        warnings.warn(
            f"dt * (spectral radius + kernel mass) = {score:.3g} >= 0.5; "
            "results may be inaccurate",
            StabilityWarning,
            stacklevel=3,
        )


def integrate(g, kernel: KernelFamily, cfg: SolverConfig, form: str = "left",
              direct: bool = False) -> np.ndarray:
    """Integrate ``dX/dt = G X + int K(t-s) X_s ds`` from ``X_0 = id``.

    Parameters
    ----------
    g : array_like or SuperOperator
        Instantaneous generator.
    kernel : KernelFamily
        Memory kernel.
    cfg : SolverConfig
    form : {"left", "right"}
        ``"right"`` integrates ``dX/dt = X G + int X_s K(t-s) ds``.
    direct : bool
        Force the O(n) per-step history sum even for exponential kernels.

    Returns
    -------
    ndarray of shape ``(n + 1, d**2, d**2)``
    """
    if form not in ("left", "right"):
        raise ValueError("form must be 'left' or 'right'")
    g = np.asarray(g.matrix if isinstance(g, SuperOperator) else g, dtype=complex)
    dd = g.shape[0]
    if kernel.dim * kernel.dim != dd:
        raise ValueError("kernel and generator dimensions differ")
    _stability_check(g, kernel, cfg)

    n = cfg.n_steps
    dt = cfg.dt
    times = cfg.times
    left = form == "left"
    mul = (lambda a, b: a @ b) if left else (lambda a, b: b @ a)

    out = np.empty((n + 1, dd, dd), dtype=complex)
    eye = np.eye(dd, dtype=complex)
    out[0] = eye

    ef = None if (direct or kernel.is_zero) else kernel.exp_form
    if kernel.is_zero:
        k0 = np.zeros((dd, dd), dtype=complex)
    elif ef is not None:
        k0 = ef.coef * ef.base
        phi = ef.step_factor(dt)
        scalar_phi = ef.generator is None
        # history accumulator and exp(t_n G) for the A_0 endpoint term
        acc = np.zeros((dd, dd), dtype=complex)
        power = 1.0 if scalar_phi else eye.copy()
    else:
        kgrid = kernel.on_grid(times)
        k0 = kgrid[0]

    gg = g + 0.5 * dt * k0
    f_prev = mul(g, eye)  # F_0: history integral vanishes at t = 0
    half_dt = 0.5 * dt
    check_every = 256

    for m in range(n):
        a_m = out[m]
        # history H_{m+1}: every trapezoid term except the unknown endpoint
        if kernel.is_zero:
            hist = None
        elif ef is not None:
            if m > 0:
                if left:
                    acc = (phi * acc if scalar_phi else phi @ acc) + ef.base @ a_m
                else:
                    acc = (acc * phi if scalar_phi else acc @ phi) + a_m
            if scalar_phi:
                power = np.exp(-ef.rate * times[m + 1])
                endpoint = (half_dt * ef.coef * power) * ef.base
                tail = phi * acc
                if not left and m > 0:
                    tail = tail @ ef.base
            else:
                power = phi @ power
                endpoint = (half_dt * ef.coef) * (power @ ef.base)
                if left:
                    tail = phi @ acc
                else:
                    tail = acc @ phi @ ef.base
            hist = endpoint + (dt * ef.coef) * tail if m > 0 else endpoint
        else:
            hist = half_dt * kgrid[m + 1]  # K_{m+1} A_0 with A_0 = id
            if m > 0:
                ks = kgrid[m:0:-1]
                hs = out[1:m + 1]
                hist = hist + dt * (np.matmul(ks, hs) if left else np.matmul(hs, ks)).sum(0)

        x = a_m + dt * f_prev
        for _ in range(cfg.corrector_iterations):
            fx = mul(gg, x)
            if hist is not None:
                fx = fx + hist
            x = a_m + half_dt * (f_prev + fx)
        f_new = mul(gg, x)
        if hist is not None:
            f_new = f_new + hist
        out[m + 1] = x
        f_prev = f_new
        if (m + 1) % check_every == 0 and not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite values at t={times[m + 1]:g}")

    if not np.all(np.isfinite(out[-1])):
        raise SolverError("non-finite values in solution")
    return out


def _check_generator_unital(L: SuperOperator, tol: float = 1e-9) -> None:
    one = np.eye(L.dim)
    res = np.linalg.norm(L(one))
    if res > tol * max(1.0, L.norm()):
        raise ValueError(f"L(1) != 0 (norm {res:.3e})")


def solve_master(L: SuperOperator, kernel: KernelSpec, cfg: SolverConfig,
                 form: str = "left") -> Trajectory:
    """Solve ``dA/dt = L A + int L_{t-s} A_s ds`` with ``A_0 = id``.

    ``form="right"`` integrates the equivalent ``dA/dt = A L + int A_s L_{t-s} ds``
    instead, through an independent code path.
    """
    _check_generator_unital(L)
    if kernel.dim != L.dim:
        raise ValueError("kernel and generator dimensions differ")
    samples = integrate(L, kernel.memory(), cfg, form=form)
    return Trajectory(L.dim, cfg.times, samples, "A")


def solve_normalization(L: SuperOperator, kernel: KernelSpec,
                        cfg: SolverConfig) -> Trajectory:
    """Solve ``dN/dt = L N + int Z_{t-s} N_s ds`` with ``N_0 = id``."""
    _check_generator_unital(L)
    if kernel.dim != L.dim:
        raise ValueError("kernel and generator dimensions differ")
    samples = integrate(L, kernel.compensator(), cfg)
    return Trajectory(L.dim, cfg.times, samples, "N")


def convolve_trapezoid(x: np.ndarray, y: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid rule for ``int_0^t x(t-s) y(s) ds`` on a uniform grid.

    ``x`` and ``y`` are stacks of matrices ``(n + 1, D, D)``; products are
    matrix products ``x_{m-j} @ y_j``. The full discrete convolution is done
    by FFT along the time axis.
    """
    n1 = x.shape[0]
    size = scipy.fft.next_fast_len(2 * n1 - 1)
    xf = scipy.fft.fft(x, n=size, axis=0)
    yf = scipy.fft.fft(y, n=size, axis=0)
    full = scipy.fft.ifft(np.matmul(xf, yf), axis=0)[:n1]
    ends = 0.5 * (np.matmul(x, y[:1]) + np.matmul(x[:1], y))
    return dt * (full - ends)


@dataclass
class SeriesResult:
    trajectory: Trajectory
    order: int
    increments: list = field(default_factory=list)
    iterates: list = field(default_factory=list)


def _sup_norm(stack: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(stack, 2, axis=(1, 2))))


def series_solve(N: Trajectory, kernel: KernelSpec, max_order: int = 50,
                 tol: float = 1e-8, keep_iterates: bool = False) -> SeriesResult:
    """Iterate ``A = N + int du int ds N_{t-u-s} B_u A_s`` from ``A = N``.

    Raises
    ------
    ConvergenceError
        If the sup-norm increment is still above ``tol`` after ``max_order``
        iterations. The exception carries the last increment and the partial
        result.
    """
    if N.label != "N":
        raise ValueError("series_solve expects a normalization trajectory")
    if kernel.dim != N.d:
        raise ValueError("kernel and trajectory dimensions differ")
    nsamp = N.samples
    iterates = [nsamp] if keep_iterates else []
    if kernel.cp_part.is_zero:
        return SeriesResult(replace(N, label="A"), 0, [], iterates)

    dt = N.dt
    bgrid = kernel.cp_part.on_grid(N.times)
    a = nsamp
    increments = []
    for order in range(1, max_order + 1):
        inner = convolve_trapezoid(bgrid, a, dt)
        a_new = nsamp + convolve_trapezoid(nsamp, inner, dt)
        inc = _sup_norm(a_new - a)
        increments.append(inc)
        a = a_new
        if keep_iterates:
            iterates.append(a)
        if not np.all(np.isfinite(a)):
            raise SolverError("non-finite values in series iteration")
        if inc <= tol:
            traj = Trajectory(N.d, N.times, a, "A")
            return SeriesResult(traj, order, increments, iterates)
    partial = SeriesResult(Trajectory(N.d, N.times, a, "A"), max_order, increments, iterates)
    raise ConvergenceError(
        f"series did not converge in {max_order} iterations "
        f"(last increment {increments[-1]:.3e})",
        increments[-1],
        partial,
    )


def dual(traj: Trajectory) -> Trajectory:
    """Pointwise Hilbert-Schmidt adjoint (Heisenberg <-> Schrodinger)."""
    samples = np.conj(np.swapaxes(traj.samples, 1, 2))
    if traj.label == "dual":
        return Trajectory(traj.d, traj.times, samples, traj.base_label or "A")
    return Trajectory(traj.d, traj.times, samples, "dual", base_label=traj.label)


def solve_modified(P: SuperOperator, cp_kernel: KernelFamily, cfg: SolverConfig,
                   check_cp: bool = True, check_times=None) -> Trajectory:
    """Solve ``dV/dt = P V + int B_{t-s} V_s ds`` with ``V_0 = id``.

    ``P`` and the sampled ``B_t`` must certify CP unless ``check_cp`` is off.
    """
    if P.dim != cp_kernel.dim:
        raise ValueError("kernel and P dimensions differ")
    if check_cp:
        cert = certify(P)
        if not cert.is_cp:
            raise ValueError(
                f"P is not CP (min Choi eigenvalue {cert.min_choi_eigenvalue:.3e})"
            )
        if check_times is None:
            check_times = np.linspace(0.0, cfg.t_max, 11)
        check_cp_family(cp_kernel, check_times)
    samples = integrate(P, cp_kernel, cfg)
    return Trajectory(P.dim, cfg.times, samples, "V")


def solve_semigroup_example(L: SuperOperator, lam: float, cfg: SolverConfig) -> Trajectory:
    """``dV/dt = L V + lam**2 int exp((t-s) L) V_s ds`` for a GKSL generator ``L``.

    The generator in front is not itself a CP map, so the CP check on ``P`` is
    skipped; the kernel ``lam**2 exp(tL)`` is still certified.
    """
    _check_generator_unital(L)
    family = KernelFamily.semigroup(L, lam**2)
    check_cp_family(family, np.linspace(0.0, cfg.t_max, 5))
    return solve_modified(L, family, cfg, check_cp=False)


def normalize_evolution(V: Trajectory, floor: float = 1e-8) -> Trajectory:
    """Sandwich normalization ``A_t(a) = V_t(1)^{-1/2} V_t(a) V_t(1)^{-1/2}``.

    Raises
    ------
    PositivityFloorError
        If ``V_t(1)`` has an eigenvalue below ``floor`` at some sample; the
        first failing time is attached as ``.t``.
    """
    d = V.d
    v1 = V.apply(np.eye(d))
    v1 = 0.5 * (v1 + np.conj(np.swapaxes(v1, 1, 2)))
    w, u = np.linalg.eigh(v1)
    bad = np.nonzero(w[:, 0] < floor)[0]
    if bad.size:
        k = int(bad[0])
        t = float(V.times[k])
        raise PositivityFloorError(
            f"V_t(1) has eigenvalue {w[k, 0]:.3e} below floor {floor:g} at t={t:g}", t
        )
    inv_sqrt = np.matmul(u * (1.0 / np.sqrt(w))[:, None, :], np.conj(np.swapaxes(u, 1, 2)))
    # a -> W a W  is  kron(W^T, W) in column stacking
    sand = np.einsum("nji,nkl->nikjl", inv_sqrt, inv_sqrt).reshape(len(V), d * d, d * d)
    samples = np.matmul(sand, V.samples)
    return Trajectory(d, V.times, samples, "A")


@dataclass(frozen=True)
class TrajectoryCertificate:
    times: np.ndarray
    certificates: list
    min_choi_eigenvalue: float
    first_not_cp_time: Optional[float]

    @property
    def all_cp(self) -> bool:
        return all(c.verdict is Verdict.CP for c in self.certificates)

    @property
    def verdict(self) -> Verdict:
        verdicts = {c.verdict for c in self.certificates}
        if Verdict.NOT_CP in verdicts:
            return Verdict.NOT_CP
        if Verdict.INCONCLUSIVE in verdicts:
            return Verdict.INCONCLUSIVE
        return Verdict.CP

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "min_choi_eigenvalue": self.min_choi_eigenvalue,
            "first_not_cp_time": self.first_not_cp_time,
            "samples": [
                {"t": float(t), **c.to_dict()} for t, c in zip(self.times, self.certificates)
            ],
        }


def certify_trajectory(traj: Trajectory, tol: float = DEFAULT_TOL,
                       tol_strict: Optional[float] = None,
                       stride: int = 1) -> TrajectoryCertificate:
    """Certify every ``stride``-th sample (the final sample always included)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if tol_strict is None:
        tol_strict = max(tol, DEFAULT_TOL_STRICT)
    idx = np.arange(0, len(traj), stride)
    if idx[-1] != len(traj) - 1:
        idx = np.append(idx, len(traj) - 1)
    mats = traj.samples[idx]
    mins = min_choi_eigenvalues(mats)
    unit = traj.unitality_residuals()[idx]
    trace = dual(traj).trace_residuals()[idx]
    certs = [
        CpCertificate(float(m), float(u), float(tr), classify(float(m), tol, tol_strict))
        for m, u, tr in zip(mins, unit, trace)
    ]
    first = None
    for t, c in zip(traj.times[idx], certs):
        if c.verdict is Verdict.NOT_CP:
            first = float(t)
            break
    return TrajectoryCertificate(traj.times[idx], certs, float(np.min(mins)), first)
