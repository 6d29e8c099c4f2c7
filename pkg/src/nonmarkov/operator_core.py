"""Operator and superoperator algebra on M_d.

Operators are plain ``(d, d)`` complex numpy arrays. Linear maps on M_d are
:class:`SuperOperator` values holding a ``(d**2, d**2)`` matrix that acts on
column-stacked operators, so that ``vec(x @ a @ y) == kron(y.T, x) @ vec(a)``.

Because column stacking is orthonormal for the Hilbert-Schmidt product
``<a, b> = tr(a^dagger b)``, the dual map is the conjugate transpose of the
matrix.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_DIM = 8

#: default thresholds separating CP / INCONCLUSIVE / NOT_CP
DEFAULT_TOL = 1e-9
DEFAULT_TOL_STRICT = 1e-6


class DimensionError(ValueError):
    """Raised when operands live on Hilbert spaces of different dimension."""


def _as_operator(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return a


def check_dim(d: int, allow_large: bool = False) -> int:
    d = int(d)
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    if d > MAX_DIM and not allow_large:
        raise ValueError(
            f"dimension {d} exceeds {MAX_DIM}; pass allow_large=True to override"
        )
    return d


def hs_inner(a, b) -> complex:
    """Hilbert-Schmidt inner product ``tr(a^dagger b)``."""
    a = _as_operator(a)
    b = _as_operator(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def vec(a) -> np.ndarray:
    """Column-stack an operator into a vector of length ``d**2``."""
    return _as_operator(a).reshape(-1, order="F")


def devec(v) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=complex).ravel()
    d = math.isqrt(v.size)
    if d * d != v.size or d == 0:
        raise DimensionError(f"length {v.size} is not a perfect square")
    return v.reshape((d, d), order="F")


@dataclass(frozen=True, eq=False)
class SuperOperator:
    """A linear map on M_d, stored as a dense ``(d**2, d**2)`` matrix.

    Arithmetic follows composition semantics: ``S @ T`` is the map
    ``a -> S(T(a))``. Instances are treated as immutable; the stored matrix
    is flagged read-only.
    """

    matrix: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"superoperator matrix must be square, got {m.shape}")
        d = math.isqrt(m.shape[0])
        if d * d != m.shape[0] or d == 0:
            raise DimensionError(f"superoperator size {m.shape[0]} is not d**2")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", d)

    # constructors -----------------------------------------------------
    @classmethod
    def identity(cls, d: int) -> "SuperOperator":
        return cls(np.eye(d * d, dtype=complex))

    @classmethod
    def zero(cls, d: int) -> "SuperOperator":
        return cls(np.zeros((d * d, d * d), dtype=complex))

    @classmethod
    def sandwich(cls, x, y) -> "SuperOperator":
        """The map ``a -> x a y``."""
        x = _as_operator(x)
        y = _as_operator(y)
        return cls(np.kron(y.T, x))

    @classmethod
    def conjugation(cls, u) -> "SuperOperator":
        """The map ``a -> u a u^dagger``."""
        u = _as_operator(u)
        return cls.sandwich(u, u.conj().T)

    @classmethod
    def from_kraus(cls, kraus: Iterable, d: int | None = None) -> "SuperOperator":
        """Heisenberg-picture Kraus map ``a -> sum_k v_k^dagger a v_k``."""
        kraus = [_as_operator(v) for v in kraus]
        if not kraus:
            if d is None:
                raise ValueError("empty Kraus list needs an explicit dimension")
            return cls.zero(d)
        d = kraus[0].shape[0] if d is None else d
        m = np.zeros((d * d, d * d), dtype=complex)
        for v in kraus:
            if v.shape != (d, d):
                raise DimensionError(f"Kraus operator of shape {v.shape}, expected {(d, d)}")
            m += np.kron(v.T, v.conj().T)
        return cls(m)

    @classmethod
    def transpose_map(cls, d: int) -> "SuperOperator":
        m = np.zeros((d * d, d * d), dtype=complex)
        for i in range(d):
            for j in range(d):
                m[j + i * d, i + j * d] = 1.0
        return cls(m)

    # algebra ----------------------------------------------------------
    def __call__(self, a) -> np.ndarray:
        return apply(self, a)

    def __add__(self, other: "SuperOperator") -> "SuperOperator":
        _check_same(self, other)
        return SuperOperator(self.matrix + other.matrix)

    def __sub__(self, other: "SuperOperator") -> "SuperOperator":
        _check_same(self, other)
        return SuperOperator(self.matrix - other.matrix)

    def __neg__(self) -> "SuperOperator":
        return SuperOperator(-self.matrix)

    def __mul__(self, c) -> "SuperOperator":
        return SuperOperator(complex(c) * self.matrix)

    __rmul__ = __mul__

    def __truediv__(self, c) -> "SuperOperator":
        return SuperOperator(self.matrix / complex(c))

    def __matmul__(self, other: "SuperOperator") -> "SuperOperator":
        _check_same(self, other)
        return SuperOperator(self.matrix @ other.matrix)

    def norm(self) -> float:
        """Spectral norm of the matrix representation."""
        return float(np.linalg.norm(self.matrix, 2))

    def allclose(self, other: "SuperOperator", atol: float = 1e-12) -> bool:
        return self.dim == other.dim and bool(
            np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"SuperOperator(dim={self.dim})"


def _check_same(s: SuperOperator, t: SuperOperator) -> None:
    if s.dim != t.dim:
        raise DimensionError(f"dimension mismatch: {s.dim} vs {t.dim}")


def apply(s: SuperOperator, a) -> np.ndarray:
    a = _as_operator(a)
    if a.shape[0] != s.dim:
        raise DimensionError(f"operator of dim {a.shape[0]} for map on dim {s.dim}")
    return devec(s.matrix @ vec(a))


def adjoint(s: SuperOperator) -> SuperOperator:
    """Hilbert-Schmidt dual: ``<adjoint(S) a, b> == <a, S b>``."""
    return SuperOperator(s.matrix.conj().T)


def matrix_unit(d: int, i: int, j: int) -> np.ndarray:
    e = np.zeros((d, d), dtype=complex)
    e[i, j] = 1.0
    return e


def choi(s: SuperOperator) -> np.ndarray:
    """Choi matrix ``J = sum_ij E_ij (x) S(E_ij)``.

    Column ``i + j*d`` of ``S.matrix`` is ``vec(S(E_ij))``; the reshapes below
    reorder that into the Kronecker block layout without a Python loop.
    """
    d = s.dim
    # m4[l, k, j, i] = S(E_ij)[k, l]; J[(i, k), (j, l)] = S(E_ij)[k, l]
    m4 = s.matrix.reshape(d, d, d, d)
    return np.ascontiguousarray(m4.transpose(3, 1, 2, 0)).reshape(d * d, d * d)


def is_hermitian(a, atol: float = 1e-12) -> bool:
    a = _as_operator(a)
    scale = max(1.0, float(np.linalg.norm(a)))
    return bool(np.linalg.norm(a - a.conj().T) <= atol * scale)


class Verdict(str, enum.Enum):
    CP = "CP"
    NOT_CP = "NOT_CP"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class CpCertificate:
    min_choi_eigenvalue: float
    unitality_residual: float
    trace_residual: float
    verdict: Verdict
    choi_asymmetry: float = 0.0

    @property
    def is_cp(self) -> bool:
        return self.verdict is Verdict.CP

    def to_dict(self) -> dict:
        return {
            "min_choi_eigenvalue": self.min_choi_eigenvalue,
            "unitality_residual": self.unitality_residual,
            "trace_residual": self.trace_residual,
            "choi_asymmetry": self.choi_asymmetry,
            "verdict": self.verdict.value,
        }


def classify(min_eig: float, tol: float = DEFAULT_TOL,
             tol_strict: float = DEFAULT_TOL_STRICT) -> Verdict:
    if min_eig >= -tol:
        return Verdict.CP
    if min_eig < -tol_strict:
        return Verdict.NOT_CP
    return Verdict.INCONCLUSIVE


def certify(s: SuperOperator, tol: float = DEFAULT_TOL,
            tol_strict: float | None = None) -> CpCertificate:
    """Check complete positivity and normalization of a map.

    Parameters
    ----------
    s : SuperOperator
        Map to certify.
    tol : float
        Choi eigenvalues at or above ``-tol`` count as nonnegative.
    tol_strict : float, optional
        Eigenvalues below ``-tol_strict`` are a definite violation; in between
        the verdict is INCONCLUSIVE. Defaults to ``max(tol, 1e-6)``.

    Returns
    -------
    CpCertificate
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if tol_strict is None:
        tol_strict = max(tol, DEFAULT_TOL_STRICT)
    d = s.dim
    j = choi(s)
    asym = float(np.linalg.norm(j - j.conj().T))
    jh = 0.5 * (j + j.conj().T)
    min_eig = float(np.linalg.eigvalsh(jh)[0])

    one = np.eye(d, dtype=complex)
    unitality = float(np.linalg.norm(apply(s, one) - one, 2))
    # entry i + j*d of vec(1)^dagger S* is tr(S*(E_ij))
    dual = adjoint(s).matrix
    trace_row = vec(one).conj() @ dual
    trace_residual = float(np.max(np.abs(trace_row - vec(one).conj())))

    jnorm = float(np.linalg.norm(j))
    asym_reported = asym if asym > 1e-8 * max(jnorm, 1e-300) else 0.0
    return CpCertificate(
        min_choi_eigenvalue=min_eig,
        unitality_residual=unitality,
        trace_residual=trace_residual,
        verdict=classify(min_eig, tol, tol_strict),
        choi_asymmetry=asym_reported,
    )


def min_choi_eigenvalues(mats: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetrized Choi matrix for a stack of maps.

    ``mats`` has shape ``(n, d**2, d**2)``; used to certify whole trajectories
    in one batched eigensolve.
    """
    n, dd, _ = mats.shape
    d = math.isqrt(dd)
    j = mats.reshape(n, d, d, d, d).transpose(0, 4, 2, 3, 1).reshape(n, dd, dd)
    jh = 0.5 * (j + np.conj(np.swapaxes(j, 1, 2)))
    return np.linalg.eigvalsh(jh)[:, 0]


def pauli() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(1, sigma_x, sigma_y, sigma_z)`` as complex 2x2 arrays."""
    return (
        np.eye(2, dtype=complex),
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]], dtype=complex),
        np.array([[1, 0], [0, -1]], dtype=complex),
    )


def random_superoperator(d: int, rng: np.random.Generator) -> SuperOperator:
    m = rng.normal(size=(d * d, d * d)) + 1j * rng.normal(size=(d * d, d * d))
    return SuperOperator(m)


def random_kraus(d: int, rank: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(rank)]


def random_unital_channel(d: int, rank: int, rng: np.random.Generator) -> SuperOperator:
    """Random CP unital map (Heisenberg picture): a convex mix of unitary conjugations."""
    weights = rng.dirichlet(np.ones(rank))
    m = np.zeros((d * d, d * d), dtype=complex)
    for w in weights:
        z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        q, r = np.linalg.qr(z)
        q = q * (np.diag(r) / np.abs(np.diag(r)))
        m += w * SuperOperator.conjugation(q).matrix
    return SuperOperator(m)


def stack(maps: Sequence[SuperOperator]) -> np.ndarray:
    return np.stack([s.matrix for s in maps])
