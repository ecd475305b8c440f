"""Dense operator algebra and the NMR deviation-state convention.

Operators are plain ``numpy`` complex arrays.  Star-symmetric operators
(:class:`echoqfi.symmetric.BlockOperator`) are accepted wherever an
operation only needs products, adjoints and traces; the helpers
:func:`dagger`, :func:`trace` and :func:`trace_product` dispatch on both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, DomainError, NumericalContractError

MAX_DIM = 4096
HERMITIAN_TOL = 1e-10
UNITARY_TOL = 1e-10

# 31P / 1H gyromagnetic ratio
GAMMA_RATIO_P_H = 0.4052
GAMMA_NORMALIZATIONS = ("central", "peripheral")

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _is_block(a) -> bool:
    return getattr(a, "is_block", False)


def check_dim(d: int) -> None:
    if d > MAX_DIM:
        raise CapacityError(f"dense dimension {d} exceeds cap {MAX_DIM}")


def dagger(a):
    return a.adjoint() if _is_block(a) else a.conj().T


def trace(a) -> complex:
    return a.trace() if _is_block(a) else complex(np.trace(a))


def trace_product(a, b) -> complex:
    """Tr(ab) without forming the product."""
    if _is_block(a):
        return a.trace_product(b)
    return complex(np.einsum("ij,ji->", a, b))


def hermitian_defect(a) -> float:
    if _is_block(a):
        return max(float(np.max(np.abs(x - x.conj().T))) for x in a.blocks)
    return float(np.max(np.abs(a - a.conj().T)))


def dimension(a) -> int:
    return a.dim if _is_block(a) else a.shape[0]


@dataclass(frozen=True)
class PauliString:
    """Weighted tensor product of Pauli matrices on selected sites."""

    coefficient: complex
    sites: tuple
    width: int

    def __post_init__(self):
        sites = tuple((int(k), str(label).upper()) for k, label in self.sites)
        idx = [k for k, _ in sites]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DomainError("Pauli sites must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.width):
            raise DomainError(f"site index out of range for width {self.width}")
        if any(label not in ("X", "Y", "Z") for _, label in sites):
            raise DomainError("Pauli labels must be X, Y or Z")
        object.__setattr__(self, "sites", sites)


def pauli_to_dense(p: PauliString, n: int | None = None) -> np.ndarray:
    """Dense 2^n x 2^n matrix of ``p``; site 0 is the most significant qubit."""
    n = p.width if n is None else n
    if n != p.width:
        raise DomainError(f"width mismatch: string has {p.width}, requested {n}")
    check_dim(2**n)
    labels = dict(p.sites)
    out = np.array([[p.coefficient]], dtype=complex)
    for k in range(n):
        out = np.kron(out, PAULI[labels.get(k, "I")])
    return out


def z_diagonal(n: int, site: int) -> np.ndarray:
    """Diagonal of sigma_z on ``site`` of an n-qubit register, as +-1 floats."""
    bits = (np.arange(2**n) >> (n - 1 - site)) & 1
    return 1.0 - 2.0 * bits


def conjugate(rho, u):
    """Return u rho u^dagger.  ``u`` must be unitary to 1e-10."""
    if dimension(rho) != dimension(u):
        raise DomainError("dimension mismatch between state and unitary")
    if _is_block(u):
        defect = max(float(np.max(np.abs(x @ x.conj().T - np.eye(len(x))))) for x in u.blocks)
    else:
        defect = float(np.max(np.abs(u @ u.conj().T - np.eye(len(u)))))
    if defect > UNITARY_TOL:
        raise NumericalContractError(f"operator is not unitary (defect {defect:.2e})")
    return u @ rho @ dagger(u)


def eig_hermitian(a: np.ndarray):
    """Ascending eigenvalues and orthonormal eigenvectors (as columns)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("expected a square matrix")
    if hermitian_defect(a) > HERMITIAN_TOL:
        raise DomainError("matrix is not Hermitian")
    w, v = np.linalg.eigh(a)
    return w, v


@dataclass(frozen=True)
class SpinSystem:
    """Star register: one central spin coupled to ``n_peripheral`` equivalent spins.

    ``central_weight`` selects how the central-spin weight enters the
    deviation state: ``"main"`` uses ``gamma_central`` as is, ``"divided"``
    applies the extra 1/9 factor written in the reachable-set derivation.

    Unset gammas follow ``gamma_normalization``: ``"central"`` puts the
    central (31P) spin at 1 and the protons at 1/0.4052; ``"peripheral"``
    puts the protons at 1 and the central spin at 0.4052.  Signal and QFI
    magnitudes depend on this choice, so it matters whenever a noise level
    is given in absolute units.
    """

    n_peripheral: int = 9
    j_coupling: float = 10.5
    gamma_central: float | None = None
    gamma_peripheral: float | None = None
    tau: float | None = None
    central_weight: str = "main"
    gamma_normalization: str = "central"

    def __post_init__(self):
        if self.n_peripheral < 1:
            raise DomainError("need at least one peripheral spin")
        if self.central_weight not in ("main", "divided"):
            raise DomainError(f"unknown central_weight {self.central_weight!r}")
        if self.gamma_normalization not in GAMMA_NORMALIZATIONS:
            raise DomainError(f"unknown gamma_normalization {self.gamma_normalization!r}")
        central = self.gamma_normalization == "central"
        if self.gamma_central is None:
            object.__setattr__(self, "gamma_central", 1.0 if central else GAMMA_RATIO_P_H)
        if self.gamma_peripheral is None:
            object.__setattr__(self, "gamma_peripheral", 1.0 / GAMMA_RATIO_P_H if central else 1.0)
        if not (np.isfinite(self.gamma_central) and np.isfinite(self.gamma_peripheral)):
            raise DomainError("gammas must be finite")
        if self.j_coupling <= 0:
            raise DomainError("j_coupling must be positive")
        if self.tau is None:
            object.__setattr__(self, "tau", 1.0 / (2.0 * self.j_coupling))

    @property
    def n_spins(self) -> int:
        return self.n_peripheral + 1

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @property
    def central_gamma(self) -> float:
        if self.central_weight == "divided":
            return self.gamma_central / 9.0
        return self.gamma_central

    @property
    def gammas(self) -> tuple:
        return (self.central_gamma,) + (self.gamma_peripheral,) * self.n_peripheral

    def convention(self) -> str:
        return (
            f"gamma_P={self.central_gamma:.6g}, gamma_H={self.gamma_peripheral:.6g} "
            f"(normalization={self.gamma_normalization}, central_weight={self.central_weight}); "
            "QFI in units of eps^2"
        )


@dataclass(frozen=True)
class DeviationState:
    """rho = (1 + epsilon * deviation) / 2^N with a traceless ``deviation``."""

    n_spins: int
    epsilon: float
    deviation: object
    gammas: tuple = field(default=())

    def __post_init__(self):
        d = dimension(self.deviation)
        if d != 2**self.n_spins:
            raise DomainError(f"deviation has dim {d}, expected {2**self.n_spins}")
        if abs(trace(self.deviation)) > 1e-10 * max(1.0, d):
            raise DomainError("deviation must be traceless")
        if hermitian_defect(self.deviation) > HERMITIAN_TOL:
            raise DomainError("deviation must be Hermitian")
        if 0 < self.epsilon <= 1e-3:
            lo = _min_eigenvalue(self.deviation)
            if 1.0 + self.epsilon * lo < -1e-12:
                raise DomainError("implied density matrix is not positive")

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def with_deviation(self, deviation) -> "DeviationState":
        return DeviationState(self.n_spins, self.epsilon, deviation, self.gammas)

    def dense(self) -> np.ndarray:
        """The full density matrix at the configured epsilon."""
        dev = self.deviation.to_dense() if _is_block(self.deviation) else self.deviation
        return (np.eye(self.dim) + self.epsilon * dev) / self.dim


def _min_eigenvalue(a) -> float:
    if _is_block(a):
        return min(float(np.linalg.eigvalsh(x)[0]) for x in a.blocks)
    if a.shape[0] > 256 and np.allclose(a, np.diag(np.diag(a))):
        return float(np.min(np.diag(a).real))
    return float(np.linalg.eigvalsh(a)[0])


def purity(state: DeviationState) -> float:
    """Tr(rho^2) = 1/2^N + eps^2 Tr(dev^2) / 2^(2N), exact in eps."""
    d = state.dim
    return 1.0 / d + state.epsilon**2 * trace_product(state.deviation, state.deviation).real / d**2


def product_deviation(gammas: Sequence[float]) -> np.ndarray:
    """Dense sum_j gamma_j sigma_z^j."""
    n = len(gammas)
    check_dim(2**n)
    return np.diag(sum(g * z_diagonal(n, k) for k, g in enumerate(gammas))).astype(complex)
