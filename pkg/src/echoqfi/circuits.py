"""Engineering circuit, its reverse, the echo circuit and composite pulses.

A circuit is a time-ordered list of :class:`Pulse`, :class:`FreeEvolution`
and :class:`Encoding` elements.  Sequences are compiled into either a
dense matrix or a :class:`~echoqfi.symmetric.BlockOperator`; keeping the
sequence form lets BB1 expansion and amplitude errors act per pulse.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DomainError
from .qstate import (
    PAULI, DeviationState, SpinSystem, check_dim, dagger, z_diagonal,
)
from .symmetric import (
    BlockOperator, block_diagonal, collective_rotation, identity_blocks, sector_table,
)

Y_PHASE = np.pi / 2


@dataclass(frozen=True)
class CircuitParams:
    """(theta1, theta2, theta3) central and (theta4, theta5, theta6) collective y-angles."""

    theta: tuple

    def __post_init__(self):
        theta = tuple(float(t) for t in np.asarray(self.theta, dtype=float).ravel())
        if len(theta) != 6:
            raise DomainError("the 3-layer circuit takes exactly 6 angles")
        if not all(np.isfinite(theta)):
            raise DomainError("angles must be finite")
        object.__setattr__(self, "theta", theta)

    def canonical(self) -> tuple:
        return tuple(float(np.mod(t, 2 * np.pi)) for t in self.theta)


@dataclass(frozen=True)
class PulseErrorModel:
    relative_amplitude_sigma: float = 0.05
    enabled: bool = True
    use_bb1: bool = False

    def __post_init__(self):
        if self.relative_amplitude_sigma < 0:
            raise DomainError("sigma must be non-negative")


@dataclass(frozen=True)
class Pulse:
    """Rotation exp(-i angle n.S) with n = (cos phase, sin phase, 0).

    ``target`` is ``"central"`` or ``"peripheral"``; a peripheral pulse is
    one RF pulse acting identically on every peripheral spin.
    """

    target: str
    angle: float
    phase: float = Y_PHASE


@dataclass(frozen=True)
class FreeEvolution:
    duration: float


@dataclass(frozen=True)
class Encoding:
    angle: float


def _layer(a: float, b: float) -> list:
    return [Pulse("central", a), Pulse("peripheral", b)]


def engineering_sequence(params: CircuitParams, system: SpinSystem) -> list:
    t1, t2, t3, t4, t5, t6 = params.theta
    free = FreeEvolution(system.tau)
    return _layer(t1, t4) + [free] + _layer(t2, t5) + [free] + _layer(t3, t6)


def reverse_sequence(seq: Sequence) -> list:
    """Adjoint sequence: reversed order, negated angles, backward free evolution."""
    out = []
    for el in reversed(seq):
        if isinstance(el, Pulse):
            out.append(replace(el, angle=-el.angle))
        elif isinstance(el, FreeEvolution):
            out.append(FreeEvolution(-el.duration))
        elif isinstance(el, Encoding):
            out.append(Encoding(-el.angle))
        else:
            raise DomainError(f"unknown circuit element {el!r}")
    return out


def echo_sequence(params: CircuitParams, quench: float, system: SpinSystem) -> list:
    fwd = engineering_sequence(params, system)
    return fwd + [Encoding(quench)] + reverse_sequence(fwd)


def _qubit_rotation(angle: float, phase: float) -> np.ndarray:
    axis = np.cos(phase) * PAULI["X"] + np.sin(phase) * PAULI["Y"]
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * axis


# --- block compilation ------------------------------------------------------

def _element_blocks(el, system: SpinSystem, table):
    if isinstance(el, Pulse):
        if el.target == "central":
            r = _qubit_rotation(el.angle, el.phase)
            return [np.kron(r, np.eye(s.dim)) for s in table.sectors]
        if el.target == "peripheral":
            return [np.kron(np.eye(2), collective_rotation(s.twice_j, el.angle, el.phase))
                    for s in table.sectors]
        raise DomainError(f"unknown pulse target {el.target!r}")
    if isinstance(el, FreeEvolution):
        # H_NMR = (pi/2) J sigma_z^P (x) 2 Jz
        k = np.pi * system.j_coupling * el.duration
        return block_diagonal(table, lambda sc, m: np.exp(-1j * k * sc * m)).blocks
    if isinstance(el, Encoding):
        return block_diagonal(table, lambda sc, m: np.exp(-1j * el.angle * (sc / 2 + m))).blocks
    raise DomainError(f"unknown circuit element {el!r}")


def _compile_blocks(seq, system: SpinSystem) -> BlockOperator:
    table = sector_table(system.n_peripheral)
    acc = [np.eye(2 * s.dim, dtype=complex) for s in table.sectors]
    for el in seq:
        acc = [u @ a for u, a in zip(_element_blocks(el, system, table), acc)]
    return BlockOperator(table, acc)


# --- dense compilation ------------------------------------------------------

@lru_cache(maxsize=16)
def _dense_diagonals(n: int):
    zs = np.array([z_diagonal(n, k) for k in range(n)])
    zs.setflags(write=False)
    return zs


def _element_dense(el, system: SpinSystem, n: int):
    """Return ('diag', vector) or ('full', matrix)."""
    zs = _dense_diagonals(n)
    if isinstance(el, Pulse):
        r = _qubit_rotation(el.angle, el.phase)
        if el.target == "central":
            return "full", np.kron(r, np.eye(2 ** (n - 1)))
        if el.target == "peripheral":
            out = np.eye(2)
            for _ in range(n - 1):
                out = np.kron(out, r)
            return "full", out
        raise DomainError(f"unknown pulse target {el.target!r}")
    if isinstance(el, FreeEvolution):
        h = (np.pi / 2) * system.j_coupling * zs[0] * zs[1:].sum(axis=0)
        return "diag", np.exp(-1j * h * el.duration)
    if isinstance(el, Encoding):
        return "diag", np.exp(-1j * el.angle * zs.sum(axis=0) / 2)
    raise DomainError(f"unknown circuit element {el!r}")


def _compile_dense(seq, system: SpinSystem) -> np.ndarray:
    n = system.n_spins
    check_dim(2**n)
    acc = np.eye(2**n, dtype=complex)
    for el in seq:
        kind, op = _element_dense(el, system, n)
        acc = op[:, None] * acc if kind == "diag" else op @ acc
    return acc


def compile_sequence(seq: Sequence, system: SpinSystem, representation: str = "block"):
    if representation == "block":
        return _compile_blocks(seq, system)
    if representation == "dense":
        return _compile_dense(seq, system)
    raise DomainError(f"unknown representation {representation!r}")


# --- public constructors ----------------------------------------------------

def engineering_unitary(params: CircuitParams, system: SpinSystem, representation: str = "block"):
    """U_E = R(t3,t6) F R(t2,t5) F R(t1,t4) with F = exp(-i H_NMR tau)."""
    return compile_sequence(engineering_sequence(params, system), system, representation)


def reverse_unitary(params: CircuitParams, system: SpinSystem, representation: str = "block"):
    return compile_sequence(reverse_sequence(engineering_sequence(params, system)), system, representation)


def encoding_unitary(angle: float, system: SpinSystem, representation: str = "block"):
    """exp(-i angle G), G = sum_k sigma_z^k / 2."""
    if not np.isfinite(angle):
        raise DomainError("encoding angle must be finite")
    return compile_sequence([Encoding(angle)], system, representation)


def echo_circuit(params: CircuitParams, quench: float, system: SpinSystem, representation: str = "block"):
    """V_delta = U_E^dagger exp(-i delta G) U_E."""
    return compile_sequence(echo_sequence(params, quench, system), system, representation)


def generator(system: SpinSystem, representation: str = "block"):
    """Encoding generator G = sigma_z^P / 2 + Jz."""
    if representation == "block":
        return block_diagonal(sector_table(system.n_peripheral), lambda sc, m: sc / 2 + m)
    n = system.n_spins
    check_dim(2**n)
    return np.diag(_dense_diagonals(n).sum(axis=0) / 2).astype(complex)


def nmr_hamiltonian(system: SpinSystem, representation: str = "block"):
    """H_NMR = (pi/2) J_PH sigma_z^P sum_j sigma_z^j (rad/s)."""
    k = np.pi / 2 * system.j_coupling
    if representation == "block":
        return block_diagonal(sector_table(system.n_peripheral), lambda sc, m: k * sc * 2 * m)
    zs = _dense_diagonals(system.n_spins)
    return np.diag(k * zs[0] * zs[1:].sum(axis=0)).astype(complex)


def deviation_observable(system: SpinSystem, representation: str = "block"):
    """gamma_P sigma_z^P + gamma_H sum_j sigma_z^j (the equilibrium deviation)."""
    gp, gh = system.central_gamma, system.gamma_peripheral
    if representation == "block":
        return block_diagonal(sector_table(system.n_peripheral), lambda sc, m: gp * sc + gh * 2 * m)
    zs = _dense_diagonals(system.n_spins)
    return np.diag(gp * zs[0] + gh * zs[1:].sum(axis=0)).astype(complex)


def equilibrium_state(system: SpinSystem, epsilon: float = 1e-5, representation: str = "block") -> DeviationState:
    return DeviationState(
        system.n_spins, epsilon, deviation_observable(system, representation), system.gammas
    )


def engineered_state(state: DeviationState, unitary) -> DeviationState:
    """Deviation of U rho U^dagger (the identity part is invariant)."""
    return state.with_deviation(unitary @ state.deviation @ dagger(unitary))


# --- composite pulses and amplitude errors ----------------------------------

def bb1_expand(theta: float, phase: float) -> list:
    """BB1 replacement of R_phase(theta), as (angle, phase) pairs in time order.

    Operator form R_f(pi) R_3f(2pi) R_f(pi) R_phase(theta) with
    f = phase + arccos(-theta / 4pi).
    """
    arg = -theta / (4 * np.pi)
    if abs(arg) > 1:
        raise DomainError(f"|theta| = {abs(theta):.3f} exceeds 4 pi")
    phi = np.arccos(arg)
    return [
        (theta, phase),
        (np.pi, phase + phi),
        (2 * np.pi, phase + 3 * phi),
        (np.pi, phase + phi),
    ]


def expand_bb1(seq: Sequence) -> list:
    out = []
    for el in seq:
        if isinstance(el, Pulse):
            out.extend(Pulse(el.target, a, p) for a, p in bb1_expand(el.angle, el.phase))
        else:
            out.append(el)
    return out


def perturb_sequence(seq: Sequence, model: PulseErrorModel, rng) -> list:
    """Scale each logical pulse's angle by (1 + eta), eta ~ N(0, sigma).

    With BB1 enabled, the four sub-pulses replacing one logical pulse share
    its eta: they are played on the same channel at the same RF amplitude.
    """
    rng = np.random.default_rng(rng)
    out = []
    for el in seq:
        if not isinstance(el, Pulse):
            out.append(el)
            continue
        eta = rng.normal(0.0, model.relative_amplitude_sigma) if model.enabled else 0.0
        parts = bb1_expand(el.angle, el.phase) if model.use_bb1 else [(el.angle, el.phase)]
        out.extend(Pulse(el.target, a * (1 + eta), p) for a, p in parts)
    return out


def apply_pulse_errors(seq: Sequence, system: SpinSystem, model: PulseErrorModel,
                       rng_seed=None, representation: str = "block"):
    """Compile ``seq`` with per-pulse amplitude errors drawn from ``rng_seed``."""
    return compile_sequence(perturb_sequence(seq, model, rng_seed), system, representation)
