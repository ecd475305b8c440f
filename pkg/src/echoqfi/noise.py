"""Relaxation channels, measurement noise and reference calibration.

Each spin undergoes phase damping (T2) followed by infinite-temperature
generalized amplitude damping (T1) in every step of length ``step``.  Both
channels are unital and Pauli-diagonal, so they act on a deviation operator
exactly as on a density matrix and commute with each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuits import (
    CircuitParams, FreeEvolution, PulseErrorModel, _dense_diagonals,
    _element_dense, deviation_observable, echo_sequence, perturb_sequence,
)
from .errors import DegenerateReferenceError, DomainError
from .qstate import PAULI, SpinSystem, check_dim

# total relaxation time of one echo in the experiment (seconds)
ECHO_RELAXATION_TIME = 0.187


@dataclass(frozen=True)
class RelaxationParams:
    t1_central: float = 5.0
    t2_central: float = 1.30
    t1_peripheral: float = 4.2
    t2_peripheral: float = 1.26
    step: float = 1e-3

    def __post_init__(self):
        vals = (self.t1_central, self.t2_central, self.t1_peripheral, self.t2_peripheral, self.step)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise DomainError("relaxation times and step must be positive")
        if self.t2_central > 2 * self.t1_central or self.t2_peripheral > 2 * self.t1_peripheral:
            raise DomainError("unphysical relaxation times: need t2 <= 2 t1")

    def times(self, site: int) -> tuple:
        """(t1, t2) of ``site``; site 0 is the central spin."""
        if site == 0:
            return self.t1_central, self.t2_central
        return self.t1_peripheral, self.t2_peripheral


def pd_strength(dt: float, t2: float) -> float:
    """xi = [1 - exp(-dt/T2)] / 2."""
    if dt < 0:
        raise DomainError("duration must be non-negative")
    return -np.expm1(-dt / t2) / 2


def gad_strength(dt: float, t1: float) -> float:
    """eta = 1 - exp(-dt/T1)."""
    if dt < 0:
        raise DomainError("duration must be non-negative")
    return -np.expm1(-dt / t1)


def phase_damping_kraus(xi: float) -> list:
    return [np.sqrt(1 - xi) * PAULI["I"], np.sqrt(xi) * PAULI["Z"]]


def gad_kraus(eta: float) -> list:
    """Generalized amplitude damping at infinite temperature (weights 1/2)."""
    a, b = np.sqrt(1 - eta), np.sqrt(eta)
    h = np.sqrt(0.5)
    return [
        h * np.array([[1, 0], [0, a]], dtype=complex),
        h * np.array([[0, b], [0, 0]], dtype=complex),
        h * np.array([[a, 0], [0, 1]], dtype=complex),
        h * np.array([[0, 0], [b, 0]], dtype=complex),
    ]


def kraus_completeness_defect(kraus) -> float:
    total = sum(k.conj().T @ k for k in kraus)
    return float(np.max(np.abs(total - np.eye(total.shape[0]))))


def _n_qubits(rho) -> int:
    d = rho.shape[0]
    n = d.bit_length() - 1
    if rho.shape != (d, d) or 2**n != d:
        raise DomainError("operator dimension must be a power of two")
    return n


def apply_site_kraus(rho: np.ndarray, kraus, site: int) -> np.ndarray:
    """sum_s K_s rho K_s^dagger with each K_s acting on qubit ``site``."""
    n = _n_qubits(rho)
    a, b = 2**site, 2 ** (n - site - 1)
    r = rho.reshape(a, 2, b, a, 2, b)
    out = np.zeros_like(r, dtype=complex)
    for k in kraus:
        out += np.einsum("ij,ajbckd,lk->aibcld", k, r, k.conj(), optimize=True)
    return out.reshape(rho.shape)


def _apply_channel(rho, params: RelaxationParams, duration, kind: str):
    dt = params.step if duration is None else duration
    rho = np.asarray(rho, dtype=complex)
    for site in range(_n_qubits(rho)):
        t1, t2 = params.times(site)
        kraus = phase_damping_kraus(pd_strength(dt, t2)) if kind == "pd" else gad_kraus(gad_strength(dt, t1))
        rho = apply_site_kraus(rho, kraus, site)
    return rho


def phase_damping(rho, params: RelaxationParams, duration: float | None = None) -> np.ndarray:
    """Phase damping on every spin, one after another, over ``duration`` (default one step)."""
    return _apply_channel(rho, params, duration, "pd")


def generalized_amplitude_damping(rho, params: RelaxationParams, duration: float | None = None) -> np.ndarray:
    """Infinite-temperature amplitude damping on every spin over ``duration``."""
    return _apply_channel(rho, params, duration, "gad")


# --- fast Pauli-transfer form -----------------------------------------------

def _site_factors(n: int, params: RelaxationParams, dt: float):
    """Per-site (coherence factor, population factor) of one PD+GAD step."""
    xs, zs = [], []
    for site in range(n):
        t1, t2 = params.times(site)
        xi, eta = pd_strength(dt, t2), gad_strength(dt, t1)
        xs.append((1 - 2 * xi) * np.sqrt(1 - eta))
        zs.append(1 - eta)
    return np.array(xs), np.array(zs)


@lru_cache(maxsize=8)
def _flip_counts(n: int):
    """bits[a, b, k] = 1 where a and b differ on qubit k, packed per site."""
    idx = np.arange(2**n)
    diff = idx[:, None] ^ idx[None, :]
    return [((diff >> (n - 1 - k)) & 1).astype(bool) for k in range(n)]


def _coherence_matrix(n: int, xs) -> np.ndarray:
    out = np.ones((2**n, 2**n))
    for k, mask in enumerate(_flip_counts(n)):
        out[mask] *= xs[k]
    return out


def _mix_populations(rho: np.ndarray, n: int, zs) -> np.ndarray:
    """Scale the sigma_z component of each qubit k by zs[k], in place."""
    for k in range(n):
        if zs[k] == 1.0:
            continue
        a, b = 2**k, 2 ** (n - k - 1)
        r = rho.reshape(a, 2, b, a, 2, b)
        r00, r11 = r[:, 0, :, :, 0, :], r[:, 1, :, :, 1, :]
        shift = r00 - r11
        shift *= (1 - zs[k]) / 2
        r00 -= shift
        r11 += shift
    return rho


def relaxation_step(rho: np.ndarray, params: RelaxationParams, dt: float | None = None) -> np.ndarray:
    """One PD-then-GAD step on every spin, via Pauli-transfer factors."""
    rho = np.array(rho, dtype=complex)
    n = _n_qubits(rho)
    dt = params.step if dt is None else dt
    xs, zs = _site_factors(n, params, dt)
    rho *= _coherence_matrix(n, xs)
    return _mix_populations(rho, n, zs)


def _split(duration: float, step: float) -> tuple:
    if duration < 0 or not np.isfinite(duration):
        raise DomainError("duration must be finite and non-negative")
    if duration == 0:
        return 0, 0.0
    k = max(1, int(np.ceil(duration / step - 1e-9)))
    return k, duration / k


def relax_over(rho, duration: float, params: RelaxationParams) -> np.ndarray:
    """Relax for ``duration`` in equal steps of at most ``params.step``."""
    k, dt = _split(duration, params.step)
    rho = np.array(rho, dtype=complex)
    for _ in range(k):
        rho = relaxation_step(rho, params, dt)
    return rho


def relaxation_representation(system: SpinSystem) -> str:
    """Representation used for open-system evolution of ``system``.

    Uniform peripheral channels preserve permutation symmetry but move
    weight between spin-j sectors, which the block engine does not model;
    relaxation therefore always runs densely and is capped by MAX_DIM.
    """
    check_dim(system.dim)
    return "dense"


def free_evolution_relaxing(rho, system: SpinSystem, duration: float, params: RelaxationParams,
                            relax_time: float | None = None) -> np.ndarray:
    """Trotterized free evolution for ``duration`` with relaxation over ``relax_time``.

    ``relax_time`` defaults to |duration|; a backward (negative) free
    evolution still relaxes forward in time.
    """
    relax_time = abs(duration) if relax_time is None else relax_time
    n = _n_qubits(rho)
    zs = _dense_diagonals(n)
    h = (np.pi / 2) * system.j_coupling * zs[0] * zs[1:].sum(axis=0)
    k, dt = _split(relax_time, params.step)
    rho = np.array(rho, dtype=complex)
    if k == 0:
        return np.exp(-1j * (h[:, None] - h[None, :]) * duration) * rho
    phase = np.exp(-1j * (h[:, None] - h[None, :]) * duration / k)
    xs, pz = _site_factors(n, params, dt)
    factor = phase * _coherence_matrix(n, xs)
    for _ in range(k):
        rho *= factor
        rho = _mix_populations(rho, n, pz)
    return rho


def noisy_echo_signal(params: CircuitParams, quench: float, system: SpinSystem,
                      relaxation: RelaxationParams | None = None,
                      pulse_errors: PulseErrorModel | None = None, rng=None,
                      total_relaxation: float | None = ECHO_RELAXATION_TIME) -> float:
    """Deviation echo Tr(D0 Lambda_echo(D0)) with relaxation and pulse errors.

    Relaxation acts only during free evolution.  ``total_relaxation`` spreads
    the given total time over the free segments in proportion to their
    length; ``None`` uses the nominal segment durations.
    """
    relaxation_representation(system)
    seq = echo_sequence(params, quench, system)
    if pulse_errors is not None:
        seq = perturb_sequence(seq, pulse_errors, rng)
    d0 = deviation_observable(system, "dense")
    free_total = sum(abs(el.duration) for el in seq if isinstance(el, FreeEvolution))
    rho = d0.copy()
    n = system.n_spins
    for el in seq:
        if isinstance(el, FreeEvolution) and relaxation is not None:
            relax = abs(el.duration) if total_relaxation is None else total_relaxation * abs(el.duration) / free_total
            rho = free_evolution_relaxing(rho, system, el.duration, relaxation, relax)
            continue
        kind, op = _element_dense(el, system, n)
        if kind == "diag":
            rho = op[:, None] * rho * op.conj()[None, :]
        else:
            rho = op @ rho @ op.conj().T
    return float(np.einsum("ij,ji->", rho, d0).real)


def measurement_noise(value, sigma: float, rng_seed=None):
    """``value`` plus N(0, sigma) noise drawn from ``rng_seed``."""
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    if sigma == 0:
        return value
    rng = np.random.default_rng(rng_seed)
    if np.ndim(value) == 0:
        return float(value + rng.normal(0.0, sigma))
    return np.asarray(value) + rng.normal(0.0, sigma, size=np.shape(value))


def calibrate_with_reference(noisy_ld: float, noisy_l0: float, ideal_l0: float) -> float:
    """Compensate a common decay factor: noisy_ld * ideal_l0 / noisy_l0."""
    if not abs(noisy_l0) > 1e-12 * abs(ideal_l0):
        raise DegenerateReferenceError("reference echo is too small to calibrate against")
    return noisy_ld * (ideal_l0 / noisy_l0)
