"""Nelder-Mead simplex search and the variational probe-optimization loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .circuits import (
    CircuitParams, PulseErrorModel, deviation_observable, echo_sequence,
    engineering_unitary, generator as star_generator, perturb_sequence, compile_sequence,
)
from .errors import DomainError, OptimizerError
from .metrology import deviation_echo, qfi_deviation, star_optimal_qfi
from .noise import RelaxationParams, calibrate_with_reference, noisy_echo_signal
from .qstate import DeviationState, SpinSystem, dagger, trace_product

MOVES = ("reflect", "expand", "contract_out", "contract_in", "shrink")
TIE_RTOL = 1e-11


@dataclass(frozen=True)
class NmConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_iterations: int = 70
    reflection_variant: str = "standard"
    spread_tol: float | None = None

    def __post_init__(self):
        if not (self.reflection > 0 and self.expansion > 1
                and 0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise DomainError("Nelder-Mead coefficients out of range")
        if self.reflection_variant not in ("standard", "paper_literal"):
            raise DomainError(f"unknown reflection variant {self.reflection_variant!r}")
        if self.max_iterations < 0:
            raise DomainError("max_iterations must be non-negative")


@dataclass
class Simplex:
    vertices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n1, n = self.vertices.shape
        if n1 != n + 1 or self.values.shape != (n1,):
            raise DomainError("simplex needs n+1 vertices of dimension n")

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    def ordered(self) -> "Simplex":
        """Sort ascending; values equal to ~1e-11 relative keep their current order.

        The modified initial simplex has vertices that are physically
        identical, so exact ties are common and must not be broken by
        rounding noise.
        """
        scale = float(np.max(np.abs(self.values))) or 1.0
        key = np.round(self.values / (scale * TIE_RTOL))
        idx = np.lexsort((np.arange(len(key)), key))
        return Simplex(self.vertices[idx], self.values[idx])

    @property
    def best(self) -> np.ndarray:
        return self.vertices[int(np.argmin(self.values))]


def initial_simplex_modified(theta1, n: int | None = None) -> np.ndarray:
    """Vertices theta^(i), i = 1..n+1, offset from theta^(1).

    Vertex i > 1 adds 2pi(sqrt(n+1) + n - 1) to coordinate i-1 and
    2pi(sqrt(n+1) - 1) to every other coordinate.
    """
    theta1 = np.asarray(theta1, dtype=float).ravel()
    n = theta1.size if n is None else n
    if n < 1 or theta1.size != n:
        raise DomainError("theta1 must have n >= 1 entries")
    off = 2 * np.pi * (np.sqrt(n + 1) - 1)
    on = 2 * np.pi * (np.sqrt(n + 1) + n - 1)
    verts = np.tile(theta1, (n + 1, 1))
    verts[1:] += off
    verts[1:][np.arange(n), np.arange(n)] += on - off
    return verts


def _evaluate(objective, x):
    val = float(objective(x))
    if not np.isfinite(val):
        raise OptimizerError(f"objective returned {val}", theta=np.array(x))
    return val


def make_simplex(vertices, objective) -> Simplex:
    verts = np.asarray(vertices, dtype=float)
    return Simplex(verts, [_evaluate(objective, v) for v in verts]).ordered()


def nm_step(simplex: Simplex, objective: Callable, config: NmConfig = NmConfig()):
    """One Nelder-Mead transformation.  Returns ``(ordered simplex, move)``."""
    s = simplex.ordered()
    x, f = s.vertices.copy(), s.values.copy()
    n = s.n
    centroid = x[:n].mean(axis=0)
    a, g, b = config.reflection, config.expansion, config.contraction
    if config.reflection_variant == "standard":
        direction = centroid - x[n]
    else:
        # printed form: theta_ave + alpha (theta^(n+1) - theta^(n))
        direction = x[n] - x[n - 1]

    scale = float(np.max(np.abs(f))) or 1.0
    tol = scale * TIE_RTOL

    def lt(u, v):
        return u < v - tol

    xr = centroid + a * direction
    fr = _evaluate(objective, xr)
    move = None
    upper_ok = lt(fr, f[n - 1]) or (config.reflection_variant == "paper_literal" and not lt(f[n - 1], fr))
    if not lt(fr, f[0]) and upper_ok:
        x[n], f[n], move = xr, fr, "reflect"
    elif lt(fr, f[0]):
        xe = centroid + g * a * direction
        fe = _evaluate(objective, xe)
        if lt(fe, fr):
            x[n], f[n], move = xe, fe, "expand"
        else:
            x[n], f[n], move = xr, fr, "reflect"
    elif lt(fr, f[n]):
        xc = centroid + b * a * direction
        fc = _evaluate(objective, xc)
        if not lt(fr, fc):
            x[n], f[n], move = xc, fc, "contract_out"
    else:
        xc = centroid - b * a * direction
        fc = _evaluate(objective, xc)
        accept = lt(fc, f[n]) if config.reflection_variant == "standard" else not lt(fr, fc)
        if accept:
            x[n], f[n], move = xc, fc, "contract_in"
    if move is None:
        if config.reflection_variant == "standard":
            x[1:] = x[0] + config.shrink * (x[1:] - x[0])
        else:
            x[1:] = x[0] + (1 - config.shrink) * x[1:]
        f[1:] = [_evaluate(objective, v) for v in x[1:]]
        move = "shrink"
    return Simplex(x, f).ordered(), move


def nelder_mead(objective: Callable, vertices, config: NmConfig = NmConfig(), callback=None):
    """Run ``config.max_iterations`` steps from the given initial vertices."""
    s = make_simplex(vertices, objective)
    if callback is not None:
        callback(0, s, None)
    for it in range(1, config.max_iterations + 1):
        s, move = nm_step(s, objective, config)
        if callback is not None:
            callback(it, s, move)
        if config.spread_tol is not None and np.ptp(s.values) < config.spread_tol:
            break
    return s


# --- variational probe optimization -----------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    """Imperfections applied to each measured echo."""

    measurement_sigma: float = 0.0
    pulse_errors: PulseErrorModel | None = None
    relaxation: RelaxationParams | None = None
    calibrate: bool = True


@dataclass
class OptimizationTrace:
    iterations: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    le_measured: list = field(default_factory=list)
    qfi_le: list = field(default_factory=list)
    qfi_exact: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    f_opt: float = float("nan")
    evaluations: int = 0

    def rows(self):
        for k, th, le, fl, fe in zip(self.iterations, self.theta, self.le_measured,
                                     self.qfi_le, self.qfi_exact):
            yield [k, *th, le, fl, fe]

    @property
    def final_qfi(self) -> float:
        return self.qfi_exact[-1]


class EchoObjective:
    """Measured echo signal L^Delta_delta(theta) with configured imperfections."""

    def __init__(self, system: SpinSystem, quench: float, noise: NoiseConfig, rng):
        self.system = system
        self.quench = quench
        self.noise = noise
        self.rng = rng
        self.gen = star_generator(system, "block")
        self.d0 = deviation_observable(system, "block")
        self.reference = trace_product(self.d0, self.d0).real
        self.count = 0

    def ideal(self, theta, quench=None) -> float:
        u = engineering_unitary(CircuitParams(theta), self.system, "block")
        dev_f = u @ self.d0 @ dagger(u)
        return deviation_echo(dev_f, self.gen, self.quench if quench is None else quench)

    def _imperfect(self, theta, quench) -> float:
        nz = self.noise
        if nz.relaxation is None and nz.pulse_errors is None:
            return self.ideal(theta, quench)
        params = CircuitParams(theta)
        if nz.relaxation is not None:
            return noisy_echo_signal(params, quench, self.system, nz.relaxation,
                                     pulse_errors=nz.pulse_errors, rng=self.rng)
        seq = perturb_sequence(echo_sequence(params, quench, self.system), nz.pulse_errors, self.rng)
        v = compile_sequence(seq, self.system, "block")
        return (v @ self.d0 @ dagger(v) @ self.d0).trace().real

    def __call__(self, theta) -> float:
        self.count += 1
        nz = self.noise
        signal = self._imperfect(theta, self.quench)
        if nz.relaxation is not None and nz.calibrate:
            ref = self._imperfect(theta, 0.0)
            signal = calibrate_with_reference(signal, ref, self.reference)
        if nz.measurement_sigma > 0:
            signal += self.rng.normal(0.0, nz.measurement_sigma)
        return signal

    def qfi_estimate(self, signal: float) -> float:
        return 2 * (self.reference - signal) / (self.system.dim * self.quench**2)

    def qfi_exact(self, theta) -> float:
        u = engineering_unitary(CircuitParams(theta), self.system, "block")
        st = DeviationState(self.system.n_spins, 0.0, u @ self.d0 @ dagger(u), self.system.gammas)
        return qfi_deviation(st, self.gen)


def optimize_probe(system: SpinSystem = SpinSystem(), noise: NoiseConfig = NoiseConfig(),
                   config: NmConfig = NmConfig(), quench: float = 0.2, rng_seed=None,
                   initial_vertices=None) -> OptimizationTrace:
    """Minimize the measured echo L^Delta_delta over the six circuit angles.

    Starts from the modified simplex around theta = 0 unless
    ``initial_vertices`` is given.  The QFI columns of the trace are
    diagnostics and never feed back into the search.
    """
    rng = np.random.default_rng(rng_seed)
    obj = EchoObjective(system, quench, noise, rng)
    verts = initial_simplex_modified(np.zeros(6)) if initial_vertices is None else initial_vertices
    trace = OptimizationTrace(f_opt=star_optimal_qfi(system))

    def record(it, s, move):
        theta = s.vertices[0]
        trace.iterations.append(it)
        trace.theta.append(tuple(float(t) for t in theta))
        trace.le_measured.append(float(s.values[0]))
        trace.qfi_le.append(float(obj.qfi_estimate(s.values[0])))
        trace.qfi_exact.append(float(obj.qfi_exact(theta)))
        trace.moves.append(move or "init")

    nelder_mead(obj, verts, config, callback=record)
    trace.evaluations = obj.count
    return trace
