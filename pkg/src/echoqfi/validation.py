"""Invariant suite behind ``echoqfi validate``.

Each check draws from a fixed seed, so the suite is deterministic.  It is
sized to finish in well under a minute.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.stats import unitary_group

from .circuits import (
    CircuitParams, Pulse, PulseErrorModel, compile_sequence, deviation_observable,
    engineering_unitary, expand_bb1, generator as star_generator,
)
from .metrology import (
    deviation_echo, optimal_probe, qfi_deviation, qfi_le_limit, qfi_mixed, qfi_pure,
    star_optimal_qfi,
)
from .noise import (
    RelaxationParams, apply_site_kraus, calibrate_with_reference, gad_kraus,
    gad_strength, generalized_amplitude_damping, kraus_completeness_defect,
    pd_strength, phase_damping, phase_damping_kraus, relaxation_step,
)
from .optimize import NmConfig, initial_simplex_modified, nelder_mead
from .qstate import DeviationState, SpinSystem, dagger
from .readout import (
    coherence_series, ghz_series, orev_block_formula, orev_moments, precision_from_series,
    thermal_closed_form,
)
from .symmetric import block_to_dense, sector_table

SEED = 20240601


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_density(rng, d, rank=None):
    rank = d if rank is None else rank
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _random_state(rng, d):
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    return psi / np.linalg.norm(psi)


def _random_generator(rng, d):
    return np.diag(rng.uniform(-2, 2, d)).astype(complex)


def check_sector_dimensions():
    worst = max(abs(sum(s.multiplicity * s.dim for s in sector_table(m).sectors) - 2**m)
                for m in range(1, 21))
    return worst == 0, f"max |sum m_j (2j+1) - 2^M| = {worst} for M <= 20"


def check_pure_saturation():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 17))
        psi, g = _random_state(rng, d), _random_generator(rng, d)
        f = qfi_pure(psi, g)
        delta = 1e-3
        amp = np.vdot(psi, expm(-1j * delta * g) @ psi)
        est = 4 * (1 - abs(amp) ** 2) / delta**2
        spread = np.ptp(np.diag(g).real)
        if f > 1e-6:
            worst = max(worst, abs(est - f) / f / (delta**2 * spread**2))
    return worst <= 1.5, f"max rel. error / (delta^2 spread^2) = {worst:.3g}"


def check_le_bound():
    rng = np.random.default_rng(SEED + 1)
    worst = -np.inf
    for _ in range(200):
        d = int(rng.integers(2, 17))
        rho, g = _random_density(rng, d, int(rng.integers(1, d + 1))), _random_generator(rng, d)
        worst = max(worst, qfi_le_limit(rho, g) - qfi_mixed(rho, g))
    return worst <= 1e-9, f"max (F_LE - F) = {worst:.3g}"


def check_block_dense():
    system = SpinSystem(n_peripheral=3)
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for _ in range(3):
        p = CircuitParams(rng.uniform(0, 2 * np.pi, 6))
        dev = {}
        for rep in ("block", "dense"):
            u = engineering_unitary(p, system, rep)
            d0 = deviation_observable(system, rep)
            dev_f = u @ d0 @ dagger(u)
            g = star_generator(system, rep)
            st = DeviationState(system.n_spins, 1e-5, dev_f, system.gammas)
            dev[rep] = (deviation_echo(dev_f, g, 0.3), qfi_deviation(st, g))
        worst = max(worst, *(abs(a - b) / max(1.0, abs(b)) for a, b in zip(dev["block"], dev["dense"])))
    return worst <= 1e-8, f"max block/dense mismatch = {worst:.3g}"


def check_block_to_dense_unitary():
    system = SpinSystem(n_peripheral=4)
    u = engineering_unitary(CircuitParams([0.3, 1.1, 2.0, 0.7, 1.9, 0.4]), system, "block")
    ud = engineering_unitary(CircuitParams([0.3, 1.1, 2.0, 0.7, 1.9, 0.4]), system, "dense")
    err = float(np.max(np.abs(block_to_dense(u) - ud)))
    return err <= 1e-10, f"max |U_block - U_dense| = {err:.3g}"


def check_optimal_manifold():
    system = SpinSystem()
    theta = CircuitParams([0, np.pi / 2, 0, np.pi / 2, 0, np.pi / 2])
    u = engineering_unitary(theta, system, "block")
    d0 = deviation_observable(system, "block")
    st = DeviationState(system.n_spins, 1e-5, u @ d0 @ dagger(u), system.gammas)
    f = qfi_deviation(st, star_generator(system, "block"))
    f_opt = star_optimal_qfi(system)
    rel = abs(f - f_opt) / f_opt
    return rel <= 5e-3, f"F = {f:.6g}, F_opt = {f_opt:.6g}, rel = {rel:.3g}"


def check_optimal_probe_dominates():
    rng = np.random.default_rng(SEED + 3)
    worst = np.inf
    for _ in range(50):
        d = int(rng.integers(2, 9))
        rho, g = _random_density(rng, d), _random_generator(rng, d)
        _, f_opt = optimal_probe(np.linalg.eigvalsh(rho), g)
        worst = min(worst, f_opt - qfi_mixed(rho, g))
    return worst >= -1e-9, f"min (F_opt - F) = {worst:.3g}"


def check_unitary_invariance():
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    for _ in range(30):
        d = int(rng.integers(2, 9))
        rho, g = _random_density(rng, d), _random_generator(rng, d)
        phase = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, d)))
        worst = max(worst, abs(qfi_mixed(phase @ rho @ dagger(phase), g) - qfi_mixed(rho, g)))
    return worst <= 1e-8, f"max |F(U rho U^dag) - F(rho)| for [U, G] = 0: {worst:.3g}"


def check_channels():
    rng = np.random.default_rng(SEED + 5)
    worst = 0.0
    for _ in range(300):
        p = float(rng.uniform(0, 1))
        for kraus in (phase_damping_kraus(p / 2), gad_kraus(p)):
            worst = max(worst, kraus_completeness_defect(kraus))
            rho = _random_density(rng, 4)
            out = apply_site_kraus(rho, kraus, int(rng.integers(0, 2)))
            worst = max(worst, abs(np.trace(out) - 1), -min(np.linalg.eigvalsh(out).min(), 0))
            ident = apply_site_kraus(np.eye(4, dtype=complex) / 4, kraus, 0)
            worst = max(worst, float(np.max(np.abs(ident - np.eye(4) / 4))))
    return worst <= 1e-10, f"max completeness/trace/unitality/positivity defect = {worst:.3g}"


def check_channel_forms():
    rng = np.random.default_rng(SEED + 6)
    params = RelaxationParams(step=0.01)
    rho = _random_density(rng, 8)
    kraus = generalized_amplitude_damping(phase_damping(rho, params), params)
    swapped = phase_damping(generalized_amplitude_damping(rho, params), params)
    fast = relaxation_step(rho, params)
    err = max(float(np.max(np.abs(kraus - fast))), float(np.max(np.abs(kraus - swapped))))
    return err <= 1e-12, f"Kraus vs transfer form and PD/GAD commutation: {err:.3g}"


def check_channel_strengths():
    ok = abs(pd_strength(1.3, 1.3) - (1 - np.exp(-1)) / 2) < 1e-15
    ok &= abs(gad_strength(5.0, 5.0) - (1 - np.exp(-1))) < 1e-15
    ok &= pd_strength(0.0, 1.0) == 0.0 and gad_strength(0.0, 1.0) == 0.0
    return bool(ok), "xi(T2) = (1 - 1/e)/2, eta(T1) = 1 - 1/e, zero at dt = 0"


def check_bb1():
    system = SpinSystem(n_peripheral=2)
    theta, eps = np.pi / 2, 0.01
    ideal = compile_sequence([Pulse("central", theta)], system, "dense")
    bare = compile_sequence([Pulse("central", theta * (1 + eps))], system, "dense")
    bb1 = compile_sequence([Pulse("central", a * (1 + eps), p)
                            for a, p in [(e.angle, e.phase) for e in expand_bb1([Pulse("central", theta)])]],
                           system, "dense")
    d = ideal.shape[0]
    inf_bare = 1 - abs(np.trace(dagger(ideal) @ bare)) / d
    inf_bb1 = 1 - abs(np.trace(dagger(ideal) @ bb1)) / d
    return inf_bb1 < inf_bare / 100, f"infidelity bare {inf_bare:.3g}, BB1 {inf_bb1:.3g}"


def check_calibration_identity():
    rng = np.random.default_rng(SEED + 7)
    worst = 0.0
    for _ in range(100):
        x, y, c = rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(0.1, 1)
        worst = max(worst, abs(calibrate_with_reference(c * x, c * y, y) - x) / x)
    return worst <= 1e-12, f"common decay removed exactly: {worst:.3g}"


def check_nelder_mead():
    def f(x):
        return float(np.sum((x - 1.0) ** 2))
    s = nelder_mead(f, initial_simplex_modified(np.zeros(3)), NmConfig(max_iterations=300))
    err = float(np.max(np.abs(s.best - 1.0)))
    return err <= 1e-4, f"quadratic minimum reached to {err:.3g}"


def check_echo_zero_quench():
    system = SpinSystem(n_peripheral=4)
    u = engineering_unitary(CircuitParams([0.5, 1, 1.5, 2, 2.5, 3]), system, "block")
    d0 = deviation_observable(system, "block")
    dev_f = u @ d0 @ dagger(u)
    err = abs(deviation_echo(dev_f, star_generator(system, "block"), 0.0) - (d0 @ d0).trace().real)
    return err <= 1e-8, f"|L_0 - Tr D^2| = {err:.3g}"


def check_ghz_qcrb():
    worst = 0.0
    for n in (2, 4, 8):
        da, *_ = precision_from_series(ghz_series(n), 1e-3, 1e-5)
        worst = max(worst, abs(float(da) * n - 1))
    return worst <= 1e-3, f"max |N Delta alpha - 1| = {worst:.3g}"


def check_orev_forms():
    rng = np.random.default_rng(SEED + 8)
    worst = 0.0
    for _ in range(5):
        d = int(rng.integers(2, 9))
        rho, g = _random_density(rng, d), _random_generator(rng, d)
        for a in rng.uniform(0, np.pi, 3):
            o1, _ = orev_moments(rho, g, a)
            worst = max(worst, abs(orev_block_formula(rho, g, a) - o1))
    return worst <= 1e-10, f"block formula vs direct: {worst:.3g}"


def check_thermal_closed_form():
    worst = 0.0
    lam0 = 0.8
    for n in (2, 3, 4):
        d = 2**n
        spectrum = [lam0 ** (n - bin(k).count("1")) * (1 - lam0) ** bin(k).count("1") for k in range(d)]
        gdiag = np.array([(n - 2 * bin(k).count("1")) / 2 for k in range(d)])
        rho, _ = optimal_probe(spectrum, np.diag(gdiag).astype(complex))
        s = coherence_series(rho, np.diag(gdiag).astype(complex))
        for a in (0.1, 0.7, 1.9):
            o1, o2 = thermal_closed_form(n, lam0, 1 - lam0, a)
            worst = max(worst, abs(o1 - s.mean(a)), abs(o2 - s.second_moment(a)))
    return worst <= 1e-10, f"closed form vs dense: {worst:.3g}"


def check_csv_roundtrip():
    from .harness import Table, emit_csv, read_csv
    rng = np.random.default_rng(SEED + 9)
    values = rng.normal(size=(5, 3)) * 10.0 ** rng.integers(-300, 300, size=(5, 3))
    with tempfile.TemporaryDirectory() as tmp:
        path = emit_csv(Table(["a", "b", "c"], values.tolist()), Path(tmp) / "t.csv")
        back = np.array(read_csv(path).rows, dtype=float)
        raw = path.read_bytes()
    ok = np.array_equal(back, values) and b"\r" not in raw and raw.count(b"\n") == 6
    return bool(ok), "17 significant digits parse back bit-exactly; LF only"


def check_random_unitary_qfi():
    rng = np.random.default_rng(SEED + 10)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 9))
        u = unitary_group.rvs(d, random_state=rng)
        g = u @ _random_generator(rng, d) @ dagger(u)
        psi = _random_state(rng, d)
        worst = max(worst, abs(qfi_pure(psi, g) - qfi_mixed(np.outer(psi, psi.conj()), g)))
    return worst <= 1e-8, f"pure vs mixed QFI on pure states: {worst:.3g}"


CHECKS = [
    ("sector dimension identity", check_sector_dimensions),
    ("pure LE saturation", check_pure_saturation),
    ("LE lower bound on QFI", check_le_bound),
    ("block engine equals dense", check_block_dense),
    ("block_to_dense of circuits", check_block_to_dense_unitary),
    ("optimal-manifold certificate", check_optimal_manifold),
    ("optimal probe dominates", check_optimal_probe_dominates),
    ("QFI invariant under commuting unitaries", check_unitary_invariance),
    ("pure QFI equals mixed QFI", check_random_unitary_qfi),
    ("channel sanity", check_channels),
    ("channel forms agree", check_channel_forms),
    ("channel strengths", check_channel_strengths),
    ("BB1 suppresses amplitude error", check_bb1),
    ("calibration identity", check_calibration_identity),
    ("Nelder-Mead on a quadratic", check_nelder_mead),
    ("echo at zero quench", check_echo_zero_quench),
    ("GHZ readout saturates the QCRB", check_ghz_qcrb),
    ("readout block formula", check_orev_forms),
    ("thermal closed forms", check_thermal_closed_form),
    ("CSV round trip", check_csv_roundtrip),
]


def run_checks(checks=None) -> list:
    results = []
    for name, fn in CHECKS if checks is None else checks:
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results
