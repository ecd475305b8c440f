"""QFI oracles, Loschmidt-echo evaluation and the echo-to-QFI estimators.

Deviation-state quantities are exact at leading order in the polarization
and are reported in units of eps^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .circuits import (
    CircuitParams, deviation_observable, engineering_unitary, generator as star_generator,
)
from .errors import DomainError
from .qstate import (
    DeviationState, SpinSystem, dagger, dimension, eig_hermitian, hermitian_defect,
    product_deviation, trace_product,
)
from .symmetric import BlockOperator

DEGENERACY_CUTOFF = 1e-14


@dataclass(frozen=True)
class QfiEstimate:
    value: float
    method: str
    quench: float = 0.0

    def __post_init__(self):
        # round-off negatives are reported as zero; noisy echoes may go further
        if -1e-9 <= self.value < 0:
            object.__setattr__(self, "value", 0.0)


@dataclass(frozen=True)
class ErrorBudget:
    e1: float
    e2: float
    e3: float
    sigma_meas: float
    note: str = "order-of-magnitude heuristics, literal formula values"


# --- exact QFI --------------------------------------------------------------

def qfi_pure(psi: np.ndarray, generator: np.ndarray) -> float:
    """4 (<G^2> - <G>^2)."""
    psi = np.asarray(psi, dtype=complex).ravel()
    if abs(np.linalg.norm(psi) - 1) > 1e-8:
        raise DomainError("state vector is not normalized")
    gpsi = generator @ psi
    mean = np.vdot(psi, gpsi).real
    return float(max(4 * (np.vdot(gpsi, gpsi).real - mean**2), 0.0))


def qfi_mixed(rho: np.ndarray, generator: np.ndarray, cutoff: float = DEGENERACY_CUTOFF) -> float:
    """2 sum_ij (l_i - l_j)^2 / (l_i + l_j) |<i|G|j>|^2; pairs below ``cutoff`` skipped."""
    lam, vec = eig_hermitian(rho)
    if lam[0] < -1e-10:
        raise DomainError(f"state has negative eigenvalue {lam[0]:.3e}")
    lam = np.clip(lam, 0.0, None)
    gt = vec.conj().T @ generator @ vec
    num = (lam[:, None] - lam[None, :]) ** 2
    den = lam[:, None] + lam[None, :]
    mask = den >= cutoff
    ratio = np.zeros_like(num)
    ratio[mask] = num[mask] / den[mask]
    return float(2 * np.sum(ratio * np.abs(gt) ** 2))


def _commutator_norm(a, g) -> float:
    """Tr(a^2 g^2) - Tr(a g a g), real and non-negative for Hermitian a, g."""
    ag = a @ g
    return (trace_product(a @ a, g @ g) - trace_product(ag, ag)).real


def qfi_deviation(state: DeviationState, generator) -> float:
    """Leading-order QFI / eps^2: (2/d) [Tr(D^2 G^2) - Tr(D G D G)]."""
    return float(max(2.0 / state.dim * _commutator_norm(state.deviation, generator), 0.0))


def qfi_le_limit(rho: np.ndarray, generator: np.ndarray) -> float:
    """lim_{delta->0} 4 (purity - L_delta) / delta^2 = 2 sum (l_i - l_j)^2 |G_ij|^2."""
    return float(max(4 * _commutator_norm(rho, generator), 0.0))


# --- Loschmidt echo ---------------------------------------------------------

def _diag(g) -> list:
    if isinstance(g, BlockOperator):
        return [np.real(np.diag(b)) for b in g.blocks]
    return [np.real(np.diag(g))]


def _is_diagonal(g) -> bool:
    blocks = g.blocks if isinstance(g, BlockOperator) else [g]
    return all(np.count_nonzero(b - np.diag(np.diag(b))) == 0 for b in blocks)


def echo_overlap(a, b, generator, delta: float) -> float:
    """Tr(e^{-i delta G} a e^{i delta G} b) for diagonal G, real part."""
    if not _is_diagonal(generator):
        from scipy.linalg import expm

        u = expm(-1j * delta * generator)
        return trace_product(u @ a @ u.conj().T, b).real
    diags = _diag(generator)
    if isinstance(a, BlockOperator):
        pairs = zip(a.weights, a.blocks, b.blocks, diags)
    else:
        pairs = [(1.0, a, b, diags[0])]
    total = 0.0
    for w, x, y, g in pairs:
        ph = np.exp(-1j * delta * (g[:, None] - g[None, :]))
        total += w * np.sum(ph * x * y.T).real
    return float(total)


def deviation_echo(engineered_deviation, generator, delta: float, observable=None) -> float:
    """L^Delta_delta = Tr(V D V^dag D) = Tr(e^{-i delta G} D_f e^{i delta G} D_f).

    ``observable`` defaults to the engineered deviation itself; that is the
    echo signal read out as sum_j gamma_j <sigma_z^j> after the reverse circuit.
    """
    b = engineered_deviation if observable is None else observable
    return echo_overlap(engineered_deviation, b, generator, delta)


def loschmidt_echo(state, circuit, delta: float, system: SpinSystem | None = None, generator=None):
    """Echo L = Tr(rho_f rho_f^delta).

    ``state`` may be a :class:`DeviationState`, a pure state vector or a
    dense density matrix.  ``circuit`` is either :class:`CircuitParams`
    (built on ``system``) or the engineering unitary itself.  Returns
    ``(L, L_deviation)``; ``L_deviation`` is ``None`` unless ``state`` is a
    deviation state.
    """
    if not np.isfinite(delta):
        raise DomainError("quench must be finite")
    if isinstance(circuit, CircuitParams):
        if system is None:
            raise DomainError("a SpinSystem is required to build the circuit")
        rep = "block" if isinstance(getattr(state, "deviation", None), BlockOperator) else "dense"
        u = engineering_unitary(circuit, system, rep)
        if generator is None:
            generator = star_generator(system, rep)
    else:
        u = circuit
    if generator is None:
        raise DomainError("generator required when passing a raw unitary")

    if isinstance(state, DeviationState):
        d = state.dim
        dev_f = u @ state.deviation @ dagger(u)
        l_dev = deviation_echo(dev_f, generator, delta)
        return 1.0 / d + state.epsilon**2 * l_dev / d**2, l_dev
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        from scipy.linalg import expm

        psi_f = u @ state
        amp = np.vdot(psi_f, expm(-1j * delta * generator) @ psi_f)
        return float(abs(amp) ** 2), None
    rho_f = u @ state @ u.conj().T
    return echo_overlap(rho_f, rho_f, generator, delta), None


def qfi_from_le(echo: float, delta: float, *, form: str = "pure", purity: float = 1.0,
                dim: int | None = None, reference: float | None = None) -> QfiEstimate:
    """QFI estimate from a finite-quench echo.

    ``form``:
      - ``"pure"``: 4 (1 - L) / delta^2
      - ``"bound"``: 4 (purity - L) / delta^2, a lower bound on the QFI
      - ``"degenerate"``: 2 d (purity - L) / delta^2, near-maximally-mixed states
      - ``"deviation"``: 2 (reference - L^Delta) / (d delta^2) in units of eps^2,
        with ``reference`` = Tr(D^2) = L^Delta_0
    """
    if delta == 0:
        raise DomainError("quench must be non-zero")
    d2 = delta**2
    if form == "pure":
        value = 4 * (1 - echo) / d2
    elif form == "bound":
        value = 4 * (purity - echo) / d2
    elif form == "degenerate":
        if dim is None:
            raise DomainError("dim required for the degenerate form")
        value = 2 * dim * (purity - echo) / d2
    elif form == "deviation":
        if dim is None or reference is None:
            raise DomainError("dim and reference required for the deviation form")
        value = 2 * (reference - echo) / (dim * d2)
    else:
        raise DomainError(f"unknown form {form!r}")
    return QfiEstimate(value, "le_finite", delta)


# --- optimal probe ----------------------------------------------------------

def _generator_basis(generator: np.ndarray):
    """G eigenvalues sorted descending with ties in basis order, and eigenvectors."""
    g = np.asarray(generator)
    if np.count_nonzero(g - np.diag(np.diag(g))) == 0:
        vals = np.real(np.diag(g))
        vecs = np.eye(len(vals), dtype=complex)
    else:
        vals, vecs = eig_hermitian(g)
    order = np.argsort(-np.round(vals, 12), kind="stable")
    return vals[order], vecs[:, order]


def _pair_qfi(hi, lo, g_hi, g_lo, deviation: bool, dim: int) -> float:
    dg2 = (g_hi - g_lo) ** 2
    if deviation:
        return float(np.sum((hi - lo) ** 2 * dg2) / (2 * dim))
    den = hi + lo
    mask = den >= DEGENERACY_CUTOFF
    return float(np.sum((hi - lo)[mask] ** 2 * dg2[mask] / den[mask]))


def optimal_probe(eigenvalues, generator: np.ndarray, deviation: bool = False):
    """Probe with the given spectrum that maximizes the QFI.

    The i-th largest eigenvalue is placed on (|g_i> + |g_{d-i+1}>)/sqrt 2 and
    the (d-i+1)-th on (|g_i> - |g_{d-i+1}>)/sqrt 2, where |g_i> are generator
    eigenstates in descending order.  With ``deviation=True`` the spectrum is
    that of a traceless deviation and the QFI is returned in units of eps^2.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    d = len(lam)
    if generator.shape != (d, d):
        raise DomainError("spectrum and generator dimensions differ")
    if not deviation:
        if lam[-1] < -1e-10 or abs(lam.sum() - 1) > 1e-8:
            raise DomainError("eigenvalues must be non-negative and sum to one")
    g, phi = _generator_basis(generator)
    rho = np.zeros((d, d), dtype=complex)
    half = d // 2
    for i in range(half):
        j = d - 1 - i
        plus = (phi[:, i] + phi[:, j]) / np.sqrt(2)
        minus = (phi[:, i] - phi[:, j]) / np.sqrt(2)
        rho += lam[i] * np.outer(plus, plus.conj()) + lam[j] * np.outer(minus, minus.conj())
    if d % 2:
        rho += lam[half] * np.outer(phi[:, half], phi[:, half].conj())
    f = _pair_qfi(lam[:half], lam[::-1][:half], g[:half], g[::-1][:half], deviation, d)
    return rho, f


def _expand_runs(runs):
    vals = np.array([v for v, _ in runs], dtype=float)
    counts = np.array([c for _, c in runs], dtype=np.int64)
    order = np.argsort(-vals, kind="stable")
    return vals[order], counts[order]


def optimal_qfi_runs(spectrum_runs, generator_runs, deviation: bool = True) -> float:
    """Optimal-probe QFI from multiplicity-compressed spectra.

    Each argument is a list of ``(value, multiplicity)``.  Used where the
    dense dimension is out of reach.
    """
    lv, lc = _expand_runs(spectrum_runs)
    gv, gc = _expand_runs(generator_runs)
    d = int(lc.sum())
    if int(gc.sum()) != d:
        raise DomainError("spectrum and generator dimensions differ")
    l_edges = np.concatenate([[0], np.cumsum(lc)])
    g_edges = np.concatenate([[0], np.cumsum(gc)])
    # rank i pairs with rank d-1-i; both values are constant between cuts
    half = d // 2
    cuts = {0, half}
    for e in np.concatenate([l_edges, g_edges]):
        for x in (int(e), d - int(e)):
            if 0 <= x <= half:
                cuts.add(x)
    cuts = sorted(cuts)

    def at(edges, vals, idx):
        return vals[np.searchsorted(edges, idx, side="right") - 1]

    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        hi, lo = at(l_edges, lv, a), at(l_edges, lv, d - 1 - a)
        g_hi, g_lo = at(g_edges, gv, a), at(g_edges, gv, d - 1 - a)
        total += (b - a) * _pair_qfi(np.array([hi]), np.array([lo]), np.array([g_hi]),
                                     np.array([g_lo]), deviation, d)
    return float(total)


def star_spectra(system: SpinSystem):
    """Multiplicity-compressed spectra of the equilibrium deviation and of G."""
    m = system.n_peripheral
    gp, gh = system.central_gamma, system.gamma_peripheral
    dev, gen = [], []
    for s in (1, -1):
        for k in range(m + 1):
            dev.append((gp * s + gh * (m - 2 * k), comb(m, k)))
            gen.append(((s + m - 2 * k) / 2, comb(m, k)))
    return dev, gen


def star_optimal_qfi(system: SpinSystem) -> float:
    """F_opt / eps^2 for the star register's equilibrium spectrum."""
    dev, gen = star_spectra(system)
    return optimal_qfi_runs(dev, gen, deviation=True)


# --- baselines and error analysis ------------------------------------------

def sql_baseline(state: DeviationState) -> float:
    """Best product-probe QFI / eps^2: sum_j gamma_j^2.

    Requires the deviation to be the product form sum_j gamma_j sigma_z^j.
    """
    gammas = tuple(state.gammas)
    if len(gammas) != state.n_spins:
        raise DomainError("product-form weights are not recorded on this state")
    dev = state.deviation
    if isinstance(dev, BlockOperator):
        if len(set(gammas[1:])) > 1:
            raise DomainError("block states need uniform peripheral weights")
        system = SpinSystem(n_peripheral=state.n_spins - 1, gamma_central=gammas[0],
                            gamma_peripheral=gammas[1])
        expected = deviation_observable(system, "block")
        defect = max(float(np.max(np.abs(a - b))) for a, b in zip(dev.blocks, expected.blocks))
    else:
        defect = float(np.max(np.abs(dev - product_deviation(gammas))))
    if defect > 1e-9:
        raise DomainError("deviation is not of product form sum_j gamma_j sigma_z^j")
    return float(sum(g * g for g in gammas))


def error_budget(n: int, epsilon: float, delta: float, delta_l: float) -> ErrorBudget:
    """Literal evaluation of the three error heuristics for the echo estimator."""
    if delta <= 0:
        raise DomainError("quench must be positive")
    e1 = (n * epsilon) ** 3 / 2 ** (n + 2)
    e2 = delta**2 / 2 ** (n - 1)
    e3 = 2 ** (n + 1) * epsilon**2 * delta_l / delta**2
    return ErrorBudget(e1, e2, e3, delta_l)


def random_params(rng) -> CircuitParams:
    return CircuitParams(rng.uniform(0.0, 2 * np.pi, 6))


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-point seed: ``seed`` XOR a 64-bit hash of ``index``."""
    return (int(seed) ^ _splitmix64(int(index))) & _MASK64


def quench_trial_errors(system: SpinSystem, noise_sigma: float, delta_grid, rng) -> np.ndarray:
    """|F_LE - F| per quench for one random circuit with Gaussian echo noise."""
    grid = np.asarray(delta_grid, dtype=float)
    rng = np.random.default_rng(rng)
    g = star_generator(system, "block")
    d0 = deviation_observable(system, "block")
    ref = trace_product(d0, d0).real
    u = engineering_unitary(random_params(rng), system, "block")
    dev_f = u @ d0 @ dagger(u)
    exact = qfi_deviation(DeviationState(system.n_spins, 0.0, dev_f, system.gammas), g)
    noise = rng.normal(0.0, noise_sigma, grid.size) if noise_sigma > 0 else np.zeros(grid.size)
    out = np.empty(grid.size)
    for k, delta in enumerate(grid):
        signal = deviation_echo(dev_f, g, delta) + noise[k]
        out[k] = abs(2 * (ref - signal) / (system.dim * delta**2) - exact)
    return out


def select_quench(system: SpinSystem, noise_sigma: float, delta_grid, n_trials: int,
                  rng_seed=None):
    """Empirical quench choice: mean |F_LE - F| over random circuits per delta.

    Gaussian noise of std ``noise_sigma`` is added to each echo signal
    L^Delta_delta.  Trial t draws from ``derive_seed(rng_seed, t)``.  Returns ``(best_delta, curve)``.
    """
    grid = np.asarray(delta_grid, dtype=float)
    if grid.size == 0 or n_trials < 1 or np.any(grid <= 0):
        raise DomainError("need a non-empty positive grid and at least one trial")
    if rng_seed is None:
        rng_seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    errors = np.array([quench_trial_errors(system, noise_sigma, grid, derive_seed(rng_seed, t))
                       for t in range(n_trials)])
    curve = errors.mean(axis=0)
    return float(grid[int(np.argmin(curve))]), curve
