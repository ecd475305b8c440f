"""Time-reversal readout: moments of O_rev, error propagation and precision studies.

For a probe rho_f and encoding exp(-i alpha G), O_rev is the projection
back onto rho_f, so

    <O>   = Tr(e^{-i alpha G} rho_f e^{i alpha G} rho_f)
    <O^2> = Tr(e^{-i alpha G} rho_f e^{i alpha G} rho_f^2).

Splitting rho_f into coherence orders m (differences of G eigenvalues)
turns both into trigonometric series in alpha; :class:`CoherenceSeries` stores the
weights once and evaluates any alpha cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import mpmath
import numpy as np

from .errors import DomainError
from .metrology import optimal_qfi_runs, qfi_mixed
from .qstate import eig_hermitian
from .symmetric import BlockOperator, sector_table

DEFAULT_STEP = np.pi / 50
DEFAULT_GRID_POINTS = 256
HBAR_OMEGA = 2.6e-25  # J, proton Zeeman splitting at 9.4 T
K_BOLTZMANN = 1.38e-23  # J/K
ORDER_DECIMALS = 9
MP_DPS = 60


def default_alpha_grid(points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """``points`` uniform values on (0, pi/2]."""
    return np.pi / 2 * np.arange(1, points + 1) / points


# --- coherence-order series -------------------------------------------------

@dataclass(frozen=True)
class CoherenceSeries:
    """Moments as trigonometric series over non-negative orders m.

    <O>(a) = sum_m first[m] cos(m a) is even because Tr(rho_{-m} rho_m) is
    real; <O^2>(a) = sum_m second[m] cos(m a) + second_sin[m] sin(m a).
    """

    orders: np.ndarray
    first: np.ndarray
    second: np.ndarray
    second_sin: np.ndarray | None = None

    def mean(self, alpha) -> np.ndarray:
        return np.cos(np.multiply.outer(alpha, self.orders)) @ self.first

    def second_moment(self, alpha) -> np.ndarray:
        phase = np.multiply.outer(alpha, self.orders)
        out = np.cos(phase) @ self.second
        if self.second_sin is not None:
            out = out + np.sin(phase) @ self.second_sin
        return out

    def moments(self, alpha):
        return self.mean(alpha), self.second_moment(alpha)


def _fold(orders, values) -> tuple:
    """Sum ``values`` by |order| (rounded), returning sorted non-negative orders."""
    absolute = np.abs(orders)
    key = np.round(absolute, ORDER_DECIMALS)
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    out = np.zeros(len(uniq))
    np.add.at(out, inv, np.real(values))
    # keep an unrounded representative so phases stay exact
    return absolute[first], out


def _eigenbasis(rho, generator):
    """rho expressed in a generator eigenbasis, plus the eigenvalues."""
    g = np.asarray(generator)
    if np.count_nonzero(g - np.diag(np.diag(g))) == 0:
        return np.asarray(rho, dtype=complex), np.real(np.diag(g))
    vals, vecs = eig_hermitian(g)
    return vecs.conj().T @ rho @ vecs, vals


def coherence_series(rho, generator) -> CoherenceSeries:
    """Coherence-order weights Tr(rho_{-m} rho_m) and Tr(rho_{-m} (rho^2)_m).

    ``rho`` and ``generator`` may be dense arrays or block operators with a
    diagonal generator.
    """
    if isinstance(rho, BlockOperator):
        parts = [(w, r, np.real(np.diag(g))) for w, r, g in zip(rho.weights, rho.blocks, generator.blocks)]
    else:
        r, g = _eigenbasis(rho, generator)
        parts = [(1.0, r, g)]
    orders, first, second = [], [], []
    for w, r, g in parts:
        diff = (g[:, None] - g[None, :]).ravel()
        r2 = r @ r
        orders.append(diff)
        first.append(w * (r * r.T).ravel())
        second.append(w * (r * r2.T).ravel())
    # each term v e^{-i o a} contributes Re(v) cos(|o| a) + sign(o) Im(v) sin(|o| a)
    orders = np.concatenate(orders)
    second = np.concatenate(second)
    m, f1 = _fold(orders, np.concatenate(first))
    _, f2 = _fold(orders, second.real)
    _, f2s = _fold(orders, np.sign(orders) * second.imag)
    return CoherenceSeries(m, f1, f2, f2s)


def orev_moments(rho, generator, alpha: float) -> tuple:
    """Direct evaluation of (<O>, <O^2>) with explicit encoding unitaries."""
    from scipy.linalg import expm

    rho = np.asarray(rho, dtype=complex)
    u = expm(-1j * alpha * np.asarray(generator))
    enc = u @ rho @ u.conj().T
    o1 = np.einsum("ij,ji->", enc, rho)
    o2 = np.einsum("ij,ji->", enc, rho @ rho)
    if abs(o1.imag) > 1e-10 * max(1.0, abs(o1)) or abs(o2.imag) > 1e-10 * max(1.0, abs(o2)):
        raise DomainError("moments are not real; is rho Hermitian?")
    return float(o1.real), float(o2.real)


def orev_block_formula(rho, generator, alpha) -> float:
    """<O> = sum_m Tr(rho_{-m} rho_m) e^{-i m alpha}."""
    return coherence_series(rho, generator).mean(alpha)


# --- thermal near-optimal probe ---------------------------------------------

def _thermal_terms(n: int, lam0, lam1):
    """(C(N,i) with the middle term halved, p_i, q_i, order) for i <= N/2, as mpf."""
    out = []
    for i in range(n // 2 + 1):
        c = mpmath.mpf(comb(n, i))
        if 2 * i == n:
            c /= 2
        p = lam0 ** (n - i) * lam1**i
        q = lam0**i * lam1 ** (n - i)
        out.append((c, p, q, n - 2 * i))
    return out


def _check_lambdas(lam0, lam1):
    if lam0 < 0 or lam1 < 0 or abs(lam0 + lam1 - 1) > 1e-12:
        raise DomainError("need lambda0, lambda1 >= 0 with lambda0 + lambda1 = 1")


def thermal_moments_mp(n: int, lam0, lam1, alpha) -> tuple:
    """High-precision (<O>, <O^2>) for the thermal near-optimal probe.

    The probe places p_i = l0^(N-i) l1^i and q_i = l0^i l1^(N-i) on
    (|x> +- |x_bar>)/sqrt 2 for every bit string x with i ones.  Each pair
    contributes (1/2)[(p+q)^k (p+q) + (p-q)^k (p-q) cos((N-2i) alpha)] with
    k = 1 for <O> and the squares p^2, q^2 in place of p, q for <O^2>.
    """
    with mpmath.workdps(MP_DPS):
        lam0, lam1 = mpmath.mpf(lam0), mpmath.mpf(lam1)
        a = mpmath.mpf(alpha)
        o1 = o2 = mpmath.mpf(0)
        for c, p, q, m in _thermal_terms(n, lam0, lam1):
            cs = mpmath.cos(m * a)
            o1 += c * ((p + q) ** 2 + (p - q) ** 2 * cs) / 2
            o2 += c * ((p * p + q * q) * (p + q) + (p * p - q * q) * (p - q) * cs) / 2
        return o1, o2


def thermal_closed_form(n: int, lam0: float, lam1: float, alpha) -> tuple:
    """(<O>, <O^2>) of the N-spin thermal near-optimal probe, as floats."""
    _check_lambdas(lam0, lam1)
    if n < 1:
        raise DomainError("N must be positive")
    if np.ndim(alpha):
        pairs = [thermal_closed_form(n, lam0, lam1, a) for a in np.asarray(alpha).ravel()]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    o1, o2 = thermal_moments_mp(n, lam0, lam1, alpha)
    return float(o1), float(o2)


def thermal_probe_qfi(n: int, lam0: float) -> float:
    """Exact QFI of the thermal near-optimal probe for G = sum sigma_z / 2."""
    with mpmath.workdps(MP_DPS):
        lam0 = mpmath.mpf(lam0)
        lam1 = 1 - lam0
        total = mpmath.mpf(0)
        for c, p, q, m in _thermal_terms(n, lam0, lam1):
            if m and p + q > 0:
                total += c * (p - q) ** 2 / (p + q) * m * m
        return float(total)


def thermal_lambda(temperature: float) -> float:
    """lambda0 = e^x / (e^x + e^-x), x = hbar omega / (k_B T); T = 0 gives 1."""
    if temperature < 0:
        raise DomainError("temperature must be non-negative")
    if temperature == 0:
        return 1.0
    x = HBAR_OMEGA / (K_BOLTZMANN * temperature)
    return float(1 / (1 + mpmath.exp(-2 * x)))


# --- error propagation ------------------------------------------------------

def _delta_alpha(var, slope):
    slope = np.abs(np.asarray(slope, dtype=float))
    var = np.maximum(np.asarray(var, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        out = np.where(slope < 1e-300, np.inf, np.sqrt(var) / np.where(slope < 1e-300, 1.0, slope))
    return out


def precision_from_series(series: CoherenceSeries, alpha, step: float = DEFAULT_STEP):
    """(delta_alpha, <O>, <O^2>, derivative) at ``alpha`` from a coherence series."""
    if step <= 0:
        raise DomainError("difference step must be positive")
    alpha = np.asarray(alpha, dtype=float)
    o1, o2 = series.moments(alpha)
    deriv = (series.mean(alpha + step) - series.mean(alpha - step)) / (2 * step)
    return _delta_alpha(o2 - o1 * o1, deriv), o1, o2, deriv


def precision_at(rho, generator, alpha, step: float = DEFAULT_STEP):
    """Delta alpha = sqrt(<O^2> - <O>^2) / |d<O>/d alpha| with a central difference.

    Returns +inf where the difference quotient vanishes.
    """
    da, *_ = precision_from_series(coherence_series(rho, generator), alpha, step)
    return float(da) if np.ndim(da) == 0 else da


@dataclass
class PrecisionReport:
    alpha_grid: np.ndarray
    o_mean: np.ndarray
    o_second: np.ndarray
    derivative: np.ndarray
    delta_alpha: np.ndarray
    working_point: float
    sql_ratio: np.ndarray
    qcrb: float
    conventions: dict = field(default_factory=dict)

    @property
    def best(self) -> float:
        return float(np.min(self.delta_alpha))

    @property
    def best_sql_ratio(self) -> float:
        return float(np.min(self.sql_ratio))

    def rows(self):
        for row in zip(self.alpha_grid, self.o_mean, self.o_second, self.derivative,
                       self.delta_alpha, self.sql_ratio):
            yield [float(v) for v in row]


def _check_grid(alpha_grid):
    grid = np.asarray(default_alpha_grid() if alpha_grid is None else alpha_grid, dtype=float)
    if grid.size == 0:
        raise DomainError("empty alpha grid")
    return grid


def working_point(rho, generator, alpha_grid=None, step: float = DEFAULT_STEP,
                  f_sql: float | None = None):
    """Grid minimizer of Delta alpha and the full report.

    ``f_sql`` is the SQL Fisher information used for (Delta alpha / Delta alpha_SQL)^2
    with Delta alpha_SQL = 1/sqrt(f_sql); without it the ratio column is NaN.
    """
    grid = _check_grid(alpha_grid)
    da, o1, o2, deriv = precision_from_series(coherence_series(rho, generator), grid, step)
    ratio = da**2 * f_sql if f_sql is not None else np.full(grid.size, np.nan)
    f = qfi_mixed(np.asarray(rho), np.asarray(generator))
    k = int(np.argmin(da))
    report = PrecisionReport(grid, o1, o2, deriv, da, float(grid[k]), ratio,
                             1 / np.sqrt(f) if f > 0 else np.inf)
    return report.working_point, report


def ensemble_precision(delta_alpha: float, nu: float) -> float:
    """Delta alpha / sqrt(nu) for nu independent copies averaged."""
    if nu < 1:
        raise DomainError("nu must be at least 1")
    return delta_alpha / np.sqrt(nu)


# --- deviation-form readout -------------------------------------------------

@dataclass(frozen=True)
class DeviationReadout:
    """Readout of rho_f = (1 + eps D_f)/d to O(eps^2).

    With T(a) = Tr(e^{-iaG} D_f e^{iaG} D_f) = sum_m w_m cos(m a):
      <O> = 1/d + eps^2 T/d^2,  <O^2> = 1/d^2 + eps^2 Tr(D^2)/d^3 + 2 eps^2 T/d^3,
    so Var O = eps^2 Tr(D^2)/d^3 and Delta alpha = sqrt(d Tr(D^2)) / (eps |T'|).
    The SQL is F_SQL = eps^2 sum_j gamma_j^2.
    """

    orders: np.ndarray
    weights: np.ndarray
    dim: float
    epsilon: float
    sum_gamma_sq: float
    f_opt: float = float("nan")

    @property
    def trace_d2(self) -> float:
        return float(np.sum(self.weights))

    def echo(self, alpha) -> np.ndarray:
        return np.cos(np.multiply.outer(alpha, self.orders)) @ self.weights

    def moments(self, alpha):
        t = self.echo(alpha)
        d, e2 = self.dim, self.epsilon**2
        return 1 / d + e2 * t / d**2, 1 / d**2 + e2 * self.trace_d2 / d**3 + 2 * e2 * t / d**3

    def slope(self, alpha, step: float = DEFAULT_STEP):
        """Central difference of T."""
        if step <= 0:
            raise DomainError("difference step must be positive")
        alpha = np.asarray(alpha, dtype=float)
        return (self.echo(alpha + step) - self.echo(alpha - step)) / (2 * step)

    def delta_alpha(self, alpha, step: float = DEFAULT_STEP):
        t1 = self.slope(alpha, step)
        return _delta_alpha(self.dim * self.trace_d2 / self.epsilon**2, t1)

    def sql_ratio(self, alpha, step: float = DEFAULT_STEP):
        return self.delta_alpha(alpha, step) ** 2 * self.epsilon**2 * self.sum_gamma_sq

    def qfi(self) -> float:
        """Leading-order QFI / eps^2 of the probe: (1/d) sum_m m^2 w_m."""
        return float(np.sum(self.orders**2 * self.weights) / self.dim)

    def report(self, alpha_grid=None, step: float = DEFAULT_STEP) -> PrecisionReport:
        grid = _check_grid(alpha_grid)
        o1, o2 = self.moments(grid)
        d, e2 = self.dim, self.epsilon**2
        da = self.delta_alpha(grid, step)
        k = int(np.argmin(da))
        return PrecisionReport(
            grid, o1, o2, e2 * self.slope(grid, step) / d**2, da, float(grid[k]),
            self.sql_ratio(grid, step), 1 / (self.epsilon * np.sqrt(self.qfi())),
            {"sql": "F_SQL = eps^2 sum gamma_j^2", "moments": "deviation form to O(eps^2)"},
        )


def deviation_readout(engineered_deviation, generator, epsilon: float, gammas) -> DeviationReadout:
    """Deviation-form readout of an engineered deviation (dense or block)."""
    if not 0 < epsilon:
        raise DomainError("epsilon must be positive")
    s = coherence_series(engineered_deviation, generator)
    dim = engineered_deviation.dim if isinstance(engineered_deviation, BlockOperator) else len(engineered_deviation)
    return DeviationReadout(s.orders, s.first, float(dim), epsilon, float(np.sum(np.square(gammas))))


def thermal_deviation_readout(n: int, epsilon: float = 1e-5) -> DeviationReadout:
    """Thermal near-optimal probe of N spins in deviation form, via spin-j sectors.

    The equilibrium deviation sum sigma_z = 2 Jz is rearranged into
    |2 Jz| X^{(x)N}, which couples m and -m inside each collective sector, so
    T(a) = sum_j mult_j sum_m (2m)^2 cos(2 m a).
    """
    if n < 1:
        raise DomainError("N must be positive")
    orders, weights = [], []
    for s in sector_table(n).sectors:
        m = s.twice_j / 2 - np.arange(s.dim)
        orders.append(2 * m)
        weights.append(s.multiplicity * (2 * m) ** 2)
    k, w = _fold(np.concatenate(orders), np.concatenate(weights))
    dev_runs = [(n - 2 * i, comb(n, i)) for i in range(n + 1)]
    gen_runs = [((n - 2 * i) / 2, comb(n, i)) for i in range(n + 1)]
    f_opt = optimal_qfi_runs(dev_runs, gen_runs, deviation=True)
    return DeviationReadout(k, w, float(2**n), epsilon, float(n), f_opt)


def thermal_binomial_echo(n: int, alpha) -> np.ndarray:
    """T(a) = 2 sum_{i < N/2} C(N,i) (N-2i)^2 cos((N-2i) a), the binomial form."""
    alpha = np.asarray(alpha, dtype=float)
    return sum(2 * comb(n, i) * (n - 2 * i) ** 2 * np.cos((n - 2 * i) * alpha)
               for i in range((n + 1) // 2))


# --- studies ----------------------------------------------------------------

def ghz_series(n: int) -> CoherenceSeries:
    """Pure GHZ state of N qubits under G = sum sigma_z / 2: <O> = cos^2(N a / 2)."""
    half = np.array([0.5, 0.5])
    return CoherenceSeries(np.array([0.0, float(n)]), half, half)


@dataclass
class ScalingResult:
    rows: list
    slope: float
    ratio: float
    conventions: dict


def scaling_sweep(n_values, epsilon: float = 1e-5, family: str = "thermal",
                  step: float = DEFAULT_STEP, alpha_grid=None) -> ScalingResult:
    """Working-point precision versus N with a log-log slope fit.

    Rows are (N, Delta alpha, Delta alpha_SQL, Delta alpha_opt_bound,
    alpha_tilde, (Delta alpha_opt_bound / Delta alpha)^2).  ``ratio`` is the
    geometric mean of the last column, i.e. the offset between the two lines
    on a log-log plot.
    """
    grid = _check_grid(alpha_grid)
    rows = []
    for n in n_values:
        n = int(n)
        if family == "thermal":
            ro = thermal_deviation_readout(n, epsilon)
            da = ro.delta_alpha(grid, step)
            sql = 1 / (epsilon * np.sqrt(n))
            bound = 1 / (epsilon * np.sqrt(ro.f_opt))
        elif family == "ghz":
            da, *_ = precision_from_series(ghz_series(n), grid, step)
            sql, bound = 1 / np.sqrt(n), 1 / n
        else:
            raise DomainError(f"unknown probe family {family!r}")
        k = int(np.argmin(da))
        rows.append([n, float(da[k]), float(sql), float(bound), float(grid[k]), float((bound / da[k]) ** 2)])
    table = np.array(rows)
    slope = float(np.polyfit(np.log(table[:, 0]), np.log(table[:, 1]), 1)[0]) if len(rows) > 1 else float("nan")
    ratio = float(np.exp(np.mean(np.log(table[:, 5]))))
    conv = {"bound": "Delta alpha_opt = 1/sqrt(F_opt) of the optimal probe",
            "ratio": "(Delta alpha_opt / Delta alpha)^2, geometric mean over N"}
    return ScalingResult(rows, slope, ratio, conv)


def thermal_precision_mp(n: int, lam0: float, alpha: float, step: float = DEFAULT_STEP) -> float:
    """Delta alpha for the thermal probe at finite purity, evaluated in high precision."""
    with mpmath.workdps(MP_DPS):
        l0 = mpmath.mpf(lam0)
        l1 = 1 - l0
        o1, o2 = thermal_moments_mp(n, l0, l1, alpha)
        up, _ = thermal_moments_mp(n, l0, l1, mpmath.mpf(alpha) + step)
        dn, _ = thermal_moments_mp(n, l0, l1, mpmath.mpf(alpha) - step)
        slope = abs((up - dn) / (2 * step))
        if slope < mpmath.mpf("1e-300"):
            return float("inf")
        var = max(o2 - o1 * o1, mpmath.mpf(0))
        return float(mpmath.sqrt(var) / slope)


def purity_sweep(temperatures, n: int = 10, alpha_grid=None, step: float = DEFAULT_STEP):
    """(Delta alpha / Delta alpha_SQL)^2 curves of the thermal probe per temperature.

    The SQL at finite purity is F_SQL = N (l0 - l1)^2.  Returns a list of
    dicts with the temperature, lambda0, curve and the QCRB ratio
    F_SQL / F_probe.
    """
    grid = _check_grid(alpha_grid)
    out = []
    for temp in temperatures:
        lam0 = thermal_lambda(float(temp))
        f_sql = n * (2 * lam0 - 1) ** 2
        f_probe = thermal_probe_qfi(n, lam0)
        curve = np.array([thermal_precision_mp(n, lam0, a, step) ** 2 * f_sql for a in grid])
        out.append({"temperature": float(temp), "lambda0": lam0, "curve": curve,
                    "qcrb_ratio": f_sql / f_probe if f_probe > 0 else np.inf})
    return grid, out
