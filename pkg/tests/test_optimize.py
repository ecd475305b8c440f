import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from echoqfi.errors import DomainError, OptimizerError
from echoqfi.optimize import (
    MOVES, NmConfig, NoiseConfig, Simplex, initial_simplex_modified, make_simplex,
    nelder_mead, nm_step, optimize_probe,
)
from echoqfi.circuits import CircuitParams, deviation_observable, engineering_unitary, generator
from echoqfi.metrology import deviation_echo, qfi_deviation, star_optimal_qfi
from echoqfi.qstate import DeviationState, SpinSystem, dagger


def bowl(x):
    return float(np.sum(np.asarray(x) ** 2))


def rosenbrock(x):
    return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)


class Recorder:
    def __init__(self, fn):
        self.fn = fn
        self.points = []

    def __call__(self, x):
        v = self.fn(x)
        self.points.append((np.array(x), v))
        return v


class TestInitialSimplex:
    def test_six_dims(self):
        v = initial_simplex_modified(np.zeros(6))
        assert v.shape == (7, 6)
        off, on = 2 * np.pi * (np.sqrt(7) - 1), 2 * np.pi * (np.sqrt(7) + 5)
        assert off == pytest.approx(10.3406, abs=1e-3) and on == pytest.approx(48.0403, abs=1e-3)
        for i in range(1, 7):
            for j in range(6):
                assert v[i, j] == pytest.approx(on if i == j + 1 else off)

    def test_one_dim(self):
        v = initial_simplex_modified(np.zeros(1))
        np.testing.assert_allclose(v.ravel(), [0, 2 * np.pi * np.sqrt(2)])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_first_vertex_unchanged(self, theta):
        v = initial_simplex_modified(np.array(theta))
        np.testing.assert_array_equal(v[0], theta)

    def test_invalid(self):
        with pytest.raises(DomainError):
            initial_simplex_modified(np.zeros(3), 2)


class TestNmConfig:
    @pytest.mark.parametrize("kwargs", [
        {"reflection": 0}, {"expansion": 1}, {"contraction": 1}, {"shrink": 0},
        {"reflection_variant": "other"}, {"max_iterations": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            NmConfig(**kwargs)


class TestNmStep:
    def test_bowl_converges(self):
        r = np.random.default_rng(1)
        for _ in range(5):
            verts = r.uniform(-20, 20, (4, 3))
            s = nelder_mead(bowl, verts, NmConfig(max_iterations=200))
            assert s.values.min() < 1e-6

    @given(st.integers(0, 2**32 - 1))
    def test_bowl_property(self, seed):
        verts = np.random.default_rng(seed).uniform(-20, 20, (3, 2))
        assert nelder_mead(bowl, verts, NmConfig(max_iterations=200)).values.min() < 1e-6

    def test_rosenbrock(self):
        x0 = np.array([-1.2, 1.0])
        verts = np.vstack([x0, x0 + [0.1, 0], x0 + [0, 0.1]])
        s = nelder_mead(rosenbrock, verts, NmConfig(max_iterations=400))
        assert s.values.min() < 1e-4
        ref = minimize(rosenbrock, x0, method="Nelder-Mead",
                       options={"initial_simplex": verts, "xatol": 1e-10, "fatol": 1e-12})
        np.testing.assert_allclose(s.best, ref.x, atol=1e-3)

    def test_reflect_bookkeeping(self):
        # f1 <= fr < fn: only the worst vertex is replaced by the reflection point
        def f(x):
            return float((x[0] - 2) ** 2 + (x[1] + 0.2) ** 2)
        s = make_simplex([[1, 0], [1, 1], [0, 0]], f)
        new, move = nm_step(s, f)
        assert move == "reflect"
        xr = s.vertices[:2].mean(axis=0) * 2 - s.vertices[2]
        assert any(np.allclose(v, xr) for v in new.vertices)
        for v in s.vertices[:2]:
            assert any(np.allclose(v, w) for w in new.vertices)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["standard", "paper_literal"]))
    def test_rule_table(self, seed, variant):
        r = np.random.default_rng(seed)
        a = r.normal(size=(3, 3))
        hess = a @ a.T + 0.1 * np.eye(3)
        fn = Recorder(lambda x: float(x @ hess @ x))
        s = make_simplex(r.uniform(-3, 3, (4, 3)), fn)
        fn.points.clear()
        new, move = nm_step(s, fn, NmConfig(reflection_variant=variant))
        assert move in MOVES
        fr = fn.points[0][1]
        if move == "expand" or (len(fn.points) == 2 and move == "reflect" and fr < s.values[0]):
            assert fr < s.values[0]
        if move == "contract_in":
            assert fr >= s.values[-1]
        # incumbent best is never lost
        assert new.values.min() <= s.values.min()
        changed = sum(not any(np.array_equal(v, w) for w in s.vertices) for v in new.vertices)
        assert changed == (s.n if move == "shrink" else 1)

    def test_ordered(self):
        s = Simplex([[0.0], [1.0]], [2.0, 1.0]).ordered()
        assert list(s.values) == [1.0, 2.0]

    def test_non_finite(self):
        def bad(x):
            return np.nan if x[0] > 0.5 else 0.0
        with pytest.raises(OptimizerError) as info:
            make_simplex([[0.0], [1.0]], bad)
        assert info.value.theta[0] == 1.0

    def test_shape_check(self):
        with pytest.raises(DomainError):
            Simplex(np.zeros((2, 2)), np.zeros(2))

    def test_spread_tolerance(self):
        calls = []
        nelder_mead(bowl, np.eye(3, 2), NmConfig(max_iterations=1000, spread_tol=1e-10),
                    callback=lambda it, s, m: calls.append(it))
        assert calls[-1] < 1000


class TestOptimizeProbe:
    def test_trace_shape_and_monotone(self):
        cfg = NmConfig(max_iterations=20)
        tr = optimize_probe(SpinSystem(n_peripheral=3), NoiseConfig(), cfg)
        assert len(tr.iterations) == 21 and tr.iterations[0] == 0
        assert all(len(th) == 6 for th in tr.theta)
        assert np.all(np.diff(tr.le_measured) <= 1e-9 * abs(tr.le_measured[0]))
        assert len(list(tr.rows())[0]) == 10

    def test_deterministic_with_noise(self):
        noise = NoiseConfig(measurement_sigma=5.0)
        cfg = NmConfig(max_iterations=10)
        a = optimize_probe(SpinSystem(n_peripheral=3), noise, cfg, rng_seed=11)
        b = optimize_probe(SpinSystem(n_peripheral=3), noise, cfg, rng_seed=11)
        assert a.le_measured == b.le_measured and a.theta == b.theta

    def test_small_star_reaches_optimum(self):
        tr = optimize_probe(SpinSystem(n_peripheral=3))
        assert tr.final_qfi >= 0.95 * tr.f_opt

    def test_qfi_columns(self):
        system = SpinSystem(n_peripheral=2)
        tr = optimize_probe(system, config=NmConfig(max_iterations=5), quench=0.2)
        d0 = deviation_observable(system, "block")
        ref = (d0 @ d0).trace().real
        g = generator(system, "block")
        for theta, le, fl, fe in zip(tr.theta, tr.le_measured, tr.qfi_le, tr.qfi_exact):
            assert fl == pytest.approx(2 * (ref - le) / (system.dim * 0.04), rel=1e-12)
            u = engineering_unitary(CircuitParams(theta), system, "block")
            dev = u @ d0 @ dagger(u)
            assert le == pytest.approx(deviation_echo(dev, g, 0.2), rel=1e-12)
            assert fe == pytest.approx(qfi_deviation(DeviationState(3, 0.0, dev), g), rel=1e-12)
        assert tr.evaluations >= 7
        assert tr.f_opt == pytest.approx(star_optimal_qfi(system))
