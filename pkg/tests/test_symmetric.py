from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echoqfi.circuits import deviation_observable, generator, nmr_hamiltonian
from echoqfi.errors import CapacityError, DomainError
from echoqfi.qstate import PAULI, SpinSystem
from echoqfi.symmetric import (
    BlockOperator, block_diagonal, block_to_dense, block_trace_product, collective_spin,
    dense_to_block, identity_blocks, sector_table, star_embed,
)


def random_block(rng, table, hermitian=True):
    blocks = []
    for s in table.sectors:
        a = rng.normal(size=(2 * s.dim,) * 2) + 1j * rng.normal(size=(2 * s.dim,) * 2)
        blocks.append((a + a.conj().T) / 2 if hermitian else a)
    return BlockOperator(table, blocks)


class TestSectorTable:
    def test_two_spins(self):
        t = sector_table(2)
        assert [(s.j, s.multiplicity) for s in t.sectors] == [(1.0, 1), (0.0, 1)]

    def test_nine_spins(self):
        t = sector_table(9)
        assert [(s.j, s.multiplicity) for s in t.sectors] == [
            (4.5, 1), (3.5, 8), (2.5, 27), (1.5, 48), (0.5, 42)]
        assert [s.multiplicity * s.dim for s in t.sectors] == [10, 64, 162, 192, 84]

    @given(st.integers(1, 20))
    def test_dimension_identity(self, m):
        t = sector_table(m)
        assert sum(s.multiplicity * s.dim for s in t.sectors) == 2**m
        for s in t.sectors:
            k = (m - s.twice_j) // 2
            assert s.multiplicity == comb(m, k) - (comb(m, k - 1) if k else 0)

    def test_invalid(self):
        with pytest.raises(DomainError):
            sector_table(0)


class TestCollectiveSpin:
    def test_half(self):
        jx, jy, jz = collective_spin(0.5)
        for a, p in zip((jx, jy, jz), "XYZ"):
            np.testing.assert_allclose(a, PAULI[p] / 2)

    def test_one(self):
        np.testing.assert_allclose(collective_spin(1)[2], np.diag([1, 0, -1]))

    def test_casimir(self):
        jx, jy, jz = collective_spin(4.5)
        np.testing.assert_allclose(jx @ jx + jy @ jy + jz @ jz, 4.5 * 5.5 * np.eye(10), atol=1e-12)

    @given(st.integers(0, 12))
    def test_commutator(self, twice_j):
        jx, jy, jz = collective_spin(twice_j / 2)
        assert np.max(np.abs(jx @ jy - jy @ jx - 1j * jz)) <= 1e-12

    def test_rejects_non_half_integer(self):
        with pytest.raises(DomainError):
            collective_spin(0.3)


class TestStarEmbed:
    def test_identity(self):
        t = sector_table(3)
        e = star_embed(np.eye(2), lambda x, y, z: np.eye(len(z)), t)
        for a, b in zip(e.blocks, identity_blocks(t).blocks):
            np.testing.assert_array_equal(a, b)

    def test_generator_range(self):
        g = generator(SpinSystem(), "block")
        for s, b in zip(g.table.sectors, g.blocks):
            d = np.diag(b).real
            assert d.min() == -0.5 - s.j and d.max() == 0.5 + s.j

    def test_generator_via_embed(self):
        t = sector_table(4)
        g = star_embed(PAULI["Z"] / 2, lambda x, y, z: np.eye(len(z)), t) + \
            star_embed(np.eye(2), lambda x, y, z: z, t)
        ref = generator(SpinSystem(n_peripheral=4), "block")
        for a, b in zip(g.blocks, ref.blocks):
            np.testing.assert_allclose(a, b)

    def test_nmr_hamiltonian_lifts(self):
        system = SpinSystem(n_peripheral=3)
        h = star_embed(PAULI["Z"], lambda x, y, z: (np.pi / 2) * system.j_coupling * 2 * z, sector_table(3))
        np.testing.assert_allclose(block_to_dense(h), nmr_hamiltonian(system, "dense"), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            star_embed(np.eye(3), lambda x, y, z: z, sector_table(2))
        with pytest.raises(DomainError):
            star_embed(np.eye(2), lambda x, y, z: np.eye(2), sector_table(2))


class TestTraceProduct:
    def test_identity_dimension(self):
        i = identity_blocks(sector_table(9))
        assert block_trace_product(i, i) == 1024

    def test_equilibrium_deviation(self):
        system = SpinSystem(gamma_normalization="peripheral")
        d = deviation_observable(system, "block")
        assert block_trace_product(d, d).real == pytest.approx(1024 * (0.4052**2 + 9), rel=1e-13)

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_matches_dense(self, rng, m):
        t = sector_table(m)
        a, b = random_block(rng, t, False), random_block(rng, t, False)
        dense = np.trace(block_to_dense(a) @ block_to_dense(b))
        assert abs(block_trace_product(a, b) - dense) <= 1e-10 * max(1, abs(dense))

    def test_table_mismatch(self):
        with pytest.raises(DomainError):
            block_trace_product(identity_blocks(sector_table(2)), identity_blocks(sector_table(3)))


class TestBlockToDense:
    def test_identity(self):
        np.testing.assert_allclose(block_to_dense(identity_blocks(sector_table(3))), np.eye(16), atol=1e-12)

    def test_singlet_projector(self):
        t = sector_table(2)
        blocks = [np.zeros((6, 6)), np.eye(2)]
        p = block_to_dense(BlockOperator(t, blocks))
        singlet = np.array([0, 1, -1, 0]) / np.sqrt(2)
        expected = np.kron(np.eye(2), np.outer(singlet, singlet))
        np.testing.assert_allclose(p, expected, atol=1e-12)
        assert np.linalg.matrix_rank(p) == 2

    def test_trace_consistent(self, rng):
        a = random_block(rng, sector_table(4))
        assert abs(np.trace(block_to_dense(a)) - a.trace()) < 1e-10

    def test_round_trip(self, rng):
        t = sector_table(3)
        a = random_block(rng, t)
        back = dense_to_block(block_to_dense(a), t)
        for x, y in zip(a.blocks, back.blocks):
            np.testing.assert_allclose(x, y, atol=1e-12)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            block_to_dense(identity_blocks(sector_table(12)))

    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_lift_commutes_with_products(self, m, seed):
        r = np.random.default_rng(seed)
        t = sector_table(m)
        a, b = random_block(r, t, False), random_block(r, t, False)
        np.testing.assert_allclose(block_to_dense(a @ b), block_to_dense(a) @ block_to_dense(b), atol=1e-9)

    def test_block_diagonal_matches_dense_observable(self):
        system = SpinSystem(n_peripheral=4)
        d = block_diagonal(sector_table(4), lambda sc, m: system.central_gamma * sc + system.gamma_peripheral * 2 * m)
        np.testing.assert_allclose(block_to_dense(d), deviation_observable(system, "dense"), atol=1e-12)
