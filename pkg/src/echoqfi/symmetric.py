"""Collective-spin sector engine for the star register.

The M equivalent peripheral spins decompose into collective spin-j sectors
with multiplicities; every operator used here acts identically on all
copies of a sector, so one representative block per j is stored together
with its multiplicity.  Spin values are carried as ``twice_j`` integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Callable

import numpy as np

from .errors import CapacityError, DomainError
from .qstate import MAX_DIM


@dataclass(frozen=True)
class Sector:
    twice_j: int
    multiplicity: int

    @property
    def j(self) -> float:
        return self.twice_j / 2

    @property
    def dim(self) -> int:
        return self.twice_j + 1


@dataclass(frozen=True)
class SectorTable:
    m_peripheral: int
    sectors: tuple

    @property
    def total_dim(self) -> int:
        return 2 * sum(s.multiplicity * s.dim for s in self.sectors)


@lru_cache(maxsize=None)
def sector_table(m: int) -> SectorTable:
    """Sectors j = M/2, M/2 - 1, ... with m_j = C(M, M/2-j) - C(M, M/2-j-1)."""
    if m < 1:
        raise DomainError("need at least one peripheral spin")
    sectors = []
    for twice_j in range(m, -1, -2):
        k = (m - twice_j) // 2
        mult = comb(m, k) - (comb(m, k - 1) if k > 0 else 0)
        sectors.append(Sector(twice_j, mult))
    return SectorTable(m, tuple(sectors))


def _twice(j) -> int:
    tj = round(2 * float(j))
    if tj < 0 or abs(tj - 2 * float(j)) > 1e-12:
        raise DomainError(f"j={j} is not a non-negative half-integer")
    return tj


@lru_cache(maxsize=None)
def _spin_matrices(twice_j: int):
    j = twice_j / 2
    m = j - np.arange(twice_j + 1)
    jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / 2j
    jz = np.diag(m).astype(complex)
    for a in (jx, jy, jz):
        a.setflags(write=False)
    return jx, jy, jz


def collective_spin(j):
    """Standard (Jx, Jy, Jz) for spin ``j``; Jz = diag(j, ..., -j)."""
    return _spin_matrices(_twice(j))


@lru_cache(maxsize=None)
def _jx_eig(twice_j: int):
    jx = _spin_matrices(twice_j)[0]
    w, v = np.linalg.eigh(jx)
    return w, v


def collective_rotation(twice_j: int, angle: float, phase: float) -> np.ndarray:
    """exp(-i angle (cos(phase) Jx + sin(phase) Jy)) in the spin-j sector."""
    w, v = _jx_eig(twice_j)
    rx = (v * np.exp(-1j * angle * w)) @ v.conj().T
    m = twice_j / 2 - np.arange(twice_j + 1)
    rz = np.exp(-1j * phase * m)
    return rz[:, None] * rx * rz.conj()[None, :]


class BlockOperator:
    """Operator on (central qubit) x (peripheral register), stored per sector.

    Each block has dimension 2(2j+1), ordered as central-major Kronecker
    products.  Traces weight each block by its multiplicity.
    """

    is_block = True
    __array_priority__ = 100

    def __init__(self, table: SectorTable, blocks):
        blocks = tuple(np.asarray(b, dtype=complex) for b in blocks)
        if len(blocks) != len(table.sectors):
            raise DomainError("one block per sector required")
        for s, b in zip(table.sectors, blocks):
            if b.shape != (2 * s.dim, 2 * s.dim):
                raise DomainError(f"block for twice_j={s.twice_j} has shape {b.shape}")
        self.table = table
        self.blocks = blocks

    @property
    def dim(self) -> int:
        return self.table.total_dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.multiplicity for s in self.table.sectors], dtype=float)

    def _check(self, other):
        if not getattr(other, "is_block", False) or other.table != self.table:
            raise DomainError("sector table mismatch")

    def __matmul__(self, other):
        self._check(other)
        return BlockOperator(self.table, [a @ b for a, b in zip(self.blocks, other.blocks)])

    def __add__(self, other):
        self._check(other)
        return BlockOperator(self.table, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        self._check(other)
        return BlockOperator(self.table, [a - b for a, b in zip(self.blocks, other.blocks)])

    def __mul__(self, scalar):
        return BlockOperator(self.table, [scalar * a for a in self.blocks])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def adjoint(self) -> "BlockOperator":
        return BlockOperator(self.table, [a.conj().T for a in self.blocks])

    def trace(self) -> complex:
        return complex(sum(s.multiplicity * np.trace(b) for s, b in zip(self.table.sectors, self.blocks)))

    def trace_product(self, other) -> complex:
        return block_trace_product(self, other)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "BlockOperator":
        return BlockOperator(self.table, [fn(b) for b in self.blocks])

    def to_dense(self) -> np.ndarray:
        return block_to_dense(self)


def identity_blocks(table: SectorTable) -> BlockOperator:
    return BlockOperator(table, [np.eye(2 * s.dim) for s in table.sectors])


def star_embed(central: np.ndarray, peripheral_poly: Callable, table: SectorTable) -> BlockOperator:
    """Per-sector ``central (x) peripheral_poly(Jx, Jy, Jz)``."""
    central = np.asarray(central, dtype=complex)
    if central.shape != (2, 2):
        raise DomainError("central operator must be 2x2")
    blocks = []
    for s in table.sectors:
        p = np.asarray(peripheral_poly(*_spin_matrices(s.twice_j)), dtype=complex)
        if p.shape != (s.dim, s.dim):
            raise DomainError(f"peripheral polynomial gave shape {p.shape} for twice_j={s.twice_j}")
        blocks.append(np.kron(central, p))
    return BlockOperator(table, blocks)


def block_diagonal(table: SectorTable, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> BlockOperator:
    """Diagonal operator from ``fn(s_central, m)`` with s_central = +-1, m = Jz eigenvalue."""
    blocks = []
    for s in table.sectors:
        m = s.twice_j / 2 - np.arange(s.dim)
        sc = np.repeat([1.0, -1.0], s.dim)
        blocks.append(np.diag(fn(sc, np.tile(m, 2))).astype(complex))
    return BlockOperator(table, blocks)


def block_trace_product(a: BlockOperator, b: BlockOperator) -> complex:
    """sum_j m_j Tr(A_j B_j)."""
    a._check(b)
    return complex(sum(
        s.multiplicity * np.einsum("ij,ji->", x, y)
        for s, x, y in zip(a.table.sectors, a.blocks, b.blocks)
    ))


def _dense_collective(m: int):
    from .qstate import PAULI

    d = 2**m
    out = []
    for label in ("X", "Y", "Z"):
        total = np.zeros((d, d), dtype=complex)
        for k in range(m):
            op = np.array([[1.0]], dtype=complex)
            for q in range(m):
                op = np.kron(op, PAULI[label] if q == k else PAULI["I"])
            total += op / 2
        out.append(total)
    return out


@lru_cache(maxsize=8)
def sector_isometries(m: int):
    """For each sector, a list of 2^M x (2j+1) isometries, one per copy.

    Highest-weight vectors span ker(J+) in the Jz = j eigenspace; lower
    states follow by normalized J- ladders, giving standard phases.
    """
    if 2 ** (m + 1) > MAX_DIM:
        raise CapacityError(f"cannot lift M={m} peripheral spins to dense form")
    jx, jy, jz = _dense_collective(m)
    jp = jx + 1j * jy
    jm = jx - 1j * jy
    zdiag = np.real(np.diag(jz))
    table = sector_table(m)
    result = []
    for s in table.sectors:
        j = s.j
        top = np.flatnonzero(np.isclose(zdiag, j))
        if s.twice_j == m:
            hw = np.zeros((2**m, 1), dtype=complex)
            hw[top[0], 0] = 1.0
        else:
            sub = jp[:, top]
            _, sv, vh = np.linalg.svd(sub, full_matrices=True)
            rank = int(np.sum(sv > 1e-9))
            null = vh[rank:].conj().T
            hw = np.zeros((2**m, null.shape[1]), dtype=complex)
            hw[top, :] = null
        copies = []
        for c in range(s.multiplicity):
            vec = hw[:, c]
            cols = [vec]
            mval = j
            for _ in range(s.twice_j):
                vec = jm @ vec / np.sqrt(j * (j + 1) - mval * (mval - 1))
                cols.append(vec)
                mval -= 1
            copies.append(np.stack(cols, axis=1))
        result.append(copies)
    return result


def block_to_dense(a: BlockOperator) -> np.ndarray:
    """Lift to the full 2^(M+1) space.  Testing aid only."""
    m = a.table.m_peripheral
    isos = sector_isometries(m)
    d = 2 ** (m + 1)
    out = np.zeros((d, d), dtype=complex)
    eye2 = np.eye(2)
    for block, copies in zip(a.blocks, isos):
        for w in copies:
            big = np.kron(eye2, w)
            out += big @ block @ big.conj().T
    return out


def dense_to_block(a: np.ndarray, table: SectorTable) -> BlockOperator:
    """Project a dense symmetric operator onto its first copy in each sector."""
    isos = sector_isometries(table.m_peripheral)
    eye2 = np.eye(2)
    blocks = []
    for copies in isos:
        big = np.kron(eye2, copies[0])
        blocks.append(big.conj().T @ a @ big)
    return BlockOperator(table, blocks)
