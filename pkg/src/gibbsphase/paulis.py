"""Pauli strings on n qubits.

Qubit ordering: site 0 is the most significant bit of the computational
basis index, so a dense operator equals kron(op_0, op_1, ..., op_{n-1}).
A Pauli string acts on a basis vector as P|b> = phase(b) |b xor xmask>,
which lets us build and apply it without forming Kronecker products.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


@dataclass(frozen=True)
class PauliOp:
    """A Pauli string: letter ops[k] acts on site sites[k]."""

    sites: tuple
    ops: str

    def __post_init__(self):
        if len(self.sites) != len(self.ops):
            raise ValueError("sites and ops must have equal length")
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("repeated site in Pauli string")
        if any(c not in "IXYZ" for c in self.ops):
            raise ValueError(f"invalid Pauli letters {self.ops!r}")

    @property
    def support(self) -> frozenset:
        return frozenset(s for s, c in zip(self.sites, self.ops) if c != "I")

    @property
    def is_diagonal(self) -> bool:
        return all(c in "IZ" for c in self.ops)

    @property
    def has_y(self) -> bool:
        return "Y" in self.ops

    def local_matrix(self) -> np.ndarray:
        """Dense matrix on the listed sites, in the listed order."""
        out = np.ones((1, 1), dtype=complex)
        for c in self.ops:
            out = np.kron(out, PAULI[c])
        return out


@lru_cache(maxsize=64)
def _bit_table(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    shifts = np.arange(n - 1, -1, -1)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def pauli_action(op: PauliOp, n: int):
    """Return (target, phase) with P|b> = phase[b] |target[b]>."""
    dim = 2**n
    bits = _bit_table(n)
    xmask = 0
    phase = np.ones(dim, dtype=complex)
    for site, c in zip(op.sites, op.ops):
        if site < 0 or site >= n:
            raise ValueError(f"site {site} outside an {n}-qubit register")
        b = bits[:, site]
        if c == "X":
            xmask |= 1 << (n - 1 - site)
        elif c == "Y":
            xmask |= 1 << (n - 1 - site)
            phase *= 1j * (1 - 2 * b)
        elif c == "Z":
            phase *= 1 - 2 * b
    target = np.arange(dim) ^ xmask
    return target, phase


def pauli_matrix(op: PauliOp, n: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of a Pauli string."""
    target, phase = pauli_action(op, n)
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    out[target, np.arange(dim)] = phase
    return out


def pauli_expectation(rho: np.ndarray, op: PauliOp, n: int) -> float:
    """tr[P rho] without materializing P."""
    target, phase = pauli_action(op, n)
    cols = np.arange(2**n)
    return float(np.real(np.sum(phase * rho[cols, target])))


def add_pauli(out: np.ndarray, op: PauliOp, n: int, coeff: float) -> None:
    """In-place out += coeff * P."""
    target, phase = pauli_action(op, n)
    cols = np.arange(2**n)
    if np.iscomplexobj(out):
        out[target, cols] += coeff * phase
    else:
        out[target, cols] += coeff * phase.real


def parse_pauli_sum(entries, n: int):
    """Parse [{coeff, ops, sites}] into a list of (coeff, PauliOp)."""
    terms = []
    for e in entries:
        terms.append((float(e["coeff"]), PauliOp(tuple(int(s) for s in e["sites"]), str(e["ops"]))))
    for _, op in terms:
        if any(s >= n for s in op.sites):
            raise ValueError("shift term outside lattice")
    return terms
