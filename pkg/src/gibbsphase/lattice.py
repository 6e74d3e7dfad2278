"""Lattice geometry, parameterized local terms and Hamiltonian assembly.

Parameters are flattened row-major over (term j, component l): coordinate k
belongs to term `coord_term[k]` and multiplies the Pauli string `basis[k]`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import yaml

from . import operators
from .paulis import PauliOp, add_pauli, pauli_matrix, parse_pauli_sum


@dataclass(frozen=True)
class Lattice:
    """Box of sites with integer coordinates origin + [0, shape).

    `Lattice.centered(D, L)` gives the usual [-L, L]^D; `Lattice.chain(n)` gives
    an n-site chain with coordinates 0..n-1 (even lengths need this form).
    """

    shape: tuple
    origin: tuple
    boundary: str = "open"
    metric: str = "chebyshev"

    def __post_init__(self):
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.metric not in ("chebyshev", "l1"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if len(self.shape) != len(self.origin) or any(s < 1 for s in self.shape):
            raise ValueError("bad lattice shape")

    @classmethod
    def centered(cls, dimension: int, half_width: int, **kw) -> "Lattice":
        return cls((2 * half_width + 1,) * dimension, (-half_width,) * dimension, **kw)

    @classmethod
    def chain(cls, n: int, **kw) -> "Lattice":
        return cls((n,), (0,), **kw)

    @classmethod
    def grid(cls, *shape, **kw) -> "Lattice":
        return cls(tuple(shape), (0,) * len(shape), **kw)

    @property
    def dimension(self) -> int:
        return len(self.shape)

    @cached_property
    def coords(self) -> tuple:
        axes = [range(o, o + s) for o, s in zip(self.origin, self.shape)]
        return tuple(itertools.product(*axes))

    @cached_property
    def _coord_index(self) -> dict:
        return {c: i for i, c in enumerate(self.coords)}

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def sites(self) -> range:
        return range(self.n)

    def index(self, coord) -> int:
        coord = tuple(coord) if np.ndim(coord) else (int(coord),)
        try:
            return self._coord_index[coord]
        except KeyError:
            raise ValueError(f"coordinate {coord} outside lattice") from None

    @cached_property
    def _dist(self) -> np.ndarray:
        c = np.array(self.coords)
        d = np.abs(c[:, None, :] - c[None, :, :])
        if self.boundary == "periodic":
            d = np.minimum(d, np.array(self.shape) - d)
        return d.max(axis=2) if self.metric == "chebyshev" else d.sum(axis=2)

    def distance(self, i: int, j: int) -> int:
        return int(self._dist[i, j])

    def set_distance(self, A, B) -> int:
        A, B = list(A), list(B)
        if not A or not B:
            return np.iinfo(np.int64).max
        return int(self._dist[np.ix_(A, B)].min())

    def check_region(self, S) -> frozenset:
        S = frozenset(int(i) for i in S)
        if any(i < 0 or i >= self.n for i in S):
            raise ValueError("region not contained in the lattice")
        return S

    def enlarge(self, S, r: int) -> frozenset:
        """S(r) = {i : dist(i, S) <= r}."""
        S = self.check_region(S)
        if not S:
            raise ValueError("empty region")
        if r < 0:
            raise ValueError("radius must be nonnegative")
        d = self._dist[:, sorted(S)].min(axis=1)
        return frozenset(int(i) for i in np.nonzero(d <= r)[0])

    def ball(self, center: int, r: int) -> frozenset:
        return self.enlarge({center}, r)


def enlarge_region(lattice: Lattice, S, r: int) -> frozenset:
    return lattice.enlarge(S, r)


@dataclass(frozen=True)
class InteractionTerm:
    """Local term h_j(x_j) = sum_l x_{j,l} h_{j,l} supported on A_j."""

    anchor: int
    support: frozenset
    basis: tuple

    def __post_init__(self):
        for op in self.basis:
            if not op.support <= self.support:
                raise ValueError("basis operator leaves the term support")

    @property
    def ell(self) -> int:
        return len(self.basis)


class HamiltonianFamily:
    """x -> H(x) + H0 for a list of linear local terms on a lattice."""

    def __init__(self, lattice: Lattice, terms, center=None, shift=None,
                 coupling_bound: float = 1.0, max_qubits: int = operators.MAX_QUBITS):
        self.lattice = lattice
        self.terms = tuple(terms)
        self.h = float(coupling_bound)
        self.max_qubits = max_qubits
        for t in self.terms:
            lattice.check_region(t.support)
        self.basis = tuple(op for t in self.terms for op in t.basis)
        self.coord_term = np.array([j for j, t in enumerate(self.terms) for _ in t.basis], dtype=int)
        m = len(self.basis)
        self.center = np.zeros(m) if center is None else np.asarray(center, dtype=float).copy()
        if self.center.shape != (m,):
            raise ValueError(f"center must have length {m}")
        self.center.setflags(write=False)
        self.shift = tuple(shift or ())
        self.is_complex = any(op.has_y for op in self.basis) or any(op.has_y for _, op in self.shift)

    # geometry -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.lattice.n

    @property
    def m(self) -> int:
        return len(self.basis)

    @property
    def ell(self) -> int:
        return max(t.ell for t in self.terms)

    @cached_property
    def r0(self) -> int:
        return max(max(self.lattice.distance(t.anchor, s) for s in t.support) for t in self.terms)

    @property
    def is_commuting_diagonal(self) -> bool:
        return all(op.is_diagonal for op in self.basis) and all(op.is_diagonal for _, op in self.shift)

    def terms_touching(self, region) -> list:
        region = frozenset(region)
        return [j for j, t in enumerate(self.terms) if t.support & region]

    def terms_inside(self, region) -> list:
        region = frozenset(region)
        return [j for j, t in enumerate(self.terms) if t.support <= region]

    def restricted_coords(self, S, r: int) -> np.ndarray:
        """Coordinates of the terms whose support meets S(r)."""
        Sr = self.lattice.enlarge(S, r)
        js = set(self.terms_touching(Sr))
        return np.array([k for k in range(self.m) if self.coord_term[k] in js], dtype=int)

    def coords_of_terms(self, js) -> np.ndarray:
        js = set(js)
        return np.array([k for k in range(self.m) if self.coord_term[k] in js], dtype=int)

    # parameters ---------------------------------------------------------
    def check_params(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"parameter vector must have length {self.m}")
        if np.any(np.abs(x - self.center) > 1 + tol):
            raise ValueError("parameters outside the family box")
        return x

    def restrict(self, x, S, r: int, center=None) -> np.ndarray:
        """(x on the coordinates of S(r)-touching terms, center elsewhere)."""
        x = np.asarray(x, dtype=float)
        base = self.center if center is None else np.asarray(center, dtype=float)
        out = base.copy()
        k = self.restricted_coords(S, r)
        out[k] = x[k]
        return out

    def sample_box(self, rng, size=None) -> np.ndarray:
        shape = (self.m,) if size is None else (size, self.m)
        return self.center + rng.uniform(-1.0, 1.0, size=shape)

    # operators ----------------------------------------------------------
    def _check_cap(self):
        if self.n > self.max_qubits:
            raise ValueError(f"{self.n} qubits exceeds the dense cap {self.max_qubits}")

    def basis_matrix(self, k: int) -> np.ndarray:
        self._check_cap()
        return pauli_matrix(self.basis[k], self.n)

    def assemble(self, x, region=None) -> np.ndarray:
        """Dense H(x) + H0, or H_B(x) + (H0 restricted to B) when a region is given."""
        self._check_cap()
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"parameter vector must have length {self.m}")
        if region is None:
            keep_terms = range(len(self.terms))
            shift = self.shift
        else:
            B = self.lattice.check_region(region)
            keep_terms = self.terms_inside(B)
            shift = [(c, op) for c, op in self.shift if op.support <= B]
        dim = 2**self.n
        H = np.zeros((dim, dim), dtype=complex if self.is_complex else float)
        keep = set(keep_terms)
        for k, op in enumerate(self.basis):
            if self.coord_term[k] in keep and x[k] != 0.0:
                add_pauli(H, op, self.n, x[k])
        for c, op in shift:
            add_pauli(H, op, self.n, c)
        return H

    def gibbs(self, x, beta: float, region=None) -> operators.QuantumState:
        return operators.gibbs_state(self.assemble(x, region), beta)

    def ground(self, x, region=None) -> operators.QuantumState:
        return operators.ground_state(self.assemble(x, region))

    def expectations(self, state) -> np.ndarray:
        """e_k = tr[h_k rho] for every coordinate k."""
        from .paulis import pauli_expectation
        rho = state.rho if isinstance(state, operators.QuantumState) else state
        return np.array([pauli_expectation(rho, op, self.n) for op in self.basis])

    def with_center(self, center) -> "HamiltonianFamily":
        return HamiltonianFamily(self.lattice, self.terms, center, self.shift, self.h, self.max_qubits)

    def to_classical(self, x):
        """Diagonal family -> ClassicalHamiltonian with energies matching assemble(x)."""
        from .classical import ClassicalHamiltonian
        if not self.is_commuting_diagonal:
            raise ValueError("family has off-diagonal terms")
        x = np.asarray(x, dtype=float)
        terms = []
        for k, op in enumerate(self.basis):
            sites = tuple(s for s, c in zip(op.sites, op.ops) if c == "Z")
            terms.append((sites, float(x[k])))
        for c, op in self.shift:
            terms.append((tuple(s for s, ch in zip(op.sites, op.ops) if ch == "Z"), float(c)))
        return ClassicalHamiltonian(self.n, terms)


# builders ---------------------------------------------------------------

def _term(anchor, ops):
    sup = frozenset().union(*(op.support for op in ops)) | {anchor}
    return InteractionTerm(anchor, sup, tuple(ops))


def field_model(lattice: Lattice, letters: str = "Z", **kw) -> HamiltonianFamily:
    """sum_i sum_P x_{i,P} P_i (one term per site, r0 = 0)."""
    terms = [_term(i, [PauliOp((i,), c) for c in letters]) for i in lattice.sites]
    return HamiltonianFamily(lattice, terms, **kw)


def _forward_neighbors(lattice: Lattice, i: int):
    """Sites at +1 along each axis (wrapping if periodic)."""
    c = lattice.coords[i]
    out = []
    for ax in range(lattice.dimension):
        nb = list(c)
        nb[ax] += 1
        if nb[ax] >= lattice.origin[ax] + lattice.shape[ax]:
            if lattice.boundary != "periodic" or lattice.shape[ax] < 3:
                continue
            nb[ax] = lattice.origin[ax]
        out.append(lattice.index(nb))
    return out


def tfim(lattice: Lattice, longitudinal: bool = True, **kw) -> HamiltonianFamily:
    """Transverse-field Ising: term at i holds Z_i Z_j for forward neighbours j, then X_i, then Z_i.

    The longitudinal Z_i field breaks the global spin flip; without it every
    Gibbs state has <Z_i> = 0 identically. Pass longitudinal=False for the
    symmetric model.
    """
    terms = []
    for i in lattice.sites:
        ops = [PauliOp((i, j), "ZZ") for j in _forward_neighbors(lattice, i)]
        ops.append(PauliOp((i,), "X"))
        if longitudinal:
            ops.append(PauliOp((i,), "Z"))
        terms.append(_term(i, ops))
    return HamiltonianFamily(lattice, terms, **kw)


def ising(lattice: Lattice, field: bool = True, **kw) -> HamiltonianFamily:
    """Commuting Ising: Z_i Z_j couplings and (optionally) Z_i fields."""
    terms = []
    for i in lattice.sites:
        ops = [PauliOp((i, j), "ZZ") for j in _forward_neighbors(lattice, i)]
        if field:
            ops.append(PauliOp((i,), "Z"))
        if ops:
            terms.append(_term(i, ops))
    return HamiltonianFamily(lattice, terms, **kw)


def heisenberg(lattice: Lattice, **kw) -> HamiltonianFamily:
    terms = []
    for i in lattice.sites:
        ops = [PauliOp((i, j), p + p) for j in _forward_neighbors(lattice, i) for p in "XYZ"]
        ops.append(PauliOp((i,), "Z"))
        terms.append(_term(i, ops))
    return HamiltonianFamily(lattice, terms, **kw)


BUILDERS = {"field": field_model, "tfim": tfim, "ising": ising, "heisenberg": heisenberg}


# family description files -------------------------------------------------

def lattice_from_dict(d: dict) -> Lattice:
    kw = {"boundary": d.get("boundary", "open"), "metric": d.get("metric", "chebyshev")}
    if "shape" in d:
        shape = tuple(int(s) for s in d["shape"])
        return Lattice(shape, tuple(int(o) for o in d.get("origin", (0,) * len(shape))), **kw)
    return Lattice.centered(int(d["dimension"]), int(d["half_width"]), **kw)


def _coord(lattice, c):
    return lattice.index(c if isinstance(c, (list, tuple)) else [c])


def family_from_dict(d: dict) -> HamiltonianFamily:
    """Build a family from the documented description schema (see README)."""
    lattice = lattice_from_dict(d)
    kw = {"coupling_bound": float(d.get("coupling_bound", 1.0))}
    if "builtin" in d:
        b = d["builtin"]
        name = b if isinstance(b, str) else b["kind"]
        opts = {} if isinstance(b, str) else {k: v for k, v in b.items() if k != "kind"}
        fam = BUILDERS[name](lattice, **opts, **kw)
    else:
        terms = []
        for t in d["terms"]:
            anchor = _coord(lattice, t["anchor"])
            support = lattice.ball(anchor, int(t.get("radius", 0)))
            ball_sites = sorted(support)
            ops = []
            for p in t["paulis"]:
                if isinstance(p, str):
                    if len(p) != len(ball_sites):
                        raise ValueError(f"Pauli string {p!r} must cover the {len(ball_sites)}-site ball")
                    ops.append(PauliOp(tuple(ball_sites), p))
                else:
                    sites = tuple(_coord(lattice, s) for s in p["sites"])
                    ops.append(PauliOp(sites, p["ops"]))
            terms.append(InteractionTerm(anchor, support, tuple(ops)))
        fam = HamiltonianFamily(lattice, terms, **kw)
    center = d.get("center")
    if isinstance(center, (int, float)):
        center = np.full(fam.m, float(center))
    shift = parse_pauli_sum(d.get("shift_H0") or [], lattice.n)
    return HamiltonianFamily(fam.lattice, fam.terms, center, shift, fam.h)


def load_family(path) -> HamiltonianFamily:
    with open(path) as fh:
        return family_from_dict(yaml.safe_load(fh))
