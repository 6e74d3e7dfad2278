"""Classical spin Gibbs distributions by exhaustive enumeration, and exact Hamming W1.

Configurations are bit strings alpha in {0,1}^n indexed like the quantum
computational basis (site 0 is the most significant bit); spins are
s_i = 1 - 2 alpha_i so that a Z-diagonal quantum family has the same energies.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fitting import fit_decay

MAX_SITES = 20
MAX_W1_BITS = 6


def _bits(n: int) -> np.ndarray:
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(np.int8)


class ClassicalHamiltonian:
    """H(alpha) = sum_t coeff_t prod_{i in sites_t} s_i."""

    def __init__(self, n: int, terms):
        if n > MAX_SITES:
            raise ValueError(f"{n} sites exceeds the enumeration cap {MAX_SITES}")
        self.n = n
        self.terms = [(tuple(int(s) for s in sites), float(c)) for sites, c in terms]
        for sites, _ in self.terms:
            if any(s < 0 or s >= n for s in sites):
                raise ValueError("term support outside the lattice")

    @classmethod
    def ising(cls, lattice, J: float = 1.0, field: float = 0.0) -> "ClassicalHamiltonian":
        """-J sum_<ij> s_i s_j - field sum_i s_i on the lattice's nearest neighbours."""
        terms = []
        for i in lattice.sites:
            for j in lattice.sites:
                if i < j and lattice.distance(i, j) == 1 and (lattice.metric == "l1" or
                                                              sum(a != b for a, b in zip(lattice.coords[i], lattice.coords[j])) == 1):
                    terms.append(((i, j), -J))
            if field:
                terms.append(((i,), -field))
        return cls(lattice.n, terms)

    @cached_property
    def energies(self) -> np.ndarray:
        spins = 1 - 2 * _bits(self.n).astype(np.int64)
        E = np.zeros(2**self.n)
        for sites, c in self.terms:
            if sites:
                E += c * np.prod(spins[:, list(sites)], axis=1)
            else:
                E += c
        return E

    def energy(self, alpha) -> float:
        idx = int("".join(str(int(a)) for a in alpha), 2)
        return float(self.energies[idx])

    def boundary(self, A) -> frozenset:
        """Sites outside A sharing a term with A."""
        A = set(A)
        out = set()
        for sites, c in self.terms:
            if c != 0.0 and A & set(sites):
                out |= set(sites) - A
        return frozenset(out)


class ClassicalGibbs:
    def __init__(self, H: ClassicalHamiltonian, beta: float):
        self.H, self.beta, self.n = H, float(beta), H.n
        a = -self.beta * H.energies
        a -= a.max()
        p = np.exp(a)
        self.probs = p / p.sum()

    def _table(self):
        return self.probs.reshape((2,) * self.n)

    def marginal(self, A) -> np.ndarray:
        """Distribution of alpha_A (ascending site order, first site most significant)."""
        A = sorted(set(A))
        if not A:
            return np.ones(1)
        rest = tuple(i for i in range(self.n) if i not in A)
        return self._table().sum(axis=rest).reshape(-1)

    def conditional(self, A, boundary: dict) -> np.ndarray:
        """P(alpha_A | alpha_K = boundary) from the joint, K = boundary.keys()."""
        A = sorted(set(A))
        K = sorted(boundary)
        if set(A) & set(K):
            raise ValueError("conditioning set overlaps A")
        joint = self.marginal(A + K).reshape((2,) * (len(A) + len(K)))
        # marginal() orders axes by ascending site; locate each site
        order = sorted(A + K)
        t = np.moveaxis(joint, [order.index(s) for s in A + K], list(range(len(A) + len(K))))
        idx = tuple(int(boundary[k]) for k in K)
        sl = t[(Ellipsis,) + idx] if K else t
        sl = np.asarray(sl).reshape(-1)
        tot = sl.sum()
        if tot <= 0:
            raise ValueError("conditioning event has zero probability")
        return sl / tot


def classical_gibbs(H: ClassicalHamiltonian, beta: float) -> ClassicalGibbs:
    return ClassicalGibbs(H, beta)


@dataclass(frozen=True)
class TVRecord:
    lhs: float
    rhs: float
    ground: tuple


def low_temp_tv_check(H: ClassicalHamiltonian, beta: float, A) -> TVRecord:
    """lhs = 2[1 - sigma_A(alpha*_A)], rhs = 2[1 - min_{alpha_dA} sigma(alpha*_A | alpha_dA)]."""
    E = H.energies
    order = np.argsort(E, kind="stable")
    if len(E) > 1 and E[order[1]] - E[order[0]] <= 1e-12 * max(1.0, abs(E[order[0]])):
        raise ValueError("degenerate minimizer")
    star = tuple(int(b) for b in _bits(H.n)[order[0]])
    A = sorted(set(A))
    G = ClassicalGibbs(H, beta)
    a_idx = int("".join(str(star[i]) for i in A), 2) if A else 0
    lhs = 2.0 * (1.0 - G.marginal(A)[a_idx])
    dA = sorted(H.boundary(A))
    if not dA:
        return TVRecord(float(lhs), float(lhs), star)
    worst = 1.0
    for vals in itertools.product((0, 1), repeat=len(dA)):
        worst = min(worst, G.conditional(A, dict(zip(dA, vals)))[a_idx])
    return TVRecord(float(lhs), float(2.0 * (1.0 - worst)), star)


# exact linear programming ------------------------------------------------

@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    y: np.ndarray
    primal: float
    dual: float
    basis: tuple
    pivots: int


def simplex_solve(c, A, b, basis=None, tol: float = 1e-11, max_pivots: int = 200_000) -> LPResult:
    """min c.x s.t. Ax = b, x >= 0 with a dense tableau and Bland's rule.

    A feasible starting basis may be supplied; otherwise a phase-one problem
    with artificial variables is solved first. The returned duals y satisfy
    A^T y <= c at optimality.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, N = A.shape
    pivots = 0
    if basis is None:
        sgn = np.where(b < 0, -1.0, 1.0)
        A1 = np.hstack([A * sgn[:, None], np.eye(m)])
        b1 = b * sgn
        c1 = np.concatenate([np.zeros(N), np.ones(m)])
        T, bas, k = _run_simplex(c1, A1, b1, list(range(N, N + m)), tol, max_pivots)
        pivots += k
        if T[-1, -1] < -1e-9:
            raise ValueError("infeasible linear program")
        # drive artificials out of the basis where possible
        for r, v in enumerate(bas):
            if v >= N:
                cand = [j for j in range(N) if abs(T[r, j]) > tol]
                if cand:
                    _pivot(T, r, cand[0])
                    bas[r] = cand[0]
        keep = [r for r, v in enumerate(bas) if v < N]
        A, b = A[keep], b[keep]
        basis = [bas[r] for r in keep]
        m = len(keep)
    T, bas, k = _run_simplex(c, A, b, list(basis), tol, max_pivots)
    pivots += k
    B = A[:, bas]
    xB = np.linalg.solve(B, b)
    x = np.zeros(N)
    x[bas] = xB
    y = np.linalg.solve(B.T, c[bas])
    return LPResult(x, y, float(c @ x), float(b @ y), tuple(bas), pivots)


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(c, A, b, basis, tol, max_pivots):
    m, N = A.shape
    B = A[:, basis]
    T = np.zeros((m + 1, N + 1))
    T[:m, :N] = np.linalg.solve(B, A)
    T[:m, N] = np.linalg.solve(B, b)
    cb = c[basis]
    T[m, :N] = c - cb @ T[:m, :N]
    T[m, N] = -cb @ T[:m, N]
    bas = list(basis)
    for k in range(max_pivots):
        neg = np.nonzero(T[m, :N] < -tol)[0]
        if neg.size == 0:
            return T, bas, k
        j = int(neg[0])  # Bland: lowest entering index
        col = T[:m, j]
        ok = col > tol
        if not ok.any():
            raise ValueError("unbounded linear program")
        ratios = np.full(m, np.inf)
        ratios[ok] = T[:m, N][ok] / col[ok]
        rmin = ratios.min()
        ties = np.nonzero(ratios <= rmin + tol * max(1.0, abs(rmin)))[0]
        r = int(min(ties, key=lambda i: bas[i]))  # Bland: lowest leaving index
        _pivot(T, r, j)
        bas[r] = j
    raise ValueError("simplex pivot limit reached")


@dataclass(frozen=True)
class TransportResult:
    value: float
    primal: float
    dual: float
    plan: np.ndarray
    potentials: tuple


def hamming_matrix(n: int) -> np.ndarray:
    bits = _bits(n).astype(int)
    return np.abs(bits[:, None, :] - bits[None, :, :]).sum(axis=2).astype(float)


def _northwest_corner(p, q):
    m, k = len(p), len(q)
    s, d = p.copy(), q.copy()
    cells = []
    i = j = 0
    while True:
        v = min(s[i], d[j])
        cells.append((i, j))
        s[i] -= v
        d[j] -= v
        if i == m - 1 and j == k - 1:
            break
        if (s[i] <= d[j] and i < m - 1) or j == k - 1:
            i += 1
        else:
            j += 1
    return cells


def hamming_w1(p, q) -> TransportResult:
    """Exact optimal transport cost between distributions on {0,1}^n, Hamming ground metric."""
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    q = np.asarray(getattr(q, "probs", q), dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions differ in size")
    n = int(round(np.log2(p.size)))
    if 2**n != p.size:
        raise ValueError("distribution size is not a power of two")
    if n > MAX_W1_BITS:
        raise ValueError(f"{n} bits exceeds the transport cap {MAX_W1_BITS}")
    if abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9 or (p < 0).any() or (q < 0).any():
        raise ValueError("inputs must be probability vectors")
    q = q * (p.sum() / q.sum())
    d = p.size
    C = hamming_matrix(n)
    # constraints: row sums (d), column sums except the last (redundant)
    A = np.zeros((2 * d - 1, d * d))
    for a in range(d):
        A[a, a * d:(a + 1) * d] = 1.0
    for bcol in range(d - 1):
        A[d + bcol, bcol::d] = 1.0
    rhs = np.concatenate([p, q[:-1]])
    basis = [i * d + j for i, j in _northwest_corner(p, q)]
    res = simplex_solve(C.ravel(), A, rhs, basis=basis)
    reduced = C.ravel() - A.T @ res.y
    if reduced.min() < -1e-9:
        raise RuntimeError("transport solution failed the dual feasibility check")
    u, v = res.y[:d], np.concatenate([res.y[d:], [0.0]])
    return TransportResult(res.primal, res.primal, res.dual, res.x.reshape(d, d), (u, v))


def product_distribution(marginals) -> np.ndarray:
    """Product of per-bit P(alpha_i = 1) = a_i as a vector over {0,1}^n."""
    out = np.ones(1)
    for a in marginals:
        out = np.kron(out, np.array([1 - a, a]))
    return out


@dataclass(frozen=True)
class DecayCurve:
    distances: np.ndarray
    values: np.ndarray
    fit: object


def classical_decay_scan(H: ClassicalHamiltonian, beta: float, pairs, distance=None) -> DecayCurve:
    """|Cov(s_i, s_j)| for the given pairs, against their distance, with a decay fit."""
    G = ClassicalGibbs(H, beta)
    spins = 1 - 2 * _bits(H.n).astype(float)
    mean = G.probs @ spins
    dist, vals = [], []
    for i, j in pairs:
        cov = G.probs @ (spins[:, i] * spins[:, j]) - mean[i] * mean[j]
        dist.append(abs(i - j) if distance is None else distance(i, j))
        vals.append(abs(cov))
    dist, vals = np.array(dist, dtype=float), np.array(vals)
    return DecayCurve(dist, vals, fit_decay(dist, vals))
