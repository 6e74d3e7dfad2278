"""Certified two-sided bounds on the quantum Wasserstein-1 distance.

Conventions: ||L||_Lip = max_i min_{L_{i^c}} 2 ||L - L_{i^c} (x) I_i||_inf and
W1(rho, sigma) = sup_{||L||_Lip <= 1} tr[L (rho - sigma)].

Upper bounds rest on one elementary fact: if tr_i X = 0 then
tr[L X] = tr[(L - L_{i^c} (x) I_i) X] for every L_{i^c}, hence
sup_{||L||_Lip <= 1} tr[L X] <= ||X||_1 / 2. Writing rho - sigma as a sum of
such pieces (replace one site at a time by I/2 (x) tr_i) gives the
"telescoping" bound; for product states the hybrid decomposition gives the
per-factor bound. Both are never larger than the generic n ||rho - sigma||_1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import operators
from .operators import normalized_trace, partial_trace, trace_norm, op_norm, embed_operator
from .paulis import PauliOp, pauli_matrix


@dataclass(frozen=True)
class LipschitzObservable:
    L: np.ndarray
    lower: float
    upper: float


def lip_seminorm(L: np.ndarray, n: int | None = None) -> LipschitzObservable:
    """Feasible-point bounds on ||L||_Lip.

    upper uses L_{i^c} = tau_i(L); since tau_i is unital and contractive this
    point is within a factor 2 of the inner minimum, so lower = upper / 2.
    For one qubit the inner problem is min_c ||L - c I|| and both bounds equal
    lambda_max - lambda_min.
    """
    L = operators.check_hermitian(L)
    n = operators.num_qubits(L.shape[0]) if n is None else n
    if n == 1:
        w = np.linalg.eigvalsh(0.5 * (L + L.conj().T))
        v = float(w[-1] - w[0])
        return LipschitzObservable(L, v, v)
    up = 0.0
    for i in range(n):
        up = max(up, 2.0 * op_norm(L - normalized_trace(L, [i], n, embed=True)))
    return LipschitzObservable(L, up / 2.0, up)


@dataclass(frozen=True)
class W1Bounds:
    lower: float
    upper: float
    witness: np.ndarray | None
    witness_name: str
    upper_route: str


def default_witnesses(rho, sigma, n: int, observable=None):
    """Single-site Paulis, uniform sums sum_i P_i, sign-adapted sums, and O."""
    delta = _matrix(rho) - _matrix(sigma)
    out = []
    singles = {}
    for i in range(n):
        for c in "XYZ":
            P = pauli_matrix(PauliOp((i,), c), n)
            singles[(i, c)] = P
            out.append((f"{c}{i}", P))
    for c in "XYZ":
        total = sum(singles[(i, c)] for i in range(n))
        out.append((f"sum_{c}", total))
        signs = [np.sign(np.real(np.sum(singles[(i, c)] * delta.T))) for i in range(n)]
        if any(s != 0 for s in signs):
            out.append((f"signed_sum_{c}", sum(s * singles[(i, c)] for i, s in zip(range(n), signs))))
    if observable is not None:
        out.append(("observable", np.asarray(observable)))
    return out


def _matrix(x):
    return x.rho if isinstance(x, operators.QuantumState) else np.asarray(x)


def telescoping_upper(delta: np.ndarray, n: int, orders=None) -> float:
    """(1/2) sum_i ||D_{i-1} - D_i||_1 with D_i = I/2 (x) tr_{s_i} D_{i-1}, minimized over orders."""
    delta = np.asarray(delta)
    if abs(np.trace(delta)) > 1e-9:
        raise ValueError("telescoping bound needs a traceless difference")
    if orders is None:
        weights = [trace_norm(partial_trace(delta, [i], n)) for i in range(n)]
        by_weight = sorted(range(n), key=lambda i: (-weights[i], i))
        orders = [list(range(n)), list(range(n - 1, -1, -1)), by_weight, by_weight[::-1]]
    best = math.inf
    for order in orders:
        D = delta
        total = 0.0
        for s in order:
            nxt = normalized_trace(D, [s], n, embed=True)
            total += 0.5 * trace_norm(D - nxt)
            D = nxt
        best = min(best, total)
    return best


def product_factors(state, groups, n: int, tol: float = 1e-10):
    """Marginals on `groups` if the state equals their tensor product, else None."""
    rho = _matrix(state)
    margs = [partial_trace(rho, sorted(g), n) for g in groups]
    prod = np.ones((1, 1), dtype=complex)
    for m in margs:
        prod = np.kron(prod, m)
    order = [s for g in groups for s in sorted(g)]
    if sorted(order) != list(range(n)):
        raise ValueError("factorization must partition the sites")
    prod = embed_operator(prod, order, n)
    if trace_norm(rho - prod) > tol:
        return None
    return margs


def _product_upper(rho, sigma, groups, n):
    fr = product_factors(rho, groups, n)
    fs = product_factors(sigma, groups, n)
    if fr is None or fs is None:
        return None
    total = 0.0
    for g, a, b in zip(groups, fr, fs):
        total += telescoping_upper(a - b, len(g))
    return total


def w1_upper_bound(rho, sigma, factorization=None, telescoping: bool = True):
    """Smallest of the certified upper bounds; returns (value, route name)."""
    r, s = _matrix(rho), _matrix(sigma)
    n = operators.num_qubits(r.shape[0])
    delta = r - s
    upper, route = n * trace_norm(delta), "trace"
    if telescoping and upper > 0:
        tb = telescoping_upper(delta, n)
        if tb < upper:
            upper, route = tb, "telescoping"
    if factorization is not None and upper > 0:
        groups = [[i] for i in range(n)] if factorization == "sites" else [list(g) for g in factorization]
        pb = _product_upper(r, s, groups, n)
        if pb is not None and pb < upper:
            upper, route = pb, "product"
    return upper, route


def w1_bounds(rho, sigma, witnesses=None, factorization=None, observable=None,
              telescoping: bool = True) -> W1Bounds:
    """Certified lower/upper bounds on W1(rho, sigma).

    witnesses: list of (name, matrix) or None for the default family.
    factorization: list of site groups; "sites" means single sites.
    """
    r, s = _matrix(rho), _matrix(sigma)
    if r.shape != s.shape:
        raise ValueError("dimension mismatch")
    n = operators.num_qubits(r.shape[0])
    delta = r - s
    if witnesses is None:
        witnesses = default_witnesses(r, s, n, observable)
    lower, best, best_name = 0.0, None, "none"
    if not witnesses:
        warnings.warn("empty witness family: W1 lower bound set to 0")
    for name, L in witnesses:
        val = float(np.real(np.sum(np.asarray(L) * delta.T)))
        lip = lip_seminorm(L, n).upper
        if lip <= 0:
            continue
        cand = abs(val) / lip
        if cand > lower:
            lower, best_name = cand, name
            best = np.sign(val) * np.asarray(L) / lip
    upper, route = w1_upper_bound(r, s, factorization, telescoping)
    return W1Bounds(lower, upper, best, best_name, route)


@dataclass(frozen=True)
class AdditivityRecord:
    per_copy_lb: float
    k_copy_lb: float
    k: int


def w1_tensor_additivity_check(rho, sigma, k: int, cap: int = operators.MAX_QUBITS) -> AdditivityRecord:
    """Lift the best single-copy witness to sum over copies and re-evaluate on k copies."""
    r, s = _matrix(rho), _matrix(sigma)
    n = operators.num_qubits(r.shape[0])
    if k < 1:
        raise ValueError("k must be positive")
    if k * n > cap:
        raise ValueError(f"{k * n} qubits exceeds the dense cap {cap}")
    b = w1_bounds(r, s)
    if b.witness is None:
        return AdditivityRecord(b.lower, 0.0, k)
    L = b.witness
    d = r.shape[0]
    Lk = np.zeros((d**k, d**k), dtype=complex)
    rk, sk = np.ones((1, 1)), np.ones((1, 1))
    for c in range(k):
        Lk += np.kron(np.kron(np.eye(d**c), L), np.eye(d ** (k - 1 - c)))
        rk, sk = np.kron(rk, r), np.kron(sk, s)
    val = float(np.real(np.sum(Lk * (rk - sk).T)))
    lip = lip_seminorm(Lk, k * n).upper
    return AdditivityRecord(b.lower, abs(val) / lip if lip > 0 else 0.0, k)


def _g(t: float) -> float:
    return (t + 1) * math.log(t + 1) - (t * math.log(t) if t > 0 else 0.0)


def entropy_continuity_check(rho, sigma, factorization=None, route: str = "best"):
    """|S(rho) - S(sigma)| against g(W) + W log(4n), W a certified W1 upper bound.

    route="trace" uses W = n ||rho - sigma||_1; "best" uses the tightest certified bound.
    """
    r, s = _matrix(rho), _matrix(sigma)
    n = operators.num_qubits(r.shape[0])
    if route == "trace":
        W = n * trace_norm(r - s)
    elif route == "best":
        W = w1_upper_bound(r, s, factorization)[0]
    else:
        raise ValueError(f"unknown route {route!r}")
    lhs = abs(operators.von_neumann_entropy(r) - operators.von_neumann_entropy(s))
    rhs = _g(W) + W * math.log(4 * n)
    return operators.InequalityRecord(lhs, rhs)
