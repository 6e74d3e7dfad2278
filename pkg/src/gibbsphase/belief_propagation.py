"""Quantum belief propagation: kernel, operator, Gibbs derivatives and decay probes.

The BP operator is Phi_H(V) = int kappa_beta(t) e^{-iHt} V e^{iHt} dt. In the
eigenbasis of H the conjugation multiplies V_ab by e^{-i(E_a-E_b)t}, so the
integral reduces to the Fourier transform of kappa_beta at the gap E_a - E_b:

    int kappa_beta(t) e^{-i w t} dt = tanh(beta w / 2) / (beta w / 2).

This is the closed-form filter used by the "eigenbasis" method. The
"quadrature" method integrates the time-domain kernel numerically and serves
as the independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import operators
from .fitting import fit_decay


def _check_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be positive")


def kernel_kappa(beta: float, t):
    """kappa_beta(t) = (2/(pi beta)) log((e^{pi|t|/beta}+1)/(e^{pi|t|/beta}-1)); +inf at t = 0."""
    _check_beta(beta)
    a = np.pi * np.abs(np.asarray(t, dtype=float)) / beta
    with np.errstate(divide="ignore"):
        # log((e^a+1)/(e^a-1)) = log1p(2/expm1(a)), accurate for small and large a
        val = np.where(a > 0, np.log1p(2.0 / np.expm1(np.maximum(a, 1e-300))), np.inf)
    return 2.0 / (np.pi * beta) * val


def kernel_bound(beta: float, t):
    """The tail bound (4/(pi beta)) / (e^{pi|t|/beta} - 1)."""
    _check_beta(beta)
    a = np.pi * np.abs(np.asarray(t, dtype=float)) / beta
    with np.errstate(divide="ignore"):
        return 4.0 / (np.pi * beta) / np.expm1(a)


def kernel_fourier(beta: float, omega):
    """tanh(beta w/2)/(beta w/2) with value 1 at w = 0."""
    y = 0.5 * beta * np.asarray(omega, dtype=float)
    small = np.abs(y) < 1e-6
    ys = np.where(small, 1.0, y)
    return np.where(small, 1.0 - y**2 / 3.0, np.tanh(ys) / ys)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


@dataclass(frozen=True)
class BPKernel:
    """Quadrature rule for integrals against kappa_beta on [-T, T].

    The half-line [0, T] is cut into panels of width `step`; the first panel is
    refined geometrically towards the logarithmic singularity at t = 0, and each
    panel carries a 12-point Gauss-Legendre rule. Only the sliver [0, a_min]
    next to the pole is dropped; its mass and the tail beyond T are bounded in
    `certified_error`.
    """

    beta: float
    cutoff: float | None = None
    step: float | None = None
    grading: float = 0.3
    levels: int = 48

    def __post_init__(self):
        _check_beta(self.beta)

    @property
    def T(self) -> float:
        return 20.0 * self.beta if self.cutoff is None else float(self.cutoff)

    @property
    def dt(self) -> float:
        return self.beta / 200.0 if self.step is None else float(self.step)

    @property
    def a_min(self) -> float:
        return self.dt * self.grading**self.levels

    def panels(self) -> np.ndarray:
        inner = self.dt * self.grading ** np.arange(self.levels, -1, -1)
        outer = np.arange(2, int(math.ceil(self.T / self.dt)) + 1) * self.dt
        edges = np.concatenate([inner, outer])
        edges[-1] = self.T
        return edges

    def rule(self):
        """Nodes t_k > 0 and weights w_k (kappa included) for the half line."""
        e = self.panels()
        a, b = e[:-1], e[1:]
        mid, half = (a + b) / 2, (b - a) / 2
        t = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        return t, w * kernel_kappa(self.beta, t)

    def certified_error(self) -> float:
        """Upper bound on the kernel mass missed by the rule (pole sliver + tails)."""
        b, a = self.beta, self.a_min
        # log coth(u) <= log(1/u) + u^2/3 on small u; integrate over [0, a] and double
        u = math.pi * a / (2 * b)
        sliver = 2 * (2 / (math.pi * b)) * a * (1 + math.log(1 / u) + u * u / 3)
        tail = 2 * (4 / math.pi**2) * -math.log1p(-math.exp(-math.pi * self.T / b))
        return sliver + tail

    def mass(self) -> float:
        _, w = self.rule()
        return float(2 * w.sum())

    def transform(self, omega) -> np.ndarray:
        """Numerical int kappa(t) cos(omega t) dt over [-T, T]."""
        omega = np.asarray(omega, dtype=float)
        t, w = self.rule()
        flat = omega.ravel()
        out = np.empty_like(flat)
        chunk = max(1, 2_000_000 // t.size)
        for s in range(0, flat.size, chunk):
            # fixed-order dot products keep the summation deterministic
            out[s:s + chunk] = 2 * np.cos(np.outer(flat[s:s + chunk], t)) @ w
        return out.reshape(omega.shape)


def _filter_matrix(w_eig: np.ndarray, beta: float, kernel: BPKernel | None, method: str):
    gaps = w_eig[:, None] - w_eig[None, :]
    if method == "eigenbasis":
        return kernel_fourier(beta, gaps)
    if method == "quadrature":
        k = kernel or BPKernel(beta)
        return k.transform(gaps)
    raise ValueError(f"unknown method {method!r}")


def bp_operator(H: np.ndarray, V: np.ndarray, kernel: BPKernel | float,
                method: str = "eigenbasis", eig=None) -> np.ndarray:
    """Phi_H(V) by the eigenbasis filter or by time quadrature."""
    if np.shape(H) != np.shape(V):
        raise ValueError("dimension mismatch")
    if isinstance(kernel, BPKernel):
        beta, kobj = kernel.beta, kernel
    else:
        beta, kobj = float(kernel), None
        _check_beta(beta)
    w, U = operators.eigh(H) if eig is None else eig
    Vt = U.conj().T @ V @ U
    F = _filter_matrix(w, beta, kobj, method)
    return U @ (Vt * F) @ U.conj().T


def gibbs_gradient(family, x, L: np.ndarray, beta: float, coords=None) -> np.ndarray:
    """d/dx_k tr[L sigma(beta, x)] = -beta Cov(L, Phi_H(dH/dx_k)) for k in coords."""
    H = family.assemble(x)
    w, U = operators.eigh(H)
    p = np.exp(-beta * (w - w[0]))
    p /= p.sum()
    F = kernel_fourier(beta, w[:, None] - w[None, :]) if beta > 0 else np.ones((len(w), len(w)))
    Lt = U.conj().T @ L @ U
    eL = float(np.real(np.sum(p * np.diag(Lt))))
    # Cov = 1/2 tr[sigma {L, Ht}] - <L><Ht>, with Ht = P~ * F in the eigenbasis
    M = 0.5 * (p[:, None] + p[None, :]) * Lt.T * F
    coords = range(family.m) if coords is None else coords
    out = []
    for k in coords:
        Pt = U.conj().T @ family.basis_matrix(k) @ U
        sym = float(np.real(np.sum(M * Pt)))
        eP = float(np.real(np.sum(p * np.diag(Pt))))
        out.append(-beta * (sym - eL * eP))
    return np.array(out)


def gibbs_derivative(family, x, k: int, L: np.ndarray, beta: float) -> float:
    if not 0 <= k < family.m:
        raise ValueError("coordinate index out of range")
    return float(gibbs_gradient(family, x, L, beta, coords=[k])[0])


def state_derivative(family, x, k: int, beta: float) -> np.ndarray:
    """d sigma / d x_k = -(beta/2) {Phi(h_k) - <h_k>, sigma}."""
    H = family.assemble(x)
    w, U = operators.eigh(H)
    p = np.exp(-beta * (w - w[0]))
    p /= p.sum()
    Pt = U.conj().T @ family.basis_matrix(k) @ U
    Ht = Pt * kernel_fourier(beta, w[:, None] - w[None, :])
    Ht = Ht - float(np.real(np.sum(p * np.diag(Ht)))) * np.eye(len(w))
    D = -0.5 * beta * (Ht * p[None, :] + p[:, None] * Ht)
    return U @ D @ U.conj().T


def _support_check(O, A, n):
    A = sorted(A)
    rest = [i for i in range(n) if i not in A]
    if rest:
        tau = operators.normalized_trace(O, rest, n, embed=True)
        if np.max(np.abs(tau - O)) > 1e-10:
            raise ValueError("operator is not supported on the declared region")


def bp_truncation_error(family, x, V: np.ndarray, A, B, beta: float) -> float:
    """||Phi_{H(x)}(V) - Phi_{H_B(x)}(V)||_inf."""
    A, B = frozenset(A), family.lattice.check_region(B)
    if not A <= B:
        raise ValueError("support region A must lie inside B")
    _support_check(V, A, family.n)
    full = bp_operator(family.assemble(x), V, beta)
    part = bp_operator(family.assemble(x, region=B), V, beta)
    return operators.op_norm(full - part)


def heisenberg_evolve(H: np.ndarray, O: np.ndarray, t: float, eig=None) -> np.ndarray:
    """alpha_t(O) = e^{iHt} O e^{-iHt}."""
    w, U = operators.eigh(H) if eig is None else eig
    Ot = U.conj().T @ O @ U
    ph = np.exp(1j * t * (w[:, None] - w[None, :]))
    return U @ (Ot * ph) @ U.conj().T


def lr_discrepancy(family, x, O: np.ndarray, A, B, t: float) -> float:
    """||alpha_t(O_A) - alpha^B_t(O_A)||_inf."""
    A, B = frozenset(A), family.lattice.check_region(B)
    if not A <= B:
        raise ValueError("support region A must lie inside B")
    _support_check(O, A, family.n)
    full = heisenberg_evolve(family.assemble(x), O, t)
    part = heisenberg_evolve(family.assemble(x, region=B), O, t)
    return operators.op_norm(full - part)


def truncation_scan(family, x, V, A, beta, radii):
    """BP truncation error against B = A(r); returns values and a decay fit."""
    vals = [bp_truncation_error(family, x, V, A, family.lattice.enlarge(A, r), beta) for r in radii]
    return np.array(vals), fit_decay(radii, vals)


def lr_scan(family, x, O, A, t, radii):
    vals = [lr_discrepancy(family, x, O, A, family.lattice.enlarge(A, r), t) for r in radii]
    return np.array(vals), fit_decay(radii, vals)


# spectral-flow weight ----------------------------------------------------

def _log_branch(u):
    lu = math.log(u)
    return math.log(35.0) + 2.0 + 4.0 * lu - (2.0 / 7.0) * u / (lu * lu)


def spectral_flow_theta(lo: float = math.e, hi: float = 1e6, tol: float = 1e-12) -> float:
    """Largest u with 35 e^2 u^4 exp(-(2/7) u / log^2 u) = 1/2, by bisection on [lo, hi]."""
    target = math.log(0.5)
    flo, fhi = _log_branch(lo) - target, _log_branch(hi) - target
    if not (flo > 0 > fhi):
        raise ValueError(f"spectral-flow crossover not bracketed on [{lo}, {hi}]")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _log_branch(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SpectralFlowWeight:
    gamma: float
    theta: float

    def __call__(self, t):
        return spectral_flow_weight(self.gamma, t, self.theta)


def spectral_flow_weight(gamma: float, t, theta: float | None = None):
    if not gamma > 0:
        raise ValueError("gap must be positive")
    th = spectral_flow_theta() if theta is None else theta
    u = gamma * np.abs(np.asarray(t, dtype=float))
    out = np.full(u.shape, 0.5)
    big = u > th
    out[big] = np.exp([_log_branch(v) for v in u[big]])
    return out if out.ndim else float(out)
