"""Max-entropy Hamiltonian learning, recovery maps, Markov scans and the W1 tomography pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from . import operators
from .belief_propagation import state_derivative
from .fitting import fit_decay
from .operators import QuantumState, partial_trace, trace_norm
from .paulis import pauli_expectation
from .shadows import ShadowSet, collect_snapshots, pauli_estimates
from .wasserstein import telescoping_upper, w1_bounds


@dataclass(frozen=True)
class ExpectationTable:
    values: np.ndarray
    eta: float
    provenance: str
    half_widths: np.ndarray | None = None
    count: int | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


def local_expectations(source, family, delta: float = 0.05) -> ExpectationTable:
    """Term expectations e_k = tr[h_k sigma], exactly or from shadows.

    Shadow mode: each snapshot gives an unbiased value in [-3^w, 3^w] for a
    weight-w Pauli, so Hoeffding plus a union bound over the m terms gives the
    half-width 3^w sqrt(2 ln(2m/delta) / N) at confidence 1 - delta.
    """
    if isinstance(source, (ShadowSet, list, tuple)):
        sets = [source] if isinstance(source, ShadowSet) else list(source)
        if not sets:
            raise ValueError("no shadow sets supplied")
        for s in sets:
            if s.n != family.n:
                raise ValueError("shadow support does not cover every term")
        means, bounds, N = pauli_estimates(sets, family.basis, family.n)
        hw = bounds * math.sqrt(2 * math.log(2 * family.m / delta) / N)
        return ExpectationTable(means, float(hw.max()), "shadow", hw, N)
    rho = source.rho if isinstance(source, QuantumState) else np.asarray(source)
    vals = np.array([pauli_expectation(rho, op, family.n) for op in family.basis])
    return ExpectationTable(vals, 0.0, "exact")


@dataclass
class MaxEntSolution:
    x_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    active: np.ndarray
    history: list = field(repr=False)
    alpha2: float | None = None
    param_bound: float | None = None


def _objective(family, y, beta, e_tilde):
    H = family.assemble(y)
    w, U = operators.eigh(H)
    z = -beta * (w - w[0])
    p = np.exp(z)
    s = p.sum()
    p /= s
    logZ = -beta * w[0] + math.log(s)
    rho = (U * p) @ U.conj().T
    e = np.array([pauli_expectation(rho, op, family.n) for op in family.basis])
    return logZ + beta * float(y @ e_tilde), beta * (e_tilde - e), e


def maxent_solve(table: ExpectationTable, family, beta: float, tol: float = 1e-9, max_iter: int = 20000,
                 x0=None, alpha2: float | None = None) -> MaxEntSolution:
    """Minimize log Z_beta(y) + beta sum_k y_k e~_k over the box by projected gradient.

    Steps are Barzilai-Borwein proposals safeguarded by Armijo backtracking.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    et = np.asarray(table.values, dtype=float)
    lo, hi = family.center - 1.0, family.center + 1.0
    proj = lambda v: np.clip(v, lo, hi)
    y = proj(family.center.copy() if x0 is None else np.asarray(x0, dtype=float))
    f, g, _ = _objective(family, y, beta, et)
    hist = [f]
    step = 1.0 / max(beta * beta, 1e-12)
    slack = 8 * np.finfo(float).eps
    for it in range(max_iter):
        pg = y - proj(y - g)
        gn = float(np.linalg.norm(pg))
        if gn <= tol:
            active = np.nonzero((y <= lo + 1e-12) | (y >= hi - 1e-12))[0]
            sol = MaxEntSolution(y, f, gn, it, active, hist)
            if alpha2 is not None:
                sol.alpha2 = alpha2
                sol.param_bound = 2 * beta * table.eta * math.sqrt(family.ell * family.n) / alpha2
            return sol
        s = step
        for _ in range(80):
            yn = proj(y - s * g)
            fn, gnew, _ = _objective(family, yn, beta, et)
            if fn <= f + 1e-4 * float(g @ (yn - y)) + slack * abs(f):
                break
            s *= 0.5
        else:
            raise RuntimeError(f"line search failed at iteration {it}; |pg| = {gn:.3e}, trace {hist[-5:]}")
        dy, dg = yn - y, gnew - g
        y, f, g = yn, fn, gnew
        hist.append(f)
        curv = float(dy @ dg)
        step = float(np.clip(dy @ dy / curv, 1e-10, 1e10)) if curv > 0 else 1.0
    raise RuntimeError(f"maxent did not converge in {max_iter} iterations; |pg| = {gn:.3e}, trace {hist[-5:]}")


@dataclass(frozen=True)
class ConvexityRecord:
    alpha2: float
    points: np.ndarray
    min_eigs: np.ndarray
    asymmetry: float


def log_partition_hessian(family, y, beta: float, h: float = 1e-4) -> np.ndarray:
    """Central differences of grad log Z = -beta e(y)."""
    m = family.m
    Hs = np.empty((m, m))
    for j in range(m):
        d = np.zeros(m)
        d[j] = h
        ep = family.expectations(family.gibbs(y + d, beta))
        em = family.expectations(family.gibbs(y - d, beta))
        Hs[:, j] = -beta * (ep - em) / (2 * h)
    return Hs


def strong_convexity(family, beta: float, a, b, points: int = 5, h: float = 1e-4) -> ConvexityRecord:
    """Smallest Hessian eigenvalue of log Z_beta at `points` interior points of [a, b]."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ss = np.arange(1, points + 1) / (points + 1)
    eigs, asym = [], 0.0
    for s in ss:
        Hs = log_partition_hessian(family, (1 - s) * a + s * b, beta, h)
        asym = max(asym, float(np.max(np.abs(Hs - Hs.T))))
        eigs.append(float(np.linalg.eigvalsh(0.5 * (Hs + Hs.T))[0]))
    eigs = np.array(eigs)
    return ConvexityRecord(float(eigs.min()), ss, eigs, asym)


# recovery map -------------------------------------------------------------

def _powers(M, reg):
    w, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    if w[0] < -operators.NEG_TOL:
        raise ValueError("recovery map needs a positive semidefinite reference state")
    mix = 0.0
    if w[0] < reg:
        mix = reg
        w = (1 - mix) * w + mix / len(w)
    return w, U, mix


def _pow(w, U, z):
    return (U * np.exp(z * np.log(w))) @ U.conj().T


def recovery_map(omega_AB, rho, n_a: int | None = None, reg: float = 1e-10, epsabs: float = 1e-12,
                 return_info: bool = False):
    """Rotated Petz map Phi_{A->AB}(rho) with weight dmu0(t) = pi dt / (2 (cosh(pi t) + 1)).

    omega_AB lives on qubits (A, B) with A the first n_a qubits. rho lives on
    (R, A) where any leading qubits R are a reference system left untouched.
    With u = tanh(pi t / 2) the weight becomes du / 2 on (-1, 1).
    """
    om = omega_AB.rho if isinstance(omega_AB, QuantumState) else np.asarray(omega_AB)
    X = rho.rho if isinstance(rho, QuantumState) else np.asarray(rho)
    n_ab = operators.num_qubits(om.shape[0])
    n_ra = operators.num_qubits(X.shape[0])
    n_a = n_ra if n_a is None else n_a
    n_r, n_b = n_ra - n_a, n_ab - n_a
    if n_r < 0 or n_b < 0:
        raise ValueError("subsystem sizes are inconsistent")
    wab, Uab, mix_ab = _powers(om, reg)
    om_a = partial_trace(om, range(n_a), n_ab)
    wa, Ua, mix_a = _powers(om_a, reg)
    Ir, Ib = np.eye(2**n_r), np.eye(2**n_b)

    def integrand(u):
        t = (2 / np.pi) * np.arctanh(u)
        left_a = np.kron(Ir, _pow(wa, Ua, (1j * t - 1) / 2))
        right_a = np.kron(Ir, _pow(wa, Ua, -(1 + 1j * t) / 2))
        Y = np.kron(left_a @ X @ right_a, Ib)
        L = np.kron(Ir, _pow(wab, Uab, (1 - 1j * t) / 2))
        R = np.kron(Ir, _pow(wab, Uab, (1 + 1j * t) / 2))
        return 0.5 * (L @ Y @ R)

    out, err = quad_vec(integrand, -1.0, 1.0, epsabs=epsabs, epsrel=0.0, limit=2000)
    out = 0.5 * (out + out.conj().T)
    if abs(np.trace(out) - np.trace(X)) > 1e-8:
        raise ValueError("recovery quadrature lost trace")
    state = QuantumState(out, validate=False)
    if return_info:
        return state, {"regularization": max(mix_ab, mix_a), "quadrature_error": float(err)}
    return state


# Markov and clustering scans ----------------------------------------------

@dataclass(frozen=True)
class Partition:
    X: frozenset
    A: frozenset
    B: frozenset
    C: frozenset


def shield_partitions(lattice, widths, regions=None, anchor: int | None = None):
    """A = {anchor}, B = the width-w shell around it, C = the rest of X."""
    regions = [frozenset(lattice.sites)] if regions is None else [frozenset(R) for R in regions]
    out = []
    for X in regions:
        a = min(X) if anchor is None else anchor
        for w in widths:
            B = (lattice.enlarge({a}, w) & X) - {a}
            C = X - B - {a}
            if C:
                out.append((w, Partition(X, frozenset({a}), frozenset(B), frozenset(C))))
    return out


@dataclass
class MarkovScan:
    widths: np.ndarray
    cmi: np.ndarray
    covariance: np.ndarray
    delta_envelope: np.ndarray
    zeta_envelope: np.ndarray
    cmi_fit: object
    cov_fit: object


def markov_clustering_scan(family, x, beta: float, partitions) -> MarkovScan:
    """I(A:C|B) and ||sigma_AC - sigma_A (x) sigma_C||_1 on sub-lattice Gibbs states.

    partitions: list of (width, Partition). Envelopes are the running maxima
    over all entries of width >= l, so they bound every supplied configuration.
    """
    cache = {}
    ws, cmis, covs = [], [], []
    n = family.n
    for w, P in partitions:
        if not (P.A and P.C) or (P.A & P.B) or (P.A & P.C) or (P.B & P.C) or not (P.A | P.B | P.C) <= P.X:
            raise ValueError("invalid partition")
        if P.X not in cache:
            cache[P.X] = family.gibbs(x, beta, region=P.X)
        st = cache[P.X]
        cmis.append(operators.conditional_mutual_information(st, P.A, P.B, P.C))
        AC = sorted(P.A | P.C)
        rac = partial_trace(st.rho, AC, n)
        ra = partial_trace(st.rho, sorted(P.A), n)
        rc = partial_trace(st.rho, sorted(P.C), n)
        prod = _kron_in_order(ra, sorted(P.A), rc, sorted(P.C))
        covs.append(trace_norm(rac - prod))
        ws.append(w)
    ws, cmis, covs = np.array(ws, dtype=float), np.array(cmis), np.array(covs)
    grid = np.unique(ws)
    delta = np.array([cmis[ws >= l].max() for l in grid])
    zeta = np.array([covs[ws >= l].max() for l in grid])
    return MarkovScan(grid, cmis, covs, delta, zeta, fit_decay(grid, delta), fit_decay(grid, zeta))


def _kron_in_order(ra, A, rc, C):
    """ra (x) rc written on the sorted union of A and C."""
    order = A + C
    M = np.kron(ra, rc)
    k = len(order)
    perm = np.argsort(order)
    T = M.reshape((2,) * (2 * k)).transpose(list(perm) + [k + p for p in perm])
    return T.reshape(2**k, 2**k)


# tomography pipeline -------------------------------------------------------

def derivative_w1_bound(family, a, b, beta: float, points: int = 9) -> float:
    """max over sample points s in [0, 1] and coordinates k of the telescoping W1 bound on d_k sigma."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    best = 0.0
    for s in np.linspace(0.0, 1.0, points):
        y = (1 - s) * a + s * b
        for k in range(family.m):
            D = state_derivative(family, y, k, beta)
            best = max(best, telescoping_upper(D, family.n))
    return best


def w1_tomography_pipeline(family, x, beta: float, config: dict | None = None) -> dict:
    """Estimate term expectations, solve maxent, score W1 bounds against the hidden x.

    config keys: mode (exact|shadow), eta (noise level injected in exact mode),
    snapshots, seed, delta, tol, factorization, convexity_points.
    """
    cfg = {"mode": "exact", "eta": 0.0, "snapshots": 100000, "seed": 0, "delta": 0.05,
           "tol": 1e-9, "factorization": None, "convexity_points": 5}
    cfg.update(config or {})
    x = family.check_params(x)
    truth = family.gibbs(x, beta)
    if cfg["mode"] == "exact":
        table = local_expectations(truth, family)
        if cfg["eta"] > 0:
            rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 1]))
            noise = rng.uniform(-cfg["eta"], cfg["eta"], family.m)
            table = ExpectationTable(table.values + noise, float(cfg["eta"]), "exact+noise")
    elif cfg["mode"] == "shadow":
        sh = collect_snapshots(truth, int(cfg["snapshots"]), int(cfg["seed"]))
        table = local_expectations(sh, family, cfg["delta"])
    else:
        raise ValueError(f"unknown mode {cfg['mode']!r}")
    sol = maxent_solve(table, family, beta, tol=cfg["tol"])
    est = family.gibbs(sol.x_hat, beta)
    fac = cfg["factorization"]
    if fac is None and family.is_commuting_diagonal and all(len(op.support) <= 1 for op in family.basis):
        fac = "sites"
    bounds = w1_bounds(est, truth, factorization=fac)
    conv = strong_convexity(family, beta, x, sol.x_hat, points=cfg["convexity_points"])
    alpha2 = conv.alpha2
    param_bound = (2 * beta * table.eta * math.sqrt(family.ell * family.n) / alpha2
                   if alpha2 > 0 else math.inf)
    dist1 = float(np.abs(x - sol.x_hat).sum())
    dmax = derivative_w1_bound(family, x, sol.x_hat, beta) if dist1 > 0 else 0.0
    try:
        rel = operators.relative_entropy(truth.rho, est.rho)
    except ValueError:
        rel = math.inf
    ratio = bounds.lower / math.sqrt(family.n * rel) if rel > 0 and math.isfinite(rel) else None
    return {
        "x_hat": sol.x_hat.tolist(),
        "eta": table.eta,
        "alpha2": alpha2,
        "param_error_l2": float(np.linalg.norm(x - sol.x_hat)),
        "param_bound_l2": param_bound,
        "w1_lower": bounds.lower,
        "w1_upper": bounds.upper,
        "w1_upper_route": bounds.upper_route,
        "certificate_route": "continuity",
        "certificate": dist1 * dmax,
        "derivative_w1_max": dmax,
        "relative_entropy": rel,
        "markov_ratio": ratio,
        "iterations": sol.iterations,
        "provenance": table.provenance,
    }
