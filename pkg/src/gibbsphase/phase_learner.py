"""Learning local observables across a phase from parameter-labelled samples.

Estimator: for each term O_i pick the training point whose parameters are
closest (l_inf) to x on the coordinates of terms meeting S_i(r), and read off
tr[O_i sigma(Y)] (exact mode) or a robust shadow average over the closest
points (shadow mode).

Hyperparameters come in two flavours. "paper-constants" evaluates the
closed-form r, gamma, C_1, C_2(r) from the model constants (C, c', xi). These
are sound but astronomically conservative. "empirical" fits C_1, xi from
indistinguishability scans and C_2 from exact gradients, then applies the same
coupon-collector accounting.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from . import operators
from .belief_propagation import gibbs_gradient
from .fitting import fit_decay
from .operators import partial_trace
from .paulis import PAULI
from .shadows import collect_snapshots, robust_average, sample_count_t

MODES = ("paper-constants", "empirical")
VARIANTS = {"exact": 2, "shadow": 3}


# observables ----------------------------------------------------------------

@dataclass(frozen=True)
class LocalObservable:
    """O = sum_i O_i with O_i a matrix on the sorted sites of S_i."""

    terms: tuple
    k0: int

    @classmethod
    def from_terms(cls, terms, lattice=None) -> "LocalObservable":
        clean = []
        k0 = 0
        for sites, mat in terms:
            sites = tuple(sorted(int(s) for s in sites))
            mat = operators.check_hermitian(np.asarray(mat, dtype=complex))
            if mat.shape != (2 ** len(sites),) * 2:
                raise ValueError("term matrix does not match its support")
            diam = 0
            if lattice is not None:
                lattice.check_region(sites)
                diam = max((lattice.distance(a, b) for a in sites for b in sites), default=0)
            k0 = max(k0, len(sites), diam)
            clean.append((sites, mat))
        if not clean:
            raise ValueError("observable needs at least one term")
        return cls(tuple(clean), k0)

    @classmethod
    def pauli(cls, letters: str, sites, coeff: float = 1.0, lattice=None) -> "LocalObservable":
        mat = np.ones((1, 1), dtype=complex)
        for c in letters:
            mat = np.kron(mat, PAULI[c])
        return cls.from_terms([(sites, coeff * mat)], lattice)

    @property
    def M(self) -> int:
        return len(self.terms)

    @property
    def norms(self) -> np.ndarray:
        return np.array([operators.op_norm(m) for _, m in self.terms])

    @property
    def support(self) -> frozenset:
        return frozenset(s for sites, _ in self.terms for s in sites)

    def term_value(self, i: int, rho: np.ndarray, n: int) -> float:
        sites, mat = self.terms[i]
        red = partial_trace(rho, sites, n)
        return float(np.real(np.sum(mat * red.T)))

    def value(self, rho: np.ndarray, n: int) -> float:
        return sum(self.term_value(i, rho, n) for i in range(self.M))

    def full_matrix(self, n: int) -> np.ndarray:
        out = np.zeros((2**n, 2**n), dtype=complex)
        for sites, mat in self.terms:
            out += operators.embed_operator(mat, sites, n)
        return out

    def to_dict(self) -> list:
        return [{"support": list(s), "matrix_real": np.real(m).tolist(), "matrix_imag": np.imag(m).tolist()}
                for s, m in self.terms]


# sampling distributions -------------------------------------------------------

@dataclass(frozen=True)
class ParamDistribution:
    """Per-coordinate i.i.d. offsets from the family center.

    kind: "uniform" (on [-1, 1]), "beta" (Beta(a, b) rescaled to [-1, 1]) or
    "dirac" (fixed offset `value`).
    """

    kind: str = "uniform"
    a: float = 1.0
    b: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "dirac"):
            raise ValueError(f"unsupported distribution {self.kind!r}")
        if self.kind == "beta" and not (self.a > 0 and self.b > 0):
            raise ValueError("beta parameters must be positive")
        if self.kind == "dirac" and abs(self.value) > 1:
            raise ValueError("dirac offset outside the box")

    @classmethod
    def from_spec(cls, spec) -> "ParamDistribution":
        if isinstance(spec, ParamDistribution):
            return spec
        if isinstance(spec, str):
            spec = {"kind": "uniform" if spec in ("uniform", "uniform-on-box") else spec}
        spec = dict(spec)
        kind = spec.pop("kind", "uniform")
        if kind == "uniform-on-box":
            kind = "uniform"
        if kind == "product":
            kind = spec.pop("marginal", "uniform")
        return cls(kind, **spec)

    def sample(self, rng, size: int, m: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, size=(size, m))
        if self.kind == "beta":
            return 2.0 * rng.beta(self.a, self.b, size=(size, m)) - 1.0
        return np.full((size, m), float(self.value))

    def cdf(self, u):
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        if self.kind == "uniform":
            return (u + 1) / 2
        if self.kind == "beta":
            return stats.beta.cdf((u + 1) / 2, self.a, self.b)
        return (u >= self.value).astype(float)

    def interval_mass_lower(self, gamma: float, grid: int = 2001) -> float:
        """Declared lower bound on the mass of any width-gamma interval of positive mass."""
        if self.kind == "uniform":
            return min(1.0, gamma / 2)
        if self.kind == "dirac":
            return 1.0
        lo = np.linspace(-1.0, 1.0 - gamma, grid)
        return float(np.min(self.cdf(lo + gamma) - self.cdf(lo)))

    def as_dict(self) -> dict:
        return asdict(self)


def check_anti_concentration(xs, center, dist: ParamDistribution, gamma: float = 0.2, intervals: int = 20,
                             seed: int = 0, z: float = 4.0) -> dict:
    """Empirical interval masses per coordinate against the declared bound (z-sigma binomial slack)."""
    xs = np.asarray(xs) - np.asarray(center)
    N, m = xs.shape
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    bound = dist.interval_mass_lower(gamma)
    worst = math.inf
    ok = True
    for k in range(m):
        for lo in rng.uniform(-1.0, 1.0 - gamma, intervals):
            frac = float(np.mean((xs[:, k] >= lo) & (xs[:, k] <= lo + gamma)))
            if frac == 0.0 and dist.kind == "dirac":
                continue
            worst = min(worst, frac)
            slack = z * math.sqrt(max(bound * (1 - bound), 1e-12) / N)
            if frac < bound - slack:
                ok = False
    return {"declared": bound, "worst_empirical": worst, "passed": ok, "gamma": gamma}


# training data ---------------------------------------------------------------

class TrainingSet:
    """Parameter points x_i with exact states (computed on demand) or shadow sets.

    Shadow sets are regenerated deterministically from (seed, i), so a handle
    is always resolvable without holding every snapshot in memory.
    """

    def __init__(self, family, beta: float, xs, distribution: ParamDistribution, seed: int,
                 kind: str = "gibbs", snapshots_per_entry: int = 0, cache_size: int = 4096):
        if kind not in ("gibbs", "ground"):
            raise ValueError(f"unknown state kind {kind!r}")
        self.family = family
        self.beta = float(beta)
        self.xs = np.asarray(xs, dtype=float)
        for x in self.xs:
            family.check_params(x)
        self.distribution = distribution
        self.seed = int(seed)
        self.kind = kind
        self.snapshots_per_entry = int(snapshots_per_entry)
        self._cache = OrderedDict()
        self._cache_size = cache_size
        self.anti_concentration = None

    def __len__(self) -> int:
        return self.xs.shape[0]

    def state(self, i: int) -> operators.QuantumState:
        i = int(i)
        st = self._cache.get(i)
        if st is not None:
            self._cache.move_to_end(i)
            return st
        if self.kind == "gibbs":
            st = self.family.gibbs(self.xs[i], self.beta)
        else:
            st = self.family.ground(self.xs[i])
        self._cache[i] = st
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return st

    def shadow(self, i: int):
        if self.snapshots_per_entry < 1:
            raise ValueError("training set carries exact states only")
        return collect_snapshots(self.state(i), self.snapshots_per_entry, self.seed, set_index=int(i),
                                 tag=self.xs[i])

    def handle(self, i: int) -> str:
        if self.snapshots_per_entry < 1:
            return f"exact:{self.kind}"
        return f"shadow:seed={self.seed},set={int(i)},count={self.snapshots_per_entry}"

    def manifest(self) -> str:
        head = {"n": self.family.n, "m": self.family.m, "N": len(self), "beta": self.beta, "kind": self.kind,
                "seed": self.seed, "distribution": self.distribution.as_dict(),
                "snapshots_per_entry": self.snapshots_per_entry}
        lines = [json.dumps(head, sort_keys=True)]
        for i, x in enumerate(self.xs):
            lines.append(json.dumps({"index": i, "x": [float(v) for v in x], "handle": self.handle(i),
                                     "seed": [self.seed, i]}))
        return "\n".join(lines) + "\n"


def draw_training(family, distribution, N: int, seed: int, beta: float = 1.0, kind: str = "gibbs",
                  snapshots_per_entry: int = 0, check: bool = True) -> TrainingSet:
    """N i.i.d. parameter vectors around the family center."""
    if N < 1:
        raise ValueError("N must be at least 1")
    dist = ParamDistribution.from_spec(distribution)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    xs = family.center + dist.sample(rng, N, family.m)
    ts = TrainingSet(family, beta, xs, dist, seed, kind, snapshots_per_entry)
    if check and N >= 100:
        rec = check_anti_concentration(xs, family.center, dist, seed=seed)
        if not rec["passed"]:
            raise ValueError("anti-concentration check failed")
        ts.anti_concentration = rec
    return ts


def nearest_sample(x, S, r: int, training: TrainingSet, want: int = 1):
    """Indices of the `want` closest training points on the S(r) coordinates, with their distances."""
    if len(training) == 0:
        raise ValueError("empty training set")
    coords = training.family.restricted_coords(S, r)
    x = np.asarray(x, dtype=float)
    if coords.size == 0:
        d = np.zeros(len(training))
    else:
        d = np.max(np.abs(training.xs[:, coords] - x[coords]), axis=1)
    order = np.argsort(d, kind="stable")[:want]
    return order, d[order]


# hyperparameters ----------------------------------------------------------------

@dataclass(frozen=True)
class ModelConstants:
    beta: float
    h: float
    ell: int
    k0: int
    r0: int
    D: int
    n: int
    M: int = 1
    C: float = 1.0
    c_prime: float = 1.0
    xi: float = 1.0


@dataclass
class LearnerConfig:
    r: int
    gamma: float
    t: int
    N: int | None
    mode: str
    variant: str = "exact"
    m_r: int = 0
    log10_N: float = 0.0
    C1: float = 0.0
    xi: float = 1.0
    C2: float = 0.0
    snapshots_per_entry: int = 1
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.r < 0 or not (0 < self.gamma <= 1) or self.t < 1:
            raise ValueError("invalid learner configuration")
        if self.N is not None and self.N * max(1, self.snapshots_per_entry) < self.t:
            raise ValueError("N must be at least t")

    def lemma_term(self) -> float:
        """2 C_1 exp(-r / 2 xi)."""
        if self.C1 == 0.0:
            return 0.0
        return 2 * self.C1 * math.exp(-self.r / (2 * self.xi))

    def lipschitz_const(self) -> float:
        if self.mode == "paper-constants":
            return paper_C2(self.r, self.details["constants"])
        return self.C2

    def as_dict(self) -> dict:
        d = asdict(self)
        d["details"] = {k: (asdict(v) if isinstance(v, ModelConstants) else v) for k, v in self.details.items()}
        return d


def _check_unit(name, v):
    if not 0 < v < 1:
        raise ValueError(f"{name} must lie in (0, 1)")


def volume(r: int, k0: int, D: int) -> int:
    """[2(r + k0)]^D."""
    return (2 * (r + k0)) ** D


def paper_C1(c: ModelConstants) -> float:
    """C_1 implied by the r display: 2 C_1 e^{-r/2xi} <= eps/2 reproduces the factor 16."""
    D, xi = c.D, c.xi
    num = 4 * c.beta * (c.C + c.c_prime) * c.h * (2 * c.r0 + c.k0) ** D * math.factorial(D - 1) \
        * (2 * xi) ** (D - 1) * D ** (D - 1)
    return num / (math.exp((c.k0 + 1) / (2 * xi)) * (1 - math.exp(-1 / (2 * xi))))


def paper_r(eps: float, c: ModelConstants, variant: str = "exact") -> int:
    """ceil(2 xi log(K beta (C+c') h (2r0+k0)^D (D-1)! (2xi)^{D-1} D^{D-1} / (eps e^{(k0+1)/2xi} (1-e^{-1/2xi}))))

    with K = 16 for exact states and K = 24 for shadows; clipped at 0.
    """
    K = 8 * VARIANTS[variant]
    D, xi = c.D, c.xi
    num = K * c.beta * (c.C + c.c_prime) * c.h * (2 * c.r0 + c.k0) ** D * math.factorial(D - 1) \
        * (2 * xi) ** (D - 1) * D ** (D - 1)
    den = eps * math.exp((c.k0 + 1) / (2 * xi)) * (1 - math.exp(-1 / (2 * xi)))
    if num <= 0:  # beta = 0: the state is maximally mixed at every x
        return 0
    return max(0, math.ceil(2 * xi * math.log(num / den)))


def paper_gamma(eps: float, r: int, c: ModelConstants, variant: str = "exact") -> float:
    """eps e^{-V(3 log 2 + 5 beta h)} / (K V h ell) with V = [2(r+k0)]^D, K = 2 or 3."""
    V = volume(r, c.k0, c.D)
    return eps * math.exp(-V * (3 * math.log(2) + 5 * c.beta * c.h)) / (VARIANTS[variant] * V * c.h * c.ell)


def paper_C2(r: int, c: ModelConstants) -> float:
    """2^{2V+1} e^{5 beta V h} V h ell with V = [2(r+k0)]^D."""
    V = volume(r, c.k0, c.D)
    return 2.0 ** (2 * V + 1) * math.exp(5 * c.beta * V * c.h) * V * c.h * c.ell


def coupon_N(gamma: float, m_r: int, M: int, delta: float, t: int = 1):
    """Smallest N with M exp(-(N/t)(gamma/2)^{m_r} + m_r log(2/gamma) + log t) <= delta.

    Returns (N or None when it exceeds 1e15, log10 N).
    """
    lg = m_r * math.log(2 / gamma)
    bracket = math.log(M / delta) + lg + math.log(t)
    log_n = math.log(t) + lg + math.log(bracket)
    log10 = log_n / math.log(10)
    if log10 > 15:
        return None, log10
    return int(math.ceil(t * math.exp(lg) * bracket * (1 - 1e-12))), log10


def literal_display_log10_N(gamma: float, m_r: int, M: int, delta: float, t: int = 1) -> float:
    """log10 of the N display read literally, with the (gamma/2)^{-m_r} factor appearing twice."""
    lg = m_r * math.log(2 / gamma)
    if t == 1:
        val = 2 * lg + math.log(math.log(M / delta) + lg)
    else:
        val = math.log(t) + 2 * lg + math.log(math.log(M / delta) + t * (math.log(t) + lg))
    return val / math.log(10)


def hyperparams(eps: float, delta: float, delta_p: float, constants: ModelConstants, mode: str = "empirical",
                variant: str = "exact", fitted=None, m_r: int | None = None, t: int | None = None,
                snapshots_per_entry: int = 1) -> LearnerConfig:
    """(r, gamma, t, N) for the exact-state or shadow estimator.

    paper-constants: displayed closed forms, m_r = [2(r+r0+k0)]^D ell.
    empirical: r smallest with 2 C1^ e^{-r/2xi^} <= eps/K, gamma = min(1, eps/(K C2^)), and
    m_r the number of restricted coordinates (pass it in); K = 2 (exact) or 3 (shadow).
    """
    for name, v in (("eps", eps), ("delta", delta), ("delta'", delta_p)):
        _check_unit(name, v)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    c = constants
    K = VARIANTS[variant]
    if variant == "shadow":
        t_val = sample_count_t(c.k0, eps / 3, delta_p, c.n) if t is None else int(t)
    else:
        t_val = 1
    if mode == "paper-constants":
        r = paper_r(eps, c, variant)
        gamma = paper_gamma(eps, r, c, variant)
        mr = volume(r + c.r0, c.k0, c.D) * c.ell
        C1, xi, C2 = paper_C1(c), c.xi, paper_C2(r, c)
    else:
        if fitted is None:
            raise ValueError("empirical mode needs fitted constants")
        C1, xi, C2 = fitted.C1, fitted.xi, fitted.C2
        target = eps / K
        if C1 <= 0 or 2 * C1 <= target:
            r = 0
        else:
            r = max(0, math.ceil(2 * xi * math.log(2 * C1 / target) - 1e-12))
        gamma = min(1.0, eps / (K * C2)) if C2 > 0 else 1.0
        if m_r is None:
            raise ValueError("empirical mode needs m_r")
        mr = int(m_r)
    entries_t = max(1, -(-t_val // max(1, snapshots_per_entry))) if variant == "shadow" else 1
    N, log10 = coupon_N(gamma, mr, c.M, delta, entries_t)
    lit = literal_display_log10_N(gamma, mr, c.M, delta, entries_t)
    details = {"constants": c, "eps": eps, "delta": delta, "delta_p": delta_p, "share": 1.0 / K,
               "entries_per_cube": entries_t, "log10_N_literal_display": lit}
    spe = max(1, snapshots_per_entry) if variant == "shadow" else 1
    return LearnerConfig(r, gamma, t_val, N, mode, variant, mr, log10, C1, xi, C2, spe, details)


# scans and fitted constants ---------------------------------------------------------

def _state(family, x, beta, kind):
    if kind == "gibbs":
        return family.gibbs(x, beta)
    if kind == "ground":
        return family.ground(x)
    raise ValueError(f"unknown mode {kind!r}")


@dataclass
class ScanResult:
    r_values: np.ndarray
    values: np.ndarray
    fit: object

    @property
    def C1(self) -> float:
        return self.fit.prefactor

    @property
    def xi(self) -> float:
        return math.inf if self.fit.rate <= 0 else 1 / (2 * self.fit.rate)


def indistinguishability_scan(family, x, O: LocalObservable, r_values, beta: float = 1.0, mode: str = "gibbs",
                              center=None, normalize: bool = True) -> ScanResult:
    """|f_O(x) - f_O((x on S(r) coordinates, center elsewhere))| for each r.

    Values are divided by sum_i ||O_i|| when normalize is set, so the fitted
    prefactor plays the role of C_1.
    """
    n = family.n
    S = O.support
    f0 = O.value(_state(family, x, beta, mode).rho, n)
    scale = float(O.norms.sum()) if normalize else 1.0
    vals = []
    for r in r_values:
        y = family.restrict(x, S, int(r), center)
        vals.append(abs(f0 - O.value(_state(family, y, beta, mode).rho, n)) / scale)
    vals = np.array(vals)
    return ScanResult(np.asarray(r_values), vals, fit_decay(r_values, vals))


def scan_envelope(family, xs, O: LocalObservable, r_values, beta: float = 1.0, mode: str = "gibbs",
                  center=None) -> tuple:
    """Pointwise max of the scans over the points xs, plus the individual scans.

    A single scan need not be monotone in r; the decay bound is uniform in x,
    so the envelope over points is the curve it controls.
    """
    scans = [indistinguishability_scan(family, x, O, r_values, beta, mode, center) for x in xs]
    env = np.max([sc.values for sc in scans], axis=0)
    return ScanResult(np.asarray(r_values), env, fit_decay(r_values, env)), scans


@dataclass
class EmpiricalConstants:
    C1: float
    xi: float
    C2: float
    probes: int
    envelope: list
    r_values: list


def _gradient(family, x, L, beta, coords, kind, h=1e-5):
    if kind == "gibbs":
        return gibbs_gradient(family, x, L, beta, coords=coords)
    out = []
    for k in coords:
        d = np.zeros(family.m)
        d[k] = h
        fp = family.ground(x + d).expect(L)
        fm = family.ground(x - d).expect(L)
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def fit_empirical_constants(family, beta: float, O: LocalObservable, probes: int = 8, seed: int = 0,
                            kind: str = "gibbs", center=None, r_values=None) -> EmpiricalConstants:
    """C1^, xi^ from the max over probe points of the scan curves; C2^ from exact gradients.

    C2^ = max over probes and terms of ||grad_{S_i(r)} f_{O_i}||_1 / ||O_i||, the
    Lipschitz constant (l_inf -> absolute) on the restricted coordinates. The
    family center and its restriction images are always among the probes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    pts = [family.center.copy()] + [family.sample_box(rng) for _ in range(probes)]
    if r_values is None:
        r_values = list(range(0, _covering_radius(family, O.support) + 1))
    sup, _ = scan_envelope(family, pts, O, r_values, beta, kind, center)
    env, fit = sup.values, sup.fit
    xi = math.inf if fit.rate <= 0 else 1 / (2 * fit.rate)
    if fit.prefactor == 0.0:
        xi = 1.0
    C2 = 0.0
    n = family.n
    for sites, mat in O.terms:
        L = operators.embed_operator(mat, sites, n)
        nrm = operators.op_norm(mat)
        for r in r_values:
            coords = family.restricted_coords(sites, int(r))
            if coords.size == 0:
                continue
            for x in pts:
                g = _gradient(family, x, L, beta, coords, kind)
                C2 = max(C2, float(np.abs(g).sum()) / nrm)
            break
    return EmpiricalConstants(fit.prefactor, xi, C2, len(pts), env.tolist(), list(r_values))


def _covering_radius(family, S) -> int:
    r = 0
    while len(family.terms_touching(family.lattice.enlarge(S, r))) < len(family.terms):
        r += 1
    return r


def empirical_config(family, O: LocalObservable, beta: float, eps: float, delta: float, delta_p: float,
                     variant: str = "exact", probes: int = 8, seed: int = 0, kind: str = "gibbs", center=None,
                     t: int | None = None, snapshots_per_entry: int = 1) -> LearnerConfig:
    """Fit constants, compute m_r for the chosen r, then the empirical hyperparameters."""
    fitted = fit_empirical_constants(family, beta, O, probes, seed, kind, center)
    consts = model_constants(family, O, beta)
    # r depends only on C1, xi; fix it first to count restricted coordinates
    pre = hyperparams(eps, delta, delta_p, consts, "empirical", variant, fitted, m_r=1, t=t,
                      snapshots_per_entry=snapshots_per_entry)
    mr = max(len(family.restricted_coords(sites, pre.r)) for sites, _ in O.terms)
    cfg = hyperparams(eps, delta, delta_p, consts, "empirical", variant, fitted, m_r=mr, t=t,
                      snapshots_per_entry=snapshots_per_entry)
    cfg.details["fitted"] = asdict(fitted)
    cfg.details["m_r_paper_volume"] = volume(cfg.r + consts.r0, consts.k0, consts.D) * consts.ell
    return cfg


def model_constants(family, O: LocalObservable, beta: float, **kw) -> ModelConstants:
    return ModelConstants(beta=beta, h=family.h, ell=family.ell, k0=max(1, O.k0), r0=family.r0,
                          D=family.lattice.dimension, n=family.n, M=O.M, **kw)


# estimation ---------------------------------------------------------------------

def _shadow_radius(sites, nrm, t, M, delta_p):
    """Hoeffding radius for the mean of t values bounded by 3^|S| ||O_i||."""
    return 3.0 ** len(sites) * nrm * math.sqrt(2 * math.log(2 * M / delta_p) / t)


def estimate(x, O: LocalObservable, training: TrainingSet, config: LearnerConfig, mode: str = "exact",
             check_size: bool = True, center=None) -> dict:
    """f^_O(x) with per-term values, achieved distances and certificates."""
    fam = training.family
    x = fam.check_params(x)
    if check_size and config.N is not None and len(training) < config.N:
        raise ValueError(f"training set has {len(training)} entries, configuration needs {config.N}")
    n = fam.n
    lemma = config.lemma_term()
    C2 = config.lipschitz_const()
    delta_p = config.details.get("delta_p", 0.05)
    per_term = []
    for i, (sites, mat) in enumerate(O.terms):
        nrm = operators.op_norm(mat)
        if mode == "exact":
            idx, d = nearest_sample(x, sites, config.r, training, 1)
            if d[0] > config.gamma * (1 + 1e-12):
                raise ValueError("coverage shortfall")
            val = O.term_value(i, training.state(idx[0]).rho, n)
            used = [int(idx[0])]
            dist = float(d[0])
            radius = 0.0
        elif mode == "shadow":
            per = max(1, training.snapshots_per_entry)
            need = -(-config.t // per)
            idx, d = nearest_sample(x, sites, config.r, training, need)
            if len(idx) < need or d[-1] > config.gamma * (1 + 1e-12):
                raise ValueError("coverage shortfall")
            est = robust_average([training.shadow(j) for j in idx], sites)
            val = float(np.real(np.sum(mat * est.matrix.T)))
            used = [int(j) for j in idx]
            dist = float(d[-1])
            radius = _shadow_radius(sites, nrm, est.t, O.M, delta_p)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        per_term.append({"support": list(sites), "value": val, "distance": dist, "indices": used,
                         "lemma_term": lemma * nrm, "lipschitz_term": C2 * dist * nrm, "shadow_radius": radius,
                         "certificate": lemma * nrm + C2 * dist * nrm + radius})
    return {"x": [float(v) for v in x], "per_term": per_term, "total": sum(p["value"] for p in per_term),
            "certificate": sum(p["certificate"] for p in per_term), "mode": mode, "config": config.as_dict()}


def gali_estimate(x, O: LocalObservable, training: TrainingSet, config: LearnerConfig, center=None,
                  mode: str = "exact", scan_probes: int = 4, seed: int = 0, check_size: bool = True) -> dict:
    """Estimator with the certificate built from the GALI scan around the shifted center x*.

    The prediction itself is the same nearest-sample read-out; the local
    indistinguishability term uses the scan with restrictions onto
    (x on S(r), x* elsewhere), evaluated at x, at the chosen samples and at
    probe points, as |S| f(r) + eta(S).
    """
    fam = training.family
    xstar = fam.center if center is None else np.asarray(center, dtype=float)
    rec = estimate(x, O, training, config, mode, check_size)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 13]))
    for i, ((sites, mat), term) in enumerate(zip(O.terms, rec["per_term"])):
        single = LocalObservable(((sites, mat),), O.k0)
        pts = [np.asarray(x, dtype=float)] + [training.xs[j] for j in term["indices"][:1]] \
            + [fam.sample_box(rng) for _ in range(scan_probes)]
        worst = 0.0
        for p in pts:
            sc = indistinguishability_scan(fam, p, single, [config.r], training.beta, training.kind, xstar)
            worst = max(worst, float(sc.values[0]))
        nrm = operators.op_norm(mat)
        term["lemma_term"] = 2 * worst * nrm
        term["certificate"] = term["lemma_term"] + term["lipschitz_term"] + term["shadow_radius"]
    rec["certificate"] = sum(p["certificate"] for p in rec["per_term"])
    rec["center"] = [float(v) for v in xstar]
    return rec


def coverage_check(training: TrainingSet, S, r: int, gamma: float, t: int = 1, max_cells: int = 10**7) -> dict:
    """Counts per gamma-cube of the restricted coordinates; all cubes visited at least t times?"""
    fam = training.family
    coords = fam.restricted_coords(S, r)
    per = math.ceil(2 / gamma - 1e-12)
    total = per ** len(coords)
    if total > max_cells:
        return {"cells": total, "visited": None, "min_count": None, "covered": None}
    offs = training.xs[:, coords] - fam.center[coords] + 1.0
    cell = np.minimum((offs / gamma).astype(np.int64), per - 1)
    key = cell @ (per ** np.arange(len(coords) - 1, -1, -1)) if len(coords) else np.zeros(len(training), int)
    counts = np.bincount(key, minlength=total)
    return {"cells": total, "visited": int(np.count_nonzero(counts)), "min_count": int(counts.min()),
            "covered": bool(counts.min() >= t)}
