"""Dense Hermitian operator algebra on qubit registers.

Everything is exact linear algebra on 2^n x 2^n matrices (n <= MAX_QUBITS).
Matrix functions go through the spectral decomposition only. Logs are natural.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_QUBITS = 12
HERM_TOL = 1e-12
TRACE_TOL = 1e-10
NEG_TOL = 1e-10
ZERO_EIG = 1e-14


def num_qubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def check_hermitian(H: np.ndarray, tol: float = HERM_TOL) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("operator must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > tol * scale:
        raise ValueError("operator is not Hermitian")
    return H


def eigh(H: np.ndarray):
    H = check_hermitian(H)
    Hs = 0.5 * (H + H.conj().T)
    return np.linalg.eigh(Hs)


def hermitian_function(H: np.ndarray, f) -> np.ndarray:
    """f(H) through the eigendecomposition."""
    w, V = eigh(H)
    return (V * f(w)) @ V.conj().T


def trace_norm(A: np.ndarray) -> float:
    A = np.asarray(A)
    if np.allclose(A, A.conj().T, atol=1e-13, rtol=0):
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))))
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def op_norm(A: np.ndarray) -> float:
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    if np.allclose(A, A.conj().T, atol=1e-13, rtol=0):
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))))
    return float(np.linalg.norm(A, 2))


class QuantumState:
    """Density matrix with a cached spectral decomposition.

    Validation clips eigenvalues in [-1e-10, 0) and rejects anything worse.
    """

    def __init__(self, rho: np.ndarray, validate: bool = True):
        rho = np.asarray(rho)
        self.n = num_qubits(rho.shape[0])
        if validate:
            check_hermitian(rho)
            tr = np.trace(rho).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ValueError(f"state trace {tr} differs from 1")
        self.rho = 0.5 * (rho + rho.conj().T)
        if validate:
            w, V = np.linalg.eigh(self.rho)
            if w[0] < -NEG_TOL:
                raise ValueError(f"state has negative eigenvalue {w[0]:.3e}")
            self.__dict__["_spectrum"] = (np.clip(w, 0.0, None), V)

    @cached_property
    def _spectrum(self):
        w, V = np.linalg.eigh(self.rho)
        return np.clip(w, 0.0, None), V

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._spectrum[0]

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def expect(self, O: np.ndarray) -> float:
        return float(np.real(np.sum(self.rho * np.asarray(O).T)))

    def reduce(self, keep) -> "QuantumState":
        return QuantumState(partial_trace(self.rho, keep, self.n), validate=False)

    def __repr__(self):
        return f"QuantumState(n={self.n})"


def _as_matrix(x):
    return x.rho if isinstance(x, QuantumState) else np.asarray(x)


def gibbs_state(H: np.ndarray, beta: float) -> QuantumState:
    """exp(-beta H)/Z with a ground-energy shift; beta = 0 gives I/2^n."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    w, V = eigh(H)
    p = np.exp(-beta * (w - w[0]))
    p /= p.sum()
    st = QuantumState((V * p) @ V.conj().T, validate=False)
    st.__dict__["_spectrum"] = (p, V)
    return st


def ground_state(H: np.ndarray, gap_tol: float = 1e-8) -> QuantumState:
    w, V = eigh(H)
    if len(w) > 1 and w[1] - w[0] < gap_tol:
        raise ValueError("degenerate ground space")
    v = V[:, 0]
    return QuantumState(np.outer(v, v.conj()), validate=False)


def log_partition(H: np.ndarray, beta: float) -> float:
    w = np.linalg.eigvalsh(0.5 * (check_hermitian(H) + np.asarray(H).conj().T))
    a = -beta * w
    m = a.max()
    return float(m + np.log(np.sum(np.exp(a - m))))


def _sorted_sites(sites, n):
    s = sorted(set(int(i) for i in sites))
    if any(i < 0 or i >= n for i in s):
        raise ValueError("site outside register")
    return s


def partial_trace(rho, keep, n: int | None = None) -> np.ndarray:
    """Reduced matrix on `keep` (ascending site order)."""
    rho = _as_matrix(rho)
    n = num_qubits(rho.shape[0]) if n is None else n
    keep = _sorted_sites(keep, n)
    trace_out = [i for i in range(n) if i not in keep]
    k = len(keep)
    t = rho.reshape((2,) * (2 * n))
    # move kept axes first then traced axes, on both ket and bra sides
    perm = keep + trace_out + [n + i for i in keep] + [n + i for i in trace_out]
    t = t.transpose(perm).reshape(2**k, 2 ** (n - k), 2**k, 2 ** (n - k))
    return np.einsum("ajbj->ab", t)


def embed_operator(op: np.ndarray, sites, n: int) -> np.ndarray:
    """op (acting on `sites` in the given order) tensored with identity elsewhere."""
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites) or any(s < 0 or s >= n for s in sites):
        raise ValueError("invalid site list")
    k = len(sites)
    if op.shape != (2**k, 2**k):
        raise ValueError("operator size does not match site count")
    rest = [i for i in range(n) if i not in sites]
    full = np.kron(op, np.eye(2 ** (n - k)))
    order = sites + rest
    t = full.reshape((2,) * (2 * n))
    inv = np.argsort(order)
    perm = list(inv) + [n + i for i in inv]
    return t.transpose(perm).reshape(2**n, 2**n)


def normalized_trace(X: np.ndarray, traced, n: int | None = None, embed: bool = False) -> np.ndarray:
    """tau_A(X) = 2^{-|A|} tr_A X; with embed=True returns tau_A(X) (x) I_A."""
    X = np.asarray(X)
    n = num_qubits(X.shape[0]) if n is None else n
    traced = _sorted_sites(traced, n)
    keep = [i for i in range(n) if i not in traced]
    red = partial_trace(X, keep, n) / 2 ** len(traced)
    if not embed:
        return red
    if not keep:
        return red[0, 0] * np.eye(2**n)
    return embed_operator(red, keep, n)


def covariance(state, A: np.ndarray, B: np.ndarray) -> float:
    """1/2 tr[sigma {A - <A>, B - <B>}]."""
    rho = _as_matrix(state)
    ea = np.real(np.sum(rho * A.T))
    eb = np.real(np.sum(rho * B.T))
    sym = np.real(np.sum(rho * (A @ B).T) + np.sum(rho * (B @ A).T)) / 2
    return float(sym - ea * eb)


def von_neumann_entropy(rho) -> float:
    rho = _as_matrix(rho)
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if w.size and w[0] < -NEG_TOL:
        raise ValueError("negative eigenvalue in entropy")
    w = w[w > ZERO_EIG]
    return float(-np.sum(w * np.log(w)))


def _region_entropy(state, region, n):
    if not region:
        return 0.0
    return von_neumann_entropy(partial_trace(state, region, n))


@dataclass(frozen=True)
class EntropyRecord:
    S_A: float
    S_A_given_B: float
    I_AB: float
    I_AB_given_C: float | None


def entropies(state, A, B, C=None) -> EntropyRecord:
    """S(A), S(A|B), I(A:B) and I(A:B|C) for disjoint regions."""
    rho = _as_matrix(state)
    n = num_qubits(rho.shape[0])
    A, B = set(A), set(B)
    C = set(C) if C is not None else None
    if A & B or (C is not None and (C & A or C & B)):
        raise ValueError("regions overlap")
    sa = _region_entropy(rho, A, n)
    sb = _region_entropy(rho, B, n)
    sab = _region_entropy(rho, A | B, n)
    cmi = None
    if C is not None:
        cmi = (_region_entropy(rho, A | C, n) + _region_entropy(rho, B | C, n)
               - _region_entropy(rho, A | B | C, n) - _region_entropy(rho, C, n))
    return EntropyRecord(sa, sab - sb, sa + sb - sab, cmi)


def conditional_mutual_information(state, A, B, C) -> float:
    """I(A:C|B)."""
    return entropies(state, A, C, B).I_AB_given_C


def relative_entropy(rho, sigma, tol: float = 1e-12) -> float:
    r = _as_matrix(rho)
    s = _as_matrix(sigma)
    wr, Vr = np.linalg.eigh(0.5 * (r + r.conj().T))
    ws, Vs = np.linalg.eigh(0.5 * (s + s.conj().T))
    # weight of rho on the kernel of sigma
    ker = Vs[:, ws <= tol]
    if ker.shape[1] and np.real(np.trace(ker.conj().T @ r @ ker)) > tol:
        raise ValueError("relative entropy infinite")
    pos = wr > ZERO_EIG
    t1 = float(np.sum(wr[pos] * np.log(wr[pos])))
    ov = np.abs(Vr[:, pos].conj().T @ Vs) ** 2  # |<r_i|s_j>|^2
    keep = ws > tol
    t2 = float(np.sum(wr[pos][:, None] * ov[:, keep] * np.log(ws[keep])[None, :]))
    return max(t1 - t2, 0.0)


@dataclass(frozen=True)
class InequalityRecord:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-12


def gibbs_perturbation_check(H1: np.ndarray, H2: np.ndarray) -> InequalityRecord:
    """||e^{-H1}/Z1 - e^{-H2}/Z2||_1 against 2(e^{||H1-H2||} - 1)."""
    if np.shape(H1) != np.shape(H2):
        raise ValueError("dimension mismatch")
    s1 = gibbs_state(H1, 1.0).rho
    s2 = gibbs_state(H2, 1.0).rho
    lhs = trace_norm(s1 - s2)
    rhs = 2.0 * np.expm1(op_norm(np.asarray(H1) - np.asarray(H2)))
    return InequalityRecord(lhs, float(rhs))


def random_state(n: int, rng, rank: int | None = None) -> QuantumState:
    """Random density matrix from a Ginibre matrix."""
    d = 2**n
    k = d if rank is None else rank
    G = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    rho = G @ G.conj().T
    return QuantumState(rho / np.trace(rho).real)


def random_hermitian(n: int, rng, scale: float = 1.0) -> np.ndarray:
    d = 2**n
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (G + G.conj().T) / 2


def dump_state(path, state, kind: str = "density") -> None:
    """Debug dump: one JSON header line, then row-major little-endian complex128."""
    rho = _as_matrix(state)
    header = {"n": num_qubits(rho.shape[0]), "kind": kind}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(rho, dtype="<c16").tobytes(order="C"))


def load_state(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype="<c16")
    d = 2 ** header["n"]
    return header, data.reshape(d, d).copy()
