"""Randomized single-qubit Pauli-basis shadows for non-identical copies.

Basis codes: 0 = X, 1 = Y, 2 = Z. Outcome bit b selects the eigenstate with
eigenvalue (-1)^b. The inverted snapshot on qubit i is 3|s_i><s_i| - I.

Seeding is counter based: snapshots are generated in blocks of BLOCK, block k
of set j using numpy's SeedSequence([master_seed, j, k]). Any snapshot can be
regenerated from (master_seed, j, i) alone and the result does not depend on
the order in which sets or blocks are produced.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import operators

BLOCK = 1024
BASIS_LETTERS = "XYZ"
_S = 1 / math.sqrt(2)
# rows are <e_b| for outcome b in each basis
_BRAS = np.array([
    [[_S, _S], [_S, -_S]],
    [[_S, -1j * _S], [_S, 1j * _S]],
    [[1, 0], [0, 1]],
], dtype=complex)
_KETS = _BRAS.conj()
# LOCAL[basis, bit] = 3|s><s| - I
LOCAL = np.array([[3 * np.outer(_KETS[c, b], _KETS[c, b].conj()) - np.eye(2) for b in range(2)]
                  for c in range(3)])


@dataclass(frozen=True)
class Snapshot:
    bases: np.ndarray
    bits: np.ndarray
    seed: tuple


@dataclass
class ShadowSet:
    n: int
    bases: np.ndarray
    bits: np.ndarray
    master_seed: int
    set_index: int = 0
    tag: tuple | None = None

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=np.uint8).reshape(-1, self.n)
        self.bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1, self.n)
        if self.bases.shape != self.bits.shape:
            raise ValueError("basis and outcome records differ in size")

    @property
    def count(self) -> int:
        return self.bases.shape[0]

    def snapshot(self, i: int) -> Snapshot:
        return Snapshot(self.bases[i].copy(), self.bits[i].copy(), (self.master_seed, self.set_index, i))

    def __eq__(self, other):
        return (isinstance(other, ShadowSet) and self.n == other.n and self.master_seed == other.master_seed
                and self.set_index == other.set_index and self.tag == other.tag
                and np.array_equal(self.bases, other.bases) and np.array_equal(self.bits, other.bits))


def _rng(seed: int, set_index: int, block: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(set_index), int(block)]))


@lru_cache(maxsize=4096)
def _rotation(bases: tuple) -> np.ndarray:
    W = np.ones((1, 1), dtype=complex)
    for c in bases:
        W = np.kron(W, _BRAS[c])
    return W


def born_probabilities(rho: np.ndarray, bases, n: int) -> np.ndarray:
    """Outcome distribution of measuring qubit i in basis bases[i]."""
    if n <= 7:
        W = _rotation(tuple(int(c) for c in bases))
        p = np.real(np.sum((W @ np.asarray(rho)) * W.conj(), axis=1))
        p = np.clip(p, 0.0, None)
        return p / p.sum()
    t = np.asarray(rho).reshape((2,) * (2 * n))
    for i, c in enumerate(bases):
        if c == 2:
            continue
        W = _BRAS[c]
        t = np.moveaxis(np.tensordot(W, t, axes=([1], [i])), 0, i)
        t = np.moveaxis(np.tensordot(W.conj(), t, axes=([1], [n + i])), 0, n + i)
    d = 2**n
    p = np.real(np.diagonal(t.reshape(d, d))).copy()
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _index_to_bits(idx: np.ndarray, n: int) -> np.ndarray:
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(np.uint8)


def _sample_block(rho, n, rng, size, cache=None):
    # always draw a full block so a snapshot does not depend on the set size
    bases = rng.integers(0, 3, size=(BLOCK, n), dtype=np.uint8)[:size]
    u = rng.random(BLOCK)[:size]
    bits = np.empty((size, n), dtype=np.uint8)
    keys = bases.astype(np.int64) @ (3 ** np.arange(n - 1, -1, -1))
    for key in np.unique(keys):
        sel = np.nonzero(keys == key)[0]
        cdf = None if cache is None else cache.get(key)
        if cdf is None:
            cdf = np.cumsum(born_probabilities(rho, bases[sel[0]], n))
            if cache is not None:
                cache[key] = cdf
        idx = np.minimum(np.searchsorted(cdf, u[sel] * cdf[-1], side="right"), len(cdf) - 1)
        bits[sel] = _index_to_bits(idx, n)
    return bases, bits


def collect_snapshots(state, count: int, seed: int, set_index: int = 0, tag=None) -> ShadowSet:
    """Simulate `count` randomized-basis measurements of the state."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rho = state.rho if isinstance(state, operators.QuantumState) else np.asarray(state)
    n = operators.num_qubits(rho.shape[0])
    bases, bits = [], []
    cache = {}
    for blk in range(-(-count // BLOCK)):
        size = min(BLOCK, count - blk * BLOCK)
        b, o = _sample_block(rho, n, _rng(seed, set_index, blk), size, cache)
        bases.append(b)
        bits.append(o)
    tag = None if tag is None else tuple(float(v) for v in tag)
    return ShadowSet(n, np.concatenate(bases), np.concatenate(bits), int(seed), int(set_index), tag)


def snapshot_operator(s: Snapshot, region) -> np.ndarray:
    """Tensor product over sorted region of 3|b_i><b_i| - I."""
    out = np.ones((1, 1), dtype=complex)
    for i in sorted(region):
        out = np.kron(out, LOCAL[s.bases[i], s.bits[i]])
    return out


def _region_counts(sets, region):
    region = sorted(region)
    k = len(region)
    counts = np.zeros(6**k, dtype=np.int64)
    total = 0
    for st in sets:
        if k == 0:
            total += st.count
            continue
        codes = (st.bases[:, region].astype(np.int64) * 2 + st.bits[:, region]) @ (6 ** np.arange(k - 1, -1, -1))
        counts += np.bincount(codes, minlength=6**k)
        total += st.count
    return counts, total


def _combo_matrix(code: int, k: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    digits = [(code // 6**p) % 6 for p in range(k - 1, -1, -1)]
    for d in digits:
        out = np.kron(out, LOCAL[d // 2, d % 2])
    return out


def mean_snapshot_operator(sets, region) -> tuple:
    """Pooled mean of snapshot operators on `region` over all snapshots in `sets`."""
    sets = [sets] if isinstance(sets, ShadowSet) else list(sets)
    region = sorted(region)
    k = len(region)
    counts, total = _region_counts(sets, region)
    if total == 0:
        raise ValueError("no snapshots selected")
    if k == 0:
        return np.ones((1, 1), dtype=complex), total
    acc = np.zeros((2**k, 2**k), dtype=complex)
    for code in np.nonzero(counts)[0]:
        acc += counts[code] * _combo_matrix(int(code), k)
    return acc / total, total


@dataclass(frozen=True)
class RobustEstimate:
    region: tuple
    matrix: np.ndarray
    t: int
    radius: float | None


def sample_count_t(k0: int, eps: float, delta: float, n: int) -> int:
    """ceil((8 * 12^k0 / (3 eps^2)) * ln(n^k0 2^(k0+1) / delta))."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    val = 8 * 12**k0 / (3 * eps**2) * (k0 * math.log(n) + (k0 + 1) * math.log(2) - math.log(delta))
    return int(math.ceil(val - 1e-9 * val))


def robust_average(sets, region, selection=None, eps: float | None = None, eta: float = 0.0) -> RobustEstimate:
    """sigma~_A = (1/t) sum over all snapshots of the selected sets."""
    sets = list(sets)
    chosen = sets if selection is None else [sets[i] for i in selection]
    if not chosen:
        raise ValueError("empty selection")
    mat, t = mean_snapshot_operator(chosen, region)
    return RobustEstimate(tuple(sorted(region)), mat, t, None if eps is None else eps + eta)


def pauli_estimates(sets, ops, n: int):
    """Shadow means of Pauli strings, plus per-string single-snapshot bounds 3^weight."""
    sets = [sets] if isinstance(sets, ShadowSet) else list(sets)
    bases = np.concatenate([s.bases for s in sets])
    bits = np.concatenate([s.bits for s in sets])
    means, bounds = [], []
    for op in ops:
        val = np.ones(bases.shape[0])
        w = 0
        for site, c in zip(op.sites, op.ops):
            if c == "I":
                continue
            w += 1
            code = BASIS_LETTERS.index(c)
            val *= np.where(bases[:, site] == code, 3.0 * (1 - 2 * bits[:, site].astype(float)), 0.0)
        means.append(float(val.mean()))
        bounds.append(3.0**w)
    return np.array(means), np.array(bounds), bases.shape[0]


# matrix Bernstein --------------------------------------------------------

def bernstein_bound(s: float, nu: float, L: float, d1: int, d2: int) -> float:
    """(d1 + d2) exp(-(s^2 / 2) / (nu + L s / 3))."""
    if s == 0:
        return float(d1 + d2)
    return float((d1 + d2) * math.exp(-(s * s / 2) / (nu + L * s / 3)))


@dataclass(frozen=True)
class BernsteinTrial:
    empirical: float
    bound: float
    nu: float
    L: float


def bernstein_trial(draw, t: int, s: float, trials: int, seed: int, L: float | None = None,
                    nu: float | None = None) -> BernsteinTrial:
    """Empirical P(||sum_j S_j|| >= s) for centered summands S_j = draw(rng, j).

    When L or nu are not supplied they are measured from the same draws
    (max summand norm, and max(||sum E S S*||, ||sum E S* S||) by Monte Carlo).
    """
    hits = 0
    Lm = 0.0
    second = None
    second_t = None
    for trial in range(trials):
        rng = _rng(seed, trial, 0)
        Z = None
        ss = None
        sts = None
        for j in range(t):
            S = np.atleast_2d(np.asarray(draw(rng, j)))
            Lm = max(Lm, operators.op_norm(S) if S.shape[0] == S.shape[1] else float(np.linalg.norm(S, 2)))
            Z = S.copy() if Z is None else Z + S
            a, b = S @ S.conj().T, S.conj().T @ S
            ss = a if ss is None else ss + a
            sts = b if sts is None else sts + b
        second = ss if second is None else second + ss
        second_t = sts if second_t is None else second_t + sts
        nrm = float(np.linalg.norm(Z, 2))
        hits += nrm >= s
    nu_m = max(float(np.linalg.norm(second / trials, 2)), float(np.linalg.norm(second_t / trials, 2)))
    Lv = Lm if L is None else L
    nuv = nu_m if nu is None else nu
    d1, d2 = Z.shape
    return BernsteinTrial(hits / trials, bernstein_bound(s, nuv, Lv, d1, d2), nuv, Lv)


# file format -------------------------------------------------------------

MAGIC = b"SHDW"
VERSION = 1


def save_shadow_set(path, s: ShadowSet) -> None:
    """Layout: b"SHDW", u8 version, u32 header length, JSON header, basis block, outcome block.

    Basis codes are 2 bits each, four per byte, most significant first, in
    row-major (snapshot, qubit) order; outcomes are 1 bit each, eight per byte.
    Both blocks are zero padded to whole bytes.
    """
    header = json.dumps({"n": s.n, "count": s.count, "master_seed": s.master_seed,
                         "set_index": s.set_index, "tag": list(s.tag) if s.tag is not None else None},
                        sort_keys=True).encode()
    codes = s.bases.reshape(-1)
    two = np.stack([(codes >> 1) & 1, codes & 1], axis=1).reshape(-1).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BI", VERSION, len(header)) + header)
        fh.write(np.packbits(two).tobytes())
        fh.write(np.packbits(s.bits.reshape(-1)).tobytes())


def load_shadow_set(path) -> ShadowSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not a shadow-set file")
    version, hlen = struct.unpack("<BI", data[4:9])
    if version != VERSION:
        raise ValueError(f"unsupported shadow-set version {version}")
    h = json.loads(data[9:9 + hlen])
    total = h["n"] * h["count"]
    off = 9 + hlen
    nb = -(-2 * total // 8)
    two = np.unpackbits(np.frombuffer(data[off:off + nb], dtype=np.uint8))[:2 * total].reshape(-1, 2)
    codes = (two[:, 0] << 1) | two[:, 1]
    bits = np.unpackbits(np.frombuffer(data[off + nb:], dtype=np.uint8))[:total]
    tag = tuple(h["tag"]) if h["tag"] is not None else None
    return ShadowSet(h["n"], codes, bits, h["master_seed"], h["set_index"], tag)


def regenerate_snapshot(state, seed: int, set_index: int, i: int) -> Snapshot:
    """Rebuild snapshot i of set `set_index` from the seed alone."""
    rho = state.rho if isinstance(state, operators.QuantumState) else np.asarray(state)
    n = operators.num_qubits(rho.shape[0])
    blk, off = divmod(int(i), BLOCK)
    b, o = _sample_block(rho, n, _rng(seed, set_index, blk), off + 1)
    return Snapshot(b[off], o[off], (int(seed), int(set_index), int(i)))
