import math

import numpy as np
import pytest

from gibbsphase import lattice as lt
from gibbsphase import operators as ops
from gibbsphase import wasserstein as w1
from gibbsphase.classical import hamming_w1, product_distribution
from gibbsphase.paulis import PauliOp, Z, pauli_matrix


def c_beta_oracle(beta, grid=2001, h=1e-6):
    # min over y in [-1, 1] of |d/dy tr[Z e^{-beta y Z}/Z]| by finite differences of the closed form
    ys = np.linspace(-1, 1, grid)
    f = lambda y: -np.tanh(beta * y)
    return float(np.min(np.abs((f(ys + h) - f(ys - h)) / (2 * h))))


def test_lip_seminorm_examples():
    assert w1.lip_seminorm(np.eye(4)).upper == pytest.approx(0, abs=1e-15)
    one = w1.lip_seminorm(Z)
    assert one.lower == one.upper == pytest.approx(2.0)
    n = 4
    S = sum(pauli_matrix(PauliOp((i,), "Z"), n) for i in range(n))
    rec = w1.lip_seminorm(S)
    assert rec.upper == pytest.approx(2.0) and rec.lower == pytest.approx(1.0)


def test_w1_equal_states(rng):
    s = ops.random_state(2, rng)
    b = w1.w1_bounds(s, s)
    assert b.lower == pytest.approx(0, abs=1e-14) and b.upper == pytest.approx(0, abs=1e-14)


def test_w1_diagonal_single_qubit():
    for p, q in [(0.9, 0.2), (0.3, 0.35)]:
        b = w1.w1_bounds(np.diag([p, 1 - p]), np.diag([q, 1 - q]))
        assert b.lower >= abs(p - q) - 1e-14
        assert b.lower <= b.upper + 1e-14


def test_w1_product_gibbs_lower_bound(rng):
    beta = 1.0
    fam = lt.field_model(lt.Lattice.chain(4))
    c = c_beta_oracle(beta)
    assert c == pytest.approx(beta / math.cosh(beta) ** 2, rel=1e-8)
    for _ in range(10):
        x, y = fam.sample_box(rng), fam.sample_box(rng)
        b = w1.w1_bounds(fam.gibbs(x, beta), fam.gibbs(y, beta), factorization="sites")
        assert b.lower >= c / 2 * np.abs(x - y).sum() - 1e-8
        assert b.upper_route in ("product", "telescoping")


def test_w1_upper_invariants(rng):
    for _ in range(10):
        a, b, c = (ops.random_state(3, rng) for _ in range(3))
        bd = w1.w1_bounds(a, b)
        assert 0 <= bd.lower <= bd.upper + 1e-12
        assert bd.upper <= 3 * ops.trace_norm(a.rho - b.rho) + 1e-12
        tr = lambda u, v: w1.w1_upper_bound(u, v, telescoping=False)[0]
        assert tr(a, c) <= tr(a, b) + tr(b, c) + 1e-12


def test_w1_empty_witness_warns(rng):
    a, b = ops.random_state(1, rng), ops.random_state(1, rng)
    with pytest.warns(UserWarning):
        assert w1.w1_bounds(a, b, witnesses=[]).lower == 0.0


def test_witness_monotone_under_partial_trace(rng):
    a, b = ops.random_state(3, rng), ops.random_state(3, rng)
    L = ops.random_hermitian(1, rng)
    full = w1.w1_bounds(a, b, witnesses=[("L", ops.embed_operator(L, [1], 3))])
    red = w1.w1_bounds(a.reduce([1]), b.reduce([1]), witnesses=[("L", L)])
    assert full.lower == pytest.approx(red.lower, abs=1e-12)


def test_tensor_additivity(rng):
    a, b = ops.random_state(1, rng), ops.random_state(1, rng)
    r1 = w1.w1_tensor_additivity_check(a, b, 1)
    assert r1.k_copy_lb == pytest.approx(r1.per_copy_lb, abs=1e-12)
    r2 = w1.w1_tensor_additivity_check(a, b, 2)
    assert r2.k_copy_lb == pytest.approx(2 * r2.per_copy_lb, abs=1e-10)
    r0 = w1.w1_tensor_additivity_check(a, a, 2)
    assert r0.per_copy_lb == pytest.approx(0, abs=1e-14) and r0.k_copy_lb == pytest.approx(0, abs=1e-14)
    with pytest.raises(ValueError):
        w1.w1_tensor_additivity_check(ops.random_state(4, rng), ops.random_state(4, rng), 4)


def test_entropy_continuity_examples(rng):
    s = ops.random_state(2, rng)
    rec = w1.entropy_continuity_check(s, s)
    assert rec.lhs == pytest.approx(0, abs=1e-12) and rec.rhs == pytest.approx(0, abs=1e-12)
    rec = w1.entropy_continuity_check(np.eye(2) / 2, np.diag([1.0, 0.0]), route="trace")
    g1 = 2 * math.log(2)
    assert rec.lhs == pytest.approx(math.log(2))
    assert rec.rhs == pytest.approx(g1 + math.log(4))
    for _ in range(100):
        a, b = ops.random_state(3, rng), ops.random_state(3, rng)
        assert w1.entropy_continuity_check(a, b).holds


def test_sandwich_contains_classical_oracle(rng):
    n = 3
    for _ in range(10):
        pm, qm = rng.uniform(size=n), rng.uniform(size=n)
        p, q = product_distribution(pm), product_distribution(qm)
        ref = hamming_w1(p, q).value
        b = w1.w1_bounds(np.diag(p), np.diag(q), factorization="sites")
        assert b.lower <= ref + 1e-9 <= b.upper + 2e-9


def test_telescoping_requires_traceless():
    with pytest.raises(ValueError):
        w1.telescoping_upper(np.eye(2), 1)
