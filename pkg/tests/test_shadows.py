import math

import numpy as np
import pytest

from gibbsphase import lattice as lt
from gibbsphase import operators as ops
from gibbsphase import shadows as sh
from gibbsphase.paulis import PauliOp, pauli_expectation

PLUS = np.full((2, 2), 0.5, dtype=complex)


def test_z_basis_on_zero_state():
    s = sh.collect_snapshots(ops.QuantumState(np.diag([1.0, 0.0])), 3000, seed=1)
    z = s.bases[:, 0] == 2
    assert z.any() and not s.bits[z, 0].any()


def test_maximally_mixed_unbiased():
    N = 10_000
    s = sh.collect_snapshots(ops.QuantumState(np.eye(2) / 2), N, seed=2)
    freq = s.bits.mean()
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / N)


def test_determinism(rng):
    st = ops.random_state(3, rng)
    a = sh.collect_snapshots(st, 2500, seed=7, set_index=3)
    b = sh.collect_snapshots(st, 2500, seed=7, set_index=3)
    c = sh.collect_snapshots(st, 2500, seed=8, set_index=3)
    assert a == b and not a == c
    assert np.array_equal(sh.mean_snapshot_operator([a], [0, 2])[0], sh.mean_snapshot_operator([b], [0, 2])[0])


def test_prefix_independent_of_count(rng):
    st = ops.random_state(2, rng)
    small = sh.collect_snapshots(st, 10, seed=4)
    big = sh.collect_snapshots(st, 3000, seed=4)
    assert np.array_equal(small.bases, big.bases[:10]) and np.array_equal(small.bits, big.bits[:10])


def test_regenerate_matches_set(rng):
    st = ops.random_state(2, rng)
    s = sh.collect_snapshots(st, sh.BLOCK + 40, seed=9, set_index=2)
    for i in (0, 17, sh.BLOCK - 1, sh.BLOCK + 39):
        snap = sh.regenerate_snapshot(st, 9, 2, i)
        ref = s.snapshot(i)
        assert np.array_equal(snap.bases, ref.bases) and np.array_equal(snap.bits, ref.bits)


def test_snapshot_operator_examples():
    z0 = sh.Snapshot(np.array([2]), np.array([0]), None)
    assert np.allclose(sh.snapshot_operator(z0, [0]), np.diag([2, -1]))
    assert np.allclose(sh.snapshot_operator(z0, []), np.ones((1, 1)))
    x1 = sh.Snapshot(np.array([0]), np.array([1]), None)
    minus = np.array([[0.5, -0.5], [-0.5, 0.5]])
    assert np.allclose(sh.snapshot_operator(x1, [0]), 3 * minus - np.eye(2))


def test_born_probabilities_normalized(rng):
    st = ops.random_state(3, rng)
    p = sh.born_probabilities(st.rho, (0, 1, 2), 3)
    assert p.min() >= -1e-15 and p.sum() == pytest.approx(1, abs=1e-12)
    # Z basis on all qubits gives the diagonal
    assert np.allclose(sh.born_probabilities(st.rho, (2, 2, 2), 3), np.real(np.diag(st.rho)))


def test_plus_state_mean():
    s = sh.collect_snapshots(ops.QuantumState(PLUS), 100_000, seed=3)
    est, N = sh.mean_snapshot_operator([s], [0])
    assert N == 100_000
    assert np.max(np.abs(est - PLUS)) < 0.02


def test_unbiased_marginal(rng):
    st = ops.random_state(3, rng)
    s = sh.collect_snapshots(st, 100_000, seed=5)
    est, _ = sh.mean_snapshot_operator([s], [0, 2])
    assert np.max(np.abs(est - ops.partial_trace(st.rho, [0, 2], 3))) < 0.02
    assert np.trace(est).real == pytest.approx(1, abs=1e-8)


def test_pauli_estimates_match_operator_means(rng):
    st = ops.random_state(2, rng)
    s = sh.collect_snapshots(st, 5000, seed=6)
    op = PauliOp((0, 1), "XZ")
    means, bounds, N = sh.pauli_estimates([s], [op], 2)
    mat, _ = sh.mean_snapshot_operator([s], [0, 1])
    from gibbsphase.paulis import X, Z
    assert means[0] == pytest.approx(np.real(np.trace(mat @ np.kron(X, Z))), abs=1e-12)
    assert bounds[0] == 9 and N == 5000


def test_sample_count_t_formula():
    assert sh.sample_count_t(1, 0.2, 0.05, 8) == 5170
    assert math.ceil(96 / 0.12 * math.log(640)) == 5170
    assert sh.sample_count_t(1, 0.4, 0.05, 8) < sh.sample_count_t(1, 0.2, 0.05, 8)
    for k0 in (1, 2):
        inc = 8 * 12**k0 / (3 * 0.2**2) * k0 * math.log(2)
        diff = sh.sample_count_t(k0, 0.2, 0.05, 16) - sh.sample_count_t(k0, 0.2, 0.05, 8)
        assert abs(diff - inc) <= 1
    with pytest.raises(ValueError):
        sh.sample_count_t(1, 1.5, 0.1, 4)


def test_robust_average_contracts(rng):
    st = ops.random_state(2, rng)
    one = sh.collect_snapshots(st, 1, seed=1)
    est = sh.robust_average([one], [1])
    assert np.allclose(est.matrix, sh.snapshot_operator(one.snapshot(0), [1]))
    with pytest.raises(ValueError, match="empty selection"):
        sh.robust_average([one], [0], selection=[])
    sets = [sh.collect_snapshots(st, 20_000, seed=1, set_index=j) for j in range(5)]
    est = sh.robust_average(sets, [0], selection=[0, 2, 4], eps=0.1, eta=0.05)
    assert est.t == 60_000 and est.radius == pytest.approx(0.15)
    assert ops.trace_norm(est.matrix - ops.partial_trace(st.rho, [0], 2)) < 0.05


def test_shadow_file_roundtrip(tmp_path, rng):
    st = ops.random_state(3, rng)
    s = sh.collect_snapshots(st, 1001, seed=11, set_index=4, tag=(0.25, -0.5))
    p = tmp_path / "set.shdw"
    sh.save_shadow_set(p, s)
    back = sh.load_shadow_set(p)
    assert back == s and back.tag == (0.25, -0.5) and back.set_index == 4
    raw = p.read_bytes()
    assert raw[:4] == b"SHDW" and raw[4] == 1
    hlen = int.from_bytes(raw[5:9], "little")
    assert len(raw) == 9 + hlen + math.ceil(2 * 3 * 1001 / 8) + math.ceil(3 * 1001 / 8)
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        sh.load_shadow_set(bad)


def test_bernstein_examples():
    assert sh.bernstein_bound(0.0, 1.0, 1.0, 1, 1) >= 1
    t = 1000
    coin = lambda rng, j: 2.0 * rng.integers(2) - 1.0
    res = sh.bernstein_trial(coin, t, 3 * math.sqrt(t), trials=200, seed=1, L=1.0, nu=float(t))
    assert res.empirical <= res.bound


def test_bernstein_shadow_summands(rng):
    st = ops.random_state(2, rng)
    pool = sh.collect_snapshots(st, 20_000, seed=3)
    target = ops.partial_trace(st.rho, [0], 2)
    t = 200
    mats = np.array([sh.snapshot_operator(pool.snapshot(i), [0]) for i in range(pool.count)])

    def draw(r, j):
        return (mats[r.integers(pool.count)] - target) / t

    res = sh.bernstein_trial(draw, t, 0.3, trials=100, seed=5)
    assert res.L <= 3.0 / t + 1e-12
    assert res.empirical <= res.bound


def test_robust_failure_rate_small():
    fam = lt.tfim(lt.Lattice.chain(3))
    st = fam.gibbs(fam.sample_box(np.random.default_rng(0)), 1.0)
    t = sh.sample_count_t(1, 0.2, 0.1, 3)
    fails = 0
    for trial in range(30):
        s = sh.collect_snapshots(st, t, seed=21, set_index=trial)
        devs = [ops.trace_norm(sh.mean_snapshot_operator([s], [q])[0] - ops.partial_trace(st.rho, [q], 3))
                for q in range(3)]
        fails += max(devs) > 0.2
    assert fails / 30 <= 0.1
