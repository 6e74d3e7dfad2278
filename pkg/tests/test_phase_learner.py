import json
import math

import numpy as np
import pytest
from scipy import stats

from gibbsphase import lattice as lt
from gibbsphase import phase_learner as pl
from gibbsphase.paulis import Z


@pytest.fixture(scope="module")
def field6():
    fam = lt.field_model(lt.Lattice.chain(6))
    O = pl.LocalObservable.pauli("Z", [3], lattice=fam.lattice)
    return fam, O


def consts(**kw):
    base = dict(beta=1.0, h=1.0, ell=2, k0=1, r0=1, D=1, n=8, M=1, C=1.0, c_prime=1.0, xi=1.0)
    base.update(kw)
    return pl.ModelConstants(**base)


# observables and distributions ----------------------------------------------------

def test_local_observable_shapes():
    lat = lt.Lattice.chain(5)
    O = pl.LocalObservable.from_terms([([0, 1], np.kron(Z, Z)), ([3], 2 * Z)], lat)
    assert O.M == 2 and O.k0 == 2
    assert np.allclose(O.norms, [1, 2])
    assert O.support == {0, 1, 3}
    with pytest.raises(ValueError):
        pl.LocalObservable.from_terms([([0, 1], Z)], lat)


def test_distribution_specs():
    assert pl.ParamDistribution.from_spec("uniform-on-box").kind == "uniform"
    assert pl.ParamDistribution.from_spec({"kind": "product", "marginal": "beta", "a": 2, "b": 3}).kind == "beta"
    with pytest.raises(ValueError, match="unsupported"):
        pl.ParamDistribution.from_spec("gaussian")


def test_draw_training_examples(field6):
    fam, _ = field6
    one = pl.draw_training(fam, "uniform", 1, seed=0)
    assert len(one) == 1 and np.all(np.abs(one.xs[0] - fam.center) <= 1)
    dirac = pl.draw_training(fam, {"kind": "dirac", "value": 0.3}, 150, seed=0)
    assert np.all(dirac.xs == dirac.xs[0])
    with pytest.raises(ValueError):
        pl.draw_training(fam, "uniform", 0, seed=0)


def test_uniform_ks_band():
    fam = lt.field_model(lt.Lattice.chain(3))
    ts = pl.draw_training(fam, "uniform", 10_000, seed=5)
    for k in range(3):
        D = stats.kstest((ts.xs[:, k] + 1) / 2, "uniform").statistic
        assert D < 1.36 / math.sqrt(10_000)
    assert ts.anti_concentration["passed"]


def test_anti_concentration_detects_violation():
    dist = pl.ParamDistribution("uniform")
    xs = np.random.default_rng(0).uniform(-1, 0, size=(2000, 2))
    assert not pl.check_anti_concentration(xs, np.zeros(2), dist)["passed"]


def test_manifest_and_handles(field6):
    fam, _ = field6
    ts = pl.draw_training(fam, "uniform", 5, seed=3, snapshots_per_entry=4)
    lines = ts.manifest().splitlines()
    head = json.loads(lines[0])
    assert head["N"] == 5 and len(lines) == 6
    entry = json.loads(lines[2])
    assert entry["handle"] == "shadow:seed=3,set=1,count=4" and entry["seed"] == [3, 1]
    assert np.allclose(entry["x"], ts.xs[1])
    assert ts.shadow(1) == ts.shadow(1) and ts.shadow(1).tag == tuple(ts.xs[1])


# nearest samples ------------------------------------------------------------------

def hand_training():
    fam = lt.field_model(lt.Lattice.chain(3))
    xs = np.array([[0, 0.5, 0], [0, -0.2, 0.9], [0.3, 0.1, 0]])
    return pl.TrainingSet(fam, 1.0, xs, pl.ParamDistribution(), 0)


def test_nearest_sample_hand_example():
    ts = hand_training()
    x = np.array([0.9, 0.0, -0.9])
    idx, d = pl.nearest_sample(x, {1}, 0, ts, want=3)
    assert list(idx) == [2, 1, 0] and np.allclose(d, [0.1, 0.2, 0.5])
    # r = 1 uses every coordinate; points 0 and 2 tie at 0.9 and the lower index wins
    idx, d = pl.nearest_sample(x, {1}, 1, ts, want=3)
    assert list(idx) == [0, 2, 1] and np.allclose(d, [0.9, 0.9, 1.8])
    idx, d = pl.nearest_sample(ts.xs[1], {0}, 2, ts)
    assert idx[0] == 1 and d[0] == 0


# hyperparameter formulas ----------------------------------------------------------

def test_paper_gamma_value():
    c = consts(ell=2)
    expected = 0.1 * math.exp(-8 * (3 * math.log(2) + 5)) / 32
    assert pl.paper_gamma(0.1, 3, c) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(7.913e-28, rel=1e-3)


def test_paper_r_value():
    c = consts()
    num = 16 * 1 * (1 + 1) * 1 * 3
    den = 0.1 * math.e * (1 - math.exp(-0.5))
    assert pl.paper_r(0.1, c) == math.ceil(2 * math.log(num / den)) == 14
    assert pl.paper_r(0.1, c, "shadow") == math.ceil(2 * math.log(24 * 6 / den))


def test_paper_r_halving_step():
    for xi in (0.7, 1.0, 2.5):
        c = consts(xi=xi)
        step = pl.paper_r(0.05, c) - pl.paper_r(0.1, c)
        assert step in (math.floor(2 * xi * math.log(2)), math.ceil(2 * xi * math.log(2)))


def test_paper_C2_and_volume():
    c = consts(ell=2, k0=1, D=2)
    assert pl.volume(2, 1, 2) == 36
    V = 36
    assert pl.paper_C2(2, c) == pytest.approx(2.0 ** (2 * V + 1) * math.exp(5 * V) * V * 2)


def test_coupon_N_matches_delta_definition():
    N, lg = pl.coupon_N(0.5, 2, 3, 0.05)
    assert N == math.ceil(16 * (math.log(60) + 2 * math.log(4)))
    f = lambda k: 3 * math.exp(-k * 0.25**2 + 2 * math.log(4))
    assert f(N) <= 0.05 < f(N - 1)
    assert lg == pytest.approx(math.log10(N), abs=1e-2)
    big, lg = pl.coupon_N(1e-20, 50, 1, 0.05)
    assert big is None and lg > 15


def test_hyperparams_modes():
    c = consts()
    paper = pl.hyperparams(0.1, 0.05, 0.05, c, "paper-constants")
    assert paper.r == 14 and paper.m_r == (2 * (14 + 1 + 1)) * 2
    assert paper.gamma == pytest.approx(pl.paper_gamma(0.1, 14, c))
    assert paper.N is None
    sh = pl.hyperparams(0.1, 0.05, 0.05, c, "paper-constants", "shadow")
    from gibbsphase.shadows import sample_count_t
    assert sh.t == sample_count_t(1, 0.1 / 3, 0.05, 8)
    with pytest.raises(ValueError):
        pl.hyperparams(1.5, 0.05, 0.05, c)
    with pytest.raises(ValueError):
        pl.hyperparams(0.1, 0.05, 0.05, c, "empirical")


def test_hyperparams_empirical_formulas():
    fit = pl.EmpiricalConstants(C1=0.5, xi=0.8, C2=4.0, probes=1, envelope=[], r_values=[])
    cfg = pl.hyperparams(0.1, 0.05, 0.05, consts(M=2), "empirical", fitted=fit, m_r=3)
    assert cfg.r == math.ceil(2 * 0.8 * math.log(2 * 0.5 / 0.05))
    assert cfg.gamma == pytest.approx(0.1 / (2 * 4.0))
    g = cfg.gamma
    assert cfg.N == math.ceil((2 / g) ** 3 * (math.log(2 / 0.05) + 3 * math.log(2 / g)))


def test_empirical_gamma_range(field6):
    fam, O = field6
    cfg = pl.empirical_config(fam, O, 1.0, 0.1, 0.05, 0.05)
    assert 1e-3 <= cfg.gamma <= 1e-1
    assert cfg.m_r == 1 and cfg.details["m_r_paper_volume"] == 2 * (cfg.r + 0 + 1)


# scans ----------------------------------------------------------------------------

def test_scan_covering_is_zero():
    fam = lt.tfim(lt.Lattice.chain(5))
    O = pl.LocalObservable.pauli("Z", [2], lattice=fam.lattice)
    x = fam.sample_box(np.random.default_rng(0))
    sc = pl.indistinguishability_scan(fam, x, O, [0, 1, 2, 3], 0.5)
    assert sc.values[-1] == 0.0


def test_scan_tfim_envelope_nonincreasing():
    fam = lt.tfim(lt.Lattice.chain(8))
    O = pl.LocalObservable.pauli("Z", [4], lattice=fam.lattice)
    rng = np.random.default_rng(1)
    env, scans = pl.scan_envelope(fam, [fam.sample_box(rng) for _ in range(4)], O, range(5), 0.3)
    assert np.all(np.diff(env.values) <= 1e-12)
    assert env.fit.slope < 0
    assert np.all(env.values >= np.max([s.values for s in scans], axis=0))


def test_scan_commuting_model_zero():
    fam = lt.ising(lt.Lattice.chain(6))
    O = pl.LocalObservable.pauli("Z", [3], lattice=fam.lattice)
    x = fam.sample_box(np.random.default_rng(2))
    sc = pl.indistinguishability_scan(fam, x, O, [0, 1, 2, 3], 0.7)
    # classical chain: the restriction is exact once the terms on S(r) are kept and x* = 0 elsewhere
    assert np.all(np.diff(sc.values) <= 1e-12)


# estimation -----------------------------------------------------------------------

def test_estimate_exact_when_x_in_training(field6):
    fam, O = field6
    x = fam.sample_box(np.random.default_rng(4))
    ts = pl.TrainingSet(fam, 1.0, np.vstack([fam.sample_box(np.random.default_rng(5)), x]), pl.ParamDistribution(), 0)
    cfg = pl.LearnerConfig(r=0, gamma=1.0, t=1, N=2, mode="empirical")
    rec = pl.estimate(x, O, ts, cfg)
    assert rec["total"] == pytest.approx(fam.gibbs(x, 1.0).expect(O.full_matrix(6)), abs=1e-14)
    assert rec["per_term"][0]["distance"] == 0


def test_estimate_infinite_temperature():
    fam = lt.tfim(lt.Lattice.chain(4))
    O = pl.LocalObservable.from_terms([([1], Z + 0.3 * np.eye(2))], fam.lattice)
    ts = pl.draw_training(fam, "uniform", 200, seed=1, beta=0.0)
    cfg = pl.LearnerConfig(r=0, gamma=1.0, t=1, N=200, mode="empirical")
    for x in (fam.sample_box(np.random.default_rng(k)) for k in range(5)):
        assert pl.estimate(x, O, ts, cfg)["total"] == pytest.approx(0.3, abs=1e-14)


def test_estimate_shortfall_and_size_checks(field6):
    fam, O = field6
    ts = pl.draw_training(fam, "uniform", 3, seed=0)
    cfg = pl.LearnerConfig(r=0, gamma=1e-6, t=1, N=3, mode="empirical")
    with pytest.raises(ValueError, match="coverage shortfall"):
        pl.estimate(fam.center, O, ts, cfg)
    cfg = pl.LearnerConfig(r=0, gamma=0.5, t=1, N=10, mode="empirical")
    with pytest.raises(ValueError):
        pl.estimate(fam.center, O, ts, cfg)
    ts2 = pl.draw_training(fam, "uniform", 3, seed=0, snapshots_per_entry=2)
    cfg = pl.LearnerConfig(r=0, gamma=1.0, t=100, N=50, mode="empirical", snapshots_per_entry=2)
    with pytest.raises(ValueError, match="coverage shortfall"):
        pl.estimate(fam.center, O, ts2, cfg, "shadow", check_size=False)


def test_field_model_end_to_end(field6):
    fam, O = field6
    cfg = pl.empirical_config(fam, O, 1.0, 0.1, 0.05, 0.05)
    ts = pl.draw_training(fam, "uniform", cfg.N, seed=2)
    rng = np.random.default_rng(3)
    sound = 0
    for _ in range(100):
        x = fam.sample_box(rng)
        rec = pl.estimate(x, O, ts, cfg)
        err = abs(rec["total"] - fam.gibbs(x, 1.0).expect(O.full_matrix(6)))
        assert err <= 0.1 * O.norms.sum()
        sound += err <= rec["certificate"]
    assert sound >= 95


def test_coverage_shortfall_frequency(field6):
    fam, O = field6
    cfg = pl.empirical_config(fam, O, 1.0, 0.1, 0.05, 0.05)
    rng = np.random.default_rng(8)
    tests = [fam.sample_box(rng) for _ in range(20)]
    failures = 0
    for rep in range(100):
        ts = pl.draw_training(fam, "uniform", cfg.N, seed=100 + rep, check=False)
        try:
            for x in tests:
                pl.estimate(x, O, ts, cfg)
        except ValueError as exc:
            assert "coverage shortfall" in str(exc)
            failures += 1
    assert failures / 100 <= 0.05


def test_interpolation_consistency():
    fam = lt.tfim(lt.Lattice.chain(6))
    O = pl.LocalObservable.pauli("Z", [3], lattice=fam.lattice)
    cfg = pl.empirical_config(fam, O, 0.3, 0.2, 0.05, 0.05, probes=8, seed=1)
    rng = np.random.default_rng(9)
    coords = fam.restricted_coords({3}, cfg.r)
    for _ in range(5):
        x = fam.sample_box(rng)
        y = fam.sample_box(rng)
        y[coords] = x[coords]
        ts = pl.TrainingSet(fam, 0.3, y[None, :], pl.ParamDistribution(), 0)
        rec = pl.estimate(x, O, ts, pl.LearnerConfig(cfg.r, cfg.gamma, 1, 1, "empirical", C1=cfg.C1, xi=cfg.xi,
                                                     C2=cfg.C2), check_size=False)
        term = rec["per_term"][0]
        assert term["distance"] == 0
        err = abs(term["value"] - fam.gibbs(x, 0.3).expect(O.full_matrix(6)))
        assert err <= term["lemma_term"] + 1e-12


def test_gali_zero_center_reduces(field6):
    fam, O = field6
    cfg = pl.LearnerConfig(r=0, gamma=1.0, t=1, N=30, mode="empirical", C1=0.01, xi=1.0)
    ts = pl.draw_training(fam, "uniform", 30, seed=4)
    x = fam.sample_box(np.random.default_rng(6))
    a = pl.estimate(x, O, ts, cfg)
    b = pl.gali_estimate(x, O, ts, cfg, center=np.zeros(fam.m))
    assert a["total"] == b["total"]
    assert b["per_term"][0]["lemma_term"] == pytest.approx(0.0, abs=1e-13)  # product model: restriction is exact


def test_gali_classical_ferromagnet():
    fam = lt.ising(lt.Lattice.chain(6))
    center = np.array([-1.0 if len(op.sites) == 2 else 0.0 for op in fam.basis])  # ferromagnetic couplings
    fam = fam.with_center(center)
    O = pl.LocalObservable.pauli("Z", [3], lattice=fam.lattice)
    beta = 0.5
    cfg = pl.empirical_config(fam, O, beta, 0.2, 0.05, 0.05, probes=4, seed=2, center=center)
    # the coupon-collector N is out of reach here, so a coarse gamma is paired with a modest set
    cfg = pl.LearnerConfig(cfg.r, 1.0, 1, 3000, "empirical", C1=cfg.C1, xi=cfg.xi, C2=cfg.C2)
    ts = pl.draw_training(fam, "uniform", 3000, seed=5, beta=beta)
    rng = np.random.default_rng(11)
    sound = 0
    for _ in range(50):
        x = fam.sample_box(rng)
        rec = pl.gali_estimate(x, O, ts, cfg, center=center, seed=1, check_size=False)
        err = abs(rec["total"] - fam.gibbs(x, beta).expect(O.full_matrix(6)))
        sound += err <= rec["certificate"] + 1e-12
    assert sound == 50


def test_ground_state_strong_field():
    fam = lt.tfim(lt.Lattice.chain(4), longitudinal=False)
    center = np.array([-2.0 if op.ops == "X" else 0.0 for op in fam.basis])  # strong transverse field keeps the gap open
    fam = fam.with_center(center)
    O = pl.LocalObservable.pauli("X", [2], lattice=fam.lattice)
    cfg = pl.empirical_config(fam, O, 1.0, 0.1, 0.05, 0.05, probes=4, kind="ground", center=center)
    ts = pl.draw_training(fam, "uniform", min(cfg.N or 4000, 4000), seed=6, kind="ground")
    rng = np.random.default_rng(12)
    for _ in range(20):
        x = fam.sample_box(rng)
        rec = pl.estimate(x, O, ts, cfg, check_size=False)
        assert abs(rec["total"] - fam.ground(x).expect(O.full_matrix(4))) <= 0.1


def test_coverage_check_counts(field6):
    fam, _ = field6
    ts = pl.draw_training(fam, "uniform", 400, seed=2)
    rec = pl.coverage_check(ts, {3}, 0, 0.25)
    assert rec["cells"] == 8 and rec["covered"]


@pytest.mark.slow
def test_shadow_mode_gap_n4():
    fam = lt.field_model(lt.Lattice.chain(4))
    O = pl.LocalObservable.pauli("Z", [2], lattice=fam.lattice)
    cfg = pl.empirical_config(fam, O, 1.0, 0.1, 0.05, 0.05, variant="shadow", t=10_000, snapshots_per_entry=10)
    ts_s = pl.draw_training(fam, "uniform", cfg.N, seed=3, snapshots_per_entry=10)
    ts_e = pl.draw_training(fam, "uniform", cfg.N, seed=3)
    rng = np.random.default_rng(13)
    for _ in range(3):
        x = fam.sample_box(rng)
        s = pl.estimate(x, O, ts_s, cfg, "shadow")["total"]
        e = pl.estimate(x, O, ts_e, cfg, "exact")["total"]
        assert abs(s - e) <= 0.05 * O.norms.sum()
