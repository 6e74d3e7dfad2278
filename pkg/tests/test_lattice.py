import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbsphase import lattice as lt
from gibbsphase.paulis import PauliOp, pauli_matrix


def coords(lat, region):
    return sorted(lat.coords[i] for i in region)


def test_enlarge_identity_and_interval():
    lat = lt.Lattice.centered(1, 3)
    o = lat.index((0,))
    assert lt.enlarge_region(lat, {o}, 0) == {o}
    assert coords(lat, lt.enlarge_region(lat, {o}, 2)) == [(-2,), (-1,), (0,), (1,), (2,)]


def test_enlarge_2d_square():
    # oracle: every site with max-coordinate distance <= 1 from the origin
    lat = lt.Lattice.centered(2, 2)
    got = lt.enlarge_region(lat, {lat.index((0, 0))}, 1)
    expect = {lat.index((a, b)) for a in (-1, 0, 1) for b in (-1, 0, 1)}
    assert got == expect and len(got) == 9


def test_enlarge_l1_metric_is_diamond():
    lat = lt.Lattice.centered(2, 2, metric="l1")
    assert len(lt.enlarge_region(lat, {lat.index((0, 0))}, 1)) == 5


def test_empty_region_errors():
    lat = lt.Lattice.chain(4)
    with pytest.raises(ValueError, match="empty region"):
        lt.enlarge_region(lat, set(), 1)


def test_periodic_distance():
    lat = lt.Lattice.chain(6, boundary="periodic")
    assert lat.distance(0, 5) == 1
    assert lt.Lattice.chain(6).distance(0, 5) == 5


def test_restrict_field_model_hand_example():
    fam = lt.field_model(lt.Lattice.chain(5))
    x = np.array([.1, .2, .3, .4, .5])
    assert np.allclose(fam.restrict(x, {2}, 1), [0, .2, .3, .4, 0])


def test_restrict_covering_and_far():
    fam = lt.tfim(lt.Lattice.chain(5))
    x = fam.sample_box(np.random.default_rng(0))
    assert np.array_equal(fam.restrict(x, {2}, 5), x)
    fam2 = lt.field_model(lt.Lattice.chain(5))
    x2 = np.array([0.7, 0, 0, 0, 0])
    assert np.array_equal(fam2.restrict(x2, {4}, 0), np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_restrict_idempotent_and_roundtrip(site, r, seed):
    fam = lt.tfim(lt.Lattice.chain(6)).with_center(np.linspace(-0.3, 0.3, 17))
    x = fam.sample_box(np.random.default_rng(seed))
    y = fam.restrict(x, {site}, r)
    assert np.array_equal(fam.restrict(y, {site}, r), y)
    keep = fam.restricted_coords({site}, r)
    mask = np.zeros(fam.m, bool)
    mask[keep] = True
    assert np.array_equal(y[mask], x[mask])
    assert np.array_equal(y[~mask], fam.center[~mask])


def test_assemble_small_examples():
    one = lt.field_model(lt.Lattice.chain(1))
    assert np.allclose(one.assemble([0.7]), np.diag([0.7, -0.7]))
    assert np.allclose(one.assemble([0.0]), 0)
    two = lt.family_from_dict({"shape": [2], "terms": [{"anchor": 0, "radius": 1, "paulis": [{"sites": [0, 1], "ops": "ZZ"}]}]})
    assert np.allclose(two.assemble([1.0]), np.diag([1, -1, -1, 1]))


def test_assemble_full_region_linearity_and_lipschitz(rng):
    fam = lt.heisenberg(lt.Lattice.chain(4))
    for _ in range(5):
        x, y = fam.sample_box(rng), fam.sample_box(rng)
        Hx, Hy = fam.assemble(x), fam.assemble(y)
        assert np.allclose(fam.assemble(x, region=fam.lattice.sites), Hx, atol=1e-14)
        assert np.allclose(Hx + Hy, fam.assemble(x + y), atol=1e-12)
        assert np.allclose(Hx, Hx.conj().T, atol=1e-12)
        gap = np.linalg.norm(Hx - Hy, 2)
        assert gap <= fam.h * np.abs(x - y).sum() + 1e-12


def test_assemble_region_keeps_inside_terms():
    fam = lt.ising(lt.Lattice.chain(3))
    x = np.ones(fam.m)
    H = fam.assemble(x, region={0, 1})
    ops = [op for t in fam.terms if t.support <= {0, 1} for op in t.basis]
    assert np.allclose(H, sum(pauli_matrix(op, 3) for op in ops))


def test_box_check():
    fam = lt.field_model(lt.Lattice.chain(2))
    with pytest.raises(ValueError):
        fam.check_params([1.5, 0])


def test_shift_and_family_file(tmp_path):
    text = """
dimension: 1
half_width: 1
terms:
  - {anchor: -1, radius: 0, paulis: ["X"]}
  - {anchor: 0, radius: 1, paulis: ["ZZI", {sites: [0, 1], ops: ZZ}]}
center: 0.0
shift_H0:
  - {coeff: 0.5, ops: Z, sites: [2]}
"""
    p = tmp_path / "fam.yaml"
    p.write_text(text)
    fam = lt.load_family(p)
    assert fam.n == 3 and fam.m == 3
    H = fam.assemble(np.zeros(3))
    assert np.allclose(H, 0.5 * pauli_matrix(PauliOp((2,), "Z"), 3))


def test_family_file_validates_against_schema(tmp_path):
    import json
    import jsonschema
    import yaml
    from importlib.resources import files
    schema = json.loads(files("gibbsphase").joinpath("schemas/family.schema.json").read_text())
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs" / "families"
    for f in sorted(root.glob("*.yaml")):
        d = yaml.safe_load(f.read_text())
        jsonschema.validate(d, schema)
        lt.family_from_dict(d)


def test_tfim_longitudinal_switch():
    lat = lt.Lattice.chain(4)
    assert lt.tfim(lat).m == 3 + 4 + 4
    assert lt.tfim(lat, longitudinal=False).m == 3 + 4
