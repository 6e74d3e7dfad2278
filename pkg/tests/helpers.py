import numpy as np

from gibbsphase import lattice as lt
from gibbsphase.paulis import PauliOp

# criterion number -> PASS/FAIL line, filled by test_acceptance and echoed in the terminal summary
ACCEPTANCE = {}


def random_family(n, rng, terms_per_bond=2):
    """Chain family with random non-identity Pauli strings on each bond and site."""
    lat = lt.Lattice.chain(n)
    terms = []
    for i in range(n):
        sites = (i, i + 1) if i + 1 < n else (i,)
        basis = []
        for _ in range(terms_per_bond):
            while True:
                s = "".join(rng.choice(list("IXYZ"), size=len(sites)))
                if set(s) != {"I"}:
                    break
            basis.append(PauliOp(sites, s))
        terms.append(lt.InteractionTerm(i, frozenset(sites), tuple(basis)))
    return lt.HamiltonianFamily(lat, terms)
