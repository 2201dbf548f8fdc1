"""Property-based invariants: GF(2) algebra, projectors, word counts, search."""

from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mastrat.blocks import (
    BlockStructure,
    admissible_subsets,
    criterion_sequence,
    parse_structure,
    strata_projectors,
    stratum_variance,
)
from mastrat.aberration import compute_Bki_matrix
from mastrat.fixtures import latin16_structure
from mastrat.gf2 import BitMatrix, gf2_rank, span_enumerate
from mastrat.keys import (
    GeneratorSet,
    compute_Bki_regular,
    default_pools,
    expand_design,
    random_generator_set,
    template_for,
    words_by_stratum,
)
from mastrat.search import QVector, compare_values, run_algorithm3

STRUCTURES = ["8/4", "2/(4x4)", "2/4/4", "latin16"]


def get_structure(name):
    return latin16_structure() if name == "latin16" else parse_structure(name)


# ----- GF(2) -----

@st.composite
def square_matrices(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    rows = draw(
        st.lists(
            st.integers(min_value=0, max_value=(1 << n) - 1),
            min_size=n, max_size=n,
        )
    )
    return BitMatrix(tuple(rows), n)


@given(square_matrices())
def test_double_inverse_is_identity_map(m):
    assume(m.rank() == m.width)
    assert m.inverse().inverse().rows == m.rows


@given(square_matrices())
def test_rank_equals_transpose_rank(m):
    assert m.rank() == m.transpose().rank()


@given(
    st.lists(st.integers(min_value=0, max_value=255), min_size=1, max_size=5)
)
def test_span_closed_under_addition(gens):
    words = span_enumerate(gens)
    assert len(words) == (1 << gf2_rank(gens)) - 1
    ws = set(words)
    for a in words:
        for b in words:
            if a != b:
                assert a ^ b in ws


# ----- strata projectors -----

@pytest.mark.parametrize("name", STRUCTURES)
def test_projector_suite(name):
    b = get_structure(name)
    sd = strata_projectors(b)
    projs = sd.projectors
    N = b.N
    total = [[sum(p[i][j] for p in projs) for j in range(N)] for i in range(N)]
    assert total == [
        [Fraction(1) if i == j else Fraction(0) for j in range(N)]
        for i in range(N)
    ]
    for p in projs:
        for i in range(N):
            for j in range(i):
                assert p[i][j] == p[j][i]
        sq = [
            [sum(p[i][k] * p[k][j] for k in range(N)) for j in range(N)]
            for i in range(N)
        ]
        assert sq == p
    for a, c in combinations(projs, 2):
        for i in range(N):
            row = [sum(a[i][k] * c[k][j] for k in range(N)) for j in range(N)]
            assert all(v == 0 for v in row)


@pytest.mark.parametrize("name", ["8/4", "2/(4x4)"])
@given(sig=st.lists(st.integers(min_value=1, max_value=7), min_size=5, max_size=5))
@settings(max_examples=5, deadline=None)
def test_projectors_are_eigenprojectors_of_V(name, sig):
    # V = sum_F sigma2_F X_F X_F^T must satisfy V P_F = xi_F P_F exactly.
    b = get_structure(name)
    sigma2 = {nm: Fraction(s) for nm, s in zip(b.names, sig)}
    xi = stratum_variance(b, sigma2).xi
    N = b.N
    V = [[Fraction(0)] * N for _ in range(N)]
    for nm in b.names:
        cls = b.factor(nm).classes
        for u in range(N):
            for v in range(N):
                if cls[u] == cls[v]:
                    V[u][v] += sigma2[nm]
    sd = strata_projectors(b)
    for nm in b.names:
        p = sd.projector(nm)
        for u in range(N):
            for v in range(N):
                lhs = sum(V[u][k] * p[k][v] for k in range(N))
                assert lhs == xi[nm] * p[u][v]


@pytest.mark.parametrize("name", STRUCTURES)
def test_admissible_subsets_match_brute_force(name):
    b = get_structure(name)
    mids = b.names[1:-1]
    expected = []
    for r in range(len(mids) + 1):
        for combo in combinations(mids, r):
            g = ("U",) + combo
            if all(
                other in g
                for nm in g
                for other in b.names[:-1]
                if b.finer(nm, other)
            ):
                expected.append(frozenset(g))
    assert {frozenset(g) for g in admissible_subsets(b)} == set(expected)


# ----- three-way word-count agreement -----

def fraction_Bki(design, b):
    """Direct definition-level evaluation with exact projector matrices."""
    sd = strata_projectors(b)
    N, n = design.shape
    rows = []
    for k in range(1, n + 1):
        row = []
        for nm in b.names:
            p = sd.projector(nm)
            total = Fraction(0)
            for s in combinations(range(n), k):
                u = [Fraction(1)] * N
                for j in s:
                    for i in range(N):
                        u[i] *= int(design[i, j])
                pu = [sum(p[i][l] * u[l] for l in range(N)) for i in range(N)]
                total += sum(x * y for x, y in zip(u, pu))
            row.append(total / N)
        rows.append(tuple(row))
    return tuple(rows)


@pytest.mark.parametrize("config", [("8/4", 5, 0), ("2/4/2", 5, 1)])
@given(seed=st.integers(min_value=0, max_value=10**6))
@settings(max_examples=5, deadline=None)
def test_three_way_Bki_agreement(config, seed):
    expr, n, l0 = config
    b = parse_structure(expr)
    t = template_for(b, n, l0)
    gs = random_generator_set(
        t, default_pools(t, True), np.random.default_rng(seed)
    )
    regular = compute_Bki_regular(words_by_stratum(gs)).b
    design = expand_design(gs)
    matrix = compute_Bki_matrix(design, strata_projectors(b)).b
    direct = fraction_Bki(design, b)
    assert regular == matrix == direct


@pytest.mark.parametrize("expr", ["8/4", "4/8", "2/16"])
@given(seed=st.integers(min_value=0, max_value=10**6))
@settings(max_examples=10, deadline=None)
def test_complete_key_is_involution(expr, seed):
    # Complete two-level keys whose grouping rows star only basic unit
    # columns are involutions: K = I + L with L strictly triangular and
    # L^2 = 0, so K^2 = I over GF(2).  (Templates with several grouping
    # strata let a coarser generator star a finer grouping column, which
    # breaks the L^2 = 0 structure.)
    b = parse_structure(expr)
    t = template_for(b, 5, 0)
    gs = random_generator_set(
        t, default_pools(t, True), np.random.default_rng(seed)
    )
    kinv = gs.key_inverse_basic
    assert kinv.inverse().rows == kinv.rows


# ----- search-driver properties -----

@given(seed=st.integers(min_value=0, max_value=10**4))
@settings(max_examples=5, deadline=None)
def test_algorithm3_gb_monotone_any_seed(seed):
    b = parse_structure("8/4")
    t = template_for(b, 5, 0)
    pools = default_pools(t, True)
    seq = criterion_sequence(b, "forward")
    res = run_algorithm3(t, pools, seq, S=4, T=6, q=QVector(1, 0, 1), seed=seed)
    for (_, a), (_, c) in zip(res.trace, res.trace[1:]):
        assert compare_values(c, a) <= 0
    # every visited GB key stays invertible
    assert GeneratorSet(t, res.best).is_invertible


@given(sig=st.lists(st.integers(min_value=0, max_value=9), min_size=3, max_size=3))
def test_derived_variance_vectors_always_feasible(sig):
    b = parse_structure("8/4")
    sigma2 = {nm: Fraction(s) for nm, s in zip(b.names, sig)}
    assert stratum_variance(b, sigma2).is_feasible(b)
