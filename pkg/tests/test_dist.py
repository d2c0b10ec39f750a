import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import D1, D2, D2_HAT
from oracles import count_frequencies
from otdc.dist import (
    CIConstraint,
    DiscreteDistribution,
    Schema,
    ci_projection,
    ci_violation,
    conditional,
    conditional_mutual_information,
    empirical_distribution,
    marginal,
    parse_constraint,
    satisfies_ci,
)


def random_distribution(rng, schema, zeros=0.0):
    m = rng.random(schema.size)
    m[rng.random(schema.size) < zeros] = 0
    if m.sum() == 0:
        m[0] = 1
    return DiscreteDistribution(schema, m)


# schema ---------------------------------------------------------------------


def test_schema_rejects_duplicates_and_empty_domains():
    with pytest.raises(ValueError):
        Schema.from_domains({"A": [0, 0]})
    with pytest.raises(ValueError):
        Schema.from_domains({"A": []})
    with pytest.raises(ValueError):
        Schema((("A", (0,)), ("A", (1,))))


def test_mixed_radix_first_attribute_most_significant():
    s = Schema.from_domains({"A": ["x", "y"], "B": [0, 1, 2]})
    assert s.size == 6
    assert s.encode(("x", 2)) == 2
    assert s.encode(("y", 0)) == 3
    assert s.decode(5) == ("y", 2)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_encode_decode_round_trip(sizes):
    s = Schema.from_domains({f"A{i}": list(range(k)) for i, k in enumerate(sizes)})
    for code in range(s.size):
        assert s.encode(s.decode(code)) == code


def test_string_values_are_matched_exactly():
    s = Schema.from_domains({"A": ["1", "01"]})
    assert s.encode(("01",)) == 1
    with pytest.raises(ValueError):
        s.encode((1,))


# empirical distribution -----------------------------------------------------


def test_empirical_d2_matches_figure(xyz):
    P = empirical_distribution(D2, xyz)
    assert P.as_dict() == {(1, 0, 0): 0.25, (1, 0, 1): 0.25, (1, 1, 0): 0.5}


def test_point_mass_from_repeated_tuple(xyz):
    P = empirical_distribution([(0, 1, 1)] * 9, xyz)
    assert P.prob((0, 1, 1)) == 1.0
    assert np.count_nonzero(P.mass) == 1


def test_empirical_matches_counting_oracle(xyz):
    rng = np.random.default_rng(3)
    data = [tuple(int(v) for v in rng.integers(0, 2, 3)) for _ in range(20)]
    P = empirical_distribution(data, xyz)
    expected = count_frequencies(data)
    assert P.as_dict().keys() == expected.keys()
    for t, p in expected.items():
        assert P.prob(t) == pytest.approx(p, abs=1e-15)


def test_empirical_errors(xyz):
    with pytest.raises(ValueError):
        empirical_distribution([], xyz)
    with pytest.raises(ValueError):
        empirical_distribution([(0, 0, 2)], xyz)


@given(st.lists(st.tuples(*[st.integers(0, 1)] * 3), min_size=1, max_size=60))
def test_empirical_is_normalised(data):
    s = Schema.from_domains({"X": [0, 1], "Y": [0, 1], "Z": [0, 1]})
    P = empirical_distribution(data, s)
    assert P.mass.min() >= 0
    assert abs(P.mass.sum() - 1) <= 1e-12


# marginal and conditional ----------------------------------------------------


def test_marginal_of_d2(xyz):
    PYZ = marginal(empirical_distribution(D2, xyz), ["Z", "Y"])
    assert PYZ.schema.names == ("Y", "Z")
    assert PYZ.as_dict() == {(0, 0): 0.25, (0, 1): 0.25, (1, 0): 0.5}


def test_marginal_identity_and_unknown(xyz):
    P = empirical_distribution(D1, xyz)
    assert np.array_equal(marginal(P, xyz.names).mass, P.mass)
    with pytest.raises(KeyError):
        marginal(P, ["W"])


def test_marginal_of_product_is_factor():
    s = Schema.from_domains({"A": [0, 1, 2], "B": [0, 1]})
    pa, pb = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.4])
    P = DiscreteDistribution(s, np.outer(pa, pb))
    assert np.allclose(marginal(P, ["A"]).mass, pa, atol=1e-15)
    assert np.allclose(marginal(P, ["B"]).mass, pb, atol=1e-15)


@given(arrays(float, 24, elements=st.floats(0, 1)), st.permutations(["A", "B", "C"]))
def test_marginal_is_consistent(mass, names):
    s = Schema.from_domains({"A": [0, 1], "B": [0, 1, 2], "C": [0, 1, 2, 3]})
    if mass.sum() <= 0:
        mass[0] = 1
    P = DiscreteDistribution(s, mass)
    A, B = names[:2], names[:1]
    assert np.allclose(marginal(marginal(P, A), B).mass, marginal(P, B).mass, atol=1e-12)


def test_conditional_uniform():
    s = Schema.from_domains({"X": [0, 1], "Y": [0, 1]})
    cond = conditional(DiscreteDistribution(s, np.ones(4)), ["Y"], ["X"])
    assert np.allclose(cond.table, 0.5)
    assert cond.defined.all()


def test_conditional_d1_counting(xyz):
    cond = conditional(empirical_distribution(D1, xyz), ["Z"], ["Y"])
    assert cond.row((1,))[0] == pytest.approx(0.5)


def test_conditional_zero_mass_row_flagged(xyz):
    cond = conditional(empirical_distribution(D2, xyz), ["Y"], ["X"])
    assert cond.row((0,)) is None
    assert not cond.defined[0]
    assert np.isnan(cond.table[0]).all()
    assert np.allclose(cond.table[1].sum(), 1.0)


def test_conditional_rejects_overlap(xyz):
    with pytest.raises(ValueError):
        conditional(empirical_distribution(D1, xyz), ["X", "Y"], ["Y"])


# CI checks ------------------------------------------------------------------


def test_d1_violates_y_indep_z(xyz, y_indep_z):
    P = empirical_distribution(D1, xyz)
    PYZ = marginal(P, ["Y", "Z"])
    assert PYZ.prob((1, 0)) == 0.25
    assert marginal(P, ["Y"]).prob((1,)) * marginal(P, ["Z"]).prob((0,)) == 0.125
    ok, v = satisfies_ci(P, y_indep_z, 1e-6)
    assert not ok and v == pytest.approx(0.125)


def test_d2_hat_is_consistent(xyz, y_indep_z):
    ok, v = satisfies_ci(empirical_distribution(D2_HAT, xyz), y_indep_z, 0.0)
    assert ok and v == 0.0


def test_product_distribution_is_independent():
    s = Schema.from_domains({"X": [0, 1, 2], "Y": [0, 1]})
    P = DiscreteDistribution(s, np.outer([0.1, 0.2, 0.7], [0.35, 0.65]))
    ok, v = satisfies_ci(P, CIConstraint(("X",), ("Y",)), 1e-15)
    assert ok
    assert conditional_mutual_information(P, CIConstraint(("X",), ("Y",))) < 1e-15


def test_violation_brute_force(xyz):
    rng = np.random.default_rng(0)
    sigma = CIConstraint(("X",), ("Y",), ("Z",))
    for _ in range(20):
        P = random_distribution(rng, xyz, zeros=0.3)
        worst = 0.0
        for z in (0, 1):
            pz = sum(P.prob((x, y, z)) for x in (0, 1) for y in (0, 1))
            if pz == 0:
                continue
            for x, y in itertools.product((0, 1), repeat=2):
                pxy = P.prob((x, y, z)) / pz
                px = sum(P.prob((x, yy, z)) for yy in (0, 1)) / pz
                py = sum(P.prob((xx, y, z)) for xx in (0, 1)) / pz
                worst = max(worst, abs(pxy - px * py))
        assert ci_violation(P, sigma) == pytest.approx(worst, abs=1e-15)


@given(arrays(float, 12, elements=st.floats(0, 1)))
def test_violation_symmetric_in_x_and_y(mass):
    s = Schema.from_domains({"A": [0, 1, 2], "B": [0, 1], "C": [0, 1]})
    if mass.sum() <= 0:
        mass[0] = 1
    P = DiscreteDistribution(s, mass)
    sigma = CIConstraint(("A",), ("C",), ("B",))
    assert ci_violation(P, sigma) == ci_violation(P, sigma.swapped())


def test_cmi_positive_when_dependent(xyz, y_indep_z):
    assert conditional_mutual_information(empirical_distribution(D1, xyz), y_indep_z) > 0.01


# projection -----------------------------------------------------------------


@given(arrays(float, 18, elements=st.floats(0, 1)))
def test_projection_satisfies_constraint(mass):
    s = Schema.from_domains({"A": [0, 1, 2], "B": [0, 1], "C": [0, 1, 2]})
    if mass.sum() <= 0:
        mass[0] = 1
    P = DiscreteDistribution(s, mass)
    sigma = CIConstraint(("C",), ("A",), ("B",))
    Q = ci_projection(P, sigma)
    assert satisfies_ci(Q, sigma, 0.0)[1] <= 1e-10
    # same Z and (X, Z), (Y, Z) marginals
    for names in (["B"], ["A", "B"], ["B", "C"]):
        assert np.allclose(marginal(Q, names).mass, marginal(P, names).mass, atol=1e-12)


def test_projection_fixed_point(xyz):
    sigma = CIConstraint(("X",), ("Y",), ("Z",))
    Q = ci_projection(empirical_distribution(D1, xyz), sigma)
    assert np.allclose(ci_projection(Q, sigma).mass, Q.mass, atol=1e-15)


def test_projection_of_d1_yz_factorises(xyz):
    PYZ = marginal(empirical_distribution(D1, xyz), ["Y", "Z"])
    Q = ci_projection(PYZ, CIConstraint(("Y",), ("Z",)))
    # P(Y=1) P(Z=0) = 1/2 * 1/4
    assert Q.prob((1, 0)) == pytest.approx(0.125)
    assert Q.prob((0, 1)) == pytest.approx(0.375)


def test_projection_minimises_kl_over_factorised_grid():
    # the closed form is the M-projection: argmin over CI-consistent Q of KL(P || Q)
    s = Schema.from_domains({"X": [0, 1], "Y": [0, 1], "Z": [0, 1]})
    sigma = CIConstraint(("X",), ("Y",), ("Z",))
    rng = np.random.default_rng(5)
    g = np.linspace(0.01, 0.99, 25)
    grid = np.array(np.meshgrid(g, g, g, g, g, indexing="ij")).reshape(5, -1).T
    qz, a0, a1, b0, b1 = grid.T
    Qs = np.zeros((grid.shape[0], 8))
    for x, y, z in itertools.product((0, 1), repeat=3):
        pz = qz if z else 1 - qz
        a = a1 if z else a0
        b = b1 if z else b0
        Qs[:, 4 * x + 2 * y + z] = pz * (a if x else 1 - a) * (b if y else 1 - b)
    for _ in range(5):
        P = rng.random(8) + 0.05
        P /= P.sum()
        Q = ci_projection(DiscreteDistribution(s, P), sigma).mass
        kl = np.sum(P * np.log(P / Q))
        kl_grid = (P * np.log(P / Qs)).sum(axis=1).min()
        assert kl <= kl_grid + 1e-12


def test_projection_needs_saturated_constraint(xyz, y_indep_z):
    with pytest.raises(ValueError):
        ci_projection(empirical_distribution(D1, xyz), y_indep_z)


# constraints ----------------------------------------------------------------


def test_constraint_validation(xyz):
    with pytest.raises(ValueError):
        CIConstraint(("X",), ("X",))
    with pytest.raises(ValueError):
        CIConstraint((), ("X",))
    with pytest.raises(KeyError):
        CIConstraint(("X",), ("W",)).validate(xyz)
    assert CIConstraint(("X",), ("Y",), ("Z",)).is_saturated(xyz)
    assert not CIConstraint(("Y",), ("Z",)).is_saturated(xyz)


@pytest.mark.parametrize("text, expected", [
    ("Y,Z|", (("Y",), ("Z",), ())),
    ("Y , Z", (("Y",), ("Z",), ())),
    ("A,B|C,D", (("A",), ("B",), ("C", "D"))),
    ("A1,A2 ; B1 | C1,C2", (("A1", "A2"), ("B1",), ("C1", "C2"))),
    ("A ⫫ B | C", (("A",), ("B",), ("C",))),
])
def test_parse_constraint(text, expected):
    c = parse_constraint(text)
    assert (c.x, c.y, c.z) == expected


@pytest.mark.parametrize("text", ["A|B", "A,B,C|D", "A,A|B", "|"])
def test_parse_constraint_errors(text):
    with pytest.raises(ValueError):
        parse_constraint(text)
