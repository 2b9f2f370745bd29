import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ld3.graph import Dag, GraphError, load_fixture
from ld3.scm import (
    CapacityError,
    Dataset,
    DiscreteScm,
    LinearGaussianScm,
    discretize,
    fixture_scm,
    joint_distribution,
    load_scm,
    population_wcde_adjusted,
    random_discrete_scm,
    random_linear_scm,
    sample,
    sample_discrete,
    sample_linear,
    save_scm,
    true_cde,
    true_wcde_discrete,
    true_wcde_linear,
)


def binary_xy(p0=0.2, p1=0.7):
    g = Dag(["X", "Y"], [("X", "Y")], "X", "Y")
    cpt = {"X": np.array([0.5, 0.5]), "Y": np.array([[1 - p0, p0], [1 - p1, p1]])}
    return DiscreteScm(g, {"X": 2, "Y": 2}, cpt)


# -- Dataset -------------------------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset({"a": np.zeros(3), "b": np.zeros(4)})
    with pytest.raises(ValueError):
        Dataset({"a": np.array([0.0, np.nan])})
    with pytest.raises(ValueError):
        Dataset({"a": np.array([0, 3])}, {"a": 3})


def test_csv_schema_roundtrip(tmp_path):
    d = Dataset(
        {"u": np.array([0.1, -2.5, 1e-17]), "c": np.array([0, 2, 1])}, {"u": None, "c": 3}
    )
    d.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.schema.json").exists()
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert back.levels == d.levels
    np.testing.assert_array_equal(back.columns["u"], d.columns["u"])
    np.testing.assert_array_equal(back.columns["c"], d.columns["c"])


def test_discretize_quantiles():
    d = Dataset({"u": np.arange(100.0)})
    b = discretize(d, {"u": 4})
    assert b.levels["u"] == 4
    np.testing.assert_array_equal(np.bincount(b.columns["u"]), [25, 25, 25, 25])
    with pytest.raises(ValueError):
        discretize(b, {"u": 2})


# -- linear --------------------------------------------------------------------


def test_linear_chain_moments():
    g = Dag(["A", "B"], [("A", "B")])
    scm = LinearGaussianScm(g, {("A", "B"): 2.0}, {"A": 1.0, "B": 1.0})
    d = sample_linear(scm, 200_000, 3)
    # Var(B) = 4 + 1, Cov(A, B) = 2
    assert np.var(d.columns["B"]) == pytest.approx(5.0, rel=0.02)
    assert np.cov(d.columns["A"], d.columns["B"])[0, 1] == pytest.approx(2.0, rel=0.02)


def test_sampling_deterministic_and_seed_sensitive():
    scm = fixture_scm("fig_c1")
    a, b = sample(scm, 50, 4), sample(scm, 50, 4)
    for v in a.names:
        np.testing.assert_array_equal(a.columns[v], b.columns[v])
    c = sample(scm, 50, 5)
    assert not np.array_equal(a.columns["Y"], c.columns["Y"])


def test_noise_streams_independent_of_node_order():
    g = Dag(["A", "B", "C"], [("A", "B"), ("B", "C")])
    h = Dag(["C", "B", "A"], [("A", "B"), ("B", "C")])
    coefs = {("A", "B"): 0.7, ("B", "C"): -1.1}
    sd = {"A": 1.0, "B": 1.0, "C": 1.0}
    a = sample_linear(LinearGaussianScm(g, coefs, sd), 30, 9)
    b = sample_linear(LinearGaussianScm(h, coefs, sd), 30, 9)
    for v in "ABC":
        np.testing.assert_array_equal(a.columns[v], b.columns[v])


def test_linear_scm_validation():
    g = Dag(["A", "B"], [("A", "B")])
    with pytest.raises(ValueError):
        LinearGaussianScm(g, {}, {"A": 1.0, "B": 1.0})
    with pytest.raises(ValueError):
        LinearGaussianScm(g, {("A", "B"): 1.0}, {"A": 1.0, "B": 0.0})
    with pytest.raises(GraphError):
        random_linear_scm(g, 0, pinned={("B", "A"): 1.0})
    with pytest.raises(ValueError):
        sample_linear(LinearGaussianScm(g, {("A", "B"): 1.0}, {"A": 1.0, "B": 1.0}), 0, 0)


def test_random_linear_coefficients_in_range():
    scm = random_linear_scm(load_fixture("fig_c1"), 0)
    mags = np.abs(list(scm.edge_coefficients.values()))
    assert mags.min() >= 0.5 and mags.max() <= 1.5


def test_fixture_effects():
    assert true_wcde_linear(fixture_scm("fig_c1"), "X", "Y") == 1.25
    assert true_wcde_linear(fixture_scm("fig_d5"), "X", "Y") == 7.0
    null = fixture_scm("fig_c1_null")
    assert true_wcde_linear(null, "X", "Y") == 0.0
    full = fixture_scm("fig_c1")
    shared = {e: b for e, b in full.edge_coefficients.items() if e != ("X", "Y")}
    assert dict(null.edge_coefficients) == shared
    with pytest.raises(GraphError):
        fixture_scm("nope")


def test_scm_json_roundtrip(tmp_path):
    for name in ("fig_c1", "sfm5"):
        scm = fixture_scm(name)
        save_scm(scm, tmp_path / "m.json")
        back = load_scm(tmp_path / "m.json")
        a, b = sample(scm, 40, 1), sample(back, 40, 1)
        for v in a.names:
            np.testing.assert_array_equal(a.columns[v], b.columns[v])


# -- discrete ------------------------------------------------------------------


def test_binary_wcde_example():
    assert true_wcde_discrete(binary_xy(), "X", "Y") == pytest.approx(0.5)


def test_discrete_sampling_reads_back_cpt():
    scm = binary_xy(0.2, 0.7)
    d = sample_discrete(scm, 400_000, 0)
    x, y = d.columns["X"], d.columns["Y"]
    assert y[x == 0].mean() == pytest.approx(0.2, abs=0.005)
    assert y[x == 1].mean() == pytest.approx(0.7, abs=0.005)


def test_discrete_cpt_readback_three_levels():
    g = Dag(["A", "B"], [("A", "B")])
    scm = random_discrete_scm(g, {"A": 3, "B": 3}, 5)
    d = sample_discrete(scm, 300_000, 2)
    a, b = d.columns["A"], d.columns["B"]
    for i in range(3):
        freq = np.bincount(b[a == i], minlength=3) / (a == i).sum()
        np.testing.assert_allclose(freq, scm.cpt["B"][i], atol=0.01)


def test_discrete_validation():
    g = Dag(["A"], [])
    with pytest.raises(ValueError):
        DiscreteScm(g, {"A": 2}, {"A": np.array([0.3, 0.3])})
    with pytest.raises(ValueError):
        DiscreteScm(g, {"A": 1}, {"A": np.array([1.0])})
    with pytest.raises(ValueError):
        DiscreteScm(g, {"A": 2}, {"A": np.array([[0.5, 0.5]])})


def test_joint_sums_to_one_and_do_fixes_value():
    scm = fixture_scm("sfm5")
    assert joint_distribution(scm).sum() == pytest.approx(1.0)
    j = joint_distribution(scm, {"X": 1})
    x_axis = scm.dag.nodes.index("X")
    assert np.take(j, 0, axis=x_axis).sum() == 0.0


def test_capacity_error():
    nodes = [f"V{i}" for i in range(24)]
    scm = random_discrete_scm(Dag(nodes, []), 2, 0)
    with pytest.raises(CapacityError):
        joint_distribution(scm)


def test_sfm5_interventional_equals_adjustment_form():
    scm = fixture_scm("sfm5")
    truth = true_wcde_discrete(scm, "X", "Y")
    adjusted = population_wcde_adjusted(scm, "X", "Y", 1, 0, ["C", "W"], ["M"])
    assert adjusted == pytest.approx(truth, abs=1e-12)
    # the joint-weight variant is a genuinely different number here
    joint = population_wcde_adjusted(scm, "X", "Y", 1, 0, ["C", "W"], ["M"], joint_weights=True)
    assert abs(joint - truth) > 1e-3


def test_sfm5_null_has_zero_effect():
    assert true_wcde_discrete(fixture_scm("sfm5_null"), "X", "Y") == pytest.approx(0.0, abs=1e-12)


def test_true_cde_without_mediator_matches_contrast():
    scm = binary_xy(0.1, 0.4)
    assert true_cde(scm, "X", "Y", 1, 0, {}) == pytest.approx(0.3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_adjustment_form_matches_interventional_random_sfm(seed):
    # random CPTs on the five-node layout: the S/M' adjustment identifies the WCDE
    g = fixture_scm("sfm5").dag
    scm = random_discrete_scm(g, {"C": 2, "W": 3, "X": 2, "M": 3, "Y": 2}, seed, scale=2.0)
    truth = true_wcde_discrete(scm, "X", "Y")
    got = population_wcde_adjusted(scm, "X", "Y", 1, 0, ["C", "W"], ["M"])
    assert got == pytest.approx(truth, abs=1e-10)
