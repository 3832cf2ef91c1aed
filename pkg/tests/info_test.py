import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, "")
from dhtest import *


def dsbs(crossover, names=("X", "Y")):
    probs = np.array([[1 - crossover, crossover], [crossover, 1 - crossover]]) / 2
    return JointPMF(variables=[Variable(name=n, size=2) for n in names], probs=probs)


def random_joint(rng, sizes, names=None):
    names = names or [f"A{i}" for i in range(len(sizes))]
    probs = rng.dirichlet(np.ones(math.prod(sizes)))
    return JointPMF(
        variables=[Variable(name=n, size=s) for n, s in zip(names, sizes)],
        probs=probs / probs.sum(),
    )


def random_channel(rng, n_in, n_out):
    return TestChannel(rows=rng.dirichlet(np.ones(n_out), size=n_in))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


HB01 = 0.4689955935892812


def test_entropy_examples():
    uniform = JointPMF(
        variables=[Variable(name="X", size=2), Variable(name="Y", size=2)],
        probs=[0.25] * 4,
    )
    assert entropy(uniform, "X") == pytest.approx(1.0, abs=1e-12)
    point = JointPMF(variables=[Variable(name="X", size=3)], probs=[0, 1, 0])
    assert entropy(point, "X") == 0.0
    assert entropy(dsbs(0.1), "Y", "X") == pytest.approx(HB01, abs=1e-9)
    assert entropy(uniform, ["X", "Y"]) == pytest.approx(2.0, abs=1e-12)


def test_entropy_unknown_variable():
    with pytest.raises(UnknownVariableError):
        entropy(dsbs(0.1), "W")
    with pytest.raises(KeyError):
        mutual_information(dsbs(0.1), "X", "W")


def test_entropy_overlapping_selectors():
    with pytest.raises(DomainError):
        entropy(dsbs(0.1), "X", "X")


def test_binary_entropy():
    assert binary_entropy(0.5) == pytest.approx(1.0)
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.1) == pytest.approx(0.468996, abs=1e-6)
    with pytest.raises(DomainError):
        binary_entropy(1.5)
    with pytest.raises(DomainError):
        binary_entropy(-0.1)


def test_mutual_information_examples():
    independent = JointPMF(
        variables=[Variable(name="X", size=2), Variable(name="Y", size=2)],
        probs=[0.25] * 4,
    )
    assert mutual_information(independent, "X", "Y") == pytest.approx(0.0, abs=1e-12)
    assert mutual_information(dsbs(0.0), "X", "Y") == pytest.approx(1.0)
    assert mutual_information(dsbs(0.1), "X", "Y") == pytest.approx(0.531004, abs=1e-6)


def test_kl_divergence_examples():
    p = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.5, 0.5])
    q = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.25, 0.75])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, q) == pytest.approx(0.207518, abs=1e-6)

    joint = dsbs(0.1)
    product = conditional_product(joint, ["X", "Y"])
    assert kl_divergence(joint, product) == pytest.approx(
        mutual_information(joint, "X", "Y"), abs=1e-12
    )


def test_kl_divergence_support_violation():
    p = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.5, 0.5])
    q = JointPMF(variables=[Variable(name="X", size=2)], probs=[1.0, 0.0])
    assert kl_divergence(p, q) == math.inf
    assert kl_divergence(q, p) == pytest.approx(1.0)


def test_kl_divergence_shape_mismatch():
    p = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.5, 0.5])
    q = JointPMF(variables=[Variable(name="X", size=3)], probs=[0.2, 0.3, 0.5])
    with pytest.raises(ShapeMismatchError):
        kl_divergence(p, q)


def test_conditional_kl_matches_marginal_kl_without_conditioning(rng):
    p = random_joint(rng, [2, 3], ["A", "B"])
    q = random_joint(rng, [2, 3], ["A", "B"])
    assert conditional_kl(p, q, "B", None) == pytest.approx(
        kl_divergence(marginalize(p, "B"), marginalize(q, "B")), abs=1e-12
    )


def test_conditional_kl_identical_conditionals():
    # Q shares P's conditional of Y given Z but has another Z marginal
    cond = np.array([[0.9, 0.1], [0.3, 0.7]])
    pz, qz = np.array([0.5, 0.5]), np.array([0.2, 0.8])
    names = ["Z", "Y"]
    p = JointPMF.from_tensor(names, pz[:, None] * cond)
    q = JointPMF.from_tensor(names, qz[:, None] * cond)
    assert conditional_kl(p, q, "Y", "Z") == pytest.approx(0.0, abs=1e-12)
    assert kl_divergence(p, q) > 0


def test_marginalize_and_condition():
    joint = dsbs(0.1)
    yx = marginalize(joint, ["Y", "X"])
    assert yx.names == ["Y", "X"]
    np.testing.assert_allclose(yx.tensor, joint.tensor.T)
    given = condition(joint, {"X": 1})
    assert given.names == ["Y"]
    np.testing.assert_allclose(given.probs, [0.1, 0.9])
    with pytest.raises(DomainError):
        condition(joint, {"X": 2})


def test_compose_channel_identity_and_constant():
    joint = dsbs(0.1)
    copy = compose_channel(joint, TestChannel.identity(2), "X")
    assert copy.names == ["X", "Y", "U"]
    assert mutual_information(copy, "U", "X") == pytest.approx(1.0)
    assert mutual_information(copy, "U", "Y", "X") == pytest.approx(0.0, abs=1e-12)

    const = compose_channel(joint, TestChannel.constant(2, 3), "X", "V")
    assert mutual_information(const, "V", ["X", "Y"]) == pytest.approx(0.0, abs=1e-12)


def test_compose_channel_bsc_on_dsbs():
    joint = compose_channel(dsbs(0.1), TestChannel.symmetric(0.2), "X")
    expected = 1 - binary_entropy(0.1 * 0.8 + 0.9 * 0.2)
    assert mutual_information(joint, "U", "Y") == pytest.approx(expected, abs=1e-12)


def test_compose_channel_size_mismatch():
    with pytest.raises(ShapeMismatchError):
        compose_channel(dsbs(0.1), TestChannel.identity(3), "X")


def test_compose_channel_keeps_axis_order(rng):
    joint = random_joint(rng, [2, 3, 2], ["A", "B", "C"])
    ch = random_channel(rng, 3, 4)
    out = compose_channel(joint, ch, "B")
    expected = joint.tensor[:, :, :, None] * ch.rows[None, :, None, :]
    np.testing.assert_allclose(out.tensor, expected, atol=1e-15)


def test_empirical_type_examples():
    np.testing.assert_allclose(empirical_type([0, 0, 1, 1], [2]).probs, [0.5, 0.5])
    np.testing.assert_allclose(empirical_type([2, 2, 2], [3]).probs, [0, 0, 1])
    seq = [0, 1, 0, 0, 1, 0, 1, 0]
    np.testing.assert_allclose(empirical_type(seq, [2]).probs, [0.625, 0.375])
    with pytest.raises(DomainError):
        empirical_type([0, 2], [2])


def test_empirical_type_of_pairs():
    t = empirical_type([[0, 1, 1, 1], [0, 0, 1, 1]], [2, 2], names=["X", "Y"])
    assert t.names == ["X", "Y"]
    np.testing.assert_allclose(t.tensor, [[0.25, 0.0], [0.25, 0.5]])


def test_is_jointly_typical_examples():
    reference = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.5, 0.5])
    assert is_jointly_typical([[0, 1, 0, 1]], reference, 1e-6)
    assert not is_jointly_typical([[1] * 7 + [0] * 3], reference, 0.1)

    skewed = JointPMF(variables=[Variable(name="X", size=2)], probs=[1.0, 0.0])
    assert not is_jointly_typical([[0] * 99 + [1]], skewed, 0.5)


def test_is_jointly_typical_errors():
    reference = dsbs(0.1)
    with pytest.raises(ShapeMismatchError):
        is_jointly_typical([[0, 1, 0], [0, 1]], reference, 0.1)
    with pytest.raises(DomainError):
        is_jointly_typical([[0, 1], [0, 1]], reference, 0.0)


def test_typicality_under_true_distribution(rng):
    reference = JointPMF(variables=[Variable(name="X", size=2)], probs=[0.5, 0.5])
    accepted = sum(
        is_jointly_typical([rng.integers(0, 2, size=2000)], reference, 0.05) for _ in range(200)
    )
    assert accepted / 200 > 0.99


@pytest.mark.slow
@settings(max_examples=1000, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_chain_rule(seed):
    rng = np.random.default_rng(seed)
    p = random_joint(rng, [2, 3, 2], ["A", "B", "C"])
    assert entropy(p, ["A", "B"], "C") == pytest.approx(
        entropy(p, "A", "C") + entropy(p, "B", ["A", "C"]), abs=1e-10
    )


@pytest.mark.slow
@settings(max_examples=1000, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_measures_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = random_joint(rng, [3, 2, 2], ["A", "B", "C"])
    q = random_joint(rng, [3, 2, 2], ["A", "B", "C"])
    assert entropy(p, "A", ["B", "C"]) >= -1e-12
    assert mutual_information(p, "A", "B", "C") >= -1e-12
    assert kl_divergence(p, q) >= -1e-12


@pytest.mark.slow
@settings(max_examples=1000, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_data_processing(seed):
    rng = np.random.default_rng(seed)
    p = random_joint(rng, [3, 3], ["X", "Y"])
    joint = compose_channel(p, random_channel(rng, 3, 4), "X")
    assert mutual_information(joint, "U", "Y") <= mutual_information(joint, "X", "Y") + 1e-10


def test_mutual_information_is_kl_to_conditional_product(rng):
    for _ in range(1000):
        p = random_joint(rng, [2, 2, 3], ["A", "B", "C"])
        target = conditional_product(p, ["A", "B"], "C")
        assert kl_divergence(p, target) == pytest.approx(
            mutual_information(p, "A", "B", "C"), abs=1e-10
        )
