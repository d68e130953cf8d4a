import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shufflefl.core import check_perm
from shufflefl.exceptions import DegenerateInputError, InvariantError, ShapeError
from shufflefl.nn import LinearLayer, MlpModel, RnnModel, TinyTransformer, forward
from shufflefl.permute import (ArchShape, InputShuffler, ShuffleRule, compose, gen_perm, invert_perm,
                               random_rule, seed_from_str, seed_to_str, shuffle_input, shuffle_labels,
                               shuffle_linear, shuffle_model, shuffle_output, stream_id,
                               unshuffle_input, unshuffle_model, unshuffle_output)
from shufflefl.server import ClientUpdate, fedavg

seeds = st.integers(0, 2**64 - 1)


def test_gen_perm_n1():
    assert gen_perm(5, 0, 1).tolist() == [0]


def test_gen_perm_n0():
    with pytest.raises(DegenerateInputError):
        gen_perm(5, 0, 0)


def test_gen_perm_bijection_many(rng):
    for _ in range(1000):
        s = int(rng.integers(0, 2**63))
        i = int(rng.integers(0, 50))
        n = int(rng.integers(1, 40))
        p = gen_perm(s, i, n)
        assert np.array_equal(np.sort(p), np.arange(n))


@given(seeds, st.integers(0, 2**40), st.integers(1, 300))
def test_gen_perm_deterministic(s, i, n):
    assert np.array_equal(gen_perm(s, i, n), gen_perm(s, i, n))


def test_gen_perm_streams_independent():
    assert not np.array_equal(gen_perm(1, stream_id(1), 50), gen_perm(1, stream_id(2), 50))


def test_invert_perm_values():
    assert invert_perm([2, 0, 1]).tolist() == [1, 2, 0]
    assert invert_perm([0, 1, 2]).tolist() == [0, 1, 2]
    with pytest.raises(InvariantError):
        invert_perm([0, 2, 2])


@given(st.permutations(list(range(9))))
def test_invert_involution(p):
    p = np.array(p)
    assert np.array_equal(invert_perm(invert_perm(p)), p)
    assert np.array_equal(compose(p, invert_perm(p)), np.arange(9))


def test_seed_string_roundtrip():
    assert seed_to_str(2**64 - 1) == "18446744073709551615"
    assert seed_from_str("18446744073709551615") == 2**64 - 1
    with pytest.raises(ValueError):
        seed_from_str("18446744073709551616")
    with pytest.raises(ValueError):
        seed_from_str("-1")


def test_shuffle_input_index_oracle():
    shape = ArchShape("mlp", 3, (), 2)
    rule = dataclasses.replace(ShuffleRule.identity(shape), input_perm=np.array([2, 0, 1]))
    # row [a, b, c] with perm [2, 0, 1] -> [c, a, b]
    assert shuffle_input([[1.0, 2.0, 3.0]], rule).tolist() == [[3.0, 1.0, 2.0]]


def test_shuffle_input_identity_and_values(rng):
    shape = ArchShape("mlp", 6, (4,), 3)
    x = rng.random((5, 6))
    np.testing.assert_array_equal(shuffle_input(x, ShuffleRule.identity(shape)), x)
    r = ShuffleRule.derive(3, shape)
    xs = shuffle_input(x, r)
    np.testing.assert_array_equal(np.sort(xs, axis=1), np.sort(x, axis=1))
    np.testing.assert_array_equal(unshuffle_input(xs, r), x)
    with pytest.raises(ShapeError):
        shuffle_input(rng.random((2, 5)), r)


def test_shuffle_linear_index_oracle():
    layer = LinearLayer([[1, 2], [3, 4]], [5, 6])
    out = shuffle_linear(layer, [1, 0], [1, 0])
    assert out.W.tolist() == [[4, 3], [2, 1]]
    assert out.b.tolist() == [6, 5]
    same = shuffle_linear(layer, [0, 1], [0, 1])
    assert np.array_equal(same.W, layer.W) and np.array_equal(same.b, layer.b)
    with pytest.raises(ShapeError):
        shuffle_linear(layer, [0, 1, 2], [0, 1])


def test_shuffle_linear_inverse_exact(rng):
    layer = LinearLayer(rng.standard_normal((5, 4)), rng.standard_normal(5))
    r, c = rng.permutation(5), rng.permutation(4)
    back = shuffle_linear(shuffle_linear(layer, r, c), invert_perm(r), invert_perm(c))
    assert np.array_equal(back.W, layer.W) and np.array_equal(back.b, layer.b)


def test_rule_determinism_and_validity():
    shape = ArchShape("mlp", 30, (20, 10), 5)
    a, b = ShuffleRule.derive(99, shape), ShuffleRule.derive(99, shape)
    assert a.same_perms(b)
    for p in [a.input_perm, *a.hidden_perms, a.output_perm]:
        check_perm(p)
    assert not a.same_perms(ShuffleRule.derive(100, shape))


def _equivariance_gap(model, x, rule):
    got = forward(shuffle_model(model, rule), shuffle_input(x, rule))
    return float(np.max(np.abs(got - shuffle_output(forward(model, x), rule))))


def test_mlp_equivariance_100(rng):
    for _ in range(100):
        dims = [int(v) for v in rng.integers(2, 15, size=int(rng.integers(2, 5)))]
        m = MlpModel.init(dims, rng)
        x = rng.standard_normal((3, dims[0]))
        assert _equivariance_gap(m, x, random_rule(ArchShape.of(m), rng)) <= 1e-9


def test_rnn_equivariance_100(rng):
    for _ in range(100):
        m = RnnModel.init(int(rng.integers(2, 8)), int(rng.integers(2, 10)), int(rng.integers(2, 6)), rng)
        x = rng.standard_normal((2, int(rng.integers(1, 6)), m.dims[0]))
        assert _equivariance_gap(m, x, random_rule(ArchShape.of(m), rng)) <= 1e-9


def test_transformer_equivariance_50(rng):
    for _ in range(50):
        m = TinyTransformer.init(int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 7)),
                                 int(rng.integers(2, 8)), int(rng.integers(2, 5)), rng)
        x = rng.standard_normal((m.n_tokens, m.patch))
        assert _equivariance_gap(m, x, random_rule(ArchShape.of(m), rng)) <= 1e-6


@pytest.mark.parametrize("make", [
    lambda r: MlpModel.init([5, 4, 3], r),
    lambda r: RnnModel.init(3, 4, 2, r),
    lambda r: TinyTransformer.init(3, 2, 4, 5, 2, r),
])
def test_identity_rule_and_roundtrip(make, rng):
    m = make(rng)
    shape = ArchShape.of(m)
    assert shuffle_model(m, ShuffleRule.identity(shape)).equals(m)
    for _ in range(100):
        r = random_rule(shape, rng)
        assert unshuffle_model(shuffle_model(m, r), r).equals(m)


def test_rule_shape_mismatch(rng):
    m = MlpModel.init([5, 4, 3], rng)
    with pytest.raises(ShapeError):
        shuffle_model(m, ShuffleRule.derive(1, ArchShape("mlp", 5, (6,), 3)))


def test_rnn_mismatched_hidden_perms_break_equivariance(rng):
    m = RnnModel.init(3, 6, 2, rng)
    r = ShuffleRule.derive(4, ArchShape.of(m))
    hp = r.hidden_perms[0]
    other = np.roll(hp, 1)
    bad = RnnModel(m.W_ih[hp][:, r.input_perm], m.W_hh[hp][:, other], m.b_h[hp],
                   shuffle_linear(m.head, r.output_perm, hp))
    x = rng.standard_normal((2, 4, 3))
    gap = np.max(np.abs(forward(bad, shuffle_input(x, r)) - shuffle_output(forward(m, x), r)))
    assert gap > 1e-3


def test_transformer_token_shuffle_without_head_perm_breaks(rng):
    m = TinyTransformer.init(4, 3, 5, 6, 3, rng)
    r = ShuffleRule.derive(8, ArchShape.of(m))
    ident = np.arange(3)
    rule_no_head = dataclasses.replace(r, output_perm=ident)
    sm = shuffle_model(m, rule_no_head)
    # undo the cls-head block permutation only
    plain_head = shuffle_model(m, dataclasses.replace(rule_no_head, token_perm=np.arange(4)))
    broken = dataclasses.replace(sm, cls_head=plain_head.cls_head)
    x = rng.standard_normal((4, 3))
    assert np.max(np.abs(forward(broken, shuffle_input(x, r)) - forward(m, x))) > 1e-6


def test_aggregation_commutes_with_shuffle(rng):
    base = MlpModel.init([6, 5, 3], rng)
    models = [base.from_arrays([a + rng.standard_normal(a.shape) for a in base.arrays()]) for _ in range(5)]
    r = random_rule(ArchShape.of(base), rng)
    counts = [3, 7, 1, 4, 9]
    plain = fedavg([ClientUpdate(i, m, np.zeros((1, 6)), c) for i, (m, c) in enumerate(zip(models, counts))])
    shuf = fedavg([ClientUpdate(i, shuffle_model(m, r), np.zeros((1, 6)), c)
                   for i, (m, c) in enumerate(zip(models, counts))])
    gap = np.max(np.abs(shuf.flat() - shuffle_model(plain, r).flat()))
    assert gap <= 1e-12


def test_aggregation_commutes_exactly_power_of_two(rng):
    base = MlpModel.init([4, 3, 2], rng)
    models = [base.from_arrays([a + rng.standard_normal(a.shape) for a in base.arrays()]) for _ in range(4)]
    r = random_rule(ArchShape.of(base), rng)
    plain = fedavg([ClientUpdate(i, m, np.zeros((1, 4)), 1) for i, m in enumerate(models)])
    shuf = fedavg([ClientUpdate(i, shuffle_model(m, r), np.zeros((1, 4)), 1) for i, m in enumerate(models)])
    assert shuf.equals(shuffle_model(plain, r))


def test_labels_and_outputs_consistent(rng):
    shape = ArchShape("mlp", 4, (3,), 5)
    r = ShuffleRule.derive(11, shape)
    y = np.arange(5)
    onehot = np.eye(5)
    # the shuffled one-hot of y has its 1 at shuffle_labels(y)
    assert np.array_equal(np.argmax(shuffle_output(onehot, r), axis=1), shuffle_labels(y, r))
    np.testing.assert_array_equal(unshuffle_output(shuffle_output(onehot, r), r), onehot)


def test_token_input_shuffle(rng):
    shape = ArchShape("transformer", 3, (4,), 2, n_tokens=5)
    r = ShuffleRule.derive(2, shape)
    x = rng.random((5, 3))
    xs = shuffle_input(x, r)
    np.testing.assert_array_equal(xs, x[r.token_perm][:, r.intra_perm])
    np.testing.assert_array_equal(unshuffle_input(xs, r), x)


def test_input_shuffler_estimator(rng):
    X = rng.random((4, 6))
    t = InputShuffler(seed=7).fit(X)
    Xs = t.transform(X)
    np.testing.assert_array_equal(t.inverse_transform(Xs), X)
    assert t.get_params() == {"seed": 7}
    assert np.array_equal(Xs, InputShuffler(seed=7).fit_transform(X))
