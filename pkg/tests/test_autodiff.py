import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctkt import autodiff as ad
from ctkt.errors import ContractError, DegenerateRowError, DimensionError, DomainError
from ctkt.gradcheck import check_gradients


def T(x, rg=True):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


class TestForwardValues:
    def test_matmul_identity(self):
        a = T(np.eye(2))
        b = T([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(a, b)
        np.testing.assert_allclose(out.data, [[1, 2], [3, 4]])

    def test_matmul_dot(self):
        out = ad.matmul(T([[1.0, 2.0]]), T([[3.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_matmul_mismatch(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\)"):
            ad.matmul(T(np.zeros((2, 3))), T(np.zeros((2, 3))))

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(T(0.0)).item() == 0.5

    def test_exp_log_inverse(self):
        x = T(2.5)
        assert abs(ad.exp(ad.log(x)).item() - 2.5) < 1e-12

    def test_add_vectors(self):
        np.testing.assert_allclose(ad.add(T([1.0, 2.0]), T([3.0, 4.0])).data, [4.0, 6.0])

    def test_scalar_broadcast_only(self):
        with pytest.raises(DimensionError):
            ad.add(T(np.zeros(3)), T(np.zeros((3, 1))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(T([1.0, 0.0]))
        out = ad.log(T([1.0, 0.0]), zero_to_neg_inf=True)
        assert out.data[1] == -np.inf

    def test_softmax_uniform(self):
        np.testing.assert_allclose(ad.softmax(T([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_softmax_mask_sentinel(self):
        out = ad.softmax(T([0.0, -np.inf]))
        np.testing.assert_array_equal(out.data, [1.0, 0.0])

    def test_softmax_derived_pair(self):
        # independent evaluation of e^x / sum e^x
        x = np.array([1.0, 2.0])
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(ad.softmax(T(x)).data, expected, atol=1e-12)

    def test_softmax_degenerate_row(self):
        with pytest.raises(DegenerateRowError):
            ad.softmax(T([-np.inf, -np.inf]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6))
def test_softmax_rows_sum_to_one_and_shift_invariant(xs):
    x = np.asarray(xs)
    y = ad.softmax(T(x)).data
    assert abs(y.sum() - 1.0) < 1e-12
    y2 = ad.softmax(T(x + 7.25)).data
    assert np.max(np.abs(y - y2)) < 1e-12


class TestBackward:
    def test_quadratic(self):
        x = T([1.0, 2.0])
        with ad.new_graph():
            loss = ad.tsum(ad.mul(x, x))
            ad.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_sigmoid_prime_at_zero(self):
        w = T(0.0)
        with ad.new_graph():
            ad.backward(ad.sigmoid(w))
        assert abs(w.grad - 0.25) < 1e-15

    def test_non_scalar_root(self):
        x = T([1.0, 2.0])
        with ad.new_graph():
            y = ad.mul(x, x)
            with pytest.raises(ContractError):
                ad.backward(y)

    def test_root_without_graph(self):
        with pytest.raises(ContractError):
            ad.backward(T(1.0))

    def test_repeated_backward_accumulates(self):
        x = T([3.0])
        with ad.new_graph():
            loss = ad.tsum(ad.mul(x, x))
            ad.backward(loss)
            ad.backward(loss)
        np.testing.assert_allclose(x.grad, [12.0])

    def test_fanout_sums_both_contributions(self):
        x = T([0.3, -0.7])

        def build():
            return ad.add(ad.tsum(ad.mul(x, x)), ad.tsum(ad.sigmoid(x)))

        worst, n = check_gradients(build, [x])
        assert n == 2
        assert worst <= 1e-4

    def test_no_grad_suppresses_tape(self):
        x = T([1.0])
        with ad.new_graph() as g:
            with ad.no_grad():
                y = ad.mul(x, x)
            assert len(g.nodes) == 0
            assert not y.requires_grad


def _rng_cases(seed):
    rng = np.random.default_rng(seed)
    return rng


@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_finite_differences(seed):
    rng = _rng_cases(seed)
    a = T(rng.standard_normal((3, 4)))
    b = T(rng.standard_normal((4, 2)))
    v = T(rng.standard_normal(4))
    s = T(rng.standard_normal(()))
    gain = T(rng.standard_normal(4) * 0.2 + 1.0)
    bias = T(rng.standard_normal(4) * 0.2)

    c1 = ad.Tensor(rng.standard_normal((3, 4)))
    c2 = ad.Tensor(rng.standard_normal((3, 4)))

    cases = {
        "matmul": lambda: ad.tsum(ad.matmul(a, b)),
        "chain": lambda: ad.tsum(ad.sigmoid(ad.matmul(a, b))),
        "softmax": lambda: ad.tsum(ad.mul(ad.softmax(a), c1)),
        "log_softmax": lambda: ad.tmean(ad.take_index_rows(ad.log_softmax(a), [1, 0, 3])),
        "max": lambda: ad.tsum(ad.tmax(a, axis=1)),
        "layer_norm": lambda: ad.tsum(ad.mul(ad.layer_norm(a, gain, bias), c2)),
        "rowvec": lambda: ad.tsum(ad.exp(ad.scale(ad.add_rowvec(a, v), 0.3))),
        "scalar_mix": lambda: ad.tsum(ad.div(ad.mul(a, s), ad.add(ad.mul(s, s), ad.Tensor(1.0)))),
        "slice_concat": lambda: ad.tsum(ad.concat([ad.slice_cols(a, 0, 2), ad.slice_cols(a, 2, 4)], axis=1)),
        "rows": lambda: ad.tsum(ad.mul(ad.row(a, 1), ad.row(a, 2))),
        "take_rows": lambda: ad.tsum(ad.take_rows(a, [0, 2, 2, 1])),
        "stack": lambda: ad.tsum(ad.stack_rows([ad.row(a, 0), ad.row(a, 2)])),
        "sqrt": lambda: ad.tsum(ad.sqrt(ad.add(ad.mul(a, a), ad.Tensor(0.5)))),
        "mean_axis": lambda: ad.tsum(ad.tmean(a, axis=0)),
    }
    for name, build in cases.items():
        worst, n = check_gradients(build, [a, b, v, s, gain, bias])
        assert worst <= 1e-4, f"{name}: rel err {worst:.2e} over {n} coords (seed {seed})"
