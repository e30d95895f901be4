import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctkt import autodiff as ad
from ctkt import losses
from ctkt.errors import ContractError, DegenerateVectorError, DimensionError
from ctkt.gradcheck import check_gradients


def T(x, rg=False):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


class TestLossConfig:
    def test_defaults(self):
        cfg = losses.LossConfig()
        assert cfg.k == 20.0 and cfg.lam == 0.3 and cfg.beta == 0.3 and cfg.aux_kind == "cosine"

    @pytest.mark.parametrize("bad", [dict(k=0), dict(lam=0.0), dict(lam=1.0), dict(beta=-0.1), dict(aux_kind="l1")])
    def test_invalid(self, bad):
        with pytest.raises(ContractError):
            losses.LossConfig(**bad)


class TestCosine:
    def test_identical_rows_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert abs(losses.cosine_embedding_loss(T(x), T(x.copy()), 20.0).item()) < 1e-12

    def test_orthogonal_pairs(self):
        a = T([[1.0, 0.0], [0.0, 2.0]])
        b = T([[0.0, 3.0], [5.0, 0.0]])
        assert abs(losses.cosine_embedding_loss(a, b, 20.0).item() - 40.0) < 1e-12

    def test_antiparallel(self):
        a = T([[1.0, 1.0]])
        b = T([[-2.0, -2.0]])
        assert abs(losses.cosine_embedding_loss(a, b, 1.0).item() - 2.0) < 1e-12

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateVectorError):
            losses.cosine_embedding_loss(T([[0.0, 0.0]]), T([[1.0, 0.0]]), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100.0))
    def test_row_scale_invariance_and_range(self, seed, c):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((3, 5)) + 0.1
        b = rng.standard_normal((3, 5)) + 0.1
        k, n = 20.0, 3
        base = losses.cosine_embedding_loss(T(a), T(b), k).item()
        scaled = losses.cosine_embedding_loss(T(a * c), T(b), k).item()
        assert abs(base - scaled) < 1e-9
        assert -1e-9 <= base <= 2 * k * n + 1e-9

    def test_zero_iff_positively_parallel(self):
        a = np.array([[1.0, 2.0], [3.0, -1.0]])
        scaled = a * np.array([[2.0], [0.5]])
        assert abs(losses.cosine_embedding_loss(T(scaled), T(a), 20.0).item()) < 1e-9
        flipped = a.copy()
        flipped[0] *= -1
        assert losses.cosine_embedding_loss(T(flipped), T(a), 20.0).item() > 1e-6


class TestMse:
    def test_identical_zero(self):
        x = np.ones((2, 3))
        assert losses.mse_aux_loss(T(x), T(x.copy())).item() == 0.0

    def test_unit_difference(self):
        a = np.zeros((2, 3))
        assert abs(losses.mse_aux_loss(T(a + 1.0), T(a)).item() - 1.0) < 1e-15

    def test_hand_value(self):
        a = T([[1.0, 3.0]])
        b = T([[0.0, 0.0]])
        assert abs(losses.mse_aux_loss(a, b).item() - 5.0) < 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            losses.mse_aux_loss(T(np.zeros((2, 3))), T(np.zeros((3, 2))))


class TestCrossEntropy:
    def test_uniform(self):
        logits = T(np.zeros((3, 4)))
        assert abs(losses.cross_entropy(logits, (1, 2, 3)).item() - math.log(4)) < 1e-12

    def test_saturated(self):
        logits = np.zeros((2, 5))
        logits[0, 2] = 20.0
        logits[1, 4] = 20.0
        assert losses.cross_entropy(T(logits), (2, 4)).item() < 1e-8

    def test_two_class_hand_value(self):
        logits = T(np.array([[0.0, 1.0], [0.0, 1.0]]))
        got = losses.cross_entropy(logits, (1, 0)).item()
        want = -(math.log(math.e / (1 + math.e)) + math.log(1 / (1 + math.e))) / 2
        assert abs(got - want) < 1e-6

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            losses.cross_entropy(T(np.zeros((1, 3))), (3,))


class TestMtlCombine:
    def test_midpoint(self):
        out = losses.mtl_combine(T(2.0), T(4.0), 0.5)
        assert out.item() == 3.0

    def test_paper_default_weight(self):
        out = losses.mtl_combine(T(1.0), T(0.0), 0.3)
        assert abs(out.item() - 0.3) < 1e-15

    def test_near_one_weight_bound(self):
        l, aux = 1.7, -3.0
        out = losses.mtl_combine(T(l), T(aux), 0.999).item()
        assert abs(out - l) <= 0.001 * abs(aux - l) + 1e-12

    @pytest.mark.parametrize("w", [0.0, 1.0, -0.2, 1.7])
    def test_open_interval(self, w):
        with pytest.raises(ContractError):
            losses.mtl_combine(T(1.0), T(2.0), w)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 0.99))
    def test_exactly_linear(self, a, b, w):
        got = losses.mtl_combine(T(a), T(b), w).item()
        assert got == w * a + (1 - w) * b


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(40 + seed)
    a = T(rng.standard_normal((3, 4)) + 0.2, rg=True)
    b = T(rng.standard_normal((3, 4)) + 0.2, rg=True)
    logits = T(rng.standard_normal((3, 5)), rg=True)
    target = tuple(int(x) for x in rng.integers(0, 5, size=3))

    cases = {
        "cosine": lambda: losses.cosine_embedding_loss(a, b, 20.0),
        "mse": lambda: losses.mse_aux_loss(a, b),
        "ce": lambda: losses.cross_entropy(logits, target),
        "mtl": lambda: losses.mtl_combine(
            losses.cosine_embedding_loss(a, b, 20.0), losses.mse_aux_loss(a, b), 0.3
        ),
    }
    for name, build in cases.items():
        worst, _ = check_gradients(build, [a, b, logits])
        assert worst <= 1e-4, f"{name}: {worst:.2e}"
