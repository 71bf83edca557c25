import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimax import autodiff as ad
from mimax.autodiff import Tensor
from mimax.gradcheck import check_gradients, numerical_grad, relative_error


def leaf(arr):
    return Tensor(arr, requires_grad=True)


def test_matmul_identity_and_hand_case():
    out = ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[3], [4]])
    np.testing.assert_array_equal(ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])


def test_matmul_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    assert check_gradients(lambda: ad.sum(a @ b), [a, b]) < 1e-6


def test_stop_gradient_product_rule():
    x = leaf([2.0])
    out = ad.sum(ad.stop_gradient(x) * x)
    out.backward()
    assert out.item() == 4.0
    np.testing.assert_array_equal(x.grad, [2.0])


def test_stop_gradient_blocks_everything():
    x = leaf([1.0, -3.0, 0.5])
    y = ad.exp(x) * 2.0
    out = ad.sum(ad.stop_gradient(y)) + ad.sum(x * 0.0)
    out.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 0.0])


def test_stop_gradient_is_forward_transparent():
    rng = np.random.default_rng(1)
    x = leaf(rng.normal(size=(5, 3)))
    plain = ad.l2_normalize_rows(ad.relu(x) + 1.0)
    stopped = ad.l2_normalize_rows(ad.stop_gradient(ad.relu(x)) + 1.0)
    assert plain.data.tobytes() == stopped.data.tobytes()


def test_elementwise_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(ad.log(ad.exp(Tensor([0.5]))).data, [0.5], rtol=0, atol=1e-15)
    assert ad.variance(Tensor([1.0, 2.0, 3.0])).item() == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert ad.variance(Tensor([1.0, 2.0, 3.0]), unbiased=True).item() == pytest.approx(1.0, abs=1e-15)


def test_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([-2.0]))


def test_unbiased_variance_needs_two_entries():
    with pytest.raises(ad.DimensionError):
        ad.variance(Tensor([1.0]), unbiased=True)


def test_relu_gradient_at_kink_is_zero():
    x = leaf([0.0, 1.0])
    ad.sum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_l2_normalize_rows_values():
    out = ad.l2_normalize_rows(Tensor([[3.0, 4.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.6, 0.8, 0.0]], atol=1e-12)
    unit = np.array([[0.0, 1.0, 0.0], [0.6, 0.0, 0.8]])
    np.testing.assert_allclose(ad.l2_normalize_rows(Tensor(unit)).data, unit, atol=1e-12)


def test_l2_normalize_rows_degenerate():
    with pytest.raises(ad.DegenerateRowError):
        ad.l2_normalize_rows(Tensor([[1.0, 0.0], [0.0, 0.0]]))


def test_l2_normalize_rows_gradient():
    rng = np.random.default_rng(2)
    x = leaf(rng.normal(size=(6, 3)))
    w = rng.normal(size=(6, 3))
    assert check_gradients(lambda: ad.sum(ad.l2_normalize_rows(x) * w), [x]) < 1e-5


def test_cosine_sim_matrix_cases():
    e = Tensor([[0.0, 0.0, 1.0]])
    np.testing.assert_allclose(ad.cosine_sim_matrix(e, e).data, [[1.0]], atol=1e-12)
    a = Tensor([[1.0, 0.0], [2.0, 0.0]])
    b = Tensor([[0.0, 3.0], [-1.0, 0.0]])
    sim = ad.cosine_sim_matrix(a, b).data
    assert sim[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert sim[1, 1] == pytest.approx(-1.0, abs=1e-11)  # norm floor perturbs at 1e-12
    with pytest.raises(ad.DegenerateRowError):
        ad.cosine_sim_matrix(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]))


def test_cosine_sim_matrix_bounded():
    rng = np.random.default_rng(3)
    sim = ad.cosine_sim_matrix(Tensor(rng.normal(size=(40, 3))), Tensor(rng.normal(size=(40, 3)))).data
    assert sim.max() <= 1.0 and sim.min() >= -1.0


def test_logsumexp_masked_matches_naive():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 5)) * 3
    mask = ad.offdiag_mask(5)
    expected = np.log(np.sum(np.exp(x[mask])))
    assert ad.logsumexp(Tensor(x), mask=mask).item() == pytest.approx(expected, abs=1e-12)
    generic = np.array(mask)  # distinct object takes the general path
    assert ad.logsumexp(Tensor(x), mask=generic).item() == pytest.approx(expected, abs=1e-12)
    rows = ad.logsumexp(Tensor(x), axis=1).data
    np.testing.assert_allclose(rows, np.log(np.exp(x).sum(axis=1)), atol=1e-12)


def test_logsumexp_empty_mask():
    with pytest.raises(ad.DimensionError):
        ad.logsumexp(Tensor(np.ones((1, 1))), mask=ad.offdiag_mask(1))


def _compose(op, x, w):
    return ad.sum(op(x) * w)


PRIMITIVES = {
    "add": lambda x: x + x * 0.5,
    "sub": lambda x: x - ad.exp(x),
    "mul": lambda x: x * x,
    "div": lambda x: x / (ad.exp(x) + 1.0),
    "scalar_mul": lambda x: ad.scalar_mul(x, -2.5),
    "exp": ad.exp,
    "log": lambda x: ad.log(ad.exp(x) + 0.5),
    "sqrt": lambda x: ad.sqrt(x * x + 1.0),
    "relu": ad.relu,
    "softplus": ad.softplus,
    "sum_axis0": lambda x: ad.sum(x, axis=0, keepdims=True) * x,
    "mean_axis1": lambda x: ad.mean(x, axis=1, keepdims=True) * x,
    "variance": lambda x: ad.variance(x, axis=0, keepdims=True) * x,
    "variance_unbiased": lambda x: ad.variance(x, axis=1, keepdims=True, unbiased=True) * x,
    "transpose": lambda x: ad.transpose(x) @ x,
    "matmul": lambda x: x @ ad.transpose(x),
    "l2_normalize_rows": ad.l2_normalize_rows,
    "cosine_sim_matrix": lambda x: ad.cosine_sim_matrix(x, ad.exp(x)),
    "rowwise_cosine": lambda x: ad.rowwise_cosine(x, x * x + 0.3),
    "logsumexp_rows": lambda x: ad.logsumexp(x, axis=1),
    "logsumexp_masked": lambda x: ad.logsumexp(x @ ad.transpose(x), mask=ad.offdiag_mask(4)),
    "diagonal": lambda x: ad.diagonal(x @ ad.transpose(x)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(100 + seed)
    data = rng.normal(size=(4, 3))
    data[np.abs(data) < 1e-3] = 0.5  # keep away from relu kinks
    x = leaf(data)
    op = PRIMITIVES[name]
    w = rng.normal(size=op(Tensor(data)).shape)
    assert check_gradients(lambda: _compose(op, x, w), [x], step=1e-5) < 1e-4


def test_shared_subexpressions_accumulate_over_paths():
    # f = a*b + a*c + (a*b)*c with b = exp(a), c = a + 1: five paths from a
    x = leaf([0.7])
    b = ad.exp(x)
    c = x + 1.0
    ab = x * b
    out = ad.sum(ab + x * c + ab * c)
    out.backward()
    a = 0.7
    eb = np.exp(a)
    # brute-force per-path sum of products of local derivatives
    d_ab = eb + a * eb  # through a directly and through b
    paths = d_ab + (a + 1.0) + a + d_ab * (a + 1.0) + a * eb
    assert x.grad[0] == pytest.approx(paths, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=1, max_value=6))
def test_random_dag_matches_finite_differences(seed, n_nodes):
    rng = np.random.default_rng(seed)
    x = leaf(rng.normal(size=(3,)))
    unary = [ad.exp, ad.softplus, lambda t: ad.scalar_mul(t, 0.7), lambda t: t * t]
    picks = rng.integers(0, 4, size=n_nodes)
    others = rng.integers(0, 10**6, size=n_nodes)

    def fn():
        nodes = [x]
        for k, o in zip(picks, others):
            prev = nodes[o % len(nodes)]
            nodes.append(unary[k](prev) + nodes[-1] * 0.1)
        return ad.sum(nodes[-1])

    assert check_gradients(fn, [x], step=1e-6) < 1e-4


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ad.DimensionError):
        (x * 2.0).backward()


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_numerical_grad_restores_parameter():
    x = leaf([1.0, 2.0])
    before = x.data
    numerical_grad(lambda: ad.sum(x * x), x)
    assert x.data is before
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
