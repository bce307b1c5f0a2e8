import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynpred.errors import ConfigurationError, DimensionError
from dynpred.flow import (
    FlowExpert,
    LinearProjection,
    estimate_flow,
    flow_loss,
    flow_loss_backward,
    linear_projection,
    warp,
)
from dynpred.numerics import finite_diff_check

FIELD = np.array([[0.0, 1.0], [2.0, 3.0]])


def test_warp_zero_flow_is_identity():
    f = np.random.default_rng(0).standard_normal((5, 7))
    np.testing.assert_array_equal(warp(f, np.zeros_like(f), np.zeros_like(f)), f)


def test_warp_worked_examples():
    np.testing.assert_array_equal(warp(FIELD, np.ones((2, 2)), np.zeros((2, 2))), [[2, 3], [2, 3]])
    np.testing.assert_array_equal(warp(FIELD, np.full((2, 2), 0.5), np.zeros((2, 2))), [[1, 2], [2, 3]])
    # v displaces columns
    np.testing.assert_array_equal(warp(FIELD, np.zeros((2, 2)), np.ones((2, 2))), [[1, 1], [3, 3]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_warp_bounded_by_field_range(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((4, 5))
    out = warp(f, rng.normal(0, 3, (4, 5)), rng.normal(0, 3, (4, 5)))
    assert f.min() - 1e-12 <= out.min() and out.max() <= f.max() + 1e-12


def test_flow_loss_examples():
    zero = np.zeros((1, 2, 2, 2))
    a = np.stack([np.zeros((1, 2, 2)), np.ones((1, 2, 2))])
    assert flow_loss(a, a, zero)[0] == 1.0
    b = np.stack([FIELD[None], FIELD[None]])
    flows = np.zeros((1, 2, 2, 2))
    flows[0, 0] = 1.0
    assert flow_loss(b, b, flows)[0] == 1.0
    same = np.stack([FIELD[None]] * 3)
    assert flow_loss(same, same, np.zeros((2, 2, 2, 2)))[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flow_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((2, 3, 2, 4, 4))
    flows = rng.normal(0, 2, (2, 2, 2, 4, 4))
    assert flow_loss(proj, proj, flows)[0] >= 0.0


def test_flow_loss_errors():
    with pytest.raises(ConfigurationError):
        flow_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.zeros((0, 2, 2, 2)))
    with pytest.raises(DimensionError):
        flow_loss(np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 3, 3)), np.zeros((1, 2, 2, 2)))
    with pytest.raises(DimensionError):
        flow_loss(np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 2, 2)), np.zeros((1, 2, 3, 3)))


@pytest.mark.parametrize("i", range(20))
def test_flow_loss_gradients(i):
    rng = np.random.default_rng(700 + i)
    proj = rng.standard_normal((2, 3, 2, 4, 5))
    # flows whose displaced coordinates sit strictly inside grid cells, away from kinks and clamps
    ii = np.arange(4)[:, None]
    jj = np.arange(5)[None, :]
    tr = rng.integers(0, 3, (2, 2, 4, 5)) + rng.uniform(0.1, 0.9, (2, 2, 4, 5))
    tc = rng.integers(0, 4, (2, 2, 4, 5)) + rng.uniform(0.1, 0.9, (2, 2, 4, 5))
    flows = np.stack([tr - ii, tc - jj], axis=2)
    loss, cache = flow_loss(proj, proj, flows)
    d_proj, d_flows = flow_loss_backward(cache)
    err = finite_diff_check(lambda: flow_loss(proj, proj, flows)[0], [proj, flows], [d_proj, d_flows])
    assert err < 1e-6


def _tiny_expert(seed, kernel=3, n_up=1, dtype=np.float64):
    rng = np.random.default_rng(seed)
    expert = FlowExpert(3, 2, kernel, n_up, rng=rng, dtype=dtype, flow_init_gain=1.0)
    # random biases: zero biases after a ReLU put pre-activations exactly on the kink
    for name, p in expert.named_params().items():
        if name.endswith("bias"):
            p.values[...] = rng.normal(0, 0.1, p.shape)
    return expert


@pytest.mark.parametrize("i", range(20))
def test_expert_gradients(i):
    expert = _tiny_expert(800 + i, kernel=(3, 5)[i % 2], n_up=i % 2)
    rng = np.random.default_rng(900 + i)
    z = rng.standard_normal((2 * 3, 3, 3, 3))
    proj, flows = expert.forward(z, 3)
    wp = rng.standard_normal(proj.shape)
    wf = rng.standard_normal(flows.shape)
    for p in expert.named_params().values():
        p.zero_grad()
    dz = expert.backward(wp, wf)
    params = list(expert.named_params().values())

    def fn():
        a, b = expert.forward(z, 3)
        return np.concatenate([(a * wp).ravel(), (b * wf).ravel()])

    err = finite_diff_check(fn, [z] + [p.values for p in params], [dz] + [p.grad.copy() for p in params])
    assert err < 1e-5


@pytest.mark.parametrize("i", range(20))
def test_linear_projection_gradients(i):
    rng = np.random.default_rng(1000 + i)
    proj = LinearProjection(3, 2, i % 3, rng=rng, dtype=np.float64)
    z = rng.standard_normal((4, 3, 2, 2))
    y = proj.forward(z, 2)
    w = rng.standard_normal(y.shape)
    dz = proj.backward(w)
    params = list(proj.named_params().values())
    err = finite_diff_check(lambda: proj.forward(z, 2), [z] + [p.values for p in params],
                            [dz] + [p.grad.copy() for p in params], weights=w)
    assert err < 1e-6


def test_expert_shapes_and_projection_match():
    rng = np.random.default_rng(0)
    expert = FlowExpert(8, 4, 7, 2, rng=rng, dtype=np.float64)
    proj_layer = LinearProjection(8, 4, 2, rng=rng, dtype=np.float64)
    z = rng.standard_normal((10, 8, 4, 4))
    proj, flows = estimate_flow(z, expert)
    assert proj.shape == (10, 4, 16, 16) and flows.shape == (9, 2, 16, 16)
    assert linear_projection(z, proj_layer).shape == proj.shape


def test_expert_zero_params_give_zero_outputs():
    expert = _tiny_expert(1)
    for p in expert.named_params().values():
        p.values[...] = 0
    proj, flows = expert.forward(np.random.default_rng(0).standard_normal((4, 3, 3, 3)), 2)
    assert not proj.any() and not flows.any()


def test_identity_projection():
    rng = np.random.default_rng(0)
    proj = LinearProjection(3, 3, 0, rng=rng, dtype=np.float64)
    proj.net.layers[0][1].spec.kernel.values[...] = np.eye(3)[:, :, None, None]
    z = rng.standard_normal((4, 3, 5, 5))
    np.testing.assert_array_equal(proj.forward(z, 2).reshape(z.shape), z)


def test_global_and_local_experts_share_code_path():
    a = _tiny_expert(5)
    b = _tiny_expert(6)
    for (_, pa), (_, pb) in zip(a.named_params().items(), b.named_params().items()):
        pb.values[...] = pa.values
    z = np.random.default_rng(2).standard_normal((6, 3, 3, 3))
    for x, y in zip(a.forward(z, 3), b.forward(z, 3)):
        np.testing.assert_array_equal(x, y)


def test_expert_rejects_bad_step_split():
    with pytest.raises(DimensionError):
        _tiny_expert(0).forward(np.zeros((5, 3, 3, 3)), 2)
