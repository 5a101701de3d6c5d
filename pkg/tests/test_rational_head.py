import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rational_transductor.autodiff import Tape, backward, grad_check
from rational_transductor.errors import InputError, ShapeError
from rational_transductor.rational_head import (audit, build_transitions, head_backward, head_forward,
                                                init_near_identity, make_head, record_head, reproject,
                                                spectral_project, transition_table)
from rational_transductor.scan import scan_backward
from rational_transductor.serialize import _assign_head

KINDS = {
    "scaled_cayley": {},
    "scaled_cayley_decay": {"conserve": False},
    "stochastic": {},
    "dplr": {"rank": 2, "gamma": 0.97},
    "affine": {},
    "shared_basis": {"n_basis": 3},
}


def build(name, d=3, V=2, seed=0, nu=0.1, eps=0.05):
    kind = "scaled_cayley" if name.startswith("scaled_cayley") else name
    head = init_near_identity(make_head(kind, d, V, **KINDS[name]), eps, nu, seed)
    rng = np.random.default_rng(seed + 100)
    if kind == "dplr":
        head.params["D"] = 0.8 * head.params["D"]  # keep inside the bound so the projection factor is 1
    for k, v in head.params.items():
        if k in ("W", "logits", "coef", "A", "b", "B"):
            head.params[k] = v + 0.2 * rng.standard_normal(v.shape)
    return head


def test_cayley_zero_is_identity():
    head = init_near_identity(make_head("scaled_cayley", 4, 2), 0.0, 0.0)
    m, _ = transition_table(head)
    assert np.array_equal(m, np.broadcast_to(np.eye(4), m.shape))


def test_cayley_2x2_rotation():
    a = 0.7
    head = make_head("scaled_cayley", 2, 1)
    head.params = {"W": np.array([[[0.0, a / 2], [-a / 2, 0.0]]])}  # A = W - W^T = [[0, a], [-a, 0]]
    m, _ = transition_table(head)
    phi = 2 * np.arctan(a)
    # (I - A)^{-1}(I + A) with A = [[0, a], [-a, 0]] rotates clockwise by phi.
    expect = np.array([[np.cos(phi), np.sin(phi)], [-np.sin(phi), np.cos(phi)]])
    assert np.max(np.abs(m[0] - expect)) <= 1e-12


def test_stochastic_uniform_logits():
    head = make_head("stochastic", 4, 2)
    head.params = {"logits": np.zeros((2, 4, 4))}
    m, _ = transition_table(head)
    assert np.allclose(m, 0.25, atol=1e-15)


def test_spectral_project_examples(rng):
    w = np.diag([0.5, 0.1])
    assert spectral_project(w, 0.99) is w
    g = 0.8
    assert np.allclose(spectral_project(2 * g * np.eye(3), g), g * np.eye(3), atol=1e-15)
    w = rng.standard_normal((5, 5))
    w *= 3 / np.linalg.norm(w, 2)
    assert abs(np.linalg.norm(spectral_project(w, g), 2) - g) <= 1e-8


def test_near_identity_perturbation_bound(rng):
    nu, d = 1e-3, 8
    head = init_near_identity(make_head("scaled_cayley", d, 2), 0.01, nu, rng)
    h = head_forward(head, rng.integers(0, 2, 100))
    assert np.linalg.norm(h[-1] - head.alpha) <= 100 * nu * d


def test_integrator_at_init(rng):
    head = init_near_identity(make_head("scaled_cayley", 8, 2), seed=rng)
    h = head_forward(head, rng.integers(0, 2, 40))
    assert np.linalg.norm(h[-1] - head.alpha) / np.linalg.norm(head.alpha) <= 0.1


def test_stochastic_conserves_mass(rng):
    head = build("stochastic", d=5, V=3)
    alpha = rng.dirichlet(np.ones(5))
    h = head_forward(head, rng.integers(0, 3, 500), alpha=alpha)
    assert np.max(np.abs(h.sum(axis=-1) - 1)) <= 1e-12


def test_cayley_conserves_norm(rng):
    head = build("scaled_cayley", d=6, V=3)
    h = head_forward(head, rng.integers(0, 3, 4096))
    assert np.max(np.abs(np.linalg.norm(h, axis=-1) - 1)) <= 1e-10


def test_init_examples():
    head = init_near_identity(make_head("dplr", 4, 3), 0.0, 0.0)
    m, _ = transition_table(head)
    assert np.array_equal(m, np.broadcast_to(np.eye(4), m.shape))
    head = init_near_identity(make_head("stochastic", 4, 2), 0.0, 0.0)
    m, _ = transition_table(head)
    assert np.allclose(np.diagonal(m, axis1=-2, axis2=-1), np.e**4 / (np.e**4 + 3), atol=1e-12)
    with pytest.raises(InputError):
        init_near_identity(make_head("dplr", 4, 3), 0.2, 0.0)


def test_decay_gain_init():
    head = init_near_identity(make_head("scaled_cayley", 3, 2, conserve=False))
    m, _ = transition_table(head)
    assert np.allclose(np.linalg.norm(m, 2, axis=(-2, -1)), 1 / (1 + np.exp(-4.0)), atol=1e-12)


def _head_loss(head, tokens, weights):
    def f(params):
        _assign_head(head, {k[len("head."):]: v for k, v in params.items()})
        t = Tape()
        h = record_head(head, t, tokens)
        return t, t.sum(t.mul(h, t.const(weights)))
    return f


@pytest.mark.parametrize("name", list(KINDS))
def test_head_gradients_fd(name, rng):
    head = build(name)
    tokens = rng.integers(0, 2, (2, 6))
    weights = rng.standard_normal((2, 6, head.dim))
    err = grad_check(_head_loss(head, tokens, weights), head.named_params("head."))
    assert err <= 1e-5


def test_mixture_gradients_and_direct_sum(rng):
    subs = [init_near_identity(make_head("scaled_cayley", 2, 2), 0, 0.1, 1),
            init_near_identity(make_head("stochastic", 3, 2), 0, 0.1, 2)]
    head = make_head("mixture", 0, 2, subheads=subs)
    tokens = rng.integers(0, 2, 9)
    h = head_forward(head, tokens)
    assert np.array_equal(h, np.hstack([head_forward(s, tokens) for s in subs]))
    assert audit(head)["block_diagonal"] == (True, 0.0)
    weights = rng.standard_normal((9, 5))
    assert grad_check(_head_loss(head, tokens, weights), head.named_params("head.")) <= 1e-5


@pytest.mark.parametrize("name", list(KINDS))
def test_head_backward_matches_tape(name, rng):
    head = build(name)
    tokens = rng.integers(0, 2, (3, 11))
    up = rng.standard_normal((3, 11, head.dim))
    states = head_forward(head, tokens)
    direct = head_backward(head, tokens, states, up)
    t = Tape()
    h = record_head(head, t, tokens)
    via_tape = backward(t, seeds={h: up})
    for k, v in direct.items():
        assert np.allclose(v, via_tape["head." + k], rtol=1e-12, atol=1e-12)


def test_head_backward_zero_upstream(rng):
    head = build("dplr")
    tokens = rng.integers(0, 2, 7)
    g = head_backward(head, tokens, head_forward(head, tokens), np.zeros((7, head.dim)))
    assert all(np.all(v == 0) for v in g.values())


def test_head_backward_shape_error(rng):
    head = build("stochastic")
    with pytest.raises(ShapeError):
        head_backward(head, [0, 1], head_forward(head, [0, 1]), np.zeros((3, head.dim)))


def test_orthogonal_adjoint_norm(rng):
    head = build("scaled_cayley", d=4)
    tokens = rng.integers(0, 2, 300)
    t = Tape()
    ops, _ = build_transitions(head, tokens, t)
    dT = rng.standard_normal(4)
    deltas = scan_backward(t.value(ops), np.zeros((300, 4)), dT)
    assert abs(np.linalg.norm(deltas[0]) - np.linalg.norm(dT)) <= 1e-12


def test_audit_and_reproject(rng):
    head = build("dplr", d=4)
    head.params["D"] = head.params["D"] * 3
    reproject(head)
    res = audit(head)
    assert res["spectral_bound"][0]
    assert audit(build("scaled_cayley"))["orthogonal"][0]
    assert audit(build("stochastic"))["column_stochastic"][0]


def test_empty_sequence():
    head = build("stochastic")
    h = head_forward(head, np.zeros(0, dtype=int))
    assert np.array_equal(h, [head.alpha])


def test_bad_token():
    with pytest.raises(InputError):
        head_forward(build("stochastic"), [0, 5])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_dplr_contraction_bound_property(seed, T):
    rng = np.random.default_rng(seed)
    head = init_near_identity(make_head("dplr", 3, 2, rank=1, gamma=0.9), 0.1, 0.1, rng)
    head.params["U"] = head.params["U"] + rng.standard_normal(head.params["U"].shape)
    m, _ = transition_table(head)
    assert np.all(np.linalg.norm(m, 2, axis=(-2, -1)) <= 0.9 + 1e-8)
    tokens = rng.integers(0, 2, T)
    dT = rng.standard_normal(3)
    v = rng.standard_normal((T, 3))
    deltas = scan_backward(m[tokens], v, dT)
    assert np.max(np.linalg.norm(deltas, axis=-1)) <= np.linalg.norm(dT) + T * np.max(np.linalg.norm(v, axis=-1)) + 1e-9
