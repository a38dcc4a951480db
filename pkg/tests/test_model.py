import numpy as np
import pytest

from netsde.graph import build_graph, complete_graph, erdos_renyi
from netsde.model import (ConstantDiagonal, LayoutMismatchError, LinearDrift,
                          ModelError, NegativeAlphaError, NonFiniteStateError,
                          NsdeSpec, ParamVector, RadialDictionaryDrift,
                          TanhClipped, default_bounds, diffusion_eval,
                          diffusion_shape, drift_eval, linear_drift_matrix,
                          pair_index, parameter_layout, params_from_config,
                          params_to_config, path_diffusion_fn, path_drift_fn,
                          spec_from_config, spec_to_config)


def linear_spec(d, intercepts=False, clip=None):
    diffusion = ConstantDiagonal() if clip is None else TanhClipped(clip=clip)
    return NsdeSpec(d=d, drift=LinearDrift(with_intercepts=intercepts),
                    diffusion=diffusion)


def test_pure_momentum_drift():
    # single node, no edges: b(x) = -mu x
    spec = linear_spec(1)
    g = build_graph(1, [])
    theta = ParamVector(alpha=[1.0], beta=[2.0])
    assert drift_eval(spec, g, theta, [3.0]) == pytest.approx([-6.0])


def test_linear_drift_matches_hand_matrix():
    # b(x) = -diag(mu) x + B x with B from the edge coefficients
    spec = linear_spec(3)
    g = build_graph(3, [(0, 1), (2, 0), (2, 1)])
    mu = np.array([1.0, 2.0, 3.0])
    net = np.array([0.5, -1.5, 4.0])
    theta = ParamVector(alpha=np.ones(3), beta=np.concatenate([mu, net]))
    m_hand = np.array([[-1.0, 0.5, 0.0],
                       [0.0, -2.0, 0.0],
                       [-1.5, 4.0, -3.0]])
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(3)
        assert np.allclose(drift_eval(spec, g, theta, x), m_hand @ x,
                           rtol=0, atol=1e-12)
    m, b0 = linear_drift_matrix(spec, g, theta)
    assert np.allclose(m, m_hand, atol=1e-15) and np.allclose(b0, 0.0)


def test_intercepts_shift_the_drift():
    spec = linear_spec(2, intercepts=True)
    g = build_graph(2, [(1, 0)])
    layout = parameter_layout(spec, g)
    theta = layout.pack(alpha=[1.0, 1.0], momentum=[1.0, 1.0],
                        network=[2.0], intercepts=[0.5, -0.5])
    x = np.array([1.0, 3.0])
    want = np.array([-1.0 + 0.5, -3.0 - 0.5 + 2.0 * 1.0])
    assert np.allclose(drift_eval(spec, g, theta, x), want, atol=1e-12)


def test_augmented_drift_uses_pair_weights():
    d = 3
    spec = linear_spec(d)
    g = complete_graph(d)
    layout = parameter_layout(spec, g, augmented=True)
    w = np.arange(1.0, 1.0 + d * (d - 1))
    theta = layout.pack(alpha=np.ones(d), momentum=np.zeros(d), w=w)
    x = np.array([1.0, 2.0, 3.0])
    want = np.zeros(d)
    for i in range(d):
        for j in range(d):
            if i != j:
                want[i] += w[pair_index(i, j, d)] * x[j]
    got = drift_eval(spec, complete_graph(d), theta, x)
    assert np.allclose(got, want, atol=1e-12)


def test_radial_drift_hand_value():
    # one level: b_0 = -mu0 x0 + beta x1 (offset + |x|)^(-(q+1))
    spec = NsdeSpec(d=2, drift=RadialDictionaryDrift(offsets=(1.0,), exponents=(0.5,)),
                    diffusion=ConstantDiagonal())
    g = build_graph(2, [(0, 1)])
    theta = ParamVector(alpha=np.ones(2), beta=np.array([2.0, 3.0, 5.0]))
    x = np.array([1.0, 2.0])
    nrm = np.sqrt(5.0)
    want0 = -2.0 * 1.0 + 5.0 * 2.0 * (1.0 + nrm) ** (-1.5)
    want1 = -3.0 * 2.0
    assert np.allclose(drift_eval(spec, g, theta, x), [want0, want1], atol=1e-12)


def test_path_drift_fn_matches_pointwise_eval():
    rng = np.random.default_rng(4)
    g = erdos_renyi(5, 0.4, seed=9)
    for spec in (linear_spec(5),
                 NsdeSpec(d=5,
                          drift=RadialDictionaryDrift(offsets=(1.0, 2.0),
                                                      exponents=(-0.5, 0.5)),
                          diffusion=ConstantDiagonal())):
        layout = parameter_layout(spec, g)
        theta = layout.unflatten(rng.standard_normal(layout.pi_total) ** 2)
        fn = path_drift_fn(spec, g, theta)
        xs = rng.standard_normal((7, 5))
        batch = fn(xs)
        for t in range(7):
            assert np.allclose(batch[t], drift_eval(spec, g, theta, xs[t]),
                               rtol=0, atol=1e-12)


def test_tanh_clipped_shape_values():
    spec = linear_spec(1, clip=100.0)
    # at x=0 the shape is c tanh(1/c), just below 1
    s0 = diffusion_shape(spec, np.array([0.0]))[0]
    assert s0 == pytest.approx(100.0 * np.tanh(0.01), abs=1e-15)
    sigma = diffusion_eval(spec, np.array([2.0]), np.array([0.0]))[0]
    assert sigma == pytest.approx(2.0 * 100.0 * np.tanh(0.01), abs=1e-12)
    # bounded by alpha * clip, increasing in |x|, even
    xs = np.linspace(-500.0, 500.0, 101)
    s = diffusion_shape(spec, xs)
    assert np.all(s < 100.0) and np.all(s > 0.0)
    assert np.allclose(s, s[::-1], atol=1e-12)
    half = s[xs >= 0]
    assert np.all(np.diff(half) >= 0.0)
    # close to sqrt(1 + x^2) well below the clip
    small = np.array([0.5])
    assert diffusion_shape(spec, small)[0] == pytest.approx(
        np.sqrt(1.25), rel=1e-4)


def test_constant_diffusion_shape():
    spec = linear_spec(3)
    xs = np.random.default_rng(0).standard_normal((4, 3))
    assert np.all(diffusion_shape(spec, xs) == 1.0)
    fn = path_diffusion_fn(spec, ParamVector(alpha=[1.0, 2.0, 3.0], beta=np.zeros(3)))
    assert np.allclose(fn(xs), np.array([1.0, 2.0, 3.0]) * np.ones((4, 3)))


def test_pair_index_is_a_row_major_bijection():
    d = 5
    slots = [pair_index(i, j, d) for i in range(d) for j in range(d) if i != j]
    assert slots == list(range(d * (d - 1)))
    with pytest.raises(LayoutMismatchError):
        pair_index(2, 2, d)


def test_layout_counts_and_ratios():
    spec = linear_spec(8)
    pairs = [(i, j) for i in range(8) for j in range(8) if i != j]
    g = build_graph(8, pairs[:20])
    layout = parameter_layout(spec, g)
    assert layout.pi_total == 36
    assert layout.K_ratio == pytest.approx(36 / 28)
    assert layout.epsilon_ratio(1000, 0.01) == pytest.approx(2.8)


def test_layout_slots_match_names():
    spec = linear_spec(4, intercepts=True)
    g = build_graph(4, [(0, 1), (2, 3)])
    layout = parameter_layout(spec, g)
    names = layout.coord_names
    assert names[layout.alpha_slot(2)] == "alpha_2"
    assert names[layout.momentum_slot(1)] == "mu_1"
    assert names[layout.intercept_slot(3)] == "intercept_3"
    assert names[layout.edge_slot(2, 3)] == "beta_2_3"
    assert layout.pi_total == len(names) == 4 + 4 + 4 + 2
    with pytest.raises(LayoutMismatchError):
        layout.edge_slot(1, 0)


def test_layout_slots_augmented():
    spec = linear_spec(3)
    layout = parameter_layout(spec, complete_graph(3), augmented=True)
    names = layout.coord_names
    assert names[layout.edge_slot(0, 2)] == "w_0_2"
    assert names[layout.edge_slot(2, 0)] == "w_2_0"
    assert layout.pi_w == 6
    assert layout.pi_total == 3 + 3 + 6
    assert list(layout.w_indices) == list(range(6, 12))


def test_layout_radial_levels():
    spec = NsdeSpec(d=3, drift=RadialDictionaryDrift(offsets=(1.0, 1.0),
                                                     exponents=(-0.5, 0.5)),
                    diffusion=ConstantDiagonal())
    g = build_graph(3, [(0, 1), (1, 2)])
    layout = parameter_layout(spec, g)
    assert layout.n_levels == 2
    assert layout.pi_total == 3 + 3 + 2 * 2
    assert layout.coord_names[layout.edge_slot(1, 2, level=1)] == "beta1_1_2"
    with pytest.raises(LayoutMismatchError):
        layout.edge_slot(0, 1, level=2)
    with pytest.raises(LayoutMismatchError):
        parameter_layout(spec, g, augmented=True)


def test_flatten_unflatten_round_trip():
    rng = np.random.default_rng(2)
    spec = linear_spec(4)
    g = build_graph(4, [(0, 1), (1, 2), (3, 0)])
    for augmented in (False, True):
        layout = parameter_layout(spec, g if not augmented else complete_graph(4),
                                  augmented=augmented)
        flat = rng.standard_normal(layout.pi_total)
        flat[:4] = np.abs(flat[:4])
        theta = layout.unflatten(flat)
        assert np.array_equal(layout.flatten(theta), flat)
        assert (theta.w is not None) == augmented
    with pytest.raises(LayoutMismatchError):
        layout.unflatten(np.zeros(3))


def test_pack_round_trip_and_errors():
    spec = linear_spec(3)
    g = build_graph(3, [(0, 1)])
    layout = parameter_layout(spec, g)
    theta = layout.pack(alpha=[1, 2, 3], momentum=[4, 5, 6], network=[7])
    assert np.array_equal(layout.momentum(theta), [4, 5, 6])
    assert np.array_equal(layout.network(theta), [7])
    assert np.array_equal(layout.intercepts(theta), np.zeros(3))
    with pytest.raises(LayoutMismatchError):
        layout.pack(alpha=[1, 2, 3], momentum=[4, 5, 6], w=np.zeros(6))
    with pytest.raises(LayoutMismatchError):
        layout.pack(alpha=[1, 2, 3], momentum=[4, 5, 6], intercepts=[0, 0, 0])
    aug = parameter_layout(spec, complete_graph(3), augmented=True)
    with pytest.raises(LayoutMismatchError):
        aug.pack(alpha=[1, 2, 3], momentum=[4, 5, 6], network=[7])


def test_param_vector_guards():
    with pytest.raises(NegativeAlphaError):
        ParamVector(alpha=[-1.0], beta=[0.0])
    spec = linear_spec(2)
    with pytest.raises(NonFiniteStateError):
        drift_eval(spec, build_graph(2, []),
                   ParamVector(alpha=[1, 1], beta=[1, 1]), [np.nan, 0.0])
    with pytest.raises(LayoutMismatchError):
        drift_eval(spec, build_graph(2, []),
                   ParamVector(alpha=[1, 1], beta=[1, 1]), [0.0, 0.0, 0.0])
    with pytest.raises(NegativeAlphaError):
        diffusion_eval(spec, np.array([-0.5, 1.0]), np.zeros(2))


def test_default_bounds_box():
    spec = linear_spec(3)
    layout = parameter_layout(spec, build_graph(3, [(0, 1)]))
    lo, hi = default_bounds(layout)
    assert np.all(lo[:3] == 0.0) and np.all(hi[:3] == 1e3)
    assert np.all(lo[3:] == -1e3) and np.all(hi[3:] == 1e3)


def test_spec_config_round_trip():
    specs = [
        linear_spec(3),
        linear_spec(2, intercepts=True, clip=50.0),
        NsdeSpec(d=4, drift=RadialDictionaryDrift(offsets=(1.0, 2.0),
                                                  exponents=(-0.5, 0.5)),
                 diffusion=TanhClipped(clip=100.0)),
    ]
    for spec in specs:
        assert spec_from_config(spec_to_config(spec)) == spec
    with pytest.raises(ModelError):
        spec_from_config({"d": 2, "drift": {"family": "cubic"},
                          "diffusion": {"family": "constant_diagonal"}})
    with pytest.raises(ModelError):
        RadialDictionaryDrift(offsets=(1.0,), exponents=(2.0,))
    with pytest.raises(ModelError):
        RadialDictionaryDrift(offsets=(-1.0,), exponents=(0.0,))
    with pytest.raises(ModelError):
        TanhClipped(clip=0.0)


def test_params_config_round_trip():
    theta = ParamVector(alpha=[1.0, 2.0], beta=[3.0, 4.0], w=np.arange(2.0))
    back = params_from_config(params_to_config(theta))
    assert np.array_equal(back.alpha, theta.alpha)
    assert np.array_equal(back.beta, theta.beta)
    assert np.array_equal(back.w, theta.w)
    plain = params_from_config({"alpha": [1.0], "beta": [2.0]})
    assert plain.w is None
