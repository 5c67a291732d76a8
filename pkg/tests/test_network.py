import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from s2kan.basis import SplineBasis, clamped_knots, silu
from s2kan.errors import (
    ConfigurationError,
    MalformedFileError,
    NonFiniteError,
    StaleTapeError,
    VersionMismatchError,
)
from s2kan.gates import expected_gate
from s2kan.network import (
    DictionaryConfig,
    Network,
    NetworkSpec,
    active_summary,
    backward,
    deserialize,
    expected_active_terms,
    forward,
    grid_update,
    load,
    parse_shape,
    save,
    serialize,
)

OPEN, CLOSED = 8.0, -8.0
FULL = DictionaryConfig(("1", "x", "x^2", "sin", "1/x"), 3, 2, SplineBasis(5, 3))


def identity_net(shape=(1, [1])):
    net = Network(NetworkSpec(shape[0], shape[1], DictionaryConfig(("x",))))
    for layer in net.layers:
        layer.alpha[...] = OPEN
        layer.coef[...] = 1.0
    return net


# -- construction ------------------------------------------------------------


def test_term_count_matches_dictionary_families():
    d = DictionaryConfig(("x", "sin", "exp"), 4, 3, SplineBasis())
    assert d.n_terms == 3 + 5 + 6 + 1
    assert d.n_coeffs == 3 + 5 + 6 + 14


def test_chebyshev_zero_means_absent():
    assert DictionaryConfig(("x",), 0, 0).n_terms == 1


def test_empty_dictionary_rejected():
    with pytest.raises(ConfigurationError):
        DictionaryConfig()


def test_nonpositive_weight_rejected():
    with pytest.raises(ConfigurationError):
        DictionaryConfig(("x",), complexity_weights={"x": 0.0})


@pytest.mark.parametrize("text,expected", [
    ("[2,4,(3,1),1]", (2, [(4, 0), (3, 1), (1, 0)])),
    ("[1, (0,1)]", (1, [(0, 1)])),
    ([2, 5, 1], (2, [(5, 0), (1, 0)])),
])
def test_parse_shape(text, expected):
    assert parse_shape(text) == expected


@pytest.mark.parametrize("bad", ["[3]", "", "[(1,1),2]"])
def test_parse_shape_rejects(bad):
    with pytest.raises(ConfigurationError):
        parse_shape(bad)


def test_edge_counts_use_product_subnodes():
    net = Network(NetworkSpec(2, [(3, 1), (1, 0)], FULL))
    assert [l.n_pre for l in net.layers] == [5, 1]
    assert net.n_edges() == 2 * 5 + 4 * 1
    assert net.spec.shape_string() == "[2,(3,1),1]"


def test_build_initialization():
    net = Network.build(NetworkSpec(3, [4, 1], FULL), rng=0)
    layer = net.layers[0]
    spl = [m for m, t in enumerate(layer.terms) if t.family == "spline"][0]
    sl = layer.term_slice(spl)
    assert np.all(layer.alpha[..., spl] == -1.0)
    others = np.delete(layer.alpha, spl, axis=-1)
    assert abs(others.std() - 0.1) < 0.03
    assert np.all(layer.coef[:, :, sl.start] == 1.0)
    nonspline = layer.coef[:, :, :sl.start]
    assert np.all(np.abs(nonspline) <= 0.05)
    assert np.all(np.abs(layer.coef[:, :, sl.start + 1:sl.stop]) <= 0.5 * 0.1 / 5)


# -- forward --------------------------------------------------------------------


def test_forward_single_edge_linear():
    net = identity_net()
    net.layers[0].coef[...] = 2.0
    y, _ = forward(net, np.array([3.0]), noise=None)
    assert y.tolist() == [6.0]


def test_forward_product_node_squares():
    net = identity_net((1, [(0, 1)]))
    y, _ = net.forward(np.array([5.0]))
    assert y.tolist() == [25.0]


def test_forward_all_closed_is_zero(rng):
    net = Network.build(NetworkSpec(3, [(2, 1), 2], FULL), rng=1)
    for layer in net.layers:
        layer.alpha[...] = CLOSED
    y, _ = net.forward(rng.normal(size=(7, 3)))
    assert np.all(y == 0)


def test_product_with_closed_factor_outputs_zero(rng):
    net = Network.build(NetworkSpec(2, [(1, 1)], FULL), rng=2)
    net.layers[0].alpha[:, 2, :] = CLOSED  # second factor of the product node
    y, _ = net.forward(rng.normal(size=(5, 2)))
    assert np.all(y[:, 1] == 0)
    assert np.any(y[:, 0] != 0)


def test_forward_matches_per_edge_sum(rng):
    # independent evaluation of every edge through its term list
    from s2kan.basis import (chebyshev_features, eval_symbolic, fourier_features,
                             spline_features)

    net = Network.build(NetworkSpec(2, [(2, 1), 1], FULL), rng=3)
    x = rng.uniform(-0.9, 0.9, (11, 2))
    y, tape = net.forward(x, mode="deterministic")

    def edge_value(l, i, j, h):
        e = net.edge(l, i, j)
        out = np.zeros_like(h)
        d = net.spec.dictionary
        cheb = chebyshev_features(h, *e.domain, d.chebyshev_P)[0]
        four = fourier_features(h, d.fourier_Q)[0]
        spl = spline_features(h, *e.domain, 5, 3)[0]
        for t in e.terms:
            if expected_gate(t.gate.alpha) <= 0.5:
                continue
            if t.family == "symbolic":
                prim = d.symbolic[[p.name for p in d.symbolic].index(t.label)]
                out += t.coeffs[0] * eval_symbolic(prim, h)[0]
            elif t.family == "chebyshev":
                out += t.coeffs[0] * cheb[:, int(t.label[1:])]
            elif t.family == "fourier":
                q = int(t.label[4:t.label.index("x")]) if t.label[4] != "x" else 1
                col = 2 * q - 2 if t.label.startswith("sin") else 2 * q - 1
                out += t.coeffs[0] * four[:, col]
            else:
                out += spl @ t.coeffs
        return out

    h = x
    for l, layer in enumerate(net.layers):
        pre = np.stack([sum(edge_value(l, i, j, h[:, i]) for i in range(layer.n_in))
                        for j in range(layer.n_pre)], axis=1)
        np.testing.assert_allclose(tape.records[l].pre, pre, rtol=1e-12, atol=1e-12)
        ns = layer.n_sum
        h = np.concatenate([pre[:, :ns], pre[:, ns::2] * pre[:, ns + 1::2]], axis=1)
    np.testing.assert_allclose(y, h, rtol=1e-12, atol=1e-12)


def test_baseline_is_silu_plus_bspline(rng):
    d = DictionaryConfig(spline=SplineBasis(10, 3, -2.0, 2.0))
    net = Network.build(NetworkSpec(1, [1], d), rng=4, gates_fixed_open=True)
    c = rng.normal(size=14)
    net.layers[0].coef[0, 0] = c
    x = rng.uniform(-2, 2, 50)
    t = clamped_knots(-2.0, 2.0, 10, 3)
    ref = c[0] * silu(x)[0] + BSpline(t, c[1:], 3)(x)
    np.testing.assert_allclose(net(x[:, None])[:, 0], ref, rtol=1e-12, atol=1e-12)


def test_deterministic_forward_is_pure(rng):
    net = Network.build(NetworkSpec(2, [3, 1], FULL), rng=5)
    x = rng.normal(size=(9, 2))
    a = net(x)
    b = net(x)
    np.testing.assert_array_equal(a, b)


def test_forward_tracks_running_range():
    net = identity_net((2, [1]))
    net.forward(np.array([[1.0, -2.0], [3.0, 0.5]]))
    np.testing.assert_array_equal(net.layers[0].range_min, [1.0, -2.0])
    np.testing.assert_array_equal(net.layers[0].range_max, [3.0, 0.5])


def test_forward_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        identity_net().forward(np.zeros((3, 2)))


def test_stochastic_forward_needs_noise():
    net = identity_net()
    with pytest.raises(ConfigurationError):
        net.forward(np.ones(1), mode="stochastic")
    with pytest.raises(ConfigurationError):
        net.forward(np.ones(1), noise=[np.full((2, 1, 1), 0.5)], mode="stochastic")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_reports_edge():
    net = Network(NetworkSpec(2, [2], DictionaryConfig(("x", "exp"))))
    net.layers[0].alpha[...] = OPEN
    net.layers[0].coef[...] = 1.0
    net.layers[0].coef[1, 0, 1] = 1e300
    with pytest.raises(NonFiniteError) as ei:
        net.forward(np.array([0.0, 40.0]))
    assert ei.value.where == {"layer": 0, "in": 1, "out": 0, "sample": 0}


# -- backward -------------------------------------------------------------------


def test_backward_linear_example():
    net = identity_net()
    net.layers[0].alpha[...] = 0.0
    noise = [np.full((1, 1, 1), 0.5)]
    y, tape = net.forward(np.array([3.0]), noise=noise, mode="stochastic")
    g = backward(net, tape, np.ones(1))
    assert g.coef[0][0, 0, 0] == pytest.approx(3.0 * 0.5)
    assert g.x[0] == pytest.approx(0.5)


def test_backward_closed_gate_has_zero_alpha_gradient():
    net = identity_net()
    net.layers[0].alpha[...] = -3.0
    y, tape = net.forward(np.array([3.0]), noise=[np.full((1, 1, 1), 0.5)], mode="stochastic")
    assert y[0] == 0.0
    assert net.backward(tape, np.ones(1)).alpha[0][0, 0, 0] == 0.0


def test_stale_tape():
    net = identity_net()
    _, tape = net.forward(np.ones(1))
    net.touch()
    with pytest.raises(StaleTapeError):
        net.backward(tape, np.ones(1))
    other = identity_net()
    _, tape = other.forward(np.ones(1))
    with pytest.raises(StaleTapeError):
        net.backward(tape, np.ones(1))


def _fd_check(seed):
    rng = np.random.default_rng(seed)
    shape = [[(2, 1), 1], [3, (1, 1)], [(1, 2)], [2, 2, 1]][seed % 4]
    n0 = 1 + seed % 3
    net = Network.build(NetworkSpec(n0, shape, FULL), rng=seed)
    for layer in net.layers:
        layer.coef += rng.normal(0, 0.3, layer.coef.shape)
        layer.alpha[...] = rng.normal(0.5, 1.0, layer.alpha.shape)
    # keep inputs away from the reciprocal guard and from domain edges
    x = rng.uniform(0.2, 0.8, (6, n0)) * rng.choice([-1, 1], (6, n0))
    noise = [rng.uniform(0.05, 0.95, l.alpha.shape) for l in net.layers]
    ld = net.copy(dtype=np.longdouble)
    xl = x.astype(np.longdouble)
    y, tape = ld.forward(xl, noise=noise, mode="stochastic", track_range=False)
    w = rng.normal(size=y.shape).astype(np.longdouble)
    g = ld.backward(tape, w)

    def loss():
        return float((ld.forward(xl, noise=noise, mode="stochastic",
                                 track_range=False)[0] * w).sum())

    h = 1e-5
    checked = 0
    for l, layer in enumerate(ld.layers):
        for arr, grad in ((layer.coef, g.coef[l]), (layer.alpha, g.alpha[l])):
            for idx in map(tuple, np.argwhere(np.ones(arr.shape, bool))[
                    rng.choice(arr.size, min(arr.size, 40), replace=False)]):
                old = arr[idx]
                arr[idx] = old + h
                lp = loss()
                arr[idx] = old - h
                lm = loss()
                arr[idx] = old
                num = (lp - lm) / (2 * h)
                ana = float(grad[idx])
                assert abs(ana - num) / (abs(num) + 1e-8) < 1e-4 or abs(ana - num) < 1e-9, \
                    (seed, l, idx, ana, num)
                checked += 1
    for i in range(n0):
        xp, xm = xl.copy(), xl.copy()
        xp[:, i] += h
        xm[:, i] -= h
        yp = ld.forward(xp, noise=noise, mode="stochastic", track_range=False)[0]
        ym = ld.forward(xm, noise=noise, mode="stochastic", track_range=False)[0]
        num = ((yp - ym) * w).sum(axis=1) / (2 * h)
        np.testing.assert_allclose(g.x[:, i].astype(float), num.astype(float),
                                   rtol=1e-4, atol=1e-8)
    return checked


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    assert _fd_check(seed) > 0


def test_fixed_open_gates_have_no_alpha_params():
    net = Network.build(NetworkSpec(1, [1], FULL), gates_fixed_open=True)
    assert len(net.params) == 1
    assert net.draw_noise(np.random.default_rng(0)) == [None]


# -- complexity accounting ---------------------------------------------------------


def test_expected_active_terms_examples():
    net = Network(NetworkSpec(1, [1], DictionaryConfig(("x", "sin"),
                                                       complexity_weights={"x": 2.0})))
    net.layers[0].alpha[...] = -2.0 / 3.0 * np.log(11.0)  # p = 1/2
    assert expected_active_terms(net) == (1.0, 1.5)
    net.layers[0].alpha[...] = 60.0
    assert net.expected_active_terms()[0] == 2.0


def test_ten_half_open_gates():
    net = Network(NetworkSpec(2, [5], DictionaryConfig(("x",))))
    net.layers[0].alpha[...] = -2.0 / 3.0 * np.log(11.0)
    assert net.expected_active_terms()[0] == pytest.approx(5.0, abs=1e-15)


def test_expected_active_terms_fresh_network():
    net = Network.build(NetworkSpec(3, [(2, 1), 2], FULL), rng=9)
    ref = 0.0
    for layer in net.layers:
        for a in layer.alpha.ravel():
            ref += 1.0 / (1.0 + np.exp(-(a - 2 / 3 * np.log(0.1 / 1.1))))
    assert abs(net.expected_active_terms()[0] - ref) < 1e-12


def test_penalty_grad_is_derivative_of_k_weighted(rng):
    d = DictionaryConfig(("x", "sin"), complexity_weights={"sin": 3.0})
    net = Network.build(NetworkSpec(2, [2], d), rng=1)
    g = net.penalty_grad_alpha()[0]
    a = net.layers[0].alpha
    h = 1e-6
    for idx in [(0, 0, 0), (1, 1, 1), (0, 1, 1)]:
        old = a[idx]
        a[idx] = old + h
        kp = net.expected_active_terms()[1]
        a[idx] = old - h
        km = net.expected_active_terms()[1]
        a[idx] = old
        assert g[idx] == pytest.approx((kp - km) / (2 * h), rel=1e-6)


def test_summary_all_closed():
    net = Network.build(NetworkSpec(2, [3], FULL), rng=0)
    for layer in net.layers:
        layer.alpha[...] = CLOSED
    s = active_summary(net)
    assert (s.active_functions, s.k, s.active_terms, s.percent_symbolic) == (0, 0, 0, 0.0)


def test_summary_single_symbolic_term():
    net = Network.build(NetworkSpec(1, [1], FULL), rng=0)
    net.layers[0].alpha[...] = CLOSED
    net.layers[0].alpha[0, 0, 1] = OPEN
    s = net.active_summary()
    assert (s.active_functions, s.k, s.percent_symbolic) == (1, 1, 100.0)


def test_summary_baseline_720():
    d = DictionaryConfig(spline=SplineBasis(10, 3))
    net = Network.build(NetworkSpec(2, [8, 4], d), gates_fixed_open=True)
    s = net.active_summary()
    assert net.n_edges() == 48
    assert s.k == 720
    assert s.percent_symbolic == 0.0
    assert s.active_functions == 48


# -- grid update ----------------------------------------------------------------------


def spline_net(lo=-1.0, hi=1.0, P=0):
    d = DictionaryConfig(("x",), P, 0, SplineBasis(10, 3, lo, hi))
    return Network.build(NetworkSpec(1, [1], d), rng=0)


def test_grid_update_same_range_keeps_coefficients():
    net = spline_net()
    layer = net.layers[0]
    before = layer.coef.copy()
    half = 1.0 / 1.1
    layer.range_min[...] = -half
    layer.range_max[...] = half
    grid_update(net)
    np.testing.assert_allclose(layer.lo, -1.0, atol=1e-15)
    np.testing.assert_allclose(layer.coef, before, atol=1e-8)


def test_grid_update_zero_coefficients_stay_zero():
    net = spline_net()
    layer = net.layers[0]
    layer.coef[...] = 0.0
    net.forward(np.array([[3.0], [-0.5]]))
    net.grid_update()
    assert np.all(layer.coef == 0.0)


def test_grid_update_refits_cubic():
    net = spline_net()
    layer = net.layers[0]
    # cubic splines reproduce cubics; get the coefficients by interpolation on the old grid
    f = lambda x: 0.3 * x ** 3 - x ** 2 + 0.5 * x - 0.2  # noqa: E731
    xs = np.linspace(-1, 1, 400)
    B, _ = layer.features(xs[:, None])
    B = B[:, 0, -13:]
    c = np.linalg.lstsq(B, f(xs), rcond=None)[0]
    np.testing.assert_allclose(B @ c, f(xs), atol=1e-10)
    layer.coef[0, 0, -13:] = c
    r = 5.0 / 1.1
    layer.range_min[...] = -2.0 + 0.05 * r
    layer.range_max[...] = 3.0 - 0.05 * r
    net.grid_update()
    np.testing.assert_allclose(layer.lo, -2.0)
    np.testing.assert_allclose(layer.hi, 3.0)
    Bn, _ = layer.features(xs[:, None])
    np.testing.assert_allclose(Bn[:, 0, -13:] @ layer.coef[0, 0, -13:], f(xs), atol=1e-6)
    assert np.all(np.isinf(layer.range_min))


def test_grid_update_far_wider_domain_follows_clamped_activation(rng):
    # the overlap covers a third of one new interval; the refit must not blow up around it
    net = spline_net()
    layer = net.layers[0]
    layer.coef[0, 0, -13:] = rng.uniform(-0.05, 0.05, 13)
    xs = np.linspace(-1.0, 58.0, 600)
    old = layer.features(xs[:, None])[0][:, 0, -13:] @ layer.coef[0, 0, -13:]
    layer.range_min[...] = -1.0
    layer.range_max[...] = 58.0
    net.grid_update()
    new = layer.features(xs[:, None])[0][:, 0, -13:] @ layer.coef[0, 0, -13:]
    assert np.abs(layer.coef[0, 0, -13:]).max() < 0.2
    np.testing.assert_allclose(new, old, atol=0.05)


def test_grid_update_moves_chebyshev_domain():
    net = spline_net(P=3)
    net.forward(np.array([[0.0], [10.0]]))
    net.grid_update()
    assert net.edge(0, 0, 0).domain == pytest.approx((-0.5, 10.5))


def test_grid_update_requires_range():
    with pytest.raises(ConfigurationError):
        spline_net().grid_update()


def test_grid_update_constant_range_pads():
    net = spline_net()
    net.forward(np.array([[2.0]]))
    net.grid_update()
    lo, hi = net.edge(0, 0, 0).domain
    assert lo < 2.0 < hi


# -- serialization ----------------------------------------------------------------------


def test_round_trip_bit_identical(tmp_path, rng):
    net = Network.build(NetworkSpec(2, [(2, 1), 1], FULL), rng=11)
    net.layers[0].coef += rng.normal(size=net.layers[0].coef.shape) * 1e-3 / 3
    net.forward(rng.normal(size=(4, 2)))
    net.grid_update()
    path = tmp_path / "m.json"
    save(net, path)
    other = load(path)
    for a, b in zip(net.layers, other.layers):
        np.testing.assert_array_equal(a.coef, b.coef)
        np.testing.assert_array_equal(a.alpha, b.alpha)
        np.testing.assert_array_equal(a.lo, b.lo)
        np.testing.assert_array_equal(a.hi, b.hi)
    x = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(net(x), other(x))
    assert serialize(other) == serialize(net)


def test_checkpoint_is_self_describing():
    d = json.loads(serialize(Network.build(NetworkSpec(1, [1], FULL), rng=0)))
    assert d["format_version"] == 1
    term_kinds = [t["kind"] for t in d["layers"][0]["edges"][0]["terms"]]
    assert term_kinds[:2] == ["1", "x"]
    cheb = [t for t in d["layers"][0]["edges"][0]["terms"] if t["family"] == "chebyshev"]
    assert [t["degree"] for t in cheb] == [0, 1, 2, 3]


def test_truncated_file_is_malformed():
    text = serialize(Network.build(NetworkSpec(1, [1], FULL), rng=0))
    with pytest.raises(MalformedFileError):
        deserialize(text[: len(text) // 2])
    with pytest.raises(MalformedFileError):
        deserialize(json.dumps({"format_version": 1, "spec": {}}))


def test_version_mismatch():
    d = json.loads(serialize(identity_net()))
    d["format_version"] = 99
    with pytest.raises(VersionMismatchError):
        deserialize(json.dumps(d))


@given(st.integers(0, 2**31 - 1))
def test_round_trip_random_networks(seed):
    net = Network.build(NetworkSpec(2, [(1, 1), 1], FULL), rng=seed)
    other = deserialize(serialize(net))
    x = np.linspace(-1, 1, 6).reshape(3, 2)
    np.testing.assert_array_equal(net(x), other(x))
