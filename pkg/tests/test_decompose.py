import numpy as np
import pytest

from conftest import rel
from dwdecomp.convcore import (
    RegularConvLayer,
    SeparableConvLayer,
    conv2d_reference,
    fold_separable,
    separable_forward,
    weight_matrix,
)
from dwdecomp.decompose import (
    channel_decompose,
    decompose_network,
    dw_decompose,
    dw_decompose_compensated,
    dw_decompose_single,
    relative_error,
    select_rank_for_speedup,
)
from dwdecomp.errors import ShapeError, UndefinedMetricError
from dwdecomp.harness import gen_synthetic_network
from dwdecomp.netmodel import NetworkModel, flops_and_speedup, forward
from dwdecomp.sampler import PatchSet, SamplingConfig, SyntheticImages, sample_patches, stack_images


def patches_for(layer, X):
    X = np.asarray(X, dtype=np.float32)
    Y = (X.astype(np.float64) @ weight_matrix(layer.weights)).astype(np.float32)
    return PatchSet(X, Y, 0, 0, np.zeros((len(X), 3), np.int64), layer.kernel)


def random_layer(rng, n, c, k=3, separable=False):
    if separable:
        return fold_separable(SeparableConvLayer(rng.standard_normal((c, k, k)), rng.standard_normal((n, c)), padding=k // 2))
    return RegularConvLayer(rng.standard_normal((n, c, k, k)), padding=k // 2)


# -- metrics and rank selection -----------------------------------------------------


def test_relative_error_examples(rng):
    Y = rng.standard_normal((5, 3))
    assert relative_error(Y, Y) == 0
    assert relative_error(np.zeros_like(Y), Y) == pytest.approx(1)
    assert relative_error(2 * Y, Y) == pytest.approx(1)
    with pytest.raises(UndefinedMetricError):
        relative_error(Y, np.zeros_like(Y))


def test_select_rank():
    assert select_rank_for_speedup(128, 64, 3, 3, 9) == 11
    assert select_rank_for_speedup(1, 1, 3, 3, 1000) == 1
    # r = 1: the budget of the original layer
    n, c, k = 128, 64, 3
    assert select_rank_for_speedup(n, c, k, k, 1) == (n * c * k * k) // (c * k * k + n)


# -- channel decomposition ---------------------------------------------------------


def test_channel_full_rank_is_exact(rng):
    layer = random_layer(rng, 6, 2)
    ps = patches_for(layer, rng.standard_normal((40, 18)))
    _, rep = channel_decompose(weight_matrix(layer.weights), ps, 6)
    assert rep.relative_error <= 1e-6


def test_channel_rank_one_response(rng):
    W = np.outer(rng.standard_normal(18), rng.standard_normal(5))
    layer = RegularConvLayer(W.T.reshape(5, 2, 3, 3))
    ps = patches_for(layer, rng.standard_normal((30, 18)))
    res, rep = channel_decompose(weight_matrix(layer.weights), ps, 1)
    assert rep.relative_error <= 1e-6
    assert res.W1.shape == (18, 1) and res.W2.shape == (1, 5)


def test_channel_error_closed_form_and_monotone(rng):
    layer = random_layer(rng, 8, 3)
    ps = patches_for(layer, rng.standard_normal((60, 27)))
    W = weight_matrix(layer.weights)
    s = np.linalg.svd(ps.X.astype(np.float64) @ W, compute_uv=False)
    errs = []
    for r in range(1, 9):
        _, rep = channel_decompose(W, ps, r)
        assert rep.relative_error == pytest.approx(np.sqrt(1 - np.sum(s[:r] ** 2) / np.sum(s**2)), abs=1e-6)
        errs.append(rep.relative_error)
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_channel_zero_response():
    layer = RegularConvLayer(np.zeros((4, 2, 3, 3)))
    ps = patches_for(layer, np.ones((10, 18)))
    res, rep = channel_decompose(weight_matrix(layer.weights), ps, 2)
    assert rep.relative_error == 0 and not np.any(res.W1)


# -- single channel ------------------------------------------------------------------


def test_single_output_channel_is_exact(rng):
    W = rng.standard_normal((9, 1))
    Y = rng.standard_normal((20, 9)) @ W
    D, P = dw_decompose_single(W, Y)
    assert np.linalg.norm(Y - np.outer(Y @ P, P)) <= 1e-12 * np.linalg.norm(Y)


def test_single_rank_one_weights(rng):
    W = np.outer(rng.standard_normal(9), rng.standard_normal(6))
    X = rng.standard_normal((50, 9))
    Y = X @ W
    D, P = dw_decompose_single(W, Y)
    assert np.linalg.norm(Y - np.outer(X @ D, P)) <= 1e-6 * np.linalg.norm(Y)


def test_single_eckart_young(rng):
    W = rng.standard_normal((9, 5))
    X = rng.standard_normal((40, 9))
    Y = X @ W
    D, P = dw_decompose_single(W, Y)
    s = np.linalg.svd(Y, compute_uv=False)
    assert np.linalg.norm(Y - np.outer(X @ D, P)) == pytest.approx(np.sqrt(np.sum(s[1:] ** 2)), abs=1e-6)


def test_single_degenerate():
    D, P = dw_decompose_single(np.ones((9, 3)), np.zeros((10, 3)))
    assert not np.any(D) and not np.any(P)


# -- multi-channel -------------------------------------------------------------------


def test_dw_single_channel_matches_single(rng):
    layer = random_layer(rng, 5, 1)
    ps = patches_for(layer, rng.standard_normal((30, 9)))
    sep, rep = dw_decompose(layer, ps)
    W = weight_matrix(layer.weights).astype(np.float64)
    D, P = dw_decompose_single(W, ps.X.astype(np.float64) @ W)
    np.testing.assert_allclose(sep.depthwise.ravel(), D, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(sep.pointwise[:, 0], P, rtol=1e-5, atol=1e-6)


def test_dw_residuals_are_eckart_young_tails(rng):
    layer = random_layer(rng, 7, 4)
    ps = patches_for(layer, rng.standard_normal((80, 36)))
    _, rep = dw_decompose(layer, ps)
    W = weight_matrix(layer.weights).astype(np.float64)
    X = ps.X.astype(np.float64)
    for i in range(4):
        s = np.linalg.svd(X[:, 9 * i : 9 * i + 9] @ W[9 * i : 9 * i + 9], compute_uv=False)
        assert rep.residual_norms[i] == pytest.approx(np.sqrt(np.sum(s[1:] ** 2)), abs=1e-6)
        assert rep.singular_values[i] == pytest.approx(s[0], rel=1e-9)


@pytest.mark.parametrize("method", ["dw", "dw-comp"])
def test_exact_recovery(rng, method):
    layer = random_layer(rng, 6, 4, separable=True)
    ps = patches_for(layer, rng.standard_normal((100, 36)))
    fn = dw_decompose if method == "dw" else dw_decompose_compensated
    sep, rep = fn(layer, ps)
    assert rep.relative_error <= 1e-5
    x = rng.standard_normal((2, 4, 7, 7)).astype(np.float32)
    assert rel(separable_forward(x, sep), conv2d_reference(x, layer)) <= 1e-5


def test_compensated_single_channel_matches_basic(rng):
    layer = random_layer(rng, 5, 1)
    ps = patches_for(layer, rng.standard_normal((40, 9)))
    a, ra = dw_decompose(layer, ps)
    for mode in ("signed", "absolute"):
        b, rb = dw_decompose_compensated(layer, ps, mode=mode)
        np.testing.assert_allclose(fold_separable(b).weights, fold_separable(a).weights, atol=1e-6)
        assert rb.relative_error == pytest.approx(ra.relative_error, abs=1e-6)


def test_compensated_improves_on_random_layer(rng):
    layer = random_layer(rng, 16, 8)
    ps = patches_for(layer, rng.standard_normal((400, 72)))
    _, basic = dw_decompose(layer, ps)
    _, comp = dw_decompose_compensated(layer, ps)
    assert comp.relative_error <= basic.relative_error
    # signed mode: the accumulated error is exactly the reconstruction error
    assert comp.compensation_error == pytest.approx(comp.relative_error, rel=1e-9)


def test_absolute_mode_keeps_error_non_negative(rng):
    layer = random_layer(rng, 6, 3)
    ps = patches_for(layer, rng.standard_normal((50, 27)))
    _, rep = dw_decompose_compensated(layer, ps, mode="absolute")
    assert rep.state.mode == "absolute" and np.all(rep.state.E >= 0)


def test_basic_is_channel_order_independent(rng):
    layer = random_layer(rng, 5, 4)
    X = rng.standard_normal((60, 36))
    ps = patches_for(layer, X)
    sep, _ = dw_decompose(layer, ps)
    perm = [2, 0, 3, 1]
    w_perm = layer.weights[:, perm]
    X_perm = X.reshape(60, 4, 9)[:, perm].reshape(60, 36)
    sep_p, _ = dw_decompose(RegularConvLayer(w_perm, padding=1), patches_for(RegularConvLayer(w_perm, padding=1), X_perm))
    np.testing.assert_allclose(sep_p.depthwise, sep.depthwise[perm], rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(sep_p.pointwise, sep.pointwise[:, perm], rtol=1e-5, atol=1e-6)


def test_compensated_is_bit_reproducible(rng):
    layer = random_layer(rng, 8, 5)
    ps = patches_for(layer, rng.standard_normal((70, 45)))
    a, _ = dw_decompose_compensated(layer, ps)
    b, _ = dw_decompose_compensated(layer, ps)
    assert a.depthwise.tobytes() == b.depthwise.tobytes() and a.pointwise.tobytes() == b.pointwise.tobytes()


def test_input_scaling_keeps_directions(rng):
    layer = random_layer(rng, 6, 3)
    X = rng.standard_normal((50, 27))
    sep, rep = dw_decompose(layer, patches_for(layer, X))
    # powers of two keep the float32 patches exact
    sep2, rep2 = dw_decompose(layer, patches_for(layer, 4.0 * X))
    np.testing.assert_allclose(sep2.pointwise, sep.pointwise, atol=1e-6)
    np.testing.assert_allclose(sep2.depthwise, sep.depthwise, rtol=1e-5, atol=1e-6)
    assert rep2.relative_error == pytest.approx(rep.relative_error, abs=1e-6)


def test_emitted_layer_flops(rng):
    layer = random_layer(rng, 12, 5)
    ps = patches_for(layer, rng.standard_normal((30, 45)))
    sep, rep = dw_decompose(layer, ps)
    assert rep.flops_after == 5 * 9 + 12 * 5 == sep.flops_per_position()
    model = NetworkModel((sep,), ("identity",), (5, 4, 4))
    report = flops_and_speedup(model)
    assert report.layers[0].per_position == rep.flops_after


def test_weak_channel_gets_zero_kernel(rng):
    layer = random_layer(rng, 6, 3)
    X = rng.standard_normal((80, 27))
    X[:, 9:18] *= 1e-4
    sep, rep = dw_decompose_compensated(layer, patches_for(layer, X))
    assert not np.any(sep.depthwise[1]) and not np.any(sep.pointwise[:, 1])
    assert np.any(sep.depthwise[0]) and np.any(sep.depthwise[2])


def test_patch_layer_mismatch(rng):
    layer = random_layer(rng, 4, 2)
    ps = patches_for(random_layer(rng, 4, 3), rng.standard_normal((10, 27)))
    with pytest.raises(ShapeError):
        dw_decompose(layer, ps)


# -- network -------------------------------------------------------------------------


def test_network_single_layer_equals_compensated():
    model, images = gen_synthetic_network([3, 6], seed=1, num_images=20)
    cfg = SamplingConfig(5, 20, seed=3)
    new, reports = decompose_network(model, images, cfg, "dw-comp", compensate_layers=True)
    ps = sample_patches(model, images, 0, cfg)
    sep, rep = dw_decompose_compensated(model.layers[0], ps)
    assert new.layers[0].depthwise.tobytes() == sep.depthwise.tobytes()
    assert reports[0].relative_error == rep.relative_error


def test_network_two_separable_linear_layers_exact():
    model, images = gen_synthetic_network([3, 5, 4], seed=6, activation="identity", separable_ground_truth=True, num_images=20)
    for method in ("dw", "dw-comp"):
        new, reports = decompose_network(model, images, SamplingConfig(10, 20), method)
        assert all(isinstance(l, SeparableConvLayer) for l in new.layers)
        x = stack_images(SyntheticImages(99, 5, model.input_shape))
        assert rel(forward(new, x), forward(model, x)) <= 1e-5


def test_network_layer_compensation_helps():
    wins = 0
    for s in range(10):
        model, images = gen_synthetic_network([8, 16, 16, 16], seed=s, num_images=60)
        cfg = SamplingConfig(10, 60, seed=s)
        x = stack_images(SyntheticImages(1000 + s, 10, model.input_shape))
        ref = forward(model, x)
        with_c, _ = decompose_network(model, images, cfg, "dw-comp", compensate_layers=True)
        without, _ = decompose_network(model, images, cfg, "dw-comp", compensate_layers=False)
        wins += relative_error(forward(with_c, x), ref) <= relative_error(forward(without, x), ref)
    assert wins >= 8


def test_network_channel_method_splits_layers():
    model, images = gen_synthetic_network([4, 16, 8], seed=2, num_images=10)
    new, reports = decompose_network(model, images, SamplingConfig(5, 10), "channel", speedup=4)
    assert len(new.layers) == 4
    assert new.layers[1].kernel == (1, 1) and new.activations == ("identity", "relu", "identity", "relu")
    assert reports[0].rank == select_rank_for_speedup(16, 4, 3, 3, 4)
    assert new.output_shape == model.output_shape


def test_network_skips_and_rejects_1x1(caplog):
    model, images = gen_synthetic_network([3, 4], kernel=1, num_images=5)
    new, reports = decompose_network(model, images, SamplingConfig(2, 5), "dw")
    assert reports == [] and isinstance(new.layers[0], RegularConvLayer)
    assert "1x1" in caplog.text
    with pytest.raises(ShapeError):
        decompose_network(model, images, SamplingConfig(2, 5), "dw", layers=[0])
    with pytest.raises(ShapeError):
        decompose_network(model, images, SamplingConfig(2, 5), "dw", layers=[4])
