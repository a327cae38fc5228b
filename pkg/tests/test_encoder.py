import numpy as np
import pytest

from textfusion import tensor as T
from textfusion.data import PatchConfig, patch_count, patchify
from textfusion.encoder import EncoderConfig, encode_series, init_params, parameter_count
from textfusion.errors import ShapeError
from textfusion.gradcheck import check_gradients


def tiny_cfg(**kw):
    base = dict(d_ts=8, n_layers=1, n_heads=2, d_ff=16, p_max=3,
                patch=PatchConfig(4, 2, True))
    base.update(kw)
    return EncoderConfig(**base)


class TestInit:
    def test_same_seed_bit_identical(self):
        cfg = tiny_cfg()
        a, b = init_params(cfg, 5), init_params(cfg, 5)
        for (na, ta), (nb, tb) in zip(a.named(), b.named()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_different_seeds_differ(self):
        cfg = tiny_cfg()
        a, b = init_params(cfg, 1), init_params(cfg, 2)
        assert not np.array_equal(a.w_patch.data, b.w_patch.data)

    def test_parameter_count_closed_form(self):
        # d_ts=16, layers=2, heads=2, d_ff=32, patch_len=4, p_max=3:
        #   patch proj 4*16+16 = 80, positions 3*16 = 48,
        #   per layer 4*(16*16+16) + 2*(16+16) + (16*32+32) + (32*16+16) = 2224
        cfg = EncoderConfig(d_ts=16, n_layers=2, n_heads=2, d_ff=32, p_max=3,
                            patch=PatchConfig(4, 2, True))
        assert parameter_count(init_params(cfg, 0)) == 80 + 48 + 2 * 2224

    def test_biases_zero_gains_one(self):
        params = init_params(tiny_cfg(), 3)
        assert np.all(params.b_patch.data == 0)
        layer = params.layers[0]
        assert np.all(layer.b_q.data == 0)
        assert np.all(layer.ln1_gain.data == 1)
        assert np.all(layer.ln2_bias.data == 0)

    def test_weight_bound(self):
        params = init_params(tiny_cfg(), 4)
        assert np.all(np.abs(params.w_patch.data) <= 1 / np.sqrt(4))
        assert np.all(np.abs(params.layers[0].w_ff2.data) <= 1 / np.sqrt(16))


class TestEncode:
    def test_output_shape_l7_defaults(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 0)
        patches = patchify(np.arange(7.0), cfg.patch)
        out = encode_series(patches, params, cfg)
        assert out.shape == (3, 8)

    def test_shape_contract_various_geometry(self):
        rng = np.random.default_rng(0)
        for l in (7, 9, 12):
            patch = PatchConfig(4, 2, True)
            p = patch_count(l, patch)
            cfg = tiny_cfg(p_max=p, patch=patch)
            params = init_params(cfg, 1)
            out = encode_series(patchify(rng.uniform(-1, 1, l), patch), params, cfg)
            assert out.shape == (p, cfg.d_ts)

    def test_zero_layers_degenerate(self):
        cfg = tiny_cfg(n_layers=0)
        params = init_params(cfg, 2)
        patches = patchify(np.arange(7.0), cfg.patch)
        out = encode_series(patches, params, cfg)
        want = patches @ params.w_patch.data + params.b_patch.data + params.positions.data
        assert np.allclose(out.data, want)

    def test_positional_encoding_breaks_permutation(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 3)
        rng = np.random.default_rng(4)
        patches = rng.uniform(-1, 1, (3, 4))
        out = encode_series(patches, params, cfg).data
        perm = encode_series(patches[[1, 0, 2]], params, cfg).data
        assert not np.allclose(out, perm[[1, 0, 2]])

    def test_permutation_equivariant_without_positions(self):
        cfg = tiny_cfg(n_layers=0)
        params = init_params(cfg, 3)
        params.positions.data[:] = 0.0
        rng = np.random.default_rng(4)
        patches = rng.uniform(-1, 1, (3, 4))
        out = encode_series(patches, params, cfg).data
        perm = encode_series(patches[[2, 0, 1]], params, cfg).data
        assert np.allclose(out[[2, 0, 1]], perm)

    def test_too_many_patches_rejected(self):
        cfg = tiny_cfg(p_max=2)
        params = init_params(cfg, 0)
        with pytest.raises(ShapeError, match="p_max"):
            encode_series(np.zeros((3, 4)), params, cfg)

    def test_batched_matches_single(self):
        cfg = tiny_cfg(n_layers=2)
        params = init_params(cfg, 7)
        rng = np.random.default_rng(8)
        batch = rng.uniform(-1, 1, (5, 3, 4))
        stacked = encode_series(batch, params, cfg).data
        for i in range(5):
            single = encode_series(batch[i], params, cfg).data
            assert np.allclose(stacked[i], single, atol=1e-12)

    def test_output_finite(self):
        cfg = tiny_cfg(n_layers=2)
        params = init_params(cfg, 9)
        out = encode_series(np.random.default_rng(1).uniform(-1, 1, (3, 4)), params, cfg)
        assert np.isfinite(out.data).all()


class TestEncoderGradients:
    def test_all_params_match_finite_differences(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 11)
        rng = np.random.default_rng(12)
        patches = rng.uniform(-1, 1, (3, 4))
        probe = rng.uniform(-1, 1, (3, 8))
        named = params.named()

        def loss_value():
            return float((encode_series(patches, params, cfg).data * probe).sum())

        with T.GradientTape() as tape:
            out = encode_series(patches, params, cfg)
            loss = T.sum_all(T.mul(out, T.Tensor(probe)))
        tape.backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                    for _, t in named]
        err = check_gradients(loss_value, [t.data for _, t in named], analytic)
        assert err < 1e-4, f"max relative error {err}"
