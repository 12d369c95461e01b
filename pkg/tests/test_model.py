import numpy as np
import pytest

from dfdrnn import autodiff as ad
from dfdrnn.data import AssociationMatrix, Dataset, EntityIds, SimilarityMatrix
from dfdrnn.graphs import initial_features
from dfdrnn.model import (
    CheckpointError,
    DualFeatures,
    ModelConfig,
    build_model_inputs,
    cddfe_layer,
    dataset_fingerprint,
    decode_cross,
    decode_noncross,
    fuse,
    layer_attention,
    load_checkpoint,
    predict_scores,
    project_initial,
    save_checkpoint,
    sddfe_layer,
)
from dfdrnn.training import expand_seed, init_model_params


def one_pair_dataset():
    ids = EntityIds(("drug0",), ("disease0",))
    return Dataset(
        ids=ids,
        drug_sim=SimilarityMatrix(np.array([[1.0]]), ids.drug_ids),
        disease_sim=SimilarityMatrix(np.array([[1.0]]), ids.disease_ids),
        assoc=AssociationMatrix(np.array([[1.0]]), ids),
        name="one-pair",
    )


def zero_module_params(params):
    """Zero every attention/FC tensor so each block outputs exactly zero."""
    for layer in params.layers:
        for module in (layer.sddfe, layer.cddfe):
            for _, t in module.named_tensors():
                t.value[:] = 0.0


def random_encoding(rng, n, m, k):
    from dfdrnn.model import FinalEncoding

    return FinalEncoding(
        h_r_s=ad.constant(rng.normal(size=(n, k))),
        h_r_a=ad.constant(rng.normal(size=(n, k))),
        h_d_s=ad.constant(rng.normal(size=(m, k))),
        h_d_a=ad.constant(rng.normal(size=(m, k))),
    )


class TestProjectInitial:
    def test_one_pair_hand_multiplication(self):
        ds = one_pair_dataset()
        feats = initial_features(ds)
        a, b = 0.3, -1.2
        projection = ad.parameter(np.array([[a], [b]]))
        dual = project_initial(feats, projection)
        assert np.allclose(dual.h_s.value, [[a], [b]], atol=1e-15)
        assert np.allclose(dual.h_a.value, [[b], [a]], atol=1e-15)

    def test_zero_projection(self, planted):
        feats = initial_features(planted)
        projection = ad.parameter(np.zeros((35, 8)))
        dual = project_initial(feats, projection)
        assert np.all(dual.h_s.value == 0.0) and np.all(dual.h_a.value == 0.0)

    def test_block_route_equals_dense_product(self, planted):
        rng = np.random.default_rng(0)
        feats = initial_features(planted)
        projection = ad.parameter(rng.normal(size=(35, 8)))
        dual = project_initial(feats, projection)
        assert np.allclose(dual.h_s.value, feats.h_init_s @ projection.value, atol=1e-12)
        assert np.allclose(dual.h_a.value, feats.h_init_a @ projection.value, atol=1e-12)

    def test_planted_shapes(self, planted):
        cfg = ModelConfig(embed_dim=16, heads=2, top_t=5)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, np.random.default_rng(0))
        dual = project_initial(inputs.features, params.projection)
        assert dual.h_s.value.shape == (35, 16)
        assert dual.h_a.value.shape == (35, 16)


class TestEncoderLayers:
    def _setup(self, planted, seed=0):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=1, top_t=4)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(seed).init)
        rng = np.random.default_rng(seed + 50)
        feats = DualFeatures(
            h_s=ad.constant(rng.normal(size=(35, 8))),
            h_a=ad.constant(rng.normal(size=(35, 8))),
        )
        return cfg, inputs, params, feats

    def test_sddfe_streams_do_not_swap(self, planted):
        _, inputs, params, feats = self._setup(planted)
        equal = DualFeatures(h_s=feats.h_s, h_a=feats.h_s)
        out = sddfe_layer(inputs.e_s, equal, params.layers[0].sddfe)
        assert np.array_equal(out.h_s.value, out.h_a.value)

    def test_sddfe_zero_input_zero_bias_gives_zero(self, planted):
        _, inputs, params, _ = self._setup(planted)
        module = params.layers[0].sddfe
        module.b_r.value[:] = 0.0
        module.b_d.value[:] = 0.0
        zero = DualFeatures(
            h_s=ad.constant(np.zeros((35, 8))), h_a=ad.constant(np.zeros((35, 8)))
        )
        out = sddfe_layer(inputs.e_s, zero, module)
        assert np.all(out.h_s.value == 0.0) and np.all(out.h_a.value == 0.0)

    def test_sddfe_matches_samf_oracle(self, planted):
        from dfdrnn.attention import samf

        _, inputs, params, feats = self._setup(planted)
        out = sddfe_layer(inputs.e_s, feats, params.layers[0].sddfe)
        assert np.array_equal(
            out.h_s.value, samf(inputs.e_s, feats.h_s, params.layers[0].sddfe).value
        )
        assert np.array_equal(
            out.h_a.value, samf(inputs.e_s, feats.h_a, params.layers[0].sddfe).value
        )

    def test_cddfe_swaps_streams(self, planted):
        _, inputs, params, feats = self._setup(planted)
        module = params.layers[0].cddfe
        out = cddfe_layer(inputs.e_a, feats, module)
        # perturb only h_s: only the association-stream output may change
        perturbed = DualFeatures(
            h_s=ad.constant(feats.h_s.value + 1.0), h_a=feats.h_a
        )
        out2 = cddfe_layer(inputs.e_a, perturbed, module)
        assert np.array_equal(out.h_s.value, out2.h_s.value)
        assert not np.array_equal(out.h_a.value, out2.h_a.value)

    def test_cddfe_swap_invisible_for_equal_streams(self, planted):
        _, inputs, params, feats = self._setup(planted)
        equal = DualFeatures(h_s=feats.h_s, h_a=feats.h_s)
        out = cddfe_layer(inputs.e_a, equal, params.layers[0].cddfe)
        assert np.array_equal(out.h_s.value, out.h_a.value)

    def test_cddfe_empty_association_graph_gives_bias_rows(self, planted):
        from dfdrnn.graphs import build_hetero_association

        _, inputs, params, feats = self._setup(planted)
        module = params.layers[0].cddfe
        empty = build_hetero_association(np.zeros_like(planted.assoc.values))
        out = cddfe_layer(empty, feats, module)
        slope = module.slope

        def act(x):
            return np.where(x > 0, x, slope * x)

        n = inputs.n
        assert np.allclose(out.h_a.value[:n], act(module.b_r.value), atol=1e-15)
        assert np.allclose(out.h_a.value[n:], act(module.b_d.value), atol=1e-15)

    def test_no_cf_disables_swap(self, planted):
        _, inputs, params, feats = self._setup(planted)
        module = params.layers[0].cddfe
        swapped = cddfe_layer(inputs.e_a, feats, module, variant="full")
        straight = cddfe_layer(inputs.e_a, feats, module, variant="no_cf")
        assert np.array_equal(swapped.h_s.value, straight.h_a.value)
        assert np.array_equal(swapped.h_a.value, straight.h_s.value)


class TestFuse:
    def test_zero_modules_reduce_to_residual(self):
        rng = np.random.default_rng(1)
        prev = DualFeatures(
            h_s=ad.constant(rng.normal(size=(5, 3))), h_a=ad.constant(rng.normal(size=(5, 3)))
        )
        zero = DualFeatures(
            h_s=ad.constant(np.zeros((5, 3))), h_a=ad.constant(np.zeros((5, 3)))
        )
        out = fuse(zero, zero, prev)
        assert np.array_equal(out.h_s.value, prev.h_s.value)
        assert np.array_equal(out.h_a.value, prev.h_a.value)

    def test_three_equal_terms(self):
        x = np.random.default_rng(2).normal(size=(4, 4))
        feats = DualFeatures(h_s=ad.constant(x), h_a=ad.constant(x))
        out = fuse(feats, feats, feats)
        assert np.allclose(out.h_s.value, 3.0 * x, atol=1e-12)

    def test_random_sum_oracle(self):
        rng = np.random.default_rng(3)
        mats = [rng.normal(size=(6, 5)) for _ in range(6)]
        hat = DualFeatures(h_s=ad.constant(mats[0]), h_a=ad.constant(mats[1]))
        tilde = DualFeatures(h_s=ad.constant(mats[2]), h_a=ad.constant(mats[3]))
        prev = DualFeatures(h_s=ad.constant(mats[4]), h_a=ad.constant(mats[5]))
        out = fuse(hat, tilde, prev)
        assert np.allclose(out.h_s.value, mats[0] + mats[2] + mats[4], atol=1e-12)
        assert np.allclose(out.h_a.value, mats[1] + mats[3] + mats[5], atol=1e-12)


class TestLayerAttention:
    def _layers(self, rng, count, n, m, k):
        return [
            DualFeatures(
                h_s=ad.constant(rng.normal(size=(n + m, k))),
                h_a=ad.constant(rng.normal(size=(n + m, k))),
            )
            for _ in range(count)
        ]

    def test_uniform_weights_give_arithmetic_mean(self):
        rng = np.random.default_rng(4)
        layers = self._layers(rng, 3, 4, 3, 5)
        beta = ad.parameter(np.full((3, 1), 1.0 / 3.0))
        enc = layer_attention(layers, beta, n=4)
        expected = sum(l.h_s.value for l in layers) / 3.0
        assert np.allclose(enc.h_r_s.value, expected[:4], atol=1e-12)
        assert np.allclose(enc.h_d_s.value, expected[4:], atol=1e-12)

    def test_one_hot_weights_select_first_layer(self):
        rng = np.random.default_rng(5)
        layers = self._layers(rng, 3, 2, 2, 4)
        beta = ad.parameter(np.array([[1.0], [0.0], [0.0]]))
        enc = layer_attention(layers, beta, n=2)
        assert np.array_equal(enc.h_r_s.value, layers[0].h_s.value[:2])
        assert np.array_equal(enc.h_d_a.value, layers[0].h_a.value[2:])

    def test_random_weights_match_weighted_sum_oracle(self):
        rng = np.random.default_rng(6)
        layers = self._layers(rng, 4, 3, 2, 6)
        weights = rng.normal(size=(4, 1))
        beta = ad.parameter(weights)
        enc = layer_attention(layers, beta, n=3)
        expected = sum(w * l.h_a.value for w, l in zip(weights[:, 0], layers))
        assert np.allclose(enc.h_r_a.value, expected[:3], atol=1e-12)
        assert np.allclose(enc.h_d_a.value, expected[3:], atol=1e-12)

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(7)
        layers = self._layers(rng, 2, 2, 2, 4)
        beta = ad.parameter(np.full((3, 1), 1.0 / 3.0))
        with pytest.raises(ValueError):
            layer_attention(layers, beta, n=2)


class TestDecoders:
    def test_zero_encodings_give_half_everywhere(self):
        enc = random_encoding(np.random.default_rng(8), 3, 4, 5)
        for t in (enc.h_r_s, enc.h_r_a, enc.h_d_s, enc.h_d_a):
            t.value[:] = 0.0
        _, _, s = decode_cross(enc)
        assert np.all(s.value == 0.5)
        _, _, s_non = decode_noncross(enc)
        assert np.all(s_non.value == 0.5)

    def test_cross_decoder_transpose_symmetry_is_exact(self):
        from dfdrnn.model import FinalEncoding

        rng = np.random.default_rng(9)
        enc = random_encoding(rng, 4, 6, 5)
        swapped = FinalEncoding(
            h_r_s=enc.h_d_s, h_r_a=enc.h_d_a, h_d_s=enc.h_r_s, h_d_a=enc.h_r_a
        )
        _, _, s = decode_cross(enc)
        _, _, s_swapped = decode_cross(swapped)
        assert np.array_equal(s_swapped.value, s.value.T)

    def test_noncross_equals_cross_when_streams_identical(self):
        from dfdrnn.model import FinalEncoding

        rng = np.random.default_rng(10)
        h_r = rng.normal(size=(3, 4))
        h_d = rng.normal(size=(5, 4))
        enc = FinalEncoding(
            h_r_s=ad.constant(h_r), h_r_a=ad.constant(h_r),
            h_d_s=ad.constant(h_d), h_d_a=ad.constant(h_d),
        )
        _, _, s = decode_cross(enc)
        _, _, s_non = decode_noncross(enc)
        assert np.array_equal(s.value, s_non.value)

    def test_two_by_two_hand_computation(self):
        from dfdrnn.model import FinalEncoding

        h_r_a = np.array([[1.0, 0.0], [0.5, -0.5]])
        h_d_s = np.array([[2.0, 1.0], [0.0, 1.0]])
        h_d_a = np.array([[1.0, 1.0], [-1.0, 0.0]])
        h_r_s = np.array([[0.0, 2.0], [1.0, 1.0]])
        enc = FinalEncoding(
            h_r_s=ad.constant(h_r_s), h_r_a=ad.constant(h_r_a),
            h_d_s=ad.constant(h_d_s), h_d_a=ad.constant(h_d_a),
        )
        sig = lambda x: 1.0 / (1.0 + np.exp(-x))
        s_r, s_d, s = decode_cross(enc)
        assert np.allclose(s_r.value, sig(h_r_a @ h_d_s.T), atol=1e-15)
        assert np.allclose(s_d.value, sig(h_d_a @ h_r_s.T), atol=1e-15)
        assert np.allclose(
            s.value, (sig(h_r_a @ h_d_s.T) + sig(h_d_a @ h_r_s.T).T) / 2.0, atol=1e-15
        )
        s_r_non, s_d_non, s_non = decode_noncross(enc)
        assert np.allclose(s_r_non.value, sig(h_r_a @ h_d_a.T), atol=1e-15)
        assert np.allclose(s_d_non.value, sig(h_d_s @ h_r_s.T), atol=1e-15)
        assert np.allclose(
            s_non.value, (sig(h_r_a @ h_d_a.T) + sig(h_d_s @ h_r_s.T).T) / 2.0, atol=1e-15
        )


class TestForward:
    def test_eval_mode_is_deterministic_and_dropout_free(self, planted):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=4, dropout=0.9, edge_dropout=0.9)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(0).init)
        s1 = predict_scores(inputs, params, cfg)
        s2 = predict_scores(inputs, params, cfg)
        assert np.array_equal(s1, s2)
        # identical to a config with zero dropout rates
        cfg0 = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=4, dropout=0.0, edge_dropout=0.0)
        assert np.array_equal(s1, predict_scores(inputs, params, cfg0))

    def test_scores_shape_and_range(self, planted):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=3, top_t=4)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(1).init)
        s = predict_scores(inputs, params, cfg)
        assert s.shape == (20, 15)
        assert np.all((s > 0.0) & (s < 1.0))

    def test_residual_identity_with_zero_modules(self, planted):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=3, top_t=4)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(2).init)
        zero_module_params(params)
        h0 = project_initial(inputs.features, params.projection)
        feats = h0
        for layer in params.layers:
            hat = sddfe_layer(inputs.e_s, feats, layer.sddfe)
            tilde = cddfe_layer(inputs.e_a, feats, layer.cddfe)
            feats = fuse(hat, tilde, feats)
            assert np.array_equal(feats.h_s.value, h0.h_s.value)
            assert np.array_equal(feats.h_a.value, h0.h_a.value)

    def test_no_cf_equals_full_under_equal_streams(self):
        # square dataset with identity blocks plus a projection whose halves
        # coincide makes the projected streams equal, so the swap is invisible
        ids = EntityIds(("r0", "r1", "r2"), ("d0", "d1", "d2"))
        ds = Dataset(
            ids=ids,
            drug_sim=SimilarityMatrix(np.eye(3), ids.drug_ids),
            disease_sim=SimilarityMatrix(np.eye(3), ids.disease_ids),
            assoc=AssociationMatrix(np.eye(3), ids),
            name="square",
        )
        cfg_full = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=1)
        inputs = build_model_inputs(ds, cfg_full)
        params = init_model_params(cfg_full, 3, 3, expand_seed(3).init)
        params.projection.value[3:] = params.projection.value[:3]
        h0 = project_initial(inputs.features, params.projection)
        assert np.array_equal(h0.h_s.value, h0.h_a.value)
        cfg_nocf = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=1, variant="no_cf")
        assert np.array_equal(
            predict_scores(inputs, params, cfg_full), predict_scores(inputs, params, cfg_nocf)
        )

    def test_variant_and_decoder_smoke(self, planted):
        inputs_cache = {}
        for variant in ("full", "sf_only", "af_only", "gcn", "no_cf"):
            cfg = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=4, variant=variant)
            inputs = inputs_cache.setdefault(cfg.top_t, build_model_inputs(planted, cfg))
            params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(4).init)
            s = predict_scores(inputs, params, cfg)
            assert s.shape == (20, 15) and np.all((s > 0) & (s < 1))
        for decoder in ("cross", "noncross", "drug_only", "disease_only",
                        "noncross_drug", "noncross_disease"):
            cfg = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=4, decoder=decoder)
            inputs = inputs_cache[cfg.top_t]
            params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(5).init)
            s = predict_scores(inputs, params, cfg)
            assert s.shape == (20, 15) and np.all((s > 0) & (s < 1))

    def test_one_pair_full_hand_evaluation(self):
        """End-to-end oracle: L=1, k=1, p=1 on a single drug-disease pair,
        every step recomputed with plain scalar arithmetic."""
        ds = one_pair_dataset()
        cfg = ModelConfig(embed_dim=1, heads=1, layers=1, top_t=1)
        with pytest.warns(UserWarning, match="saturates"):
            inputs = build_model_inputs(ds, cfg)
        params = init_model_params(cfg, 1, 1, expand_seed(6).init)
        rng = np.random.default_rng(77)
        for _, t in params.named_tensors():
            t.value[:] = rng.uniform(-1.0, 1.0, size=t.value.shape)

        s = predict_scores(inputs, params, cfg)

        def scalar(t):
            return float(t.value[0, 0])

        slope = cfg.slope
        act = lambda x: x if x > 0 else slope * x
        sig = lambda x: 1.0 / (1.0 + np.exp(-x))
        m_top, m_bot = params.projection.value[0, 0], params.projection.value[1, 0]
        # projection: similarity feature is the identity, association feature
        # swaps the two rows
        h_s = [m_top, m_bot]
        h_a = [m_bot, m_top]
        sd = params.layers[0].sddfe
        cd = params.layers[0].cddfe
        # within-domain block: each node's only neighbor is itself
        hat_s = [
            act(scalar(sd.w_v) * h_s[0] * scalar(sd.w_r) + scalar(sd.b_r)),
            act(scalar(sd.w_v) * h_s[1] * scalar(sd.w_d) + scalar(sd.b_d)),
        ]
        hat_a = [
            act(scalar(sd.w_v) * h_a[0] * scalar(sd.w_r) + scalar(sd.b_r)),
            act(scalar(sd.w_v) * h_a[1] * scalar(sd.w_d) + scalar(sd.b_d)),
        ]
        # cross-domain block: each node's only neighbor is the other; the
        # streams swap on output
        from_s = [
            act(scalar(cd.w_v) * h_s[1] * scalar(cd.w_r) + scalar(cd.b_r)),
            act(scalar(cd.w_v) * h_s[0] * scalar(cd.w_d) + scalar(cd.b_d)),
        ]
        from_a = [
            act(scalar(cd.w_v) * h_a[1] * scalar(cd.w_r) + scalar(cd.b_r)),
            act(scalar(cd.w_v) * h_a[0] * scalar(cd.w_d) + scalar(cd.b_d)),
        ]
        tilde_a, tilde_s = from_s, from_a
        h1_s = [hat_s[i] + tilde_s[i] + h_s[i] for i in range(2)]
        h1_a = [hat_a[i] + tilde_a[i] + h_a[i] for i in range(2)]
        beta = params.layer_weights.value[0, 0]
        h_r_s, h_d_s = beta * h1_s[0], beta * h1_s[1]
        h_r_a, h_d_a = beta * h1_a[0], beta * h1_a[1]
        s_r = sig(h_r_a * h_d_s)
        s_d = sig(h_d_a * h_r_s)
        expected = (s_r + s_d) / 2.0
        assert s[0, 0] == pytest.approx(expected, abs=1e-12)


class TestCheckpoints:
    def test_round_trip(self, planted, tmp_path):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=2, top_t=4)
        inputs = build_model_inputs(planted, cfg)
        params = init_model_params(cfg, inputs.n, inputs.m, expand_seed(0).init)
        fp = dataset_fingerprint(planted.ids)
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(path, params, cfg, fp)
        loaded, loaded_cfg, loaded_fp = load_checkpoint(path, fp)
        assert loaded_cfg == cfg
        assert loaded_fp == fp
        for (name_a, t_a), (name_b, t_b) in zip(
            params.named_tensors(), loaded.named_tensors()
        ):
            assert name_a == name_b
            assert np.array_equal(t_a.value, t_b.value)
        # loaded params drive the same predictions
        assert np.array_equal(
            predict_scores(inputs, params, cfg), predict_scores(inputs, loaded, cfg)
        )

    def test_fingerprint_mismatch_rejected(self, planted, toy, tmp_path):
        cfg = ModelConfig(embed_dim=8, heads=2, layers=1, top_t=3)
        params = init_model_params(cfg, 20, 15, expand_seed(0).init)
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(path, params, cfg, dataset_fingerprint(planted.ids))
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_checkpoint(path, dataset_fingerprint(toy.ids))

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        np.savez(path.open("wb"), foo=np.zeros(3))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
