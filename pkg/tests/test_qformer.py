"""Q-Former mechanics: bottleneck shape contract, bit-exact set invariance,
single-key attention, rotation invariance of attention weights, parameter
count closed form, and the composite model paths."""

import math
from collections import OrderedDict

import numpy as np
import pytest

from hqrec import qformer as Q
from hqrec import tensor as T
from hqrec.data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    split_windows,
)
from hqrec.embedders import EmbedderRegistry
from hqrec.errors import ConfigError, ShapeError
from hqrec.model import ModelConfig, RecModel
from hqrec.numeric import NumericEncoderConfig, NumericEncoderState

D = 16
CFG = Q.QFormerConfig(d=D, n_queries=3, n_layers=2, n_heads=2)


def _params(cfg=CFG, seed=0):
    params = OrderedDict()
    Q.init_qformer_params(params, "qf", cfg, np.random.default_rng(seed), np.float64)
    return params


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            Q.QFormerConfig(d=10, n_heads=4)

    def test_param_count_closed_form(self):
        for cfg in (CFG, Q.QFormerConfig(d=32, n_queries=5, n_layers=1, n_heads=4)):
            params = OrderedDict()
            Q.init_qformer_params(params, "x", cfg, np.random.default_rng(0), np.float64)
            actual = sum(p.data.size for p in params.values())
            assert actual == Q.qformer_param_count(cfg)


class TestForward:
    @pytest.mark.parametrize("n", [1, 5, 50])
    def test_output_shape_fixed(self, n):
        params = _params()
        rng = np.random.default_rng(n)
        out = Q.qformer_forward(params, "qf", CFG, T.Tensor(rng.standard_normal((n, D))))
        assert out.shape == (CFG.n_queries, D)

    def test_permutation_bit_invariance(self):
        params = _params()
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, D))
        base = Q.qformer_forward(params, "qf", CFG, T.Tensor(x)).data
        for _ in range(5):
            perm = rng.permutation(6)
            out = Q.qformer_forward(params, "qf", CFG, T.Tensor(x[perm])).data
            np.testing.assert_array_equal(out, base)

    def test_masked_pad_never_changes_output(self):
        params = _params()
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, D))
        base = Q.qformer_forward(params, "qf", CFG, T.Tensor(x)).data
        padded = np.vstack([x, rng.standard_normal((2, D))])
        mask = np.array([True] * 4 + [False] * 2)
        out = Q.qformer_forward(params, "qf", CFG, T.Tensor(padded), mask).data
        np.testing.assert_array_equal(out, base)

    def test_all_masked_rejected(self):
        params = _params()
        x = T.Tensor(np.zeros((3, D)))
        with pytest.raises(ShapeError, match="all-masked"):
            Q.qformer_forward(params, "qf", CFG, x, np.zeros(3, dtype=bool))

    def test_single_key_attention_equals_value_projection(self):
        params = _params()
        rng = np.random.default_rng(9)
        x_q = T.Tensor(rng.standard_normal((4, D)))
        x_kv = T.Tensor(rng.standard_normal((1, D)))
        # with one key the softmax is 1, so each query's pre-output context
        # equals the single input's value projection
        v = x_kv.data @ params["qf.l0.cross.wv.w"].data + params["qf.l0.cross.wv.b"].data
        out = Q.multi_head_attention(params, "qf.l0.cross", x_q, x_kv, CFG.n_heads)
        expected = v @ params["qf.l0.cross.wo.w"].data + params["qf.l0.cross.wo.b"].data
        np.testing.assert_allclose(out.data, np.tile(expected, (4, 1)), rtol=1e-12)

    def test_width_mismatch_rejected(self):
        params = _params()
        with pytest.raises(ShapeError):
            Q.qformer_forward(params, "qf", CFG, T.Tensor(np.zeros((3, D + 1))))


class TestAttentionWeights:
    def test_joint_orthogonal_rotation_leaves_weights_unchanged(self):
        rng = np.random.default_rng(10)
        dh = 8
        q = rng.standard_normal((4, dh))
        k = rng.standard_normal((6, dh))
        rot, _ = np.linalg.qr(rng.standard_normal((dh, dh)))
        scale = 1.0 / math.sqrt(dh)

        def weights(qm, km):
            return T.softmax(T.mul_scalar(
                T.matmul(T.Tensor(qm), T.transpose(T.Tensor(km))), scale)).data

        np.testing.assert_allclose(
            weights(q, k), weights(q @ rot, k @ rot), atol=1e-8
        )


class TestAggregators:
    def test_self_attention_pool_permutation_invariant(self):
        cfg = Q.QFormerConfig(d=D, n_queries=2, n_layers=1, n_heads=2)
        params = OrderedDict()
        Q.init_self_attention_pool_params(params, "sa", cfg, np.random.default_rng(0),
                                          np.float64)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((5, D))
        base = Q.self_attention_pool(params, "sa", cfg, T.Tensor(x), 2).data
        out = Q.self_attention_pool(params, "sa", cfg,
                                    T.Tensor(x[rng.permutation(5)]), 2).data
        np.testing.assert_array_equal(out, base)
        assert base.shape == (2, D)

    def test_tile_rows(self):
        row = T.Tensor(np.arange(D, dtype=np.float64).reshape(1, -1))
        tiled = Q.tile_rows(row, 4)
        assert tiled.shape == (4, D)
        np.testing.assert_array_equal(tiled.data, np.tile(row.data, (4, 1)))


@pytest.fixture(scope="module")
def synth_stack():
    spec = SyntheticSpec(n_users=30, n_items=30, n_clusters=3,
                         interactions_per_user=8, seed=2)
    items, inters, registry, sidecar = generate_synthetic(spec)
    ds = Dataset({i.item_id: i for i in items}, inters, registry)
    windows = split_windows(ds.histories(), window=5)
    numeric = NumericEncoderState(NumericEncoderConfig(d_out=D), seed=0)
    emb = EmbedderRegistry(D, numeric, seed=0, sidecar=sidecar)
    return ds, windows, numeric, emb


def _model(synth_stack, **overrides):
    ds, windows, numeric, emb = synth_stack
    base = dict(d=D, k_item=2, k_user=2, n_layers=1, n_heads=2,
                n_reader_layers=1, t_max=5, dtype="float64", seed=4)
    base.update(overrides)
    model = RecModel(ModelConfig(**base), ds.registry, numeric, emb)
    model.bind_items(ds.items)
    return model, ds, windows


class TestModelPaths:
    def test_encode_item_shapes(self, synth_stack):
        model, ds, _ = _model(synth_stack)
        item = ds.items[ds.item_ids()[0]]
        assert model.encode_item(item).shape == (2, D)

    def test_items_with_disjoint_attributes_differ(self, synth_stack):
        model, ds, _ = _model(synth_stack)
        ids = ds.item_ids()
        z0 = model.encode_item(ds.items[ids[0]]).data
        z1 = model.encode_item(ds.items[ids[1]]).data
        assert not np.allclose(z0, z1)

    def test_interaction_block_token_count(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        sample = windows["test"][0]
        rec = sample.history[0]
        z = model.encode_item(ds.items[rec.item_id])
        block = model.interaction_block(z, rec)
        assert block.shape == (3, D)  # k_item + 1

    def test_no_review_uses_learned_vector(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        rec = next(r for s in windows["test"] for r in s.history if r.review is None)
        z = model.encode_item(ds.items[rec.item_id])
        block = model.interaction_block(z, rec)
        p_t = model.numeric.encode_timestamp(rec.timestamp)
        np.testing.assert_allclose(
            block.data[-1], model.params["ctx.noreview"].data[0] + p_t, atol=1e-12
        )

    def test_timestamp_shift_moves_all_rows_equally(self, synth_stack):
        from dataclasses import replace
        model, ds, windows = _model(synth_stack)
        rec = windows["test"][0].history[0]
        z = model.encode_item(ds.items[rec.item_id])
        b1 = model.interaction_block(z, rec).data
        rec2 = replace(rec, timestamp=rec.timestamp + 86400 * 3)
        z2 = model.encode_item(ds.items[rec.item_id])
        b2 = model.interaction_block(z2, rec2).data
        delta = (model.numeric.encode_timestamp(rec2.timestamp)
                 - model.numeric.encode_timestamp(rec.timestamp))
        np.testing.assert_allclose(b2 - b1, np.tile(delta, (3, 1)), atol=1e-12)

    def test_user_tokens_shape_and_t_max_clip(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        sample = next(s for s in windows["test"] if len(s.history) >= 4)
        u = model.user_tokens(sample.history)
        assert u.shape == (2, D)

    def test_interaction_order_permutation_invariant(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        sample = next(s for s in windows["test"] if len(s.history) >= 4)
        hist = sample.history[-4:]
        base = model.user_tokens(hist).data
        perm = [hist[2], hist[0], hist[3], hist[1]]
        np.testing.assert_array_equal(model.user_tokens(perm).data, base)

    def test_single_interaction_history(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        sample = windows["test"][0]
        u = model.user_tokens(sample.history[:1])
        assert u.shape == (2, D)

    def test_identity_reader_with_identity_projection_is_mean(self, synth_stack):
        model, ds, windows = _model(synth_stack, reader_mode="identity")
        model.params["reader.proj.w"].data = np.eye(D)
        model.params["reader.proj.b"].data = np.zeros(D)
        sample = windows["test"][0]
        tokens = model.user_tokens(sample.history)
        u = model.user_vector(sample.history)
        np.testing.assert_allclose(u.data[0], tokens.data.mean(axis=0), atol=1e-12)

    @pytest.mark.parametrize("k_user", [1, 4, 8])
    def test_reader_output_width(self, synth_stack, k_user):
        model, ds, windows = _model(synth_stack, k_user=k_user)
        u = model.user_vector(windows["test"][0].history)
        assert u.shape == (1, D)

    def test_gradient_flows_to_item_queries(self, synth_stack):
        model, ds, windows = _model(synth_stack)
        loss = T.tsum(model.user_vector(windows["test"][0].history))
        T.backward(loss)
        g = model.params["item.queries"].grad
        assert g is not None and np.any(g != 0)
        for n in model.params:
            model.params[n].zero_grad()

    def test_mean_items_of_identical_interactions(self, synth_stack):
        model, ds, windows = _model(synth_stack, user_mode="mean_items")
        rec = windows["test"][0].history[0]
        u1 = model.user_tokens([rec]).data
        u3 = model.user_tokens([rec, rec, rec]).data
        np.testing.assert_allclose(u3, u1, atol=1e-12)

    def test_mlp_fusion_tiled_output(self, synth_stack):
        model, ds, windows = _model(synth_stack, fusion_mode="mlp")
        item = ds.items[ds.item_ids()[0]]
        z = model.encode_item(item)
        assert z.shape == (2, D)
        np.testing.assert_array_equal(z.data[0], z.data[1])

    def test_pure_text_uses_only_text_attributes(self, synth_stack):
        model, ds, windows = _model(synth_stack, fusion_mode="pure_text")
        item = ds.items[ds.item_ids()[0]]
        inputs = model.fusion.build_item_inputs(item)
        assert inputs.shape[0] == 1  # synthetic items carry one text attribute

    def test_recon_single_token_reduces_to_perceptron(self, synth_stack):
        model, ds, windows = _model(synth_stack, k_item=1)
        item = ds.items[ds.item_ids()[0]]
        z = model.encode_item(item)
        pred, targets = model.recon_predictions(item, z)
        n_attrs = len(model.fusion.triplets_for_item(item))
        assert pred.shape == (n_attrs, D) and targets.shape == (n_attrs, D)
        # attention over one token is the identity: every context row is z_1
        from hqrec.kernels import gelu as _g
        h = np.asarray(_g(z.data @ model.params["recon.fc1.w"].data
                          + model.params["recon.fc1.b"].data))
        expected = h @ model.params["recon.fc2.w"].data + model.params["recon.fc2.b"].data
        np.testing.assert_allclose(pred.data, np.tile(expected, (n_attrs, 1)), rtol=1e-10)

    def test_invalid_mode_rejected_naming_key(self):
        with pytest.raises(ConfigError, match="fusion_mode"):
            ModelConfig(fusion_mode="bogus")
