"""The full encoder stack: schema fusion -> item tokens -> interaction
blocks -> user tokens -> reader vector, with every ablation switch.

Parameters live in one ordered name -> Tensor map so the optimizer,
checkpoints, and gradient checks can treat the model uniformly. Modality
encoders (numeric state, embedder projections) are frozen by construction
and are hashed so training can assert they never move.
"""

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import qformer as Q
from . import tensor as T
from .errors import ConfigError
from .fusion import SchemaFusion, new_type_table

SCHEMA_MODES = ("triplet", "value_only")
FUSION_MODES = ("qformer", "mlp", "self_attention", "pure_text")
USER_MODES = ("user_qformer", "mean_items")
READER_MODES = ("transformer", "identity")


@dataclass
class ModelConfig:
    d: int = 64
    k_item: int = 4
    k_user: int = 4
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    n_reader_layers: int = 2
    t_max: int = 20
    schema_mode: str = "triplet"
    fusion_mode: str = "qformer"
    user_mode: str = "user_qformer"
    reader_mode: str = "transformer"
    use_step_positions: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        bad = []
        if self.schema_mode not in SCHEMA_MODES:
            bad.append(f"schema_mode={self.schema_mode!r}")
        if self.fusion_mode not in FUSION_MODES:
            bad.append(f"fusion_mode={self.fusion_mode!r}")
        if self.user_mode not in USER_MODES:
            bad.append(f"user_mode={self.user_mode!r}")
        if self.reader_mode not in READER_MODES:
            bad.append(f"reader_mode={self.reader_mode!r}")
        if self.dtype not in ("float32", "float64"):
            bad.append(f"dtype={self.dtype!r}")
        if bad:
            raise ConfigError("invalid config keys: " + ", ".join(bad))
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.k_item < 1 or self.k_user < 1 or self.t_max < 1:
            raise ConfigError("k_item, k_user, t_max must all be >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, obj):
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(obj) - set(known))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**known)


def _step_position_encoding(idx, d, dtype):
    enc = np.zeros(d, dtype=dtype)
    for i in range(0, d, 2):
        angle = idx / (10000.0 ** (i / d))
        enc[i] = math.sin(angle)
        if i + 1 < d:
            enc[i + 1] = math.cos(angle)
    return enc


class RecModel:
    def __init__(self, cfg, registry, numeric_state, embedders):
        self.cfg = cfg
        self.registry = registry
        self.numeric = numeric_state
        self.embedders = embedders
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)

        d = cfg.d
        self.item_cfg = Q.QFormerConfig(
            d=d, n_queries=cfg.k_item, n_layers=cfg.n_layers,
            n_heads=cfg.n_heads, ffn_mult=cfg.ffn_mult,
        )
        self.user_cfg = replace(self.item_cfg, n_queries=cfg.k_user)

        params = OrderedDict()
        self.type_table = new_type_table(d, rng, self.dtype)
        params["schema.type_table"] = self.type_table

        if cfg.fusion_mode in ("qformer", "pure_text"):
            Q.init_qformer_params(params, "item", self.item_cfg, rng, self.dtype)
        elif cfg.fusion_mode == "self_attention":
            Q.init_self_attention_pool_params(params, "itemsa", self.item_cfg, rng, self.dtype)
        elif cfg.fusion_mode == "mlp":
            self._mlp_slots = [a.name for a in registry.item_attributes()]
            Q.init_mlp_concat_params(
                params, "itemmlp", len(self._mlp_slots), self.item_cfg, rng, self.dtype
            )

        if cfg.user_mode == "user_qformer":
            Q.init_qformer_params(params, "user", self.user_cfg, rng, self.dtype)

        Q.add_linear(params, "ctx.proj", 2 * d, d, rng, self.dtype)
        params["ctx.noreview"] = T.Tensor(
            rng.normal(0.0, 0.02, size=(1, d)).astype(self.dtype), requires_grad=True
        )
        Q.add_linear(params, "recon.fc1", d, d, rng, self.dtype)
        Q.add_linear(params, "recon.fc2", d, d, rng, self.dtype)
        Q.init_reader_params(params, self.item_cfg, cfg.n_reader_layers, rng, self.dtype)
        self.params = params

        use_triplet = cfg.schema_mode == "triplet" and cfg.fusion_mode != "pure_text"
        self.fusion = SchemaFusion(
            embedders, registry, self.type_table, self.dtype,
            include_name=use_triplet, include_type=use_triplet,
            text_only=cfg.fusion_mode == "pure_text",
        )
        self._slot_cache = {}
        self._ctx_cache = {}

    # -- parameter partitions -------------------------------------------

    def trainable_names(self, stage, freeze_qformers=False):
        """Stage 1 trains everything but the reader; stage 2 trains all.

        `freeze_qformers` is the reader-only ablation: stage-two training
        with the encoder stack pinned.
        """
        if stage == 1:
            names = [n for n in self.params if not n.startswith("reader.")]
        else:
            names = list(self.params)
        if freeze_qformers:
            names = [n for n in names if n.startswith("reader.")]
        return names

    def frozen_encoder_hash(self):
        # image projections for new sidecar widths materialize lazily but are
        # pure functions of (seed, width); hashing seed covers them
        h = hashlib.sha256()
        for name, arr in sorted(self.numeric.arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.embedders.seed).encode())
        h.update(str(self.embedders.native_width).encode())
        h.update(np.ascontiguousarray(self.embedders._text_proj).tobytes())
        return h.hexdigest()

    # -- item level -------------------------------------------------------

    def _mlp_slot_vector(self, item):
        cached = self._slot_cache.get(item.item_id)
        if cached is None:
            d = self.cfg.d
            parts = []
            for name in self._mlp_slots:
                value = item.attributes.get(name)
                if value is None:
                    parts.append(np.zeros(d, dtype=self.dtype))
                else:
                    attr = self.registry.by_name[(name, "item")]
                    v = self.embedders.embed_value(
                        attr.modality, value, fieldname=name, entity_id=item.item_id
                    )
                    parts.append(np.asarray(v, dtype=self.dtype))
            cached = np.concatenate(parts).reshape(1, -1)
            self._slot_cache[item.item_id] = cached
        return T.Tensor(cached)

    def encode_item(self, item, cache=None):
        """Item token block, K_item x d. `cache` memoizes within one step."""
        if cache is not None and item.item_id in cache:
            return cache[item.item_id]
        mode = self.cfg.fusion_mode
        if mode in ("qformer", "pure_text"):
            z = Q.qformer_forward(
                self.params, "item", self.item_cfg, self.fusion.build_item_inputs(item)
            )
        elif mode == "self_attention":
            z = Q.self_attention_pool(
                self.params, "itemsa", self.item_cfg,
                self.fusion.build_item_inputs(item), self.cfg.k_item,
            )
        else:
            z = Q.mlp_concat(
                self.params, "itemmlp", self._mlp_slot_vector(item), self.cfg.k_item
            )
        if cache is not None:
            cache[item.item_id] = z
        return z

    def item_vector(self, item, cache=None):
        """Mean-pooled item tokens: the corpus-side embedding for scoring."""
        return Q.mean_rows(self.encode_item(item, cache))

    # -- interaction level ------------------------------------------------

    def _review_context_const(self, interaction):
        """Frozen [text report embedding | rating embedding] row, or None."""
        rv = interaction.review
        if rv is None:
            return None
        key = (interaction.user_id, interaction.item_id, interaction.timestamp)
        cached = self._ctx_cache.get(key)
        if cached is None:
            d = self.cfg.d
            text = (
                self.embedders.embed_text(rv.full_text)
                if rv.full_text else np.zeros(d)
            )
            rating = (
                self.numeric.encode_number(rv.rating, fieldname="rating")
                if rv.rating is not None else np.zeros(d)
            )
            cached = np.concatenate([text, rating]).reshape(1, -1).astype(self.dtype)
            self._ctx_cache[key] = cached
        return cached

    def interaction_block(self, z, interaction, step_index=0):
        """Concat(z_t, c_t) with the timestamp embedding added to every row."""
        ctx = self._review_context_const(interaction)
        if ctx is None:
            c = self.params["ctx.noreview"]
        else:
            c = T.add(T.matmul(T.Tensor(ctx), self.params["ctx.proj.w"]),
                      self.params["ctx.proj.b"])
        block = T.concat([z, c], axis=0)
        p_t = self.numeric.encode_timestamp(interaction.timestamp).astype(self.dtype)
        if self.cfg.use_step_positions:
            p_t = p_t + _step_position_encoding(step_index, self.cfg.d, self.dtype)
        return T.add(block, T.Tensor(p_t))

    # -- user level ----------------------------------------------------------

    def user_tokens(self, history, cache=None):
        """K_user x d summary of a chronological interaction history."""
        if not history:
            raise ConfigError("cannot encode an empty history")
        history = history[-self.cfg.t_max:]
        blocks = [
            self.interaction_block(self.encode_item_by_id(rec, cache), rec, i)
            for i, rec in enumerate(history)
        ]
        if self.cfg.user_mode == "mean_items":
            pooled = T.concat([Q.mean_rows(b) for b in blocks], axis=0)
            return Q.tile_rows(Q.mean_rows(pooled), self.cfg.k_user)
        tokens = blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=0)
        return Q.qformer_forward(self.params, "user", self.user_cfg, tokens)

    def encode_item_by_id(self, interaction, cache):
        return self.encode_item(self._items[interaction.item_id], cache)

    def bind_items(self, items):
        """Attach the item table so histories can resolve item ids."""
        self._items = items

    def user_vector(self, history, cache=None):
        """The final d-vector the ranker dots against item embeddings."""
        tokens = self.user_tokens(history, cache)
        return Q.reader_forward(
            self.params, self.item_cfg, self.cfg.n_reader_layers, tokens,
            identity=self.cfg.reader_mode == "identity",
        )

    # -- reconstruction head ----------------------------------------------

    def recon_predictions(self, item, z):
        """Schema-conditioned readout: per-attribute prediction of v_j."""
        queries, targets = self.fusion.reconstruction_queries_and_targets(item)
        scale = 1.0 / math.sqrt(self.cfg.d)
        weights = T.softmax(T.mul_scalar(T.matmul(queries, T.transpose(z)), scale))
        ctx = T.matmul(weights, z)
        h = T.gelu(T.add(T.matmul(ctx, self.params["recon.fc1.w"]),
                         self.params["recon.fc1.b"]))
        pred = T.add(T.matmul(h, self.params["recon.fc2.w"]),
                     self.params["recon.fc2.b"])
        return pred, targets
