"""Schema-aware attribute embeddings: h = name + type + value.

The name embedding is a frozen function of the attribute name string (so
unseen names still embed at inference), the type embedding is one trainable
row per modality tag, and the value embedding comes from the modality's
encoder. The three are summed with no post-sum normalization.

Ablation hooks: name/type can be suppressed (the value-only variant), and
the attribute set can be restricted to text modalities (the pure-text
variant).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MODALITIES
from .errors import DataError

MODALITY_INDEX = {m: i for i, m in enumerate(MODALITIES)}

_PAYLOAD_CHECKS = {
    "text": lambda v: isinstance(v, str),
    "categorical": lambda v: isinstance(v, (str, list, tuple)),
    "image": lambda v: isinstance(v, (str, list, tuple)),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "timestamp": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "geopoint": lambda v: isinstance(v, (list, tuple)) and len(v) == 2,
}


@dataclass(frozen=True)
class AttributeTriplet:
    name: str
    modality: str
    value: object

    def __post_init__(self):
        if not self.name:
            raise DataError("attribute triplet with empty name")
        check = _PAYLOAD_CHECKS.get(self.modality)
        if check is None:
            raise DataError(f"unknown modality tag {self.modality!r}")
        if not check(self.value):
            raise DataError(
                f"payload type {type(self.value).__name__} does not match "
                f"modality {self.modality!r} for attribute {self.name!r}"
            )


def new_type_table(d, rng, dtype=np.float64, scale=0.02):
    """Trainable modality-type embedding table, one row per tag."""
    return T.Tensor(
        rng.normal(0.0, scale, size=(len(MODALITIES), d)).astype(dtype),
        requires_grad=True,
    )


class SchemaFusion:
    """Builds per-item attribute embedding matrices for one ablation mode."""

    def __init__(self, embedders, registry, type_table, dtype=np.float64,
                 include_name=True, include_type=True, text_only=False):
        self.embedders = embedders
        self.registry = registry
        self.type_table = type_table
        self.dtype = np.dtype(dtype)
        self.include_name = include_name
        self.include_type = include_type
        self.text_only = text_only
        self._schema = [
            a for a in registry.item_attributes()
            if not text_only or a.modality == "text"
        ]
        self._name_cache = {}
        self._item_cache = {}

    def name_embedding(self, name):
        vec = self._name_cache.get(name)
        if vec is None:
            vec = self.embedders.embed_text(name).astype(self.dtype)
            self._name_cache[name] = vec
        return vec

    def triplets_for_item(self, item):
        """Present attributes in schema order (missing ones omitted)."""
        out = []
        for attr in self._schema:
            value = item.attributes.get(attr.name)
            if value is None:
                continue
            out.append(AttributeTriplet(attr.name, attr.modality, value))
        if not out:
            raise DataError(f"item {item.item_id!r} has no usable attributes")
        return out

    def _frozen_parts(self, item):
        """Constant (name+value) rows and type indices, cached per item."""
        cached = self._item_cache.get(item.item_id)
        if cached is not None:
            return cached
        triplets = self.triplets_for_item(item)
        rows = []
        type_idx = []
        for t in triplets:
            v = self.embedders.embed_value(
                t.modality, t.value, fieldname=t.name, entity_id=item.item_id
            )
            row = np.asarray(v, dtype=self.dtype)
            if self.include_name:
                row = row + self.name_embedding(t.name)
            rows.append(row)
            type_idx.append(MODALITY_INDEX[t.modality])
        cached = (np.stack(rows), np.asarray(type_idx), triplets)
        self._item_cache[item.item_id] = cached
        return cached

    def fuse_attribute(self, triplet, entity_id=None):
        """h = a + t + v for one attribute; returns a 1 x d tensor."""
        try:
            v = self.embedders.embed_value(
                triplet.modality, triplet.value,
                fieldname=triplet.name, entity_id=entity_id,
            )
        except Exception as e:
            raise DataError(f"attribute {triplet.name!r}: {e}") from e
        row = np.asarray(v, dtype=self.dtype).reshape(1, -1)
        if self.include_name:
            row = row + self.name_embedding(triplet.name).reshape(1, -1)
        h = T.Tensor(row)
        if self.include_type:
            trow = T.take_rows(self.type_table, [MODALITY_INDEX[triplet.modality]])
            h = T.add(h, trow)
        return h

    def build_item_inputs(self, item):
        """All schema-aware attribute embeddings for an item, as N x d."""
        const_rows, type_idx, _ = self._frozen_parts(item)
        h = T.Tensor(const_rows)
        if self.include_type:
            h = T.add(h, T.take_rows(self.type_table, type_idx))
        return h

    def reconstruction_queries_and_targets(self, item):
        """Schema-conditioned readout queries (a + t) and value targets v.

        Targets are frozen value embeddings (constants); queries carry
        gradients through the type table when it is enabled.
        """
        triplets = self.triplets_for_item(item)
        names = []
        targets = []
        type_idx = []
        for t in triplets:
            v = self.embedders.embed_value(
                t.modality, t.value, fieldname=t.name, entity_id=item.item_id
            )
            targets.append(np.asarray(v, dtype=self.dtype))
            names.append(
                self.name_embedding(t.name) if self.include_name
                else np.zeros(self.type_table.shape[1], dtype=self.dtype)
            )
            type_idx.append(MODALITY_INDEX[t.modality])
        q = T.Tensor(np.stack(names))
        if self.include_type:
            q = T.add(q, T.take_rows(self.type_table, type_idx))
        return q, T.Tensor(np.stack(targets))


def value_only_variant(fusion):
    """The no-triplet ablation: h = v, name and type suppressed."""
    return SchemaFusion(
        fusion.embedders, fusion.registry, fusion.type_table, fusion.dtype,
        include_name=False, include_type=False, text_only=fusion.text_only,
    )
