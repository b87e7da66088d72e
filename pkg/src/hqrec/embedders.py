"""Deterministic value embedders for text, categorical, and image attributes.

These stand in for heavyweight pretrained encoders: a signed-hash
bag-of-words for text (related strings land closer than unrelated ones,
which is the only property the downstream architecture needs), the same
embedder behind a "category:" instruction prefix for labels, and sidecar
feature lookup with a seeded-hash fallback for images. Every embedder is
frozen and projects to the shared model width d.

Numbers, timestamps, and geopoints dispatch to the numeric encoder state.
"""

import hashlib
import re

import numpy as np

from .data import MODALITIES
from .errors import DataError

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")
_CATEGORY_PREFIX = "category: "


def _stable_hash(text):
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


class EmbedderRegistry:
    """Value embedding for all six modality tags, fixed width d."""

    def __init__(self, d, numeric_state, seed=0, native_width=256,
                 sidecar=None, strict_images=False):
        self.d = d
        self.native_width = native_width
        self.numeric = numeric_state
        self.seed = seed
        self.sidecar = sidecar or {}
        self.strict_images = strict_images
        self._projections = {}
        self._text_proj = self._projection_for_width(native_width)

    def _projection_for_width(self, width):
        proj = self._projections.get(width)
        if proj is None:
            rng = np.random.default_rng(self.seed * 1_000_003 + width)
            proj = rng.normal(0.0, 1.0 / np.sqrt(self.d), size=(width, self.d))
            self._projections[width] = proj
        return proj

    # -- text ---------------------------------------------------------------

    def text_native(self, s):
        """Signed-hash bag of words, unit l2 norm; order/case insensitive."""
        if not isinstance(s, str) or not s.strip():
            raise DataError("text embedder requires a non-empty string")
        vec = np.zeros(self.native_width)
        for tok in _TOKEN_SPLIT.split(s.lower()):
            if not tok:
                continue
            h = _stable_hash(tok)
            idx = h % self.native_width
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # all tokens cancelled; fall back to a deterministic direction
            vec[_stable_hash(s) % self.native_width] = 1.0
            norm = 1.0
        return vec / norm

    def embed_text(self, s):
        return self.text_native(s) @ self._text_proj

    # -- categorical ----------------------------------------------------------

    def _categorical_native(self, label):
        return self.text_native(_CATEGORY_PREFIX + label)

    def embed_categorical(self, label):
        """One label, or a list of labels (mean of members, renormalized)."""
        if isinstance(label, (list, tuple)):
            labels = [str(v) for v in label if str(v).strip()]
            if not labels:
                raise DataError("categorical embedder requires a non-empty label")
            if len(labels) == 1:
                return self._categorical_native(labels[0]) @ self._text_proj
            mean = np.mean([self._categorical_native(v) for v in labels], axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                mean = mean / norm
            return mean @ self._text_proj
        if not str(label).strip():
            raise DataError("categorical embedder requires a non-empty label")
        return self._categorical_native(str(label)) @ self._text_proj

    # -- image ------------------------------------------------------------------

    def _pseudo_native(self, ref):
        rng = np.random.default_rng(_stable_hash(f"img:{self.seed}:{ref}") % 2**63)
        vec = rng.standard_normal(self.native_width)
        return vec / np.linalg.norm(vec)

    def _resolve_image(self, ref, entity_id=None, attribute=None):
        if entity_id is not None and attribute is not None:
            vec = self.sidecar.get((str(entity_id), attribute))
            if vec is not None:
                return vec
        if attribute is not None:
            vec = self.sidecar.get((str(ref), attribute))
            if vec is not None:
                return vec
        if self.strict_images:
            raise DataError(
                f"image feature missing for ref {ref!r} (entity {entity_id!r})"
            )
        return self._pseudo_native(str(ref))

    def embed_image(self, ref, entity_id=None, attribute=None):
        """Sidecar feature (any native width) projected to d; hash fallback."""
        refs = ref if isinstance(ref, (list, tuple)) else [ref]
        natives = [
            np.asarray(self._resolve_image(r, entity_id, attribute), dtype=np.float64)
            for r in refs
        ]
        outs = [nv @ self._projection_for_width(nv.shape[0]) for nv in natives]
        return outs[0] if len(outs) == 1 else np.mean(outs, axis=0)

    # -- dispatch ------------------------------------------------------------

    def embed_value(self, modality, value, fieldname=None, entity_id=None):
        if modality not in MODALITIES:
            raise DataError(f"unknown modality tag {modality!r}")
        if modality == "text":
            return self.embed_text(value)
        if modality == "categorical":
            return self.embed_categorical(value)
        if modality == "image":
            return self.embed_image(value, entity_id=entity_id, attribute=fieldname)
        if modality == "number":
            return self.numeric.encode_number(float(value), fieldname=fieldname)
        if modality == "timestamp":
            return self.numeric.encode_timestamp(float(value))
        if modality == "geopoint":
            lat, lon = value
            return self.numeric.encode_geopoint(float(lat), float(lon))
        raise AssertionError(modality)
