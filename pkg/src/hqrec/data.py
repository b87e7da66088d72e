"""Canonical dataset schema, ingestion, filtering, windowing, and the
planted-structure synthetic generator.

The on-disk interchange formats are:
  * canonical records: UTF-8 JSONL, one object per line, kind "item" or
    "interaction" (see ItemRecord / InteractionRecord);
  * schema registry: a JSON document listing attributes as
    (name, modality, level, parse rule);
  * feature sidecar: JSONL records {entity_id, attribute, vector}.
"""

import hashlib
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MODALITIES = ("text", "categorical", "image", "number", "timestamp", "geopoint")
LEVELS = ("item", "interaction")


# ---------------------------------------------------------------------------
# Schema registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemaAttribute:
    name: str
    modality: str
    level: str
    parse: dict = field(default_factory=dict)


class SchemaRegistry:
    """Ordered attribute inventory for one dataset."""

    def __init__(self, attributes):
        self.attributes = list(attributes)
        seen = set()
        for a in self.attributes:
            if a.modality not in MODALITIES:
                raise DataError(f"unknown modality tag {a.modality!r} for {a.name!r}")
            if a.level not in LEVELS:
                raise DataError(f"unknown level {a.level!r} for {a.name!r}")
            if not a.name:
                raise DataError("empty attribute name in schema registry")
            if (a.name, a.level) in seen:
                raise DataError(f"duplicate attribute {a.name!r} at level {a.level!r}")
            seen.add((a.name, a.level))
        self.by_name = {
            (a.name, a.level): a for a in self.attributes
        }

    def level(self, level):
        return [a for a in self.attributes if a.level == level]

    def item_attributes(self):
        return self.level("item")

    def interaction_attributes(self):
        return self.level("interaction")

    def schema_hash(self):
        payload = json.dumps(
            [[a.name, a.modality, a.level, a.parse] for a in self.attributes],
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json(self):
        return {
            "attributes": [
                {"name": a.name, "modality": a.modality, "level": a.level,
                 "parse": a.parse}
                for a in self.attributes
            ]
        }

    @classmethod
    def from_json(cls, obj):
        try:
            attrs = [
                SchemaAttribute(
                    name=a["name"], modality=a["modality"], level=a["level"],
                    parse=a.get("parse", {}),
                )
                for a in obj["attributes"]
            ]
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed schema registry: {e}") from e
        return cls(attrs)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class ItemRecord:
    item_id: str
    attributes: dict  # name -> typed value (post-parsing)


@dataclass
class Review:
    title: str = ""
    text: str = ""
    rating: float = None
    image_refs: tuple = ()

    @property
    def full_text(self):
        parts = [p for p in (self.title, self.text) if p]
        return ". ".join(parts)

    def is_empty(self):
        return not self.full_text and self.rating is None and not self.image_refs


@dataclass
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int
    location: tuple = None  # (lat, lon) or None
    review: Review = None


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------

def _parse_number(value, rule):
    if isinstance(value, str):
        s = value.strip()
        if rule.get("strip") == "currency":
            s = s.lstrip("$€£¥").replace(",", "")
        elif rule.get("strip") == "percent":
            s = s.rstrip("%")
        try:
            return float(s)
        except ValueError as e:
            raise DataError(f"cannot parse number from {value!r}") from e
    if isinstance(value, (int, float)) and math.isfinite(float(value)):
        return float(value)
    raise DataError(f"cannot parse number from {value!r}")


def _parse_text(value, rule):
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        # long text fields arrive as bullet lists; join with spaces
        return " ".join(str(v) for v in value)
    if isinstance(value, dict):
        # nested detail dictionaries flatten to one text blob
        return " ".join(f"{k}: {v}" for k, v in value.items())
    return str(value)


def _parse_categorical(value, rule):
    if isinstance(value, str):
        sep = rule.get("split")
        if sep:
            labels = [p.strip() for p in value.split(sep) if p.strip()]
            return labels if len(labels) > 1 else (labels[0] if labels else None)
        return value
    if isinstance(value, list):
        return [str(v) for v in value]
    return str(value)


def parse_attribute_value(attr, value):
    """Coerce one raw JSON value to the typed payload for its modality."""
    if value is None:
        return None
    rule = attr.parse
    if attr.modality == "number":
        return _parse_number(value, rule)
    if attr.modality == "timestamp":
        return int(_parse_number(value, rule))
    if attr.modality == "text":
        out = _parse_text(value, rule)
        return out if out.strip() else None
    if attr.modality == "categorical":
        return _parse_categorical(value, rule)
    if attr.modality == "image":
        if isinstance(value, list):
            refs = [str(v) for v in value if v]
            return refs or None
        return str(value) if value else None
    if attr.modality == "geopoint":
        if isinstance(value, dict) and "lat" in value and "lon" in value:
            return (float(value["lat"]), float(value["lon"]))
        if isinstance(value, (list, tuple)) and len(value) == 2:
            return (float(value[0]), float(value[1]))
        raise DataError(f"cannot parse geopoint from {value!r}")
    raise DataError(f"unknown modality {attr.modality!r}")


def _merge_geopoint_pairs(registry, raw_attrs, errors_out):
    """Fold (lat, lon) source fields into single geopoint attributes.

    A geopoint schema entry with parse {"lat": X, "lon": Y} consumes raw
    fields X and Y; datasets carrying both always yield exactly one
    geopoint triplet, never two independent numbers.
    """
    out = dict(raw_attrs)
    for attr in registry.item_attributes():
        if attr.modality != "geopoint":
            continue
        lat_key = attr.parse.get("lat")
        lon_key = attr.parse.get("lon")
        if not lat_key or not lon_key:
            continue
        lat = out.pop(lat_key, None)
        lon = out.pop(lon_key, None)
        if lat is None or lon is None:
            continue
        out[attr.name] = {"lat": float(lat), "lon": float(lon)}
    return out


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

class Dataset:
    def __init__(self, items, interactions, registry):
        self.items = items              # item_id -> ItemRecord
        self.interactions = interactions  # list[InteractionRecord]
        self.registry = registry

    def histories(self):
        """Chronological history per user; ties broken by input order."""
        per_user = defaultdict(list)
        for order, rec in enumerate(self.interactions):
            per_user[rec.user_id].append((rec.timestamp, order, rec))
        out = {}
        for user in sorted(per_user):
            rows = sorted(per_user[user], key=lambda r: (r[0], r[1]))
            out[user] = [r[2] for r in rows]
        return out

    def item_ids(self):
        return sorted(self.items)


def _parse_review(obj):
    if not obj:
        return None
    refs = obj.get("image_refs") or []
    rv = Review(
        title=str(obj.get("title") or ""),
        text=str(obj.get("text") or ""),
        rating=float(obj["rating"]) if obj.get("rating") is not None else None,
        image_refs=tuple(str(r) for r in refs),
    )
    return None if rv.is_empty() else rv


def load_dataset(path, registry, strict=False):
    """Parse canonical JSONL into typed records.

    Malformed lines are counted and reported on the returned dataset
    (`dataset.skipped`); in strict mode the first violation aborts with
    its line number.
    """
    items = {}
    interactions = []
    skipped = []
    item_schema = {a.name: a for a in registry.item_attributes()}

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                kind = obj.get("kind")
                if kind == "item":
                    rec = _load_item(obj, registry, item_schema)
                    items[rec.item_id] = rec
                elif kind == "interaction":
                    interactions.append(_load_interaction(obj))
                else:
                    raise DataError(f"unknown record kind {kind!r}")
            except (DataError, ValueError, KeyError, TypeError) as e:
                if strict:
                    raise DataError(f"line {lineno}: {e}") from e
                skipped.append((lineno, str(e)))

    for rec in interactions:
        if rec.item_id not in items:
            if strict:
                raise DataError(f"interaction references unknown item {rec.item_id!r}")
            skipped.append((0, f"dangling item reference {rec.item_id!r}"))
    interactions = [r for r in interactions if r.item_id in items]

    ds = Dataset(items, interactions, registry)
    ds.skipped = skipped
    return ds


def _load_item(obj, registry, item_schema):
    item_id = str(obj["item_id"])
    raw = obj.get("attributes") or {}
    raw = _merge_geopoint_pairs(registry, raw, None)
    attrs = {}
    for name, value in raw.items():
        if name not in item_schema:
            raise DataError(f"attribute {name!r} not in schema registry")
        parsed = parse_attribute_value(item_schema[name], value)
        if parsed is not None:
            attrs[name] = parsed
    if not attrs:
        raise DataError(f"item {item_id!r} has no present attributes")
    return ItemRecord(item_id=item_id, attributes=attrs)


def _load_interaction(obj):
    loc = obj.get("location")
    location = None
    if loc:
        if isinstance(loc, dict):
            location = (float(loc["lat"]), float(loc["lon"]))
        else:
            location = (float(loc[0]), float(loc[1]))
    return InteractionRecord(
        user_id=str(obj["user_id"]),
        item_id=str(obj["item_id"]),
        timestamp=int(obj["timestamp"]),
        location=location,
        review=_parse_review(obj.get("review")),
    )


def save_dataset(items, interactions, path):
    """Serialize records back to canonical JSONL (round-trip partner)."""
    with open(path, "w", encoding="utf-8") as f:
        for item in items:
            f.write(json.dumps(
                {"kind": "item", "item_id": item.item_id, "attributes": item.attributes},
                sort_keys=True,
            ) + "\n")
        for rec in interactions:
            obj = {"kind": "interaction", "user_id": rec.user_id,
                   "item_id": rec.item_id, "timestamp": rec.timestamp}
            if rec.location is not None:
                obj["location"] = {"lat": rec.location[0], "lon": rec.location[1]}
            if rec.review is not None:
                rv = {}
                if rec.review.title:
                    rv["title"] = rec.review.title
                if rec.review.text:
                    rv["text"] = rec.review.text
                if rec.review.rating is not None:
                    rv["rating"] = rec.review.rating
                if rec.review.image_refs:
                    rv["image_refs"] = list(rec.review.image_refs)
                obj["review"] = rv
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def load_sidecar(path):
    """Feature sidecar JSONL -> {(entity_id, attribute): float array}."""
    table = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                vec = np.asarray(obj["vector"], dtype=np.float64)
                table[(str(obj["entity_id"]), str(obj["attribute"]))] = vec
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"sidecar line {lineno}: {e}") from e
    return table


# ---------------------------------------------------------------------------
# 5-core filtering
# ---------------------------------------------------------------------------

def five_core_filter(interactions, k=5):
    """Iteratively drop users and items with < k interactions, to a fixpoint."""
    current = list(interactions)
    while True:
        user_deg = Counter(r.user_id for r in current)
        item_deg = Counter(r.item_id for r in current)
        kept = [
            r for r in current
            if user_deg[r.user_id] >= k and item_deg[r.item_id] >= k
        ]
        if len(kept) == len(current):
            break
        current = kept
    if not current:
        raise DataError(f"{k}-core filtering removed every interaction")
    return current


# ---------------------------------------------------------------------------
# Training windows
# ---------------------------------------------------------------------------

@dataclass
class WindowSample:
    user_id: str
    history: list       # InteractionRecords, chronological, length <= window
    target_item: str
    split: str          # train / val / test


def make_windows(history, window=20):
    """Split one user's chronological history into samples.

    The last interaction is the test target, the second-to-last the
    validation target. The remaining prefix yields sliding full windows
    (`window` history + 1 target); a prefix shorter than a full window
    yields one sample with all available history.
    """
    samples = []
    user = history[0].user_id if history else None
    n = len(history)
    if n < 2:
        return samples

    def hist_for(target_idx):
        lo = max(0, target_idx - window)
        return history[lo:target_idx]

    samples.append(WindowSample(user, hist_for(n - 1), history[n - 1].item_id, "test"))
    if n >= 3:
        samples.append(WindowSample(user, hist_for(n - 2), history[n - 2].item_id, "val"))

    train_len = n - 2  # indices 0 .. n-3
    if train_len >= window + 1:
        for target in range(window, train_len):
            samples.append(
                WindowSample(user, hist_for(target), history[target].item_id, "train")
            )
    elif train_len >= 2:
        target = train_len - 1
        samples.append(
            WindowSample(user, hist_for(target), history[target].item_id, "train")
        )
    return samples


def split_windows(histories, window=20):
    out = {"train": [], "val": [], "test": []}
    for user in sorted(histories):
        for s in make_windows(histories[user], window=window):
            out[s.split].append(s)
    return out


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 100
    n_clusters: int = 8
    interactions_per_user: int = 12
    latent_dim: int = 8
    noise: float = 0.1
    affinity_temperature: float = 0.25
    drift_fraction: float = 0.5   # users whose preference switches mid-history
    schema_confusion: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_items < self.n_clusters:
            raise DataError("need at least one item per cluster")
        if self.n_users < 1 or self.interactions_per_user < 2:
            raise DataError("synthetic spec too small to produce histories")


SYNTH_REGISTRY_ATTRS = [
    SchemaAttribute("title", "text", "item"),
    SchemaAttribute("category", "categorical", "item"),
    SchemaAttribute("price", "number", "item"),
    SchemaAttribute("rating_mean", "number", "item"),
    SchemaAttribute("signal_a", "number", "item"),
    SchemaAttribute("signal_b", "number", "item"),
    SchemaAttribute("first_seen", "timestamp", "item"),
    SchemaAttribute("location", "geopoint", "item",
                    {"lat": "latitude", "lon": "longitude"}),
    SchemaAttribute("photo", "image", "item"),
    SchemaAttribute("timestamp", "timestamp", "interaction"),
    SchemaAttribute("rating", "number", "interaction"),
    SchemaAttribute("text", "text", "interaction"),
]


def synthetic_registry():
    return SchemaRegistry(SYNTH_REGISTRY_ATTRS)


_SYNTH_VOCAB_PER_CLUSTER = 12


def _cluster_vocab(cluster, size=_SYNTH_VOCAB_PER_CLUSTER):
    return [f"w{cluster}x{i}" for i in range(size)]


def generate_synthetic(spec):
    """Latent-factor users/items with attributes derived from item latents.

    Returns (items, interactions, registry, sidecar) where sidecar maps
    (item_id, "photo") to a pseudo image feature vector. In
    schema-confusion mode the only cluster-revealing attributes are two
    numbers with identical marginal distributions and opposite signs;
    clusters come in +/- pairs so value-only encoders cannot separate them.
    """
    rng = np.random.default_rng(spec.seed)
    C = spec.n_clusters
    registry = synthetic_registry()

    # cluster geometry
    centers = rng.standard_normal((C, spec.latent_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    geo_centers = [(float(la), float(lo)) for la, lo in
                   zip(rng.uniform(-60, 60, C), rng.uniform(-150, 150, C))]
    # opposite-signed loadings for the confusion pair: clusters are paired
    # (0,1), (2,3), ... and share |offset| within a pair
    pair_offset = np.array([(i // 2 + 1) * (1 if i % 2 == 0 else -1)
                            for i in range(C)], dtype=np.float64)

    items = []
    item_cluster = {}
    sidecar = {}
    base_time = 1_500_000_000
    for i in range(spec.n_items):
        c = i % C
        item_id = f"i{i:05d}"
        item_cluster[item_id] = c
        z = centers[c] + spec.noise * rng.standard_normal(spec.latent_dim)
        vocab = _cluster_vocab(c)
        attrs = {}
        if spec.schema_confusion:
            # clusters come in +/- pairs; every attribute except the
            # confused numeric pair reveals only the PAIR, so the within-
            # pair distinction exists solely in (attribute name x sign).
            # A value-only encoder sees the set {E(+o), E(-o)} for both
            # pair members and cannot separate them in expectation.
            pair_id = c // 2
            sign = 1.0 if c % 2 == 0 else -1.0
            magnitude = float(pair_id + 1)
            pair_vocab = _cluster_vocab(pair_id)
            attrs["title"] = " ".join(rng.choice(pair_vocab, size=5))
            attrs["category"] = f"pair_{pair_id}"
            attrs["signal_a"] = float(sign * magnitude + spec.noise * rng.standard_normal())
            attrs["signal_b"] = float(-sign * magnitude + spec.noise * rng.standard_normal())
            attrs["price"] = round(
                float(5.0 + 3.0 * pair_id + spec.noise * rng.standard_normal()), 2)
            attrs["rating_mean"] = round(float(rng.uniform(1.0, 5.0)), 2)
            la, lo = geo_centers[2 * pair_id]
            attrs["location"] = (
                float(np.clip(la + 2 * spec.noise * rng.standard_normal(), -90, 90)),
                float(np.clip(lo + 2 * spec.noise * rng.standard_normal(), -180, 180)),
            )
            pair_center = centers[2 * pair_id] + centers[min(2 * pair_id + 1, C - 1)]
            sidecar[(item_id, "photo")] = (
                np.concatenate([pair_center, [magnitude]])
                + spec.noise * rng.standard_normal(spec.latent_dim + 1)
            )
        else:
            attrs["title"] = " ".join(rng.choice(vocab, size=5))
            attrs["category"] = f"cluster_{c}"
            attrs["signal_a"] = float(z[0])
            attrs["signal_b"] = float(z[1 % spec.latent_dim])
            attrs["price"] = round(
                float(5.0 + 3.0 * c + spec.noise * rng.standard_normal()), 2)
            attrs["rating_mean"] = round(float(np.clip(
                3.0 + z[0] + spec.noise * rng.standard_normal(), 1.0, 5.0)), 2)
            la, lo = geo_centers[c]
            attrs["location"] = (
                float(np.clip(la + 2 * spec.noise * rng.standard_normal(), -90, 90)),
                float(np.clip(lo + 2 * spec.noise * rng.standard_normal(), -180, 180)),
            )
            sidecar[(item_id, "photo")] = (
                np.concatenate([centers[c], [pair_offset[c]]])
                + spec.noise * rng.standard_normal(spec.latent_dim + 1)
            )
        attrs["first_seen"] = int(base_time - rng.integers(0, 5 * 31557600))
        attrs["photo"] = f"img_{item_id}"
        items.append(ItemRecord(item_id=item_id, attributes=attrs))

    ids_by_cluster = defaultdict(list)
    for it in items:
        ids_by_cluster[item_cluster[it.item_id]].append(it.item_id)

    interactions = []
    item_ids = [it.item_id for it in items]
    id_to_idx = {iid: k for k, iid in enumerate(item_ids)}
    cluster_of = np.array([item_cluster[i] for i in item_ids])

    for u in range(spec.n_users):
        user_id = f"u{u:05d}"
        c_main = int(rng.integers(0, C))
        drifts = rng.random() < spec.drift_fraction
        c_late = int(rng.integers(0, C)) if drifts else c_main
        t = base_time + int(rng.integers(0, 10 * 86400))
        n_inter = spec.interactions_per_user
        for step in range(n_inter):
            c_now = c_main if step < n_inter // 2 else c_late
            # softmax over latent affinity to the active cluster's center
            logits = (centers[c_now] @ centers[cluster_of].T) / spec.affinity_temperature
            p = np.exp(logits - logits.max())
            p /= p.sum()
            idx = rng.choice(len(item_ids), p=p)
            iid = item_ids[idx]
            t += int(rng.integers(3600, 7 * 86400))
            review = None
            if rng.random() < 0.7:
                c_item = item_cluster[iid]
                vocab = _cluster_vocab(
                    c_item // 2 if spec.schema_confusion else c_item
                )
                review = Review(
                    text=" ".join(rng.choice(vocab, size=4)),
                    rating=float(rng.integers(1, 6)),
                )
            interactions.append(InteractionRecord(
                user_id=user_id, item_id=iid, timestamp=t, review=review,
            ))

    return items, interactions, registry, sidecar


def save_sidecar(sidecar, path):
    with open(path, "w", encoding="utf-8") as f:
        for (entity, attr) in sorted(sidecar):
            vec = sidecar[(entity, attr)]
            f.write(json.dumps(
                {"entity_id": entity, "attribute": attr,
                 "vector": [float(v) for v in vec]},
            ) + "\n")
