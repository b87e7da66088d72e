"""Math-aware scalar encoder plus temporal-cycle and geospatial features.

A scalar is featurized as log-spaced sine/cosine bands plus a signed-log
magnitude channel and a sign channel, then passed through a learned linear
projection with a residual nonlinear branch. The encoder is trained on its
own three objectives (additivity, invertibility, distance preservation)
before the recommendation model ever sees it, and is frozen afterwards.

Timestamps get a secular channel plus exactly periodic cycle features
(integer-second remainders, so encode(t) == encode(t + period) bitwise).
Geopoints are projected onto the 3-D unit sphere before a learned map.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericError
from .kernels import adamw_update

TIME_MIN = 0                 # 1970-01-01
TIME_MAX = 4102444800        # 2100-01-01

DAY_S = 86400
WEEK_S = 7 * DAY_S
YEAR_S = 31557600            # 365.25 days
MONTH_S = YEAR_S // 12

CYCLE_PERIODS = (DAY_S, WEEK_S, YEAR_S, MONTH_S)
N_TIME_FEATURES = 1 + 2 * len(CYCLE_PERIODS)


@dataclass
class NumericEncoderConfig:
    d_out: int
    n_freq: int = 0          # 0 means "as many as fit, capped at 32"
    f_min: float = 1e-4
    f_max: float = 1e2
    scale_bound: float = 10.0

    def __post_init__(self):
        if self.n_freq == 0:
            self.n_freq = min(32, (self.d_out - 2) // 2)
        if self.f_min <= 0 or self.f_max <= self.f_min:
            raise ConfigError(
                f"frequency range invalid: f_min={self.f_min}, f_max={self.f_max}"
            )
        if self.n_freq < 2:
            raise ConfigError(f"n_freq must be >= 2, got {self.n_freq}")
        if 2 * self.n_freq + 2 > self.d_out:
            raise ConfigError(
                f"feature width {2 * self.n_freq + 2} exceeds d_out={self.d_out}"
            )

    @property
    def n_features(self):
        return 2 * self.n_freq + 2

    def frequencies(self):
        k = np.arange(self.n_freq, dtype=np.float64)
        return self.f_min * (self.f_max / self.f_min) ** (k / (self.n_freq - 1))


def fourier_features(x, cfg):
    """sin(f_k x) for each band, then cos(f_k x); length 2*n_freq."""
    if not math.isfinite(x):
        raise NumericError(f"non-finite scalar input: {x!r}")
    fx = cfg.frequencies() * x
    return np.concatenate([np.sin(fx), np.cos(fx)])


def raw_value_features(x, cfg):
    """(signed log magnitude / scale_bound, sign). Bounded for prices/counts."""
    s = float(np.sign(x))
    return np.array([s * math.log1p(abs(x)) / cfg.scale_bound, s])


def scalar_features(x, cfg):
    return np.concatenate([fourier_features(x, cfg), raw_value_features(x, cfg)])


def cyclical_time_features(t):
    """Eight sin/cos channels over day/week/year/month periods.

    Remainders are taken on integer seconds, making each channel exactly
    periodic: the feature of t and t + period is bit-equal.
    """
    t = int(t)
    feats = np.empty(2 * len(CYCLE_PERIODS), dtype=np.float64)
    for i, period in enumerate(CYCLE_PERIODS):
        ang = 2.0 * math.pi * (t % period) / period
        feats[2 * i] = math.sin(ang)
        feats[2 * i + 1] = math.cos(ang)
    return feats


def geo_unit_vector(lat, lon):
    """Degrees -> 3-D point on the unit sphere."""
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise NumericError(f"coordinates out of range: ({lat}, {lon})")
    la = math.radians(lat)
    lo = math.radians(lon)
    return np.array(
        [math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)]
    )


@dataclass
class FieldNorm:
    """Per-field affine normalization, fitted on the training split and frozen."""
    vmin: float
    vmax: float
    scale: float

    @property
    def center(self):
        return 0.5 * (self.vmin + self.vmax)

    def apply(self, x):
        return (x - self.center) / self.scale


def fit_field_norm(values, scale_bound):
    values = np.asarray(values, dtype=np.float64)
    vmin = float(values.min()) if values.size else 0.0
    vmax = float(values.max()) if values.size else 1.0
    half = 0.5 * (vmax - vmin)
    scale = float(np.clip(half if half > 0 else 1.0, 1.0 / scale_bound, scale_bound))
    return FieldNorm(vmin, vmax, scale)


class NumericEncoderState:
    """Weights for the scalar encoder, its decoder, and the time/geo maps."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_out
        f = cfg.n_features

        def glorot(fan_in, fan_out):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        self.w_lin = glorot(f, d)
        self.w_hidden = glorot(f, d)
        self.b_hidden = np.zeros(d)
        self.w_res = glorot(d, d) * 0.1
        self.w_dec1 = glorot(d, d)
        self.b_dec1 = np.zeros(d)
        self.w_dec2 = glorot(d, 1)
        self.b_dec2 = np.zeros(1)
        self.w_time = glorot(N_TIME_FEATURES, d)
        self.b_time = np.zeros(d)
        self.w_geo = glorot(3, d)
        self.b_geo = np.zeros(d)
        self.field_norms = {}
        self.time_min = float(TIME_MIN)
        self.time_max = float(TIME_MAX)

    # -- frozen forward paths (pure numpy) --------------------------------

    def _phi(self, x, fieldname=None):
        if fieldname is not None and fieldname in self.field_norms:
            x = self.field_norms[fieldname].apply(x)
        return scalar_features(float(x), self.cfg)

    def encode_number(self, x, fieldname=None):
        phi = self._phi(x, fieldname)
        from .kernels import gelu as _gelu

        base = phi @ self.w_lin
        res = np.asarray(_gelu(phi @ self.w_hidden + self.b_hidden)) @ self.w_res
        return base + res

    def decode(self, e):
        from .kernels import gelu as _gelu

        h = np.asarray(_gelu(e @ self.w_dec1 + self.b_dec1))
        return float((h @ self.w_dec2 + self.b_dec2)[0])

    def time_features(self, t):
        t = float(t)
        if not (TIME_MIN <= t < TIME_MAX):
            raise NumericError(f"timestamp out of supported range: {t}")
        span = self.time_max - self.time_min
        secular = (t - self.time_min) / span if span > 0 else 0.0
        return np.concatenate([[secular], cyclical_time_features(t)])

    def encode_timestamp(self, t):
        return self.time_features(t) @ self.w_time + self.b_time

    def encode_geopoint(self, lat, lon):
        return geo_unit_vector(lat, lon) @ self.w_geo + self.b_geo

    def fit_time_span(self, timestamps):
        ts = np.asarray(timestamps, dtype=np.float64)
        if ts.size:
            self.time_min = float(ts.min())
            self.time_max = float(ts.max()) if ts.max() > ts.min() else float(ts.min()) + 1.0

    def fit_field_norms(self, values_by_field):
        for name, vals in values_by_field.items():
            self.field_norms[name] = fit_field_norm(vals, self.cfg.scale_bound)

    # -- serialization -----------------------------------------------------

    _ARRAYS = (
        "w_lin", "w_hidden", "b_hidden", "w_res", "w_dec1", "b_dec1",
        "w_dec2", "b_dec2", "w_time", "b_time", "w_geo", "b_geo",
    )

    def to_dict(self):
        return {
            "config": {
                "d_out": self.cfg.d_out,
                "n_freq": self.cfg.n_freq,
                "f_min": self.cfg.f_min,
                "f_max": self.cfg.f_max,
                "scale_bound": self.cfg.scale_bound,
            },
            "time_min": self.time_min,
            "time_max": self.time_max,
            "field_norms": {
                k: [v.vmin, v.vmax, v.scale] for k, v in sorted(self.field_norms.items())
            },
        }

    def arrays(self):
        return {name: getattr(self, name) for name in self._ARRAYS}

    @classmethod
    def from_dict(cls, meta, arrays):
        cfg = NumericEncoderConfig(**meta["config"])
        state = cls(cfg, seed=0)
        for name in cls._ARRAYS:
            setattr(state, name, np.ascontiguousarray(arrays[name], dtype=np.float64))
        state.time_min = meta["time_min"]
        state.time_max = meta["time_max"]
        state.field_norms = {
            k: FieldNorm(*v) for k, v in meta["field_norms"].items()
        }
        return state


# ---------------------------------------------------------------------------
# Pretraining objectives
# ---------------------------------------------------------------------------

@dataclass
class NumericLossWeights:
    additivity: float = 1.0
    invertibility: float = 1.0
    distance: float = 1.0
    margin: float = 0.1


def _encode_batch(params, phi_const):
    base = T.matmul(phi_const, params["w_lin"])
    hidden = T.gelu(T.add(T.matmul(phi_const, params["w_hidden"]), params["b_hidden"]))
    return T.add(base, T.matmul(hidden, params["w_res"]))


def _decode_batch(params, emb):
    h = T.gelu(T.add(T.matmul(emb, params["w_dec1"]), params["b_dec1"]))
    return T.add(T.matmul(h, params["w_dec2"]), params["b_dec2"])


def numeric_pretrain_losses(state, params, batch, rng, weights=None):
    """(L_add, L_inv, L_dist) on a batch of raw scalars.

    L_add drives E(a+b) toward E(a)+E(b); L_inv reconstructs the scalar
    through the decoder; L_dist is a within-batch triplet hinge whose
    positive/negative are ordered by numeric distance to the anchor.
    Degenerate batches (all values equal) contribute zero distance loss.
    """
    weights = weights or NumericLossWeights()
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size < 3:
        raise NumericError(f"pretrain batch needs >= 3 scalars, got {batch.size}")
    cfg = state.cfg

    phi = T.Tensor(np.stack([scalar_features(v, cfg) for v in batch]))
    emb = _encode_batch(params, phi)

    # additivity over cyclically adjacent pairs
    pair_b = np.roll(batch, -1)
    phi_sum = T.Tensor(np.stack([scalar_features(a + b, cfg) for a, b in zip(batch, pair_b)]))
    emb_sum = _encode_batch(params, phi_sum)
    emb_b = T.take_rows(emb, np.roll(np.arange(batch.size), -1))
    diff = T.sub(T.sub(emb_sum, emb), emb_b)
    loss_add = T.tmean(T.tsum(T.mul(diff, diff), axis=1))

    # invertibility through the decoder
    dec = _decode_batch(params, emb)
    err = T.sub(dec, T.Tensor(batch.reshape(-1, 1)))
    loss_inv = T.tmean(T.mul(err, err))

    # distance-preserving triplets
    anchors, pos, neg = [], [], []
    n = batch.size
    for i in range(n):
        j, k = rng.choice(n - 1, size=2, replace=False)
        j = j if j < i else j + 1
        k = k if k < i else k + 1
        dj, dk = abs(batch[i] - batch[j]), abs(batch[i] - batch[k])
        if dj == dk:
            continue
        if dj < dk:
            anchors.append(i), pos.append(j), neg.append(k)
        else:
            anchors.append(i), pos.append(k), neg.append(j)
    if anchors:
        ea = T.take_rows(emb, anchors)
        ep = T.take_rows(emb, pos)
        en = T.take_rows(emb, neg)
        dp = T.sub(ea, ep)
        dn = T.sub(ea, en)
        dist_p = T.tsqrt(T.add_scalar(T.tsum(T.mul(dp, dp), axis=1), 1e-12))
        dist_n = T.tsqrt(T.add_scalar(T.tsum(T.mul(dn, dn), axis=1), 1e-12))
        hinge = T.relu(T.add_scalar(T.sub(dist_p, dist_n), weights.margin))
        loss_dist = T.tmean(hinge)
    else:
        loss_dist = T.Tensor(0.0)

    return loss_add, loss_inv, loss_dist


def trainable_params(state):
    """Wrap encoder/decoder arrays as shared-memory gradient leaves."""
    names = ("w_lin", "w_hidden", "b_hidden", "w_res",
             "w_dec1", "b_dec1", "w_dec2", "b_dec2")
    return {n: T.Tensor(getattr(state, n), requires_grad=True) for n in names}


def fit_numeric_encoder(state, seed, steps=500, batch_size=256,
                        value_range=(-10.0, 10.0), lr=2e-3, weights=None,
                        probe_batch=None):
    """Seeded fit of the scalar encoder on uniform values; returns loss history.

    Updates write through to the state arrays (the wrapped tensors share
    memory), so the caller's state is trained in place. When `probe_batch`
    is given, each record also carries the three losses measured on that
    fixed batch with a fixed mining seed (a noise-free trend signal).
    """
    weights = weights or NumericLossWeights()
    rng = np.random.default_rng(seed)
    params = trainable_params(state)
    moments = {
        n: (np.zeros_like(p.data), np.zeros_like(p.data)) for n, p in params.items()
    }
    history = []
    for step in range(1, steps + 1):
        rec = {"step": step}
        if probe_batch is not None:
            with T.no_grad():
                pa, pi, pd = numeric_pretrain_losses(
                    state, params, probe_batch, np.random.default_rng(0), weights
                )
            rec.update(probe_additivity=pa.item(), probe_invertibility=pi.item(),
                       probe_distance=pd.item())
        batch = rng.uniform(value_range[0], value_range[1], size=batch_size)
        la, li, ld = numeric_pretrain_losses(state, params, batch, rng, weights)
        total = T.add(
            T.add(T.mul_scalar(la, weights.additivity), T.mul_scalar(li, weights.invertibility)),
            T.mul_scalar(ld, weights.distance),
        )
        rec.update(additivity=la.item(), invertibility=li.item(),
                   distance=ld.item(), total=total.item())
        history.append(rec)
        T.backward(total)
        bc1 = 1.0 - 0.9 ** step
        bc2 = 1.0 - 0.999 ** step
        for n, p in params.items():
            if p.grad is None:
                continue
            m, v = moments[n]
            adamw_update(p.data, p.grad, m, v, lr, 0.9, 0.999, 1e-8, 0.0, bc1, bc2)
            p.zero_grad()
    return history


def additivity_violation(state, rng, n_pairs=500, value_range=(-10.0, 10.0)):
    """Mean ||E(a+b) - E(a) - E(b)|| over random pairs (evaluation helper)."""
    a = rng.uniform(value_range[0], value_range[1], size=n_pairs)
    b = rng.uniform(value_range[0], value_range[1], size=n_pairs)
    total = 0.0
    for x, y in zip(a, b):
        d = state.encode_number(x + y) - state.encode_number(x) - state.encode_number(y)
        total += math.sqrt(float(d @ d))
    return total / n_pairs
