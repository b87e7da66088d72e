"""Leave-one-out ranking evaluation: 99 sampled negatives per user,
dot-product scoring against precomputed item embeddings, MRR / Hit@K /
NDCG@K with deterministic tie-breaking.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError


@dataclass
class EvalConfig:
    n_negatives: int = 99
    k_list: tuple = (10,)
    seed: int = 0

    def __post_init__(self):
        if self.n_negatives < 1:
            raise ConfigError(f"n_negatives must be >= 1, got {self.n_negatives}")
        self.k_list = tuple(int(k) for k in self.k_list)

    @property
    def candidate_count(self):
        return self.n_negatives + 1


@dataclass
class RankingResult:
    user_id: str
    rank: int                 # 1-based rank of the ground truth
    scores: list              # (item_id, score), descending
    metrics: dict = field(default_factory=dict)


def _user_rng(seed, user_id):
    digest = hashlib.sha256(f"{seed}:{user_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def sample_negatives(history_item_ids, truth, corpus_ids, n_negatives, seed, user_id):
    """Uniform sample without replacement, excluding history and the truth.

    Deterministic per (seed, user_id) regardless of process or thread.
    """
    excluded = set(history_item_ids)
    excluded.add(truth)
    eligible = sorted(i for i in corpus_ids if i not in excluded)
    if len(eligible) < n_negatives:
        raise DataError(
            f"need {n_negatives} negatives for user {user_id!r} but only "
            f"{len(eligible)} eligible items remain (corpus {len(corpus_ids)}, "
            f"excluded {len(excluded)})"
        )
    rng = _user_rng(seed, user_id)
    idx = rng.choice(len(eligible), size=n_negatives, replace=False)
    return [eligible[i] for i in sorted(idx)]


def score_candidates(user_vec, candidate_vectors):
    """(item_id, dot score) sorted by score descending, ties by id ascending."""
    user_vec = np.asarray(user_vec).reshape(-1)
    scored = []
    for item_id in sorted(candidate_vectors):
        vec = np.asarray(candidate_vectors[item_id]).reshape(-1)
        if vec.shape != user_vec.shape:
            raise ShapeError(
                f"candidate {item_id!r} width {vec.shape} != user width {user_vec.shape}"
            )
        scored.append((item_id, float(user_vec @ vec)))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


def rank_of(scored, truth):
    for pos, (item_id, _) in enumerate(scored, start=1):
        if item_id == truth:
            return pos
    raise DataError(f"ground truth {truth!r} missing from candidate scores")


def metrics_from_rank(rank, k):
    """(reciprocal rank, hit@k, ndcg@k); single relevant item, ideal DCG 1."""
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    rr = 1.0 / rank
    hit = 1.0 if rank <= k else 0.0
    ndcg = 1.0 / math.log2(rank + 1) if rank <= k else 0.0
    return rr, hit, ndcg


def kahan_mean(values):
    """Compensated mean; order-insensitive to float accumulation error."""
    total = 0.0
    comp = 0.0
    count = 0
    for v in values:
        count += 1
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / count if count else 0.0


def precompute_item_vectors(model, items):
    """Frozen per-item pooled embeddings for corpus scoring."""
    vectors = {}
    with T.no_grad():
        cache = {}
        for item_id in sorted(items):
            vectors[item_id] = model.item_vector(items[item_id], cache).data[0].copy()
    return vectors


def evaluate(model, samples, items, cfg, scorer=None, threads=1,
             with_random_baseline=True):
    """Aggregate MRR / Hit@K / NDCG@K over a test split.

    `scorer(sample, candidate_ids) -> {item_id: score}` overrides the
    model path (used by oracle fixtures). A random-scoring baseline can
    run alongside as a protocol sanity check (expected Hit@K ~ K / C).
    """
    if not samples:
        raise DataError("evaluation split is empty")
    corpus_ids = sorted(items)
    item_vectors = None
    if scorer is None:
        item_vectors = precompute_item_vectors(model, items)

    def run_user(sample):
        history_ids = [r.item_id for r in sample.history]
        negatives = sample_negatives(
            history_ids, sample.target_item, corpus_ids,
            cfg.n_negatives, cfg.seed, sample.user_id,
        )
        candidates = [sample.target_item] + negatives
        if scorer is not None:
            scores = scorer(sample, candidates)
            scored = sorted(scores.items(), key=lambda t: (-t[1], t[0]))
        else:
            with T.no_grad():
                u = model.user_vector(sample.history).data[0]
            scored = score_candidates(u, {c: item_vectors[c] for c in candidates})
        rank = rank_of(scored, sample.target_item)
        result = RankingResult(sample.user_id, rank, scored)
        for k in cfg.k_list:
            rr, hit, ndcg = metrics_from_rank(rank, k)
            result.metrics[f"Hit@{k}"] = hit
            result.metrics[f"NDCG@{k}"] = ndcg
        result.metrics["MRR"] = 1.0 / rank

        rng = _user_rng(cfg.seed + 101, sample.user_id)
        rand_rank = 1 + int(rng.integers(0, len(candidates)))
        rand = {"MRR": 1.0 / rand_rank}
        for k in cfg.k_list:
            rr, hit, ndcg = metrics_from_rank(rand_rank, k)
            rand[f"Hit@{k}"] = hit
            rand[f"NDCG@{k}"] = ndcg
        return result, rand

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_user, samples))
    else:
        outcomes = [run_user(s) for s in samples]

    # canonical order: results sorted by user id, aggregation order fixed
    outcomes.sort(key=lambda pair: pair[0].user_id)
    results = [r for r, _ in outcomes]
    metric_names = ["MRR"] + [f"Hit@{k}" for k in cfg.k_list] + \
                   [f"NDCG@{k}" for k in cfg.k_list]
    aggregate = {
        name: kahan_mean(r.metrics[name] for r in results) for name in metric_names
    }
    out = {"metrics": aggregate, "n_users": len(results), "results": results}
    if with_random_baseline:
        out["random_baseline"] = {
            name: kahan_mean(rand[name] for _, rand in outcomes)
            for name in metric_names
        }
    return out
