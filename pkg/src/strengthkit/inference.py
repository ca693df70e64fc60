"""Rank prediction from strength scores.

A :class:`StrengthProfile` stores, per rank, the mean strength score of
all candidate pairs and the mean at every move depth. A query game set is
assigned the rank whose mean is nearest to the query's mean score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import games
from .scorer import ScorerParams, forward_batch, softmax
from .training import RankDataset

PROFILE_HEADER = "#strengthkit-profile v1"
FILTER_KINDS = ("all", "first", "last", "one")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class MoveFilter:
    """Which moves of a game are scored: all, the first k, the last k, or one random move."""

    kind: str = "all"
    k: int = 1

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown move filter {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "MoveFilter":
        text = text.strip().lower()
        for kind in ("first", "last"):
            if text.startswith(kind):
                return cls(kind, int(text[len(kind):].lstrip(":-_") or 1))
        return cls(text)

    def select(self, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Indices (into a game's move list of length n) kept by the filter."""
        if self.kind == "all":
            return np.arange(n)
        if self.kind == "first":
            return np.arange(min(self.k, n))
        if self.kind == "last":
            return np.arange(max(0, n - self.k), n)
        if rng is None:
            raise ValueError("the one-position filter needs an rng")
        return np.array([rng.integers(n)])


def _record_features(record) -> tuple[np.ndarray, np.ndarray]:
    states = games.replay(record.spec, record.moves)
    x = np.array([
        games.encode_features(record.spec, games.StateActionPair(states[d], int(a), 0, d))
        for d, a in enumerate(record.moves)
    ])
    return x, np.arange(len(record.moves))


def score_game(params: ScorerParams, record, move_filter: MoveFilter = MoveFilter(),
               rng: Optional[np.random.Generator] = None) -> list[tuple[int, float]]:
    """(depth, beta) for each move retained by ``move_filter``."""
    if not record.moves:
        return []
    x, depths = _record_features(record)
    keep = move_filter.select(len(depths), rng)
    _, _, beta, _ = forward_batch(params, x[keep])
    return [(int(d), float(b)) for d, b in zip(depths[keep], beta)]


@dataclass
class StrengthProfile:
    ranks: list[int]
    overall: dict[int, float]
    counts: dict[int, int]
    depth_means: dict[int, np.ndarray]  # rank -> per-depth mean (nan where unseen)
    depth_counts: dict[int, np.ndarray]
    max_depth: int = field(default=0)

    def means(self) -> np.ndarray:
        return np.array([self.overall[r] for r in self.ranks])

    def target(self, rank: int, depth: int) -> float:
        """Per-depth composite score of ``rank``, falling back to the overall mean."""
        if rank not in self.overall:
            raise KeyError(f"rank {rank} not in profile")
        if 0 <= depth < self.max_depth and self.depth_counts[rank][depth] > 0:
            return float(self.depth_means[rank][depth])
        return self.overall[rank]

    def save(self, path) -> None:
        lines = [PROFILE_HEADER, "rank\tdepth\tmean_beta\tcount"]
        for r in self.ranks:
            lines.append(f"{r}\tall\t{self.overall[r]!r}\t{self.counts[r]}")
            for d in range(self.max_depth):
                c = int(self.depth_counts[r][d])
                if c:
                    lines.append(f"{r}\t{d}\t{float(self.depth_means[r][d])!r}\t{c}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "StrengthProfile":
        lines = Path(path).read_text().splitlines()
        if len(lines) < 2 or lines[0] != PROFILE_HEADER:
            raise ProfileError(f"{path}: not a strength profile")
        overall, counts, per_depth = {}, {}, {}
        for ln in lines[2:]:
            if not ln.strip():
                continue
            try:
                r, d, mean, c = ln.split("\t")
                r, mean, c = int(r), float(mean), int(c)
            except ValueError as exc:
                raise ProfileError(f"bad profile row {ln!r}") from exc
            if d == "all":
                overall[r], counts[r] = mean, c
            else:
                per_depth.setdefault(r, {})[int(d)] = (mean, c)
        ranks = sorted(overall)
        max_depth = 1 + max((d for r in per_depth for d in per_depth[r]), default=-1)
        dm, dc = {}, {}
        for r in ranks:
            dm[r] = np.full(max_depth, np.nan)
            dc[r] = np.zeros(max_depth, dtype=np.int64)
            for d, (mean, c) in per_depth.get(r, {}).items():
                dm[r][d], dc[r][d] = mean, c
        return cls(ranks, overall, counts, dm, dc, max_depth)


def profile_from_scores(scores: dict[int, tuple[np.ndarray, np.ndarray]]) -> StrengthProfile:
    """Build a profile from {rank: (depths, betas)}."""
    ranks = sorted(scores)
    if not ranks:
        raise ProfileError("no ranks to profile")
    max_depth = 1 + max(int(d.max()) for d, b in scores.values() if len(d))
    overall, counts, dm, dc = {}, {}, {}, {}
    for r in ranks:
        depths, betas = scores[r]
        if len(betas) == 0:
            raise ProfileError(f"rank {r} has no scored pairs")
        overall[r] = float(np.mean(betas))
        counts[r] = int(len(betas))
        c = np.bincount(depths, minlength=max_depth)
        s = np.bincount(depths, weights=betas, minlength=max_depth)
        dc[r] = c
        dm[r] = np.divide(s, c, out=np.full(max_depth, np.nan), where=c > 0)
    return StrengthProfile(ranks, overall, counts, dm, dc, max_depth)


def build_profile(params: ScorerParams, candidate: RankDataset) -> StrengthProfile:
    scores = {}
    for r in candidate.ranks:
        x = candidate.pair_features[r]
        if len(x) == 0:
            raise ProfileError(f"rank {r} has no candidate pairs")
        _, _, beta, _ = forward_batch(params, x)
        depths = np.array([p.depth for p in candidate.pairs[r]], dtype=np.int64)
        scores[r] = (depths, beta)
    return profile_from_scores(scores)


def predict_rank(profile: StrengthProfile, query_mean: float) -> int:
    """Rank whose composite score is nearest; ties go to the stronger rank."""
    dist = np.abs(profile.means() - query_mean)
    return profile.ranks[int(np.argmin(dist))]


# --- supervised-classification baselines ---------------------------------------------


def aggregate_sum(probs) -> int:
    """Index of the largest summed probability (ties to the lowest index)."""
    return int(np.argmax(np.asarray(probs, dtype=np.float64).sum(axis=0)))


def aggregate_vote(probs) -> int:
    """Most frequent per-position argmax (ties to the lowest index)."""
    p = np.asarray(probs, dtype=np.float64)
    votes = np.bincount(np.argmax(p, axis=1), minlength=p.shape[1])
    return int(np.argmax(votes))


def _rank_probs(params: ScorerParams, records) -> np.ndarray:
    if not params.spec.ranks:
        raise ValueError("scorer has no trained rank-classification head")
    x = np.concatenate([_record_features(r)[0] for r in records if r.moves])
    _, _, _, rank_logits = forward_batch(params, x)
    return softmax(rank_logits)


def sl_predict_sum(params: ScorerParams, records, ranks: Sequence[int]) -> int:
    return list(ranks)[aggregate_sum(_rank_probs(params, records))]


def sl_predict_vote(params: ScorerParams, records, ranks: Sequence[int]) -> int:
    return list(ranks)[aggregate_vote(_rank_probs(params, records))]


# --- accuracy curves -----------------------------------------------------------------


@dataclass(frozen=True)
class PredictionConfig:
    ns: tuple = (1, 2, 5, 10, 20)
    repeats: int = 500
    tolerance: int = 0
    move_filter: MoveFilter = MoveFilter()
    method: str = "se"  # se | sl_sum | sl_vote
    seed: int = 0

    def __post_init__(self):
        if not self.ns or min(self.ns) < 1:
            raise ValueError("games per prediction must be >= 1")
        if self.tolerance not in (0, 1):
            raise ValueError("tolerance must be 0 or 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.method not in ("se", "sl_sum", "sl_vote"):
            raise ValueError(f"unknown prediction method {self.method!r}")


@dataclass
class AccuracyTable:
    ns: list[int]
    ranks: list[int]
    accuracy: np.ndarray  # len(ns) x len(ranks)
    repeats: int
    tolerance: int
    ci_method: str = "normal approximation, 95%"

    @property
    def ci(self) -> np.ndarray:
        a = self.accuracy
        return 1.96 * np.sqrt(a * (1 - a) / self.repeats)

    @property
    def mean_accuracy(self) -> np.ndarray:
        return self.accuracy.mean(axis=1)

    def rows(self) -> list[list]:
        out = []
        for i, n in enumerate(self.ns):
            for j, r in enumerate(self.ranks):
                out.append([n, r, float(self.accuracy[i, j]), float(self.ci[i, j])])
            out.append([n, "mean", float(self.mean_accuracy[i]),
                        float(1.96 * math.sqrt(self.mean_accuracy[i] * (1 - self.mean_accuracy[i])
                                               / (self.repeats * len(self.ranks))))])
        return out


def game_scores(params: ScorerParams, records) -> list[np.ndarray]:
    """Per-game arrays of strength scores for every move, in move order."""
    out = []
    for rec in records:
        x, _ = _record_features(rec)
        out.append(forward_batch(params, x)[2] if len(x) else np.zeros(0))
    return out


def query_label(record) -> int:
    return int(record.side_labels[0])


def accuracy_curve(params: ScorerParams, profile: Optional[StrengthProfile], query,
                   config: PredictionConfig, sl_ranks: Optional[Sequence[int]] = None) -> AccuracyTable:
    """Fraction of correct predictions from N random same-rank query games, per N and rank."""
    rng = np.random.default_rng(config.seed)
    by_rank: dict[int, list] = {}
    for rec in query:
        by_rank.setdefault(query_label(rec), []).append(rec)
    ranks = sorted(by_rank)
    if config.method == "se":
        if profile is None:
            raise ValueError("se prediction needs a strength profile")
        per_game = {r: game_scores(params, by_rank[r]) for r in ranks}
        label_set = profile.ranks
    else:
        if not params.spec.ranks:
            raise ValueError("scorer has no trained rank-classification head")
        per_game = {r: [_rank_probs(params, [rec]) for rec in by_rank[r]] for r in ranks}
        label_set = list(sl_ranks) if sl_ranks is not None else list(range(1, params.spec.ranks + 1))
    rank_pos = {r: i for i, r in enumerate(label_set)}
    acc = np.zeros((len(config.ns), len(ranks)))
    for i, n in enumerate(config.ns):
        for j, r in enumerate(ranks):
            items = per_game[r]
            if n > len(items):
                raise ValueError(f"N={n} exceeds the {len(items)} query games of rank {r}")
            hits = 0
            for _ in range(config.repeats):
                pick = rng.choice(len(items), size=n, replace=False)
                parts = [items[g][config.move_filter.select(len(items[g]), rng)] for g in pick]
                block = np.concatenate(parts)
                if config.method == "se":
                    pred = predict_rank(profile, float(block.mean()))
                elif config.method == "sl_sum":
                    pred = label_set[aggregate_sum(block)]
                else:
                    pred = label_set[aggregate_vote(block)]
                if r in rank_pos:
                    hits += abs(rank_pos[pred] - rank_pos[r]) <= config.tolerance
            acc[i, j] = hits / config.repeats
    return AccuracyTable(list(config.ns), ranks, acc, config.repeats, config.tolerance)
