"""Listwise Bradley-Terry training of the strength head.

Each training step samples ``m`` state-action pairs per rank, scores them,
and averages the scores into one composite score per rank. The composite
scores, ordered strongest first, are fitted with the listwise likelihood

    L = prod_{i=1}^{n-1} exp(b_i) / sum_{j=i}^{n} exp(b_j)

An extra weakest row built from random legal moves (``RANK_INFINITY``) can
be appended below the real ranks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import games
from .games import RANK_INFINITY, GameSpec, StateActionPair
from .scorer import (
    ScorerParams, ScorerSpec, backward, forward_batch, init_params, save_checkpoint,
    sgd_step, softmax,
)

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


# --- composite strength and the listwise likelihood ----------------------------


def composite_score(betas) -> float:
    """Arithmetic mean of strength scores, i.e. the log of the geometric mean strength."""
    b = np.asarray(betas, dtype=np.float64)
    if b.size == 0:
        raise ValueError("composite score of an empty list")
    if not np.all(np.isfinite(b)):
        raise ValueError("strength scores must be finite")
    return float(b.mean())


def _check_means(score_means) -> np.ndarray:
    b = np.asarray(score_means, dtype=np.float64).ravel()
    if b.size < 2:
        raise ValueError("need at least two ranks")
    if not np.all(np.isfinite(b)):
        raise ValueError("composite scores must be finite")
    return b


def win_probability(score_means) -> float:
    """Probability that the first (strongest) entry beats all the others."""
    b = _check_means(score_means)
    return float(softmax(b)[0])


def _tail_log_softmax(b: np.ndarray) -> np.ndarray:
    """log(exp(b_i) / sum_{j>=i} exp(b_j)) for i = 0..n-2, stabilised per tail."""
    n = b.size
    out = np.empty(n - 1)
    for i in range(n - 1):
        tail = b[i:]
        mx = tail.max()
        out[i] = b[i] - mx - math.log(np.exp(tail - mx).sum())
    return out


def bt_listwise_loss(score_means) -> float:
    b = _check_means(score_means)
    return float(-_tail_log_softmax(b).sum())


def bt_listwise_grad(score_means) -> np.ndarray:
    """dL/db for the listwise loss; entry i is the gradient w.r.t. the i-th composite score."""
    b = _check_means(score_means)
    n = b.size
    g = np.zeros(n)
    for i in range(n - 1):
        g[i:] += softmax(b[i:])
        g[i] -= 1.0
    return g


# --- data -----------------------------------------------------------------------


@dataclass
class RankDataset:
    """State-action pairs grouped by rank label, strongest (smallest label) first.

    Feature matrices are precomputed once: ``pair_features`` encodes
    (state, action), ``state_features`` encodes the state alone and feeds the
    policy and value heads.
    """

    spec: GameSpec
    ranks: list[int]
    records: dict[int, list] = field(repr=False)
    pairs: dict[int, list[StateActionPair]] = field(repr=False)
    pair_features: dict[int, np.ndarray] = field(repr=False)
    state_features: dict[int, np.ndarray] = field(repr=False)
    actions: dict[int, np.ndarray] = field(repr=False)
    value_targets: dict[int, np.ndarray] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.ranks)

    @classmethod
    def from_records(cls, records, spec: Optional[GameSpec] = None) -> "RankDataset":
        records = list(records)
        if not records:
            raise InsufficientDataError("no game records")
        spec = spec or records[0].spec
        by_rank: dict[int, list] = {}
        pairs: dict[int, list[StateActionPair]] = {}
        values: dict[int, list[float]] = {}
        for rec in records:
            if rec.spec != spec:
                raise ValueError(f"record {rec.id} is for {rec.spec.name()}, expected {spec.name()}")
            states = games.replay(spec, rec.moves)
            for d, a in enumerate(rec.moves):
                s = states[d]
                label = rec.side_labels[0 if s.to_move == games.FIRST else 1]
                by_rank.setdefault(label, [])
                if not by_rank[label] or by_rank[label][-1] is not rec:
                    by_rank[label].append(rec)
                pairs.setdefault(label, []).append(StateActionPair(s, int(a), label, d))
                sign = 1.0 if s.to_move == games.FIRST else -1.0
                values.setdefault(label, []).append(sign * rec.outcome)
        ranks = sorted(pairs)
        if any(r < 1 for r in ranks):
            raise ValueError("rank labels must be positive integers")
        return cls(
            spec=spec,
            ranks=ranks,
            records=by_rank,
            pairs=pairs,
            pair_features={r: np.array([games.encode_features(spec, p) for p in pairs[r]]) for r in ranks},
            state_features={r: np.array([games.encode_state(p.state) for p in pairs[r]]) for r in ranks},
            actions={r: np.array([p.action for p in pairs[r]], dtype=np.int64) for r in ranks},
            value_targets={r: np.array(values[r]) for r in ranks},
        )

    def subset(self, keep: Sequence[int]) -> "RankDataset":
        keep = sorted(set(keep))
        missing = [r for r in keep if r not in self.ranks]
        if missing:
            raise ValueError(f"ranks {missing} not in dataset")
        pick = lambda d: {r: d[r] for r in keep}  # noqa: E731
        return RankDataset(self.spec, keep, pick(self.records), pick(self.pairs),
                           pick(self.pair_features), pick(self.state_features),
                           pick(self.actions), pick(self.value_targets))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    m: int = 7
    lr: float = 0.01
    # step at which the learning rate is multiplied by lr_decay (None -> 100/130 of steps)
    lr_decay_step: Optional[int] = None
    lr_decay: float = 0.5
    include_r_infinity: bool = True
    w_policy: float = 1.0
    w_value: float = 1.0
    w_strength: float = 1.0
    w_rank: float = 0.0
    seed: int = 0
    init_seed: int = 0
    log_interval: int = 100
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.m < 1 or (self.include_r_infinity and self.m < 2):
            raise ValueError("m must be >= 2 when the r-infinity row is enabled")
        if min(self.w_policy, self.w_value, self.w_strength, self.w_rank) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.steps < 0 or self.log_interval < 1:
            raise ValueError("steps must be >= 0 and log_interval >= 1")

    def lr_at(self, step: int) -> float:
        threshold = self.lr_decay_step
        if threshold is None:
            threshold = round(self.steps * 100 / 130)
        return self.lr * (self.lr_decay if step >= threshold else 1.0)


@dataclass
class RankBatch:
    """Rows of ``m`` pairs, one per rank (strongest first), optionally ending with the infinity row."""

    ranks: list[int]
    pairs: list[list[StateActionPair]]
    pair_features: np.ndarray  # rows x m x F
    state_features: np.ndarray  # real rows x m x F
    actions: np.ndarray  # real rows x m
    value_targets: np.ndarray  # real rows x m
    betas: Optional[np.ndarray] = None  # rows x m, filled by score_batch

    @property
    def m(self) -> int:
        return self.pair_features.shape[1]

    @property
    def has_infinity(self) -> bool:
        return bool(self.ranks) and self.ranks[-1] == RANK_INFINITY

    def means(self) -> np.ndarray:
        if self.betas is None:
            raise ValueError("batch has not been scored")
        return self.betas.mean(axis=1)


def perturb_to_infinity(pair: StateActionPair, rng: np.random.Generator) -> StateActionPair:
    """Same state, uniformly random legal action, labelled with the weakest rank."""
    legal = games.legal_actions(pair.state)
    return StateActionPair(pair.state, int(legal[rng.integers(len(legal))]), RANK_INFINITY, pair.depth)


def sample_rank_batch(dataset: RankDataset, config: TrainConfig, rng: np.random.Generator) -> RankBatch:
    m = config.m
    idx = {}
    for r in dataset.ranks:
        count = len(dataset.pairs[r])
        if count < m:
            raise InsufficientDataError(f"rank {r} has {count} pairs, need {m}")
        idx[r] = rng.choice(count, size=m, replace=False)
    ranks = list(dataset.ranks)
    pairs = [[dataset.pairs[r][i] for i in idx[r]] for r in ranks]
    feats = [dataset.pair_features[r][idx[r]] for r in ranks]
    if config.include_r_infinity:
        row = []
        for _ in range(m):
            src = dataset.ranks[rng.integers(dataset.n)]
            base = dataset.pairs[src][rng.integers(len(dataset.pairs[src]))]
            row.append(perturb_to_infinity(base, rng))
        pairs.append(row)
        feats.append(np.array([games.encode_features(dataset.spec, p) for p in row]))
        ranks.append(RANK_INFINITY)
    real = dataset.ranks
    return RankBatch(
        ranks=ranks,
        pairs=pairs,
        pair_features=np.stack(feats),
        state_features=np.stack([dataset.state_features[r][idx[r]] for r in real]),
        actions=np.stack([dataset.actions[r][idx[r]] for r in real]),
        value_targets=np.stack([dataset.value_targets[r][idx[r]] for r in real]),
    )


def score_batch(params: ScorerParams, batch: RankBatch) -> RankBatch:
    rows, m, f = batch.pair_features.shape
    _, _, beta, _ = forward_batch(params, batch.pair_features.reshape(rows * m, f))
    return replace(batch, betas=beta.reshape(rows, m))


# --- the joint objective ---------------------------------------------------------


@dataclass(frozen=True)
class LossReport:
    strength: float
    policy: float
    value: float
    rank: float
    total: float
    means: tuple


def sl_classification_loss(logits, true_rank: int) -> float:
    """Cross-entropy of rank logits (index 0 is rank 1) against a 1-based rank."""
    z = np.asarray(logits, dtype=np.float64)
    n = z.size
    if n < 2:
        raise ValueError("need at least two rank classes")
    if not 1 <= true_rank <= n:
        raise ValueError(f"rank {true_rank} outside 1..{n}")
    mx = z.max()
    return float(mx + math.log(np.exp(z - mx).sum()) - z[true_rank - 1])


def train_step(params: ScorerParams, batch: RankBatch, config: TrainConfig, lr: Optional[float] = None):
    """One SGD update on the weighted sum of strength, policy, value (and rank) losses.

    Pairs in the infinity row feed only the strength loss.
    """
    lr = config.lr if lr is None else lr
    rows, m, f = batch.pair_features.shape
    n_real = batch.state_features.shape[0]
    xb = batch.pair_features.reshape(rows * m, f)
    _, _, beta, rank_logits = forward_batch(params, xb)
    means = beta.reshape(rows, m).mean(axis=1)
    l_strength = bt_listwise_loss(means)
    g_beta = np.repeat(bt_listwise_grad(means) / m, m) * config.w_strength

    count = n_real * m
    l_rank = 0.0
    g_rank = None
    if config.w_rank > 0:
        if not params.spec.ranks:
            raise ValueError("w_rank > 0 needs a scorer with a rank head")
        labels = np.repeat(np.arange(n_real), m)
        probs = softmax(rank_logits[:count])
        l_rank = float(-np.log(probs[np.arange(count), labels]).mean())
        g_rank = np.zeros_like(rank_logits)
        g_rank[:count] = probs
        g_rank[np.arange(count), labels] -= 1.0
        g_rank *= config.w_rank / count

    grad = backward(params, xb, grad_beta=g_beta, grad_rank_logits=g_rank)

    l_policy = l_value = 0.0
    if config.w_policy > 0 or config.w_value > 0:
        xs = batch.state_features.reshape(count, f)
        acts = batch.actions.reshape(count)
        z = batch.value_targets.reshape(count)
        logits, value, _, _ = forward_batch(params, xs)
        probs = softmax(logits)
        l_policy = float(-np.log(probs[np.arange(count), acts]).mean())
        l_value = float(((value - z) ** 2).mean())
        g_logits = probs
        g_logits[np.arange(count), acts] -= 1.0
        g_logits *= config.w_policy / count
        g_value = 2.0 * (value - z) * config.w_value / count
        grad = grad + backward(params, xs, grad_logits=g_logits, grad_value=g_value)

    total = (config.w_strength * l_strength + config.w_policy * l_policy
             + config.w_value * l_value + config.w_rank * l_rank)
    if not math.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    report = LossReport(l_strength, l_policy, l_value, l_rank, total, tuple(float(x) for x in means))
    return sgd_step(params, grad, lr), report


@dataclass(frozen=True)
class LogRow:
    step: int
    lr: float
    strength: float
    policy: float
    value: float
    means: tuple

    def format(self) -> str:
        cols = [str(self.step), f"{self.lr:.6g}", f"{self.strength:.6f}",
                f"{self.policy:.6f}", f"{self.value:.6f}"]
        return "\t".join(cols + [f"{b:.6f}" for b in self.means])


def default_scorer_spec(spec: GameSpec, hidden: int = 64, layers: int = 1, ranks: int = 0) -> ScorerSpec:
    return ScorerSpec(spec.feature_length, hidden, layers, spec.num_actions, ranks)


def train(dataset: RankDataset, spec: ScorerSpec, config: TrainConfig,
          log_path=None, checkpoint_dir=None, params: Optional[ScorerParams] = None):
    """Run ``config.steps`` training steps; returns (params, list of LogRow).

    Each log row averages the losses and composite scores over the
    preceding ``log_interval`` steps; a shorter final window is logged too.
    """
    params = params or init_params(spec, config.init_seed)
    rng = np.random.default_rng(config.seed)
    rows: list[LogRow] = []
    acc = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w")
        labels = [str(r) for r in dataset.ranks] + (["inf"] if config.include_r_infinity else [])
        fh.write("\t".join(["step", "lr", "L_strength", "L_policy", "L_value"]
                           + [f"mean_beta_{r}" for r in labels]) + "\n")
    try:
        for step in range(1, config.steps + 1):
            lr = config.lr_at(step - 1)
            batch = sample_rank_batch(dataset, config, rng)
            params, rep = train_step(params, batch, config, lr)
            vec = np.array([rep.strength, rep.policy, rep.value, *rep.means])
            acc = vec if acc is None else acc + vec
            window = (step - 1) % config.log_interval + 1
            if window == config.log_interval or step == config.steps:
                avg = acc / window
                acc = None
                row = LogRow(step, lr, *avg[:3], tuple(avg[3:]))
                rows.append(row)
                if fh:
                    fh.write(row.format() + "\n")
                log.debug("step %d L_s=%.4f L_p=%.4f L_v=%.4f", step, *avg[:3])
            if checkpoint_dir and config.checkpoint_interval and step % config.checkpoint_interval == 0:
                save_checkpoint(params, Path(checkpoint_dir) / f"step{step:07d}.ckpt")
    finally:
        if fh:
            fh.close()
    return params, rows
