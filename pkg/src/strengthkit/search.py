"""Monte Carlo tree search in three flavours.

* ``vanilla``: AlphaZero-style PUCT selection, final move by visit count.
* ``se``: strength-targeted selection. Every edge carries the mean strength
  score of its subtree; edges whose mean is far from a target score get
  their prior reduced by ``c1`` times the min-max normalised distance.
* ``sa``: vanilla search, final move sampled proportionally to N**z after
  dropping children with fewer than R * N_max visits.

The tree is stored as flat edge arrays. Each expanded node owns a
contiguous slice of edges sorted by action index, so "lowest index" tie
breaking is plain ``argmax``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import games
from .games import GameState
from .scorer import ScorerParams, forward_batch, softmax

VANILLA, SE, SA = "vanilla", "se", "sa"
MODES = (VANILLA, SE, SA)


class SearchError(ValueError):
    pass


# --- evaluators -------------------------------------------------------------------


class Evaluator(Protocol):
    def evaluate(self, state: GameState, actions: Sequence[int], rng: np.random.Generator):
        """Return (priors over ``actions``, value for the side to move, beta per action)."""


def _rollout_value(state, rng, rollouts):
    total = sum(games.random_rollout(state, rng) for _ in range(rollouts))
    sign = 1.0 if state.to_move == games.FIRST else -1.0
    return sign * total / rollouts


class RolloutEvaluator:
    """Uniform priors and random-playout values; strength scores are all zero.

    ``prior_jitter`` perturbs the uniform prior by a random factor in
    [1, 1 + jitter] so that low-budget searches do not always open with the
    lowest-indexed move.
    """

    def __init__(self, rollouts: int = 1, prior_jitter: float = 0.0):
        self.rollouts = rollouts
        self.prior_jitter = prior_jitter

    def evaluate(self, state, actions, rng):
        k = len(actions)
        p = np.ones(k)
        if self.prior_jitter:
            p += self.prior_jitter * rng.random(k)
        return p / p.sum(), _rollout_value(state, rng, self.rollouts), np.zeros(k)


class NetworkEvaluator:
    """Priors and per-action strength scores from a scorer.

    The value comes from the value head (``value_mode="network"``) or from
    random playouts (``value_mode="rollout"``). ``prior_jitter`` works as in
    :class:`RolloutEvaluator`.
    """

    def __init__(self, params: ScorerParams, value_mode: str = "network", rollouts: int = 1,
                 prior_jitter: float = 0.0):
        if value_mode not in ("network", "rollout"):
            raise ValueError(f"unknown value mode {value_mode!r}")
        self.params = params
        self.value_mode = value_mode
        self.rollouts = rollouts
        self.prior_jitter = prior_jitter

    def evaluate(self, state, actions, rng):
        x = games.encode_children(state, actions)
        logits, value, beta, _ = forward_batch(self.params, x)
        priors = softmax(logits[0, list(actions)])
        if self.prior_jitter:
            priors = priors * (1.0 + self.prior_jitter * rng.random(len(priors)))
            priors /= priors.sum()
        if self.value_mode == "network":
            v = float(value[0])
        else:
            v = _rollout_value(state, rng, self.rollouts)
        return priors, v, beta[1:]


# --- configuration and node views ------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    simulations: int = 800
    c_puct: float = 1.25
    mode: str = VANILLA
    c1: float = 1.0
    target_beta: Optional[float] = None
    # per-depth targets: profile.target(target_rank, depth) replaces target_beta
    profile: Optional[object] = field(default=None, compare=False, repr=False)
    target_rank: Optional[int] = None
    z: float = 1.0
    R: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.simulations < 1:
            raise ValueError("simulations must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown search mode {self.mode!r}")
        if not 0.0 <= self.R <= 1.0:
            raise ValueError("R must lie in [0, 1]")
        if self.mode == SE and self.target_beta is None and (self.profile is None or self.target_rank is None):
            raise ValueError("se mode needs target_beta or a profile with target_rank")

    def target_for(self, depth: int) -> float:
        if self.profile is not None and self.target_rank is not None:
            return float(self.profile.target(self.target_rank, depth))
        return float(self.target_beta)


@dataclass
class SearchNode:
    """Statistics of the edges leaving one expanded node (arrays indexed by child)."""

    actions: np.ndarray
    N: np.ndarray
    W: np.ndarray
    P: np.ndarray
    beta: np.ndarray  # strength score of each child at expansion
    B: np.ndarray  # cumulative subtree strength

    @property
    def Q(self) -> np.ndarray:
        return np.divide(self.W, self.N, out=np.zeros(len(self.N)), where=self.N > 0)

    @property
    def beta_bar(self) -> np.ndarray:
        """Subtree mean strength; unvisited children fall back to their own score."""
        return np.divide(self.B, self.N, out=np.array(self.beta, dtype=np.float64), where=self.N > 0)


def _exploration(node: SearchNode, c: float) -> np.ndarray:
    total = node.N.sum()
    # With no visited child the bare formula is zero everywhere; let the prior order the first visit.
    return c * math.sqrt(total if total > 0 else 1.0) / (1.0 + node.N)


def puct_select(node: SearchNode, c: float) -> int:
    if len(node.N) == 0:
        raise SearchError("node has no children")
    return int(np.argmax(node.Q + node.P * _exploration(node, c)))


def se_puct_select(node: SearchNode, c: float, c1: float, delta_hat) -> int:
    """Strength-targeted PUCT; ``P - c1 * delta_hat`` is deliberately not clamped."""
    if len(node.N) == 0:
        raise SearchError("node has no children")
    return int(np.argmax(node.Q + (node.P - c1 * np.asarray(delta_hat)) * _exploration(node, c)))


def normalize_delta(delta) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    lo, hi = d.min(), d.max()
    if hi - lo <= 0:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


# --- tree -------------------------------------------------------------------------


class SearchTree:
    """Flat-array tree. Node 0 is the root; edge ``e`` leads to node ``child[e]`` (-1 if unexpanded)."""

    def __init__(self, root: GameState, capacity: int = 1024):
        self.states: list[GameState] = [root]
        self.first: list[int] = [-1]
        self.count: list[int] = [0]
        self.E = 0
        self.N = np.zeros(capacity)
        self.W = np.zeros(capacity)
        self.B = np.zeros(capacity)
        self.P = np.zeros(capacity)
        self.beta = np.zeros(capacity)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.child = np.full(capacity, -1, dtype=np.int64)

    def _grow(self, need: int):
        cap = len(self.N)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("N", "W", "B", "P", "beta"):
            arr = np.zeros(new)
            arr[:cap] = getattr(self, name)
            setattr(self, name, arr)
        act = np.zeros(new, dtype=np.int64)
        act[:cap] = self.action
        self.action = act
        ch = np.full(new, -1, dtype=np.int64)
        ch[:cap] = self.child
        self.child = ch

    def is_expanded(self, node: int) -> bool:
        return self.first[node] >= 0

    def expand(self, node: int, actions, priors, betas):
        k = len(actions)
        self._grow(self.E + k)
        s = self.E
        self.first[node] = s
        self.count[node] = k
        self.action[s:s + k] = actions
        self.P[s:s + k] = priors
        self.beta[s:s + k] = betas
        self.E += k

    def add_child(self, parent: int, edge: int) -> int:
        state = games.apply(self.states[parent], int(self.action[edge]))
        self.states.append(state)
        self.first.append(-1)
        self.count.append(0)
        node = len(self.states) - 1
        self.child[edge] = node
        return node

    def node_view(self, node: int) -> SearchNode:
        f, k = self.first[node], self.count[node]
        sl = slice(f, f + k)
        return SearchNode(self.action[sl], self.N[sl], self.W[sl], self.P[sl], self.beta[sl], self.B[sl])

    def backup(self, path: Sequence[int], value: float, leaf_beta: float):
        """``value`` is from the viewpoint of the side to move at the leaf."""
        v = value
        for e in reversed(path):
            v = -v  # edge statistics are kept for the player who chose the edge
            self.N[e] += 1
            self.W[e] += v
            self.B[e] += leaf_beta

    def deltas(self, target: float) -> np.ndarray:
        E = self.E
        n = self.N[:E]
        bbar = np.divide(self.B[:E], n, out=self.beta[:E].copy(), where=n > 0)
        return np.abs(bbar - target)


@dataclass
class SearchResult:
    actions: np.ndarray
    visits: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    beta_bar: np.ndarray
    delta_hat: np.ndarray
    action: int
    principal_variation: list[int]
    simulations: int
    mode: str = VANILLA

    def table(self) -> str:
        lines = ["action\tN\tQ\tP\tbeta_bar\tdelta_hat"]
        for i, a in enumerate(self.actions):
            lines.append(
                f"{int(a)}\t{int(self.visits[i])}\t{self.Q[i]:.4f}\t{self.P[i]:.4f}"
                f"\t{self.beta_bar[i]:.4f}\t{self.delta_hat[i]:.4f}"
            )
        return "\n".join(lines)


def _leaf_value(state: GameState) -> float:
    sign = 1.0 if state.to_move == games.FIRST else -1.0
    return sign * state.outcome


def mcts_search(evaluator, state: GameState, config: SearchConfig,
                rng: Optional[np.random.Generator] = None) -> SearchResult:
    """Run ``config.simulations`` select/expand/evaluate/backup iterations from ``state``.

    The first simulation expands the root, so root visits sum to simulations - 1.
    """
    if state.is_terminal:
        raise SearchError("cannot search from a terminal state")
    if isinstance(evaluator, ScorerParams):
        evaluator = NetworkEvaluator(evaluator)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    tree = SearchTree(state, capacity=max(64, 8 * config.simulations))
    se_mode = config.mode == SE
    target = config.target_for(state.depth) if se_mode else 0.0
    c, c1 = config.c_puct, config.c1

    for _ in range(config.simulations):
        node, path = 0, []
        if se_mode and tree.E:
            d_all = tree.deltas(target)
            lo, hi = float(d_all.min()), float(d_all.max())
            span = hi - lo
        while tree.is_expanded(node) and not tree.states[node].is_terminal:
            view = tree.node_view(node)
            if se_mode:
                f = tree.first[node]
                d = d_all[f:f + tree.count[node]]
                dh = (d - lo) / span if span > 0 else np.zeros(len(d))
                i = se_puct_select(view, c, c1, dh)
            else:
                i = puct_select(view, c)
            edge = tree.first[node] + i
            path.append(edge)
            nxt = int(tree.child[edge])
            if nxt < 0:
                node = tree.add_child(node, edge)
                break
            node = nxt
        leaf = tree.states[node]
        leaf_beta = float(tree.beta[path[-1]]) if path else 0.0
        if leaf.is_terminal:
            value = _leaf_value(leaf)
        else:
            actions = games.legal_actions(leaf)
            priors, value, betas = evaluator.evaluate(leaf, actions, rng)
            tree.expand(node, actions, priors, betas)
        tree.backup(path, value, leaf_beta)

    return _result(tree, config, target if se_mode else None)


def _result(tree: SearchTree, config: SearchConfig, target: Optional[float]) -> SearchResult:
    root = tree.node_view(0)
    n = root.N.copy()
    bbar = np.where(n > 0, np.divide(root.B, n, out=np.zeros(len(n)), where=n > 0), np.nan)
    if target is not None and tree.E:
        d_all = tree.deltas(target)
        lo, hi = d_all.min(), d_all.max()
        d = d_all[tree.first[0]:tree.first[0] + tree.count[0]]
        dh = (d - lo) / (hi - lo) if hi > lo else np.zeros(len(d))
    else:
        dh = np.full(len(n), np.nan)
    pv, node = [], 0
    while tree.is_expanded(node) and tree.count[node]:
        view = tree.node_view(node)
        if view.N.max() <= 0:
            break
        i = int(np.argmax(view.N))
        pv.append(int(view.actions[i]))
        node = int(tree.child[tree.first[node] + i])
        if node < 0:
            break
    i = int(np.argmax(n))
    return SearchResult(
        actions=root.actions.copy(), visits=n, Q=root.Q, P=root.P.copy(), beta_bar=bbar,
        delta_hat=dh, action=int(root.actions[i]), principal_variation=pv,
        simulations=config.simulations, mode=config.mode,
    )


# --- final decisions ----------------------------------------------------------------


def sa_probabilities(counts, z: float, R: float) -> np.ndarray:
    """Selection probabilities proportional to N**z after removing N < R * N_max.

    Children that were never visited are removed as well.
    """
    n = np.asarray(counts, dtype=np.float64)
    if n.size == 0:
        raise SearchError("no visit counts")
    nmax = n.max()
    if nmax <= 0:
        return np.full(n.size, 1.0 / n.size)
    keep = (n >= R * nmax) & (n > 0)
    logw = np.full(n.size, -np.inf)
    logw[keep] = z * (np.log(n[keep]) - math.log(nmax))
    w = np.exp(logw - logw[keep].max())
    return w / w.sum()


def sa_decide(counts, z: float, R: float, rng: np.random.Generator) -> int:
    """Index of the sampled child."""
    p = sa_probabilities(counts, z, R)
    return int(rng.choice(len(p), p=p))


def decide(result: SearchResult, config: SearchConfig, rng: Optional[np.random.Generator] = None) -> int:
    """Action to play: most visited child, or an SA sample in ``sa`` mode."""
    if config.mode == SA:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        return int(result.actions[sa_decide(result.visits, config.z, config.R, rng)])
    return int(result.actions[int(np.argmax(result.visits))])
