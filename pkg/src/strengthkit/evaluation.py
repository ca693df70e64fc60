"""Experiment drivers: tournaments, Elo, strength sweeps, move prediction, limited ranks.

Every driver takes explicit seeds and derives one seed per game, so results
are reproducible independent of execution order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import games
from .datagen import Agent, GameRecord, game_seed, play_game
from .games import GameSpec
from .inference import AccuracyTable, PredictionConfig, StrengthProfile, accuracy_curve, build_profile
from .scorer import ScorerParams, ScorerSpec
from .search import SA, SE, VANILLA, NetworkEvaluator, SearchConfig, decide, mcts_search
from .training import RankDataset, TrainConfig, train

ELO_SCALE = 400.0
ELO_MEAN = 1500.0
ELO_CLIP = 1000.0


def wilson_free_ci(p: float, n: int) -> float:
    """Half-width of the normal-approximation 95% interval for a proportion."""
    return 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan")


# --- agents ---------------------------------------------------------------------------


def make_search_agent(evaluator, config: SearchConfig) -> Agent:
    """Agent that searches every position and plays :func:`decide`'s choice."""

    def agent(state, rng):
        res = mcts_search(evaluator, state, config, rng)
        return decide(res, config, rng)

    agent.config = config
    return agent


def se_agent(params: ScorerParams, profile: StrengthProfile, rank: int, simulations: int,
             c1: float = 1.0, c_puct: float = 1.25, value_mode: str = "rollout") -> Agent:
    cfg = SearchConfig(simulations=simulations, c_puct=c_puct, mode=SE, c1=c1,
                       profile=profile, target_rank=rank)
    return make_search_agent(NetworkEvaluator(params, value_mode), cfg)


def sa_agent(params: ScorerParams, z: float, simulations: int, R: float = 0.1,
             c_puct: float = 1.25, value_mode: str = "rollout") -> Agent:
    cfg = SearchConfig(simulations=simulations, c_puct=c_puct, mode=SA, z=z, R=R)
    return make_search_agent(NetworkEvaluator(params, value_mode), cfg)


# --- tournaments ----------------------------------------------------------------------


@dataclass
class WinTable:
    """``wins[i, j]`` is the score of agent i against agent j (draws count one half)."""

    names: list[str]
    wins: np.ndarray
    games_per_pair: int

    def __post_init__(self):
        self.wins = np.asarray(self.wins, dtype=np.float64)
        k = len(self.names)
        if self.wins.shape != (k, k):
            raise ValueError("win matrix shape does not match the agent list")
        off = ~np.eye(k, dtype=bool)
        if not np.allclose((self.wins + self.wins.T)[off], self.games_per_pair):
            raise ValueError("each pair's scores must add up to the games per pair")

    @property
    def rates(self) -> np.ndarray:
        r = self.wins / self.games_per_pair
        np.fill_diagonal(r, np.nan)
        return r

    def format(self) -> str:
        lines = ["agent\t" + "\t".join(self.names)]
        for i, name in enumerate(self.names):
            cells = ["-" if i == j else f"{self.wins[i, j]:g}" for j in range(len(self.names))]
            lines.append(name + "\t" + "\t".join(cells))
        return f"# games_per_pair={self.games_per_pair}\n" + "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.format())

    @classmethod
    def load(cls, path) -> "WinTable":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        try:
            g = int(lines[0].split("=", 1)[1])
            names = lines[1].split("\t")[1:]
            w = np.zeros((len(names), len(names)))
            for i, ln in enumerate(lines[2:2 + len(names)]):
                for j, cell in enumerate(ln.split("\t")[1:]):
                    if i != j:
                        w[i, j] = float(cell)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed win table") from exc
        return cls(names, w, g)


def _score(outcome: int, first_is_a: bool) -> float:
    """Score of agent a for a game with first-player ``outcome``."""
    if outcome == 0:
        return 0.5
    return float((outcome == 1) == first_is_a)


def head_to_head(agent_a: Agent, agent_b: Agent, spec: GameSpec, games_count: int, seed: int,
                 opening_plies: int = 0) -> float:
    """Total score of ``agent_a``; colours alternate with ``agent_a`` first in even games."""
    total = 0.0
    for g in range(games_count):
        s = game_seed(seed, g)
        if g % 2 == 0:
            rec = play_game(agent_a, agent_b, spec, s, opening_plies=opening_plies)
            total += _score(rec.outcome, True)
        else:
            rec = play_game(agent_b, agent_a, spec, s, opening_plies=opening_plies)
            total += _score(rec.outcome, False)
    return total


def round_robin(agents: Sequence[Agent], names: Sequence[str], games_per_pair: int, spec: GameSpec,
                seed: int, opening_plies: int = 0) -> WinTable:
    """Every pair plays ``games_per_pair`` games, half with each colour."""
    k = len(agents)
    if k < 2:
        raise ValueError("a round robin needs at least two agents")
    if games_per_pair < 2 or games_per_pair % 2:
        raise ValueError("games per pair must be a positive even number")
    w = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            s = head_to_head(agents[i], agents[j], spec, games_per_pair, game_seed(seed, i, j), opening_plies)
            w[i, j], w[j, i] = s, games_per_pair - s
    return WinTable(list(names), w, games_per_pair)


# --- Elo ------------------------------------------------------------------------------


@dataclass
class EloRatings:
    names: list[str]
    ratings: np.ndarray
    method: str
    iterations: int
    clipped: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = [f"# elo fit: method={self.method} scale={ELO_SCALE:g} mean={ELO_MEAN:g} "
                 f"iterations={self.iterations} clipped={','.join(self.clipped) or '-'}",
                 "agent\trating"]
        lines += [f"{n}\t{r:.2f}" for n, r in zip(self.names, self.ratings)]
        return "\n".join(lines) + "\n"

    def gap(self, i: int, j: int) -> float:
        return float(self.ratings[i] - self.ratings[j])


def expected_score(ri, rj):
    """Logistic expected score of a player rated ``ri`` against ``rj``."""
    return 1.0 / (1.0 + 10.0 ** ((np.asarray(rj) - np.asarray(ri)) / ELO_SCALE))


def _recentre(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean 1500, then clip to 1500 +/- 1000; repeat until both hold."""
    clipped = np.zeros(r.size, dtype=bool)
    for _ in range(100):
        r = r - r.mean() + ELO_MEAN
        lo, hi = ELO_MEAN - ELO_CLIP, ELO_MEAN + ELO_CLIP
        out = (r < lo) | (r > hi)
        if not out.any():
            break
        clipped |= out
        r = np.clip(r, lo, hi)
    return r, clipped


def fit_elo(table: WinTable, method: str = "lsq", tol: float = 1e-6, max_iter: int = 10_000,
            max_step: float = 100.0) -> EloRatings:
    """Ratings whose logistic expected scores match the observed pairwise win rates.

    ``lsq`` minimises the squared difference between expected and observed
    win rates over all ordered pairs; ``mle`` maximises the binomial
    likelihood of the observed scores. Both run damped Newton-type steps
    (Gauss-Newton for ``lsq``), keep the mean at 1500, and stop once no
    rating moves by more than ``tol``. Ratings of agents that win or lose
    everything are clipped at 1000 from the mean and listed in ``clipped``.
    """
    if method not in ("lsq", "mle"):
        raise ValueError(f"unknown Elo fit method {method!r}")
    k = len(table.names)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    obs = np.array([table.wins[i, j] / table.games_per_pair for i, j in pairs])
    adj = np.zeros((k, k), dtype=bool)
    for i, j in pairs:
        adj[i, j] = adj[j, i] = True
    _check_connected(adj)
    c = math.log(10.0) / ELO_SCALE
    r = np.full(k, ELO_MEAN)
    clipped = np.zeros(k, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        e = np.array([expected_score(r[i], r[j]) for i, j in pairs])
        d = c * e * (1 - e)  # derivative of e_ij with respect to r_i
        J = np.zeros((len(pairs), k))
        for p, (i, j) in enumerate(pairs):
            J[p, i], J[p, j] = d[p], -d[p]
        if method == "lsq":
            step = np.linalg.lstsq(J, obs - e, rcond=None)[0]
        else:
            # Newton step on the binomial log-likelihood in logistic units
            grad = J.T @ ((obs - e) / np.maximum(e * (1 - e), 1e-300))
            H = J.T @ (J / np.maximum(e * (1 - e), 1e-300)[:, None])
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        step = np.clip(step, -max_step, max_step)
        new, cl = _recentre(r + step)
        change = float(np.max(np.abs(new - r)))
        r, clipped = new, clipped | cl
        if change < tol:
            break
    at_bound = np.abs(r - ELO_MEAN) >= ELO_CLIP - 1e-9
    names = [n for n, b in zip(table.names, clipped & at_bound) if b]
    return EloRatings(list(table.names), r, method, it, names)


def _check_connected(adj: np.ndarray) -> None:
    k = adj.shape[0]
    seen, stack = {0}, [0]
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if int(j) not in seen:
                seen.add(int(j))
                stack.append(int(j))
    if len(seen) != k:
        raise ValueError("comparison graph is not connected")


def simulate_table(ratings: Sequence[float], games_per_pair: int, seed: int,
                   names: Optional[Sequence[str]] = None) -> WinTable:
    """Win table drawn from the logistic model with the given ratings."""
    rng = np.random.default_rng(seed)
    k = len(ratings)
    w = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            s = rng.binomial(games_per_pair, expected_score(ratings[i], ratings[j]))
            w[i, j], w[j, i] = s, games_per_pair - s
    return WinTable(list(names or [f"a{i}" for i in range(k)]), w, games_per_pair)


# --- strength sweeps ------------------------------------------------------------------


@dataclass
class SweepTable:
    mode: str
    targets: list[int]
    baseline: int
    scores: np.ndarray
    games: int
    settings: list[float]  # c1 for se, z for sa

    @property
    def win_rates(self) -> np.ndarray:
        return self.scores / self.games

    @property
    def ci(self) -> np.ndarray:
        return np.array([wilson_free_ci(p, self.games) for p in self.win_rates])

    @property
    def spearman(self) -> float:
        """Rank correlation of target against win rate; nan when every win rate is equal."""
        if np.ptp(self.win_rates) == 0:
            return float("nan")
        return float(stats.spearmanr(self.targets, self.win_rates).statistic)

    def rows(self) -> list[list]:
        return [[t, s, float(w), float(c)] for t, s, w, c in
                zip(self.targets, self.settings, self.win_rates, self.ci)]


def strength_sweep(mode: str, params: ScorerParams, profile: StrengthProfile, targets: Sequence[int],
                   baseline_rank: int, games_count: int, spec: GameSpec, seed: int, simulations: int,
                   c1: float = 1.0, z_values: Optional[dict] = None, baseline_c1: Optional[float] = None,
                   opening_plies: int = 0, value_mode: str = "rollout") -> SweepTable:
    """Win rate of a strength-targeted agent per target rank against a fixed baseline.

    The baseline is an SE agent aimed at ``baseline_rank``. In ``sa`` mode
    the challenger for rank i samples its move with exponent
    ``z_values[i]``.
    """
    if mode not in (SE, SA):
        raise ValueError(f"sweep mode must be se or sa, got {mode!r}")
    base_c1 = c1 if baseline_c1 is None else baseline_c1
    baseline = se_agent(params, profile, baseline_rank, simulations, base_c1, value_mode=value_mode)
    scores, settings = [], []
    for t in targets:
        if mode == SE:
            challenger = se_agent(params, profile, t, simulations, c1, value_mode=value_mode)
            settings.append(c1)
        else:
            if z_values is None or t not in z_values:
                raise ValueError(f"no z value for target rank {t}")
            challenger = sa_agent(params, z_values[t], simulations, value_mode=value_mode)
            settings.append(z_values[t])
        scores.append(head_to_head(challenger, baseline, spec, games_count, game_seed(seed, t), opening_plies))
    return SweepTable(mode, list(targets), baseline_rank, np.array(scores), games_count, settings)


def calibrate_sa_z(params: ScorerParams, reference_rate: float, opponent: Agent, spec: GameSpec,
                   games_count: int, seed: int, simulations: int, z_lo: float = 0.0, z_hi: float = 8.0,
                   iterations: int = 6, R: float = 0.1, value_mode: str = "rollout") -> float:
    """Exponent z whose SA agent scores closest to ``reference_rate`` against ``opponent``.

    Bisection assumes the win rate grows with z; every probe reuses the same
    game seeds so the comparison between probes is paired.
    """
    def rate(z):
        agent = sa_agent(params, z, simulations, R, value_mode=value_mode)
        return head_to_head(agent, opponent, spec, games_count, seed) / games_count

    lo, hi = z_lo, z_hi
    best, best_err = lo, float("inf")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if abs(r - reference_rate) < best_err:
            best, best_err = mid, abs(r - reference_rate)
        if r < reference_rate:
            lo = mid
        else:
            hi = mid
    return best


# --- move prediction ------------------------------------------------------------------


@dataclass
class MoveAccuracy:
    hits: int
    positions: int

    @property
    def accuracy(self) -> float:
        return self.hits / self.positions if self.positions else float("nan")

    @property
    def ci(self) -> float:
        return wilson_free_ci(self.accuracy, self.positions)


def sample_positions(records: Sequence[GameRecord], count: int, seed: int) -> list[tuple]:
    """``count`` (state, recorded move) pairs drawn without replacement from ``records``."""
    everything = []
    for rec in records:
        states = games.replay(rec.spec, rec.moves)
        everything.extend((states[d], int(a)) for d, a in enumerate(rec.moves))
    if count >= len(everything):
        return everything
    pick = np.random.default_rng(seed).choice(len(everything), size=count, replace=False)
    return [everything[i] for i in sorted(pick)]


def move_prediction_accuracy(agent: Agent, positions: Sequence[tuple], seed: int) -> MoveAccuracy:
    """Fraction of positions where ``agent`` plays the recorded move.

    Each position gets its own generator derived from ``seed`` and the
    position's index in ``positions``.
    """
    hits = 0
    for k, (state, move) in enumerate(positions):
        rng = np.random.default_rng(game_seed(seed, k))
        hits += int(agent(state, rng) == move)
    return MoveAccuracy(hits, len(positions))


# --- limited-rank generalisation ------------------------------------------------------


@dataclass
class LimitedRankResult:
    kept: list[int]
    profile: StrengthProfile
    accuracy: Optional[AccuracyTable]
    params: ScorerParams

    @property
    def strictly_ordered(self) -> bool:
        m = self.profile.means()
        return bool(np.all(np.diff(m) < 0))


def limited_rank_experiment(kept: Sequence[int], train_set: RankDataset, candidate: RankDataset,
                            query: Sequence[GameRecord], scorer_spec: ScorerSpec, config: TrainConfig,
                            prediction: Optional[PredictionConfig] = None) -> LimitedRankResult:
    """Train on ``kept`` ranks only, then profile and predict over every rank."""
    kept = sorted(set(kept))
    if len(kept) < 2:
        raise ValueError("limited-rank training needs at least two kept ranks")
    missing = set(kept) - set(train_set.ranks)
    if missing:
        raise ValueError(f"kept ranks {sorted(missing)} are not in the training set")
    params, _ = train(train_set.subset(kept), scorer_spec, config)
    profile = build_profile(params, candidate)
    table = accuracy_curve(params, profile, query, prediction) if prediction is not None else None
    return LimitedRankResult(kept, profile, table, params)


# --- reports --------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    """Named result tables plus the configuration that produced them.

    ``report.txt`` and ``report.tsv`` hold only deterministic content; the
    wall-clock runtime goes to ``meta.txt`` so reruns compare byte for byte.
    """

    name: str
    config: dict
    tables: list = field(default_factory=list)  # (title, header, rows)
    runtime: float = 0.0
    notes: list = field(default_factory=list)

    def add_table(self, title: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        self.tables.append((title, list(header), [list(r) for r in rows]))

    @staticmethod
    def _cell(v) -> str:
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.6f}"
        return str(v)

    def text(self) -> str:
        out = [f"experiment: {self.name}", "config:"]
        out += [f"  {k} = {self.config[k]}" for k in sorted(self.config)]
        out += [f"note: {n}" for n in self.notes]
        for title, header, rows in self.tables:
            cells = [header] + [[self._cell(v) for v in r] for r in rows]
            widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
            out.append("")
            out.append(f"[{title}]")
            for row in cells:
                out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(out) + "\n"

    def lines(self) -> str:
        """One tab-separated record per table row: ``table<TAB>col=value...``."""
        out = [f"experiment\t{self.name}"]
        out += [f"config\t{k}={self.config[k]}" for k in sorted(self.config)]
        for title, header, rows in self.tables:
            for r in rows:
                out.append(title + "\t" + "\t".join(f"{h}={self._cell(v)}" for h, v in zip(header, r)))
        return "\n".join(out) + "\n"

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(self.text())
        (d / "report.tsv").write_text(self.lines())
        (d / "meta.txt").write_text(f"runtime_seconds\t{self.runtime:.3f}\n")
        return d


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start
        return False
