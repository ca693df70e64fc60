"""Rank-labelled synthetic games from tiered MCTS agents.

Record files hold one JSON object per line after a version header::

    #strengthkit-records v1
    {"id": "t1-00000", "game": "hex5", "side_labels": [1, 1], "moves": [12, 7, ...], "outcome": 1, "seed": 123}

``side_labels`` are the rank labels of the first and second player.
``outcome`` is +1 / -1 / 0 from the first player's point of view.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import games
from .games import GameSpec, GameState
from .scorer import ScorerParams
from .search import NetworkEvaluator, RolloutEvaluator, SearchConfig, mcts_search

log = logging.getLogger(__name__)

RECORD_HEADER = "#strengthkit-records v1"
SPLITS = ("train", "candidate", "query")

Agent = Callable[[GameState, np.random.Generator], int]


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class TierSpec:
    tier: int
    simulations: int
    temperature: float = 0.3
    games: int = 100

    def __post_init__(self):
        if self.tier < 1 or self.simulations < 1 or self.temperature < 0 or self.games < 0:
            raise ValueError(f"invalid tier spec {self}")


def check_tiers(tiers: Sequence[TierSpec]):
    tiers = sorted(tiers, key=lambda t: t.tier)
    if len(tiers) < 2:
        raise ValueError("need at least two tiers")
    for a, b in zip(tiers, tiers[1:]):
        weaker_budget = b.simulations < a.simulations
        hotter = b.temperature > a.temperature
        if not (weaker_budget or (b.simulations == a.simulations and hotter)):
            raise ValueError(f"tier {b.tier} is not weaker than tier {a.tier}")
    return tiers


@dataclass(frozen=True)
class GameRecord:
    id: str
    spec: GameSpec
    side_labels: tuple
    moves: tuple
    outcome: int
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id,
            "game": self.spec.name(),
            "side_labels": list(self.side_labels),
            "moves": list(self.moves),
            "outcome": self.outcome,
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, line: str) -> "GameRecord":
        try:
            d = json.loads(line)
            return cls(str(d["id"]), GameSpec.parse(d["game"]), tuple(int(x) for x in d["side_labels"]),
                       tuple(int(x) for x in d["moves"]), int(d["outcome"]), int(d["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(f"malformed record line: {exc}") from exc


def validate_record(rec: GameRecord) -> None:
    """Replay ``rec`` and check every move is legal and the outcome matches."""
    if len(rec.side_labels) != 2:
        raise RecordError(f"{rec.id}: need two side labels")
    try:
        states = games.replay(rec.spec, rec.moves)
    except games.GameError as exc:
        raise RecordError(f"{rec.id}: {exc}") from exc
    final = states[-1]
    if games.terminal_value(final) is None:
        raise RecordError(f"{rec.id}: game does not reach a terminal state")
    if final.outcome != rec.outcome:
        raise RecordError(f"{rec.id}: recorded outcome {rec.outcome}, replay gives {final.outcome}")


def write_records(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(RECORD_HEADER + "\n")
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path, validate: bool = True) -> list[GameRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != RECORD_HEADER:
        raise RecordError(f"{path}: missing or unsupported header")
    out = [GameRecord.from_json(line) for line in lines[1:] if line.strip()]
    if validate:
        for rec in out:
            validate_record(rec)
    return out


def read_split(directory, split: str, validate: bool = True) -> list[GameRecord]:
    files = sorted(Path(directory, split).glob("tier*.jsonl"))
    if not files:
        raise FileNotFoundError(f"no record files under {Path(directory, split)}")
    return [rec for f in files for rec in read_records(f, validate)]


# --- agents ----------------------------------------------------------------------


def sample_from_visits(visits, priors, temperature: float, rng) -> int:
    """Index drawn with probability proportional to visits**(1/T); T=0 takes the argmax.

    When nothing was visited the priors stand in for the visit counts.
    """
    w = np.asarray(visits, dtype=np.float64)
    if w.sum() <= 0:
        w = np.asarray(priors, dtype=np.float64)
    if temperature == 0:
        return int(np.argmax(w))
    logw = np.full(w.size, -np.inf)
    pos = w > 0
    logw[pos] = np.log(w[pos]) / temperature
    p = np.exp(logw - logw[pos].max())
    return int(rng.choice(w.size, p=p / p.sum()))


def make_tier_agent(spec: TierSpec, params: Optional[ScorerParams] = None,
                    c_puct: float = 1.25, prior_jitter: float = 0.1) -> Agent:
    """Vanilla MCTS at the tier's budget, sampling the move from visit counts.

    Without ``params`` the search runs on random playouts with (jittered)
    uniform priors; with ``params`` priors come from the policy head and
    values from random playouts.
    """
    if params is not None:
        evaluator = NetworkEvaluator(params, "rollout", 1, prior_jitter)
    else:
        evaluator = RolloutEvaluator(1, prior_jitter)
    cfg = SearchConfig(simulations=spec.simulations, c_puct=c_puct)

    def agent(state: GameState, rng: np.random.Generator) -> int:
        res = mcts_search(evaluator, state, cfg, rng)
        return int(res.actions[sample_from_visits(res.visits, res.P, spec.temperature, rng)])

    agent.tier = spec.tier
    return agent


def play_game(agent_a: Agent, agent_b: Agent, spec: GameSpec, seed: int,
              labels=(0, 0), record_id: str = "", opening_plies: int = 0) -> GameRecord:
    """``agent_a`` moves first. The first ``opening_plies`` moves are uniformly random."""
    rng = np.random.default_rng(seed)
    state = games.initial_state(spec)
    moves = []
    while not state.is_terminal:
        if state.depth < opening_plies:
            legal = games.legal_actions(state)
            a = legal[rng.integers(len(legal))]
        else:
            a = (agent_a if state.to_move == games.FIRST else agent_b)(state, rng)
        moves.append(int(a))
        state = games.apply(state, int(a))
    return GameRecord(record_id, spec, tuple(labels), tuple(moves), int(state.outcome), int(seed))


def game_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def generate_dataset(tiers: Sequence[TierSpec], spec: GameSpec, out_dir, seed: int,
                     splits: dict, params: Optional[ScorerParams] = None) -> dict:
    """Self-play ``tier.games`` games per tier and write ``<out_dir>/<split>/tier<i>.jsonl``.

    ``splits`` maps split name to games per tier (in order); counts must add
    up to each tier's ``games``. Returns {split: [records]}.
    """
    tiers = check_tiers(tiers)
    out: dict[str, list] = {name: [] for name in splits}
    for t in tiers:
        if sum(splits.values()) != t.games:
            raise ValueError(f"split sizes {splits} do not add up to {t.games} games for tier {t.tier}")
        agent = make_tier_agent(t, params)
        recs = []
        for g in range(t.games):
            s = game_seed(seed, t.tier, g)
            rec = play_game(agent, agent, spec, s, (t.tier, t.tier), f"t{t.tier}-{g:05d}")
            validate_record(rec)
            recs.append(rec)
        log.info("tier %d: %d games", t.tier, len(recs))
        pos = 0
        for name, count in splits.items():
            chunk = recs[pos:pos + count]
            pos += count
            out[name].extend(chunk)
            if out_dir is not None:
                write_records(Path(out_dir, name, f"tier{t.tier}.jsonl"), chunk)
    return out
