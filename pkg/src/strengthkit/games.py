"""Two-player zero-sum board games: tic-tac-toe and N x N Hex.

Boards are flat tuples of cell owners (0 empty, 1 first player, 2 second
player). In Hex the first player connects the top and bottom rows, the
second player the left and right columns. Outcomes are always reported
from the first player's point of view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

EMPTY, FIRST, SECOND = 0, 1, 2

TICTACTOE = "tictactoe"
HEX = "hex"
HEX_MIN_SIZE, HEX_MAX_SIZE = 3, 11

ENCODING_VERSION = "v1"

_TTT_LINES = (
    (0, 1, 2), (3, 4, 5), (6, 7, 8),
    (0, 3, 6), (1, 4, 7), (2, 5, 8),
    (0, 4, 8), (2, 4, 6),
)

# Rank label carried by randomly perturbed pairs (the synthetic weakest rank).
RANK_INFINITY = -1


class GameError(ValueError):
    """Raised on invalid specs, illegal moves or queries on terminal states."""


@dataclass(frozen=True)
class GameSpec:
    kind: str = HEX
    size: int = 5
    encoding: str = ENCODING_VERSION

    def __post_init__(self):
        if self.kind == TICTACTOE:
            if self.size != 3:
                raise GameError("tic-tac-toe is played on a 3x3 board")
        elif self.kind == HEX:
            if not HEX_MIN_SIZE <= self.size <= HEX_MAX_SIZE:
                raise GameError(
                    f"hex size must be in [{HEX_MIN_SIZE}, {HEX_MAX_SIZE}], got {self.size}"
                )
        else:
            raise GameError(f"unknown game kind {self.kind!r}")
        if self.encoding != ENCODING_VERSION:
            raise GameError(f"unsupported feature encoding {self.encoding!r}")

    @property
    def num_actions(self) -> int:
        return self.size * self.size

    @property
    def feature_length(self) -> int:
        # two occupancy planes + side-to-move bit + one-hot action
        return 3 * self.num_actions + 1

    @property
    def allows_draws(self) -> bool:
        return self.kind == TICTACTOE

    def name(self) -> str:
        return TICTACTOE if self.kind == TICTACTOE else f"hex{self.size}"

    @classmethod
    def parse(cls, text: str) -> "GameSpec":
        """Inverse of :meth:`name` (``tictactoe`` or ``hex<N>``)."""
        text = text.strip().lower()
        if text == TICTACTOE:
            return cls(TICTACTOE, 3)
        if text.startswith(HEX) and text[len(HEX):].isdigit():
            return cls(HEX, int(text[len(HEX):]))
        raise GameError(f"cannot parse game name {text!r}")


@dataclass(frozen=True)
class GameState:
    spec: GameSpec
    board: tuple
    to_move: int = FIRST
    depth: int = 0
    outcome: Optional[int] = field(default=None, compare=False)

    @property
    def is_terminal(self) -> bool:
        return self.outcome is not None


@dataclass(frozen=True)
class StateActionPair:
    state: GameState
    action: int
    rank: int
    depth: int


def initial_state(spec: GameSpec) -> GameState:
    return GameState(spec, (EMPTY,) * spec.num_actions, FIRST, 0, None)


def legal_actions(state: GameState) -> list[int]:
    if state.outcome is not None:
        raise GameError("no legal actions in a terminal state")
    return [i for i, v in enumerate(state.board) if v == EMPTY]


def apply(state: GameState, action: int) -> GameState:
    if state.outcome is not None:
        raise GameError("game is already over")
    if not 0 <= action < len(state.board):
        raise GameError(f"action {action} outside the action space")
    if state.board[action] != EMPTY:
        raise GameError(f"cell {action} is occupied")
    board = list(state.board)
    board[action] = state.to_move
    board = tuple(board)
    outcome = _outcome_after_move(state.spec, board, action, state.to_move)
    return GameState(state.spec, board, 3 - state.to_move, state.depth + 1, outcome)


def terminal_value(state: GameState) -> Optional[int]:
    return state.outcome


def replay(spec: GameSpec, moves) -> list[GameState]:
    """States s_0 .. s_k visited by playing ``moves`` from the initial state."""
    states = [initial_state(spec)]
    for a in moves:
        states.append(apply(states[-1], int(a)))
    return states


def _outcome_after_move(spec, board, action, player) -> Optional[int]:
    sign = 1 if player == FIRST else -1
    if spec.kind == TICTACTOE:
        for a, b, c in _TTT_LINES:
            if board[a] == board[b] == board[c] == player:
                return sign
        return 0 if EMPTY not in board else None
    if _hex_group_connects(spec.size, board, action, player):
        return sign
    return None


@lru_cache(maxsize=None)
def hex_neighbors(n: int) -> tuple:
    out = []
    for r in range(n):
        for c in range(n):
            cells = []
            for dr, dc in ((-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < n and 0 <= cc < n:
                    cells.append(rr * n + cc)
            out.append(tuple(cells))
    return tuple(out)


def _hex_group_connects(n, board, start, player) -> bool:
    nbrs = hex_neighbors(n)
    seen = {start}
    stack = [start]
    lo = hi = False
    while stack:
        cell = stack.pop()
        r, c = divmod(cell, n)
        k = r if player == FIRST else c
        lo = lo or k == 0
        hi = hi or k == n - 1
        if lo and hi:
            return True
        for nb in nbrs[cell]:
            if nb not in seen and board[nb] == player:
                seen.add(nb)
                stack.append(nb)
    return False


def hex_winner_full(n: int, board) -> int:
    """Winner (FIRST or SECOND) of a completely filled Hex board."""
    nbrs = hex_neighbors(n)
    stack = [c for c in range(n) if board[c] == FIRST]
    seen = set(stack)
    while stack:
        cell = stack.pop()
        if cell >= n * (n - 1):
            return FIRST
        for nb in nbrs[cell]:
            if nb not in seen and board[nb] == FIRST:
                seen.add(nb)
                stack.append(nb)
    return SECOND


def random_rollout(state: GameState, rng: np.random.Generator) -> int:
    """Outcome (first player's view) of uniformly random play from ``state``."""
    if state.outcome is not None:
        return state.outcome
    empties = [i for i, v in enumerate(state.board) if v == EMPTY]
    order = rng.permutation(len(empties))
    if state.spec.kind == HEX:
        # Filling the board and reading off the unique winner is equivalent
        # to playing the same move order until someone connects.
        board = list(state.board)
        p = state.to_move
        for k in order:
            board[empties[k]] = p
            p = 3 - p
        return 1 if hex_winner_full(state.spec.size, board) == FIRST else -1
    s = state
    for k in order:
        s = apply(s, empties[k])
        if s.outcome is not None:
            return s.outcome
    raise AssertionError("tic-tac-toe rollout ended without an outcome")


# --- feature encoding -------------------------------------------------------
#
# Layout (length 3*A + 1, A = number of cells):
#   [0, A)        1.0 where the first player has a stone
#   [A, 2A)       1.0 where the second player has a stone
#   2A            1.0 if the first player is to move, else 0.0
#   [2A+1, 3A+1)  one-hot of the action (all zero for state-only encodings)


def _state_block(state: GameState) -> np.ndarray:
    a = state.spec.num_actions
    board = np.asarray(state.board, dtype=np.int8)
    x = np.zeros(3 * a + 1)
    x[:a] = board == FIRST
    x[a:2 * a] = board == SECOND
    x[2 * a] = 1.0 if state.to_move == FIRST else 0.0
    return x


def encode_features(spec: GameSpec, pair: StateActionPair) -> np.ndarray:
    if pair.state.spec != spec:
        raise GameError("pair state belongs to a different game spec")
    if pair.state.board[pair.action] != EMPTY:
        raise GameError(f"action {pair.action} is not legal in this state")
    x = _state_block(pair.state)
    x[2 * spec.num_actions + 1 + pair.action] = 1.0
    return x


def encode_state(state: GameState) -> np.ndarray:
    """State-only encoding (action slots zero), the input for policy and value."""
    return _state_block(state)


def encode_children(state: GameState, actions) -> np.ndarray:
    """Rows: the state-only encoding followed by one encoding per action."""
    a = state.spec.num_actions
    base = _state_block(state)
    x = np.tile(base, (len(actions) + 1, 1))
    x[np.arange(1, len(actions) + 1), 2 * a + 1 + np.asarray(actions, dtype=np.int64)] = 1.0
    return x
