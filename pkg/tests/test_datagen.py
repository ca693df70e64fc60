import json

import numpy as np
import pytest

from strengthkit import games
from strengthkit.datagen import (
    RECORD_HEADER, GameRecord, RecordError, TierSpec, check_tiers, game_seed, generate_dataset,
    make_tier_agent, play_game, read_records, read_split, sample_from_visits, validate_record,
    write_records,
)
from strengthkit.games import GameSpec

TTT = GameSpec("tictactoe", 3)
HEX3 = GameSpec("hex", 3)
HEX5 = GameSpec("hex", 5)


def first_legal(state, rng):
    return games.legal_actions(state)[0]


class TestTierSpec:
    def test_order_by_budget(self):
        assert [t.tier for t in check_tiers([TierSpec(2, 8), TierSpec(1, 64)])] == [1, 2]

    def test_order_by_temperature(self):
        check_tiers([TierSpec(1, 8, 0.3), TierSpec(2, 8, 1.0)])

    def test_not_weaker(self):
        with pytest.raises(ValueError):
            check_tiers([TierSpec(1, 8), TierSpec(2, 16)])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            check_tiers([TierSpec(1, 8)])

    def test_invalid(self):
        with pytest.raises(ValueError):
            TierSpec(0, 8)


class TestSampling:
    def test_zero_temperature_is_argmax(self):
        assert sample_from_visits([1, 7, 3], [1 / 3] * 3, 0.0, np.random.default_rng(0)) == 1

    def test_falls_back_to_priors(self):
        assert sample_from_visits([0, 0, 0], [0.1, 0.2, 0.7], 0.0, None) == 2

    def test_temperature_one_matches_counts(self):
        rng = np.random.default_rng(1)
        draws = [sample_from_visits([3, 1], [.5, .5], 1.0, rng) for _ in range(20_000)]
        assert abs(np.mean(np.array(draws) == 0) - 0.75) < 0.015

    def test_unvisited_never_sampled(self):
        rng = np.random.default_rng(2)
        assert all(sample_from_visits([0, 4, 1], [1 / 3] * 3, 5.0, rng) != 0 for _ in range(500))


class TestAgents:
    def test_budget_one_is_prior_play(self):
        # with one simulation nothing is visited and the move follows the priors alone
        agent = make_tier_agent(TierSpec(1, 1, temperature=0.0), prior_jitter=0.0)
        assert agent(games.initial_state(TTT), np.random.default_rng(0)) == 0

    def test_temperature_zero_deterministic(self):
        agent = make_tier_agent(TierSpec(1, 50, temperature=0.0))
        s = games.initial_state(HEX3)
        assert agent(s, np.random.default_rng(4)) == agent(s, np.random.default_rng(4))

    def test_move_is_legal(self):
        agent = make_tier_agent(TierSpec(1, 8))
        s = games.apply(games.initial_state(HEX5), 12)
        assert agent(s, np.random.default_rng(0)) in games.legal_actions(s)


class TestPlayGame:
    def test_same_seed_same_record(self):
        agent = make_tier_agent(TierSpec(1, 16))
        a = play_game(agent, agent, HEX5, 42)
        b = play_game(agent, agent, HEX5, 42)
        assert a == b

    def test_outcome_matches_replay(self):
        agent = make_tier_agent(TierSpec(1, 4))
        rec = play_game(agent, agent, HEX5, 3, (2, 2), "x")
        assert games.replay(HEX5, rec.moves)[-1].outcome == rec.outcome
        validate_record(rec)

    def test_deterministic_agents(self):
        a = play_game(first_legal, first_legal, TTT, 0)
        b = play_game(first_legal, first_legal, TTT, 99)
        assert a.moves == b.moves == (0, 1, 2, 3, 4, 5, 6)
        assert a.outcome == 1

    def test_opening_plies_random(self):
        recs = {play_game(first_legal, first_legal, HEX5, s, opening_plies=2).moves[:2] for s in range(20)}
        assert len(recs) > 1


class TestRecords:
    def test_json_field_order(self):
        rec = play_game(first_legal, first_legal, TTT, 0, (1, 1), "r0")
        assert list(json.loads(rec.to_json())) == ["id", "game", "side_labels", "moves", "outcome", "seed"]

    def test_roundtrip(self, tmp_path):
        recs = [play_game(first_legal, first_legal, TTT, s, (1, 2), f"r{s}") for s in range(3)]
        write_records(tmp_path / "a.jsonl", recs)
        assert (tmp_path / "a.jsonl").read_text().splitlines()[0] == RECORD_HEADER
        assert read_records(tmp_path / "a.jsonl") == recs

    def test_bad_header(self, tmp_path):
        (tmp_path / "a.jsonl").write_text("{}\n")
        with pytest.raises(RecordError):
            read_records(tmp_path / "a.jsonl")

    def test_illegal_move_rejected(self):
        rec = GameRecord("bad", TTT, (1, 1), (0, 0), 1, 0)
        with pytest.raises(RecordError):
            validate_record(rec)

    def test_wrong_outcome_rejected(self):
        rec = play_game(first_legal, first_legal, TTT, 0)
        with pytest.raises(RecordError):
            validate_record(GameRecord(rec.id, TTT, rec.side_labels, rec.moves, -rec.outcome, 0))

    def test_unfinished_rejected(self):
        with pytest.raises(RecordError):
            validate_record(GameRecord("u", TTT, (1, 1), (0, 1), 0, 0))

    def test_malformed_line(self):
        with pytest.raises(RecordError):
            GameRecord.from_json('{"id": "x"}')


def test_game_seed_distinct():
    seeds = {game_seed(7, t, g) for t in range(5) for g in range(100)}
    assert len(seeds) == 500


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    tiers = [TierSpec(1, 16, games=8), TierSpec(2, 4, games=8), TierSpec(3, 1, games=8)]
    splits = {"train": 5, "candidate": 1, "query": 2}
    return out, generate_dataset(tiers, HEX3, out, 5, splits)


class TestGenerateDataset:
    def test_counts(self, small_dataset):
        out, recs = small_dataset
        everything = [r for split in recs.values() for r in split]
        assert len(everything) == 24
        for t in (1, 2, 3):
            assert sum(r.side_labels == (t, t) for r in everything) == 8

    def test_splits_disjoint_and_on_disk(self, small_dataset):
        out, recs = small_dataset
        ids = [r.id for split in recs.values() for r in split]
        assert len(ids) == len(set(ids))
        for split, expected in recs.items():
            assert read_split(out, split) == expected

    def test_all_records_replay(self, small_dataset):
        out, recs = small_dataset
        for split in recs.values():
            for r in split:
                validate_record(r)

    def test_pure_function_of_seed(self, small_dataset, tmp_path):
        _, recs = small_dataset
        tiers = [TierSpec(1, 16, games=8), TierSpec(2, 4, games=8), TierSpec(3, 1, games=8)]
        again = generate_dataset(tiers, HEX3, None, 5, {"train": 5, "candidate": 1, "query": 2})
        assert again == recs

    def test_split_sizes_must_cover_games(self):
        with pytest.raises(ValueError):
            generate_dataset([TierSpec(1, 4, games=3), TierSpec(2, 1, games=3)], HEX3, None, 0, {"train": 2})
