"""Command-line entry point: ``strengthkit <command> [-c CONFIG] [--set key=value ...]``.

Every command reads its settings from a flat config file (see
:mod:`strengthkit.config`), writes an experiment report to ``report_dir``
when that key is set, and exits non-zero with a message on failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ENV_PREFIX, Config, ConfigError
from .datagen import TierSpec, game_seed, generate_dataset, make_tier_agent, play_game, read_records, read_split, write_records
from .evaluation import (
    ExperimentReport, Stopwatch, WinTable, fit_elo, limited_rank_experiment, make_search_agent,
    move_prediction_accuracy, round_robin, sa_agent, sample_positions, se_agent, strength_sweep,
)
from .games import GameSpec
from .inference import (
    MoveFilter, PredictionConfig, StrengthProfile, accuracy_curve, build_profile, game_scores, predict_rank,
    query_label,
)
from .scorer import load_checkpoint, save_checkpoint
from .search import NetworkEvaluator, SearchConfig
from .training import RankDataset, TrainConfig, default_scorer_spec, train

log = logging.getLogger("strengthkit")


# --- shared helpers ------------------------------------------------------------------


def _game(cfg: Config) -> GameSpec:
    return GameSpec.parse(cfg.str("game", "hex5"))


def _train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(
        steps=cfg.int("steps", 20000), m=cfg.int("m", 7), lr=cfg.float("lr", 0.01),
        lr_decay_step=cfg.int("lr_decay_step") if cfg.has("lr_decay_step") else None,
        include_r_infinity=cfg.bool("include_r_infinity", True),
        w_policy=cfg.float("w_policy", 1.0), w_value=cfg.float("w_value", 1.0),
        w_strength=cfg.float("w_strength", 1.0), w_rank=cfg.float("w_rank", 0.0),
        seed=cfg.int("seed", 0), init_seed=cfg.int("init_seed", 0),
        log_interval=cfg.int("log_interval", 100), checkpoint_interval=cfg.int("checkpoint_interval", 0),
    )


def _agent(desc: str, cfg: Config, cache: dict):
    """Agent from a short description: ``tier:<sims>``, ``vanilla``, ``se:<rank>`` or ``sa:<z>``."""
    kind, _, arg = desc.partition(":")
    if kind not in ("tier", "vanilla", "se", "sa"):
        raise ConfigError(f"unknown agent description {desc!r}")
    sims = cfg.int("simulations", 100)
    if kind == "tier":
        return make_tier_agent(TierSpec(1, int(arg), cfg.float("temperature", 0.3)))
    if "params" not in cache:
        cache["params"] = load_checkpoint(cfg.str("checkpoint"))
    params = cache["params"]
    value_mode = cfg.str("value_mode", "rollout")
    if kind == "vanilla":
        return make_search_agent(NetworkEvaluator(params, value_mode), SearchConfig(simulations=sims))
    if kind == "sa":
        return sa_agent(params, float(arg), sims, cfg.float("R", 0.1), value_mode=value_mode)
    if "profile" not in cache:
        cache["profile"] = StrengthProfile.load(cfg.str("profile"))
    return se_agent(params, cache["profile"], int(arg), sims, cfg.float("c1", 1.0), value_mode=value_mode)


def _finish(report: ExperimentReport, cfg: Config, seconds: float) -> None:
    report.runtime = seconds
    report.config = cfg.snapshot()
    if cfg.has("report_dir"):
        d = report.write(cfg.str("report_dir"))
        log.info("report written to %s", d)
    sys.stdout.write(report.text())


# --- commands ------------------------------------------------------------------------


def cmd_gen_data(cfg: Config) -> ExperimentReport:
    budgets = cfg.ints("tiers")
    temperature = cfg.float("temperature", 0.3)
    splits = cfg.mapping("splits")
    tiers = [TierSpec(i + 1, b, temperature, sum(splits.values())) for i, b in enumerate(budgets)]
    out = generate_dataset(tiers, _game(cfg), cfg.str("out_dir"), cfg.int("seed"), splits)
    rep = ExperimentReport("gen-data", {})
    rows = []
    for split, recs in out.items():
        for t in tiers:
            mine = [r for r in recs if r.side_labels[0] == t.tier]
            moves = sum(len(r.moves) for r in mine)
            rows.append([split, t.tier, t.simulations, len(mine), moves])
    rep.add_table("records", ["split", "tier", "simulations", "games", "moves"], rows)
    return rep


def cmd_train(cfg: Config) -> ExperimentReport:
    data = RankDataset.from_records(read_split(cfg.str("data_dir"), "train"))
    if cfg.has("kept_tiers"):
        data = data.subset(cfg.ints("kept_tiers"))
    tc = _train_config(cfg)
    ranks = len(data.ranks) if tc.w_rank > 0 else 0
    spec = default_scorer_spec(data.spec, cfg.int("hidden", 64), cfg.int("layers", 1), ranks)
    params, rows = train(data, spec, tc, cfg.str("train_log", "") or None, cfg.str("checkpoint_dir", "") or None)
    save_checkpoint(params, cfg.str("checkpoint"))
    rep = ExperimentReport("train", {})
    header = ["step", "lr", "L_strength", "L_policy", "L_value"] + [f"mean_beta_{r}" for r in data.ranks]
    if tc.include_r_infinity:
        header.append("mean_beta_inf")
    rep.add_table("log", header, [[r.step, r.lr, r.strength, r.policy, r.value, *r.means] for r in rows])
    return rep


def cmd_profile(cfg: Config) -> ExperimentReport:
    params = load_checkpoint(cfg.str("checkpoint"))
    cand = RankDataset.from_records(read_split(cfg.str("data_dir"), "candidate"))
    prof = build_profile(params, cand)
    prof.save(cfg.str("profile"))
    rep = ExperimentReport("profile", {})
    rep.add_table("composite scores", ["rank", "mean_beta", "pairs"],
                  [[r, prof.overall[r], prof.counts[r]] for r in prof.ranks])
    return rep


def cmd_predict(cfg: Config) -> ExperimentReport:
    params = load_checkpoint(cfg.str("checkpoint"))
    prof = StrengthProfile.load(cfg.str("profile"))
    recs = read_records(cfg.str("query"))
    scores = np.concatenate(game_scores(params, recs))
    mean = float(scores.mean())
    pred = predict_rank(prof, mean)
    rep = ExperimentReport("predict", {})
    rep.add_table("prediction", ["games", "pairs", "query_mean_beta", "predicted_rank"],
                  [[len(recs), scores.size, mean, pred]])
    rep.add_table("distance", ["rank", "mean_beta", "abs_difference"],
                  [[r, prof.overall[r], abs(mean - prof.overall[r])] for r in prof.ranks])
    return rep


def cmd_accuracy_curve(cfg: Config) -> ExperimentReport:
    params = load_checkpoint(cfg.str("checkpoint"))
    method = cfg.str("method", "se")
    prof = StrengthProfile.load(cfg.str("profile")) if method == "se" else None
    query = read_split(cfg.str("data_dir"), "query")
    pc = PredictionConfig(
        ns=tuple(cfg.ints("ns", "1,2,5,10,20")), repeats=cfg.int("repeats", 500),
        tolerance=cfg.int("tolerance", 0), move_filter=MoveFilter.parse(cfg.str("move_filter", "all")),
        method=method, seed=cfg.int("seed", 0),
    )
    sl_ranks = sorted({query_label(r) for r in query}) if method != "se" else None
    table = accuracy_curve(params, prof, query, pc, sl_ranks)
    rep = ExperimentReport("accuracy-curve", {})
    rep.notes.append(f"ci: {table.ci_method}")
    rep.add_table("accuracy", ["N", "rank", "accuracy", "ci95"], table.rows())
    return rep


def cmd_play(cfg: Config) -> ExperimentReport:
    spec = _game(cfg)
    cache: dict = {}
    a, b = _agent(cfg.str("agent_a"), cfg, cache), _agent(cfg.str("agent_b"), cfg, cache)
    n, seed = cfg.int("games"), cfg.int("seed")
    recs = []
    for g in range(n):
        first, second = (a, b) if g % 2 == 0 else (b, a)
        recs.append(play_game(first, second, spec, game_seed(seed, g), record_id=f"g{g:05d}",
                              opening_plies=cfg.int("opening_plies", 0)))
    if cfg.has("out"):
        write_records(cfg.str("out"), recs)
    wins_a = sum((r.outcome == 1) == (i % 2 == 0) for i, r in enumerate(recs) if r.outcome != 0)
    draws = sum(r.outcome == 0 for r in recs)
    rep = ExperimentReport("play", {})
    rep.add_table("result", ["agent_a", "agent_b", "games", "wins_a", "draws"],
                  [[cfg.str("agent_a"), cfg.str("agent_b"), n, wins_a, draws]])
    return rep


def cmd_sweep(cfg: Config) -> ExperimentReport:
    params = load_checkpoint(cfg.str("checkpoint"))
    prof = StrengthProfile.load(cfg.str("profile"))
    mode = cfg.str("mode", "se")
    targets = cfg.ints("targets")
    z_values = None
    if mode == "sa":
        zs = cfg.floats("z_values")
        if len(zs) != len(targets):
            raise ConfigError("config key 'z_values' needs one value per target")
        z_values = dict(zip(targets, zs))
    tab = strength_sweep(mode, params, prof, targets, cfg.int("baseline"), cfg.int("games"), _game(cfg),
                         cfg.int("seed"), cfg.int("simulations", 100), c1=cfg.float("c1", 1.0),
                         z_values=z_values, value_mode=cfg.str("value_mode", "rollout"))
    rep = ExperimentReport("sweep", {})
    rep.add_table("win rate vs baseline", ["target", "setting", "win_rate", "ci95"], tab.rows())
    rep.add_table("trend", ["spearman_rank_vs_winrate"], [[tab.spearman]])
    return rep


def cmd_round_robin(cfg: Config) -> ExperimentReport:
    descs = [d.strip() for d in cfg.str("agents").split(",") if d.strip()]
    cache: dict = {}
    agents = [_agent(d, cfg, cache) for d in descs]
    table = round_robin(agents, descs, cfg.int("games_per_pair"), _game(cfg), cfg.int("seed"),
                        cfg.int("opening_plies", 0))
    if cfg.has("table"):
        table.save(cfg.str("table"))
    rep = ExperimentReport("round-robin", {})
    rep.add_table("wins", ["agent", *descs],
                  [[descs[i], *["-" if i == j else table.wins[i, j] for j in range(len(descs))]]
                   for i in range(len(descs))])
    return rep


def cmd_elo(cfg: Config) -> ExperimentReport:
    table = WinTable.load(cfg.str("table"))
    elo = fit_elo(table, cfg.str("method", "lsq"))
    if cfg.has("ratings"):
        Path(cfg.str("ratings")).write_text(elo.format())
    rep = ExperimentReport("elo", {})
    rep.notes.append(f"fit: {elo.method} on logistic expected scores, mean fixed at 1500")
    if elo.clipped:
        rep.notes.append(f"clipped at +/-1000: {', '.join(elo.clipped)}")
    rep.add_table("ratings", ["agent", "rating"], [[n, round(float(r), 2)] for n, r in zip(elo.names, elo.ratings)])
    return rep


def cmd_move_acc(cfg: Config) -> ExperimentReport:
    rank = cfg.int("rank")
    query = [r for r in read_split(cfg.str("data_dir"), "query") if query_label(r) == rank]
    positions = sample_positions(query, cfg.int("positions", 500), cfg.int("seed"))
    desc = cfg.str("agent")
    res = move_prediction_accuracy(_agent(desc, cfg, {}), positions, cfg.int("seed"))
    rep = ExperimentReport("move-acc", {})
    rep.add_table("move prediction", ["agent", "rank", "positions", "accuracy", "ci95"],
                  [[desc, rank, res.positions, res.accuracy, res.ci]])
    return rep


def cmd_limited_rank(cfg: Config) -> ExperimentReport:
    d = cfg.str("data_dir")
    train_set = RankDataset.from_records(read_split(d, "train"))
    cand = RankDataset.from_records(read_split(d, "candidate"))
    query = read_split(d, "query")
    pc = PredictionConfig(ns=tuple(cfg.ints("ns", "1,5,20")), repeats=cfg.int("repeats", 200),
                          tolerance=cfg.int("tolerance", 1), seed=cfg.int("seed", 0))
    spec = default_scorer_spec(train_set.spec, cfg.int("hidden", 64), cfg.int("layers", 1))
    res = limited_rank_experiment(cfg.ints("kept_tiers"), train_set, cand, query, spec, _train_config(cfg), pc)
    rep = ExperimentReport("limited-rank", {})
    kept = set(res.kept)
    rep.add_table("composite scores", ["rank", "seen_in_training", "mean_beta"],
                  [[r, "yes" if r in kept else "no", res.profile.overall[r]] for r in res.profile.ranks])
    rep.add_table("ordering", ["strictly_descending"], [[res.strictly_ordered]])
    rep.add_table("accuracy", ["N", "rank", "accuracy", "ci95"], res.accuracy.rows())
    return rep


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate tiered self-play records"),
    "train": (cmd_train, "train the strength scorer"),
    "profile": (cmd_profile, "build per-rank composite scores from the candidate split"),
    "predict": (cmd_predict, "predict the rank of one query record file"),
    "accuracy-curve": (cmd_accuracy_curve, "rank-prediction accuracy against games per prediction"),
    "play": (cmd_play, "play games between two agents"),
    "sweep": (cmd_sweep, "win rate of strength-targeted agents against a baseline"),
    "round-robin": (cmd_round_robin, "all-pairs tournament"),
    "elo": (cmd_elo, "fit Elo ratings to a win table"),
    "move-acc": (cmd_move_acc, "how often an agent reproduces recorded moves"),
    "limited-rank": (cmd_limited_rank, "train on a subset of tiers and profile all of them"),
}

AGENT_HELP = "agents are written tier:<sims>, vanilla, se:<rank> or sa:<z>"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="strengthkit",
        description="Strength estimation and strength-adjusted search for board games.",
        epilog=f"Any config key may also be set through the environment as {ENV_PREFIX}<KEY>. {AGENT_HELP}.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, epilog=AGENT_HELP)
        p.add_argument("-c", "--config", help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = Config.load(args.config, args.overrides)
        with Stopwatch() as sw:
            report = func(cfg)
        _finish(report, cfg, sw.seconds)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"strengthkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
