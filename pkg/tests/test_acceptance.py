"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line PASS/FAIL verdict (printed in the terminal
summary and written to ``<cache>/acceptance_results.txt``). Expensive
artifacts (the synthetic dataset, the trained scorer, tournament results)
are cached under ``STRENGTHKIT_ACCEPTANCE_CACHE`` (default
``<repo>/.acceptance``), keyed by their settings and a hash of the package
source, so a rerun after a code change rebuilds them.

Criteria listed in ``KNOWN_SHORTFALLS`` are reported as FAIL and marked
xfail when they fail; they are never loosened.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import strengthkit
from strengthkit import games
from strengthkit.cli import main as cli_main
from strengthkit.datagen import TierSpec, game_seed, generate_dataset, read_split
from strengthkit.evaluation import (
    WinTable, calibrate_sa_z, fit_elo, limited_rank_experiment, move_prediction_accuracy, sa_agent,
    sample_positions, se_agent, simulate_table, strength_sweep,
)
from strengthkit.games import GameSpec
from strengthkit.inference import PredictionConfig, accuracy_curve, build_profile, query_label
from strengthkit.scorer import (
    ScorerParams, ScorerSpec, backward, forward_batch, init_params, load_checkpoint, save_checkpoint,
)
from strengthkit.search import (
    NetworkEvaluator, RolloutEvaluator, SearchConfig, decide, mcts_search, sa_decide,
)
from strengthkit.training import (
    RankDataset, TrainConfig, bt_listwise_grad, bt_listwise_loss, default_scorer_spec,
    perturb_to_infinity, train,
)

from oracles import ttt_move_values
from test_scorer import numeric_grad, random_upstream, rel_err

HEX5 = GameSpec("hex", 5)
TTT = GameSpec("tictactoe", 3)

CACHE = Path(os.environ.get("STRENGTHKIT_ACCEPTANCE_CACHE",
                            Path(__file__).resolve().parent.parent / ".acceptance"))

# Shared experimental settings, fixed before any run.
DATA = dict(budgets=[512, 128, 32, 8, 2], temperature=0.3, seed=7,
            splits={"train": 300, "candidate": 20, "query": 60})
TRAIN = dict(hidden=64, layers=1, steps=20_000, lr=0.01, seed=0)
PLAY = dict(simulations=100, c1=1.0, R=0.1, baseline=3, seed=11)
SWEEP_GAMES = 200
MOVE_POSITIONS = 200
CALIBRATION = dict(games=40, iterations=6, z_lo=0.0, z_hi=8.0)

KNOWN_SHORTFALLS = {
    6: "r-infinity pairs score between tiers 3 and 4; analysed in the decisions notes",
    8: "SE trails strength-matched SA on synthetic tiers; analysed in the decisions notes",
}

RESULTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / "acceptance_results.txt"
    lines = {}
    if path.exists():
        for old in path.read_text().splitlines():
            lines[int(old.split(":")[0].split()[1])] = old
    lines[n] = line
    path.write_text("\n".join(lines[k] for k in sorted(lines)) + "\n")
    if not ok:
        if n in KNOWN_SHORTFALLS:
            pytest.xfail(KNOWN_SHORTFALLS[n])
        pytest.fail(line)


# --- artifact cache -------------------------------------------------------------------


def _source_hash() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(strengthkit.__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def cached_dir(name: str, settings: dict, build) -> Path:
    key = hashlib.sha256((json.dumps(settings, sort_keys=True) + _source_hash()).encode()).hexdigest()[:16]
    d = CACHE / f"{name}-{key}"
    if not (d / "DONE").exists():
        d.mkdir(parents=True, exist_ok=True)
        build(d)
        (d / "DONE").write_text(json.dumps(settings, sort_keys=True) + "\n")
    return d


def cached_json(name: str, settings: dict, compute) -> dict:
    def build(d):
        (d / "result.json").write_text(json.dumps(compute(), sort_keys=True))
    return json.loads((cached_dir(name, settings, build) / "result.json").read_text())


@pytest.fixture(scope="module")
def data_dir():
    def build(d):
        n = sum(DATA["splits"].values())
        tiers = [TierSpec(i + 1, b, DATA["temperature"], n) for i, b in enumerate(DATA["budgets"])]
        generate_dataset(tiers, HEX5, d, DATA["seed"], DATA["splits"])
    return cached_dir("data", DATA, build)


@pytest.fixture(scope="module")
def datasets(data_dir):
    return (RankDataset.from_records(read_split(data_dir, "train", False)),
            RankDataset.from_records(read_split(data_dir, "candidate", False)),
            read_split(data_dir, "query", False))


@pytest.fixture(scope="module")
def trained(data_dir, datasets):
    train_set, candidate, _ = datasets

    def build(d):
        params, _ = train(train_set, default_scorer_spec(HEX5, TRAIN["hidden"], TRAIN["layers"]),
                          TrainConfig(steps=TRAIN["steps"], lr=TRAIN["lr"], seed=TRAIN["seed"],
                                      log_interval=TRAIN["steps"] // 10))
        save_checkpoint(params, d / "scorer.ckpt")
    params = load_checkpoint(cached_dir("scorer", {**DATA, **TRAIN}, build) / "scorer.ckpt")
    return params, build_profile(params, candidate)


# --- criteria -------------------------------------------------------------------------


def test_c01_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_bt = 0.0
    for _ in range(100):
        b = rng.normal(scale=2.0, size=int(rng.integers(2, 9)))
        eps = 1e-6
        num = np.array([(bt_listwise_loss(b + eps * e) - bt_listwise_loss(b - eps * e)) / (2 * eps)
                        for e in np.eye(b.size)])
        worst_bt = max(worst_bt, rel_err(bt_listwise_grad(b), num))
    worst_net = 0.0
    for k in range(100):
        spec = ScorerSpec(8, 5, 1 + k % 2, 3, 2)
        p = ScorerParams(spec, rng.normal(scale=0.7, size=spec.param_count))
        x = rng.normal(size=(3, spec.input_size))
        up = random_upstream(rng, spec, 3)
        g = backward(p, x, up["logits"], up["value"], up["beta"], up["rank"])
        worst_net = max(worst_net, rel_err(g, numeric_grad(p, x, up)))
    seconds = time.perf_counter() - start
    ok = worst_bt < 1e-4 and worst_net < 1e-4 and seconds < 60
    verdict(1, ok, f"max rel err loss grad {worst_bt:.2e}, network {worst_net:.2e} "
                   f"(limit 1e-4), {seconds:.1f}s (limit 60s)")


def test_c02_loss_closed_forms():
    a = bt_listwise_loss([0.37, 0.37])
    b = bt_listwise_loss([0.0, 0.0, 0.0])
    c = bt_listwise_loss([1.0, 0.0])
    ok = abs(a - np.log(2)) <= 1e-9 and abs(b - np.log(6)) <= 1e-9 and abs(c - 0.313262) <= 1e-6
    verdict(2, ok, f"[b,b]={a:.12f} [0,0,0]={b:.12f} [1,0]={c:.7f}")


def random_position(spec, rng, max_plies):
    s = games.initial_state(spec)
    for _ in range(int(rng.integers(0, max_plies + 1))):
        legal = games.legal_actions(s)
        nxt = games.apply(s, legal[rng.integers(len(legal))])
        if nxt.is_terminal:
            break
        s = nxt
    return s


def test_c03_reduction_identity():
    params = init_params(ScorerSpec(HEX5.feature_length, 16, 1, HEX5.num_actions), 0)
    ev = NetworkEvaluator(params, "rollout")
    rng = np.random.default_rng(3)
    mismatches = 0
    for seed in range(100):
        s = random_position(HEX5, rng, 10)
        van_cfg = SearchConfig(simulations=100)
        se_cfg = SearchConfig(simulations=100, mode="se", c1=0.0, target_beta=float(rng.normal()))
        van = mcts_search(ev, s, van_cfg, np.random.default_rng(seed))
        se = mcts_search(ev, s, se_cfg, np.random.default_rng(seed))
        mismatches += int(decide(van, van_cfg) != decide(se, se_cfg))
    verdict(3, mismatches == 0, f"{mismatches}/100 decisions differ")


def test_c04_oracle_soundness():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    losing, checked, informative = 0, 0, 0
    while checked < 200:
        s = random_position(TTT, rng, 7)
        values = ttt_move_values(s.board, s.to_move)
        if max(values.values()) < 0:
            continue  # every move loses, nothing to check
        informative += int(min(values.values()) < 0)
        res = mcts_search(RolloutEvaluator(), s, SearchConfig(simulations=4000), np.random.default_rng(checked))
        losing += int(values[decide(res, SearchConfig(simulations=4000))] < 0)
        checked += 1
    seconds = time.perf_counter() - start
    verdict(4, losing == 0 and seconds < 300,
            f"{losing}/200 losing moves where a non-losing one existed ({informative} positions offered a "
            f"losing move), {seconds:.0f}s (limit 300s)")


def test_c05_rank_recovery(trained, datasets):
    params, profile = trained
    ns = (1, 2, 5, 10, 20)
    tab = accuracy_curve(params, profile, datasets[2], PredictionConfig(ns=ns, repeats=200, tolerance=1, seed=5))
    acc = tab.mean_accuracy
    rho = stats.spearmanr(ns, acc).statistic
    ok = acc[-1] >= 0.9 and rho > 0.8
    verdict(5, ok, f"accuracy(N=20, +/-1)={acc[-1]:.3f} (>=0.9); by N {np.round(acc, 3).tolist()}, "
                   f"spearman {rho:.3f} (>0.8)")


def test_c06_beta_ordering(trained, datasets):
    params, profile = trained
    candidate = datasets[1]
    rng = np.random.default_rng(6)
    pairs = [perturb_to_infinity(p, rng) for r in candidate.ranks for p in candidate.pairs[r]]
    x = np.array([games.encode_features(HEX5, p) for p in pairs])
    beta_inf = float(forward_batch(params, x)[2].mean())
    chain = list(profile.means()) + [beta_inf]
    ok = bool(np.all(np.diff(chain) < 0))
    verdict(6, ok, "candidate means " + " > ".join(f"{v:.3f}" for v in chain) + " (tiers 1..5, then inf)")


def sweep_result(trained):
    params, profile = trained

    def compute():
        tab = strength_sweep("se", params, profile, [1, 2, 3, 4, 5], PLAY["baseline"], SWEEP_GAMES, HEX5,
                             PLAY["seed"], PLAY["simulations"], c1=PLAY["c1"])
        return {"win_rates": tab.win_rates.tolist(), "spearman": tab.spearman}
    return cached_json("sweep", {**DATA, **TRAIN, **PLAY, "games": SWEEP_GAMES}, compute)


def test_c07_strength_adjustment(trained):
    res = sweep_result(trained)
    rates = res["win_rates"]
    own = rates[PLAY["baseline"] - 1]
    ok = res["spearman"] <= -0.9 and 0.40 <= own <= 0.60
    verdict(7, ok, f"win rates vs tier-{PLAY['baseline']} SE {np.round(rates, 3).tolist()}, "
                   f"spearman {res['spearman']:.3f} (<=-0.9), self-match {own:.3f} (in [0.40, 0.60])")


def test_c08_se_vs_sa_move_prediction(trained, datasets):
    params, profile = trained
    query = datasets[2]
    rates = sweep_result(trained)["win_rates"]

    def compute():
        baseline = se_agent(params, profile, PLAY["baseline"], PLAY["simulations"], PLAY["c1"])
        out = {}
        for tier in range(1, 6):
            z = calibrate_sa_z(params, rates[tier - 1], baseline, HEX5, CALIBRATION["games"],
                               game_seed(PLAY["seed"], 800 + tier), PLAY["simulations"],
                               CALIBRATION["z_lo"], CALIBRATION["z_hi"], CALIBRATION["iterations"], PLAY["R"])
            positions = sample_positions([r for r in query if query_label(r) == tier], MOVE_POSITIONS, tier)
            se = move_prediction_accuracy(se_agent(params, profile, tier, PLAY["simulations"], PLAY["c1"]),
                                          positions, tier)
            sa = move_prediction_accuracy(sa_agent(params, z, PLAY["simulations"], PLAY["R"]), positions, tier)
            out[str(tier)] = {"z": z, "se": se.accuracy, "sa": sa.accuracy}
        return out
    res = cached_json("move_prediction", {**DATA, **TRAIN, **PLAY, **CALIBRATION, "games": SWEEP_GAMES,
                                          "positions": MOVE_POSITIONS}, compute)
    wins = sum(res[t]["se"] > res[t]["sa"] for t in res)
    detail = "; ".join(f"tier {t}: SE {res[t]['se']:.3f} vs SA(z={res[t]['z']:.2f}) {res[t]['sa']:.3f}"
                       for t in sorted(res))
    verdict(8, wins >= 4, f"SE ahead on {wins}/5 tiers (need 4). {detail}")


def test_c09_sa_mechanics():
    rng = np.random.default_rng(9)
    draws = np.array([sa_decide([8, 2], 1.0, 0.0, rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=2) / draws.size
    filtered = {sa_decide([8, 2], 1.0, 0.5, rng) for _ in range(10_000)}
    ok = bool(np.all(np.abs(freq - [0.8, 0.2]) <= 0.02)) and filtered == {0}
    verdict(9, ok, f"frequencies {np.round(freq, 4).tolist()} (target 0.8/0.2 +/-0.02); "
                   f"R=0.5 picks {sorted(filtered)}")


def test_c10_elo_fitting():
    true = [0.0, 100.0, 200.0, 300.0]
    fit = fit_elo(simulate_table(true, 1000, seed=0))
    gaps = [fit.gap(i + 1, i) for i in range(3)]
    two = fit_elo(WinTable(["a", "b"], [[0, 75], [25, 0]], 100)).gap(0, 1)
    ok = all(abs(g - 100.0) <= 10.0 for g in gaps) and abs(two - 190.85) <= 0.5
    verdict(10, ok, f"recovered gaps {np.round(gaps, 2).tolist()} (100 +/-10); 75/25 gap {two:.3f} "
                    f"(190.85 +/-0.5)")


def test_c11_limited_rank(datasets):
    train_set, candidate, query = datasets

    def compute():
        res = limited_rank_experiment([1, 5], train_set, candidate, query,
                                      default_scorer_spec(HEX5, TRAIN["hidden"], TRAIN["layers"]),
                                      TrainConfig(steps=TRAIN["steps"], lr=TRAIN["lr"], seed=TRAIN["seed"],
                                                  log_interval=TRAIN["steps"] // 10))
        return {"means": res.profile.means().tolist()}
    means = cached_json("limited_rank", {**DATA, **TRAIN, "kept": [1, 5]}, compute)["means"]
    ok = bool(np.all(np.diff(means) < 0))
    verdict(11, ok, "candidate means after training on tiers 1 and 5: "
                    + " > ".join(f"{m:.3f}" for m in means))


CLI_RUNS = [
    ("gen-data", []),
    ("train", []),
    ("profile", []),
    ("predict", ["query={root}/data/query/tier2.jsonl"]),
    ("accuracy-curve", ["ns=1,2", "repeats=20"]),
    ("play", ["agent_a=se:1", "agent_b=sa:1.0", "games=4"]),
    ("sweep", ["targets=1,2,3", "baseline=2", "games=4"]),
    ("round-robin", ["agents=tier:16,tier:4,tier:1", "games_per_pair=4", "table={root}/wins.tsv"]),
    ("elo", ["table={root}/wins.tsv"]),
    ("move-acc", ["rank=1", "positions=20", "agent=sa:2"]),
    ("limited-rank", ["kept_tiers=1,3", "steps=30", "ns=1,2", "repeats=20"]),
]


def test_c12_reproducibility(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"""
game = hex3
seed = 3
simulations = 12
tiers = 16,4,1
splits = train:6,candidate:2,query:4
out_dir = {tmp_path}/data
data_dir = {tmp_path}/data
steps = 60
hidden = 8
checkpoint = {tmp_path}/scorer.ckpt
profile = {tmp_path}/profile.tsv
""")
    reports = {}
    for run in range(2):
        for cmd, extra in CLI_RUNS:
            out = tmp_path / f"run{run}" / cmd
            sets = [a for kv in extra for a in ("--set", kv.format(root=tmp_path))]
            assert cli_main([cmd, "-c", str(cfg), *sets, "--set", f"report_dir={out}"]) == 0
            reports.setdefault(cmd, []).append(
                [(out / name).read_bytes() for name in ("report.txt", "report.tsv")])
    differing = [cmd for cmd, (a, b) in reports.items() if a != b]
    verdict(12, not differing, f"{len(reports) - len(differing)}/{len(reports)} commands byte-identical on rerun"
                               + (f"; differing: {', '.join(differing)}" if differing else ""))
