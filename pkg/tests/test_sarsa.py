import math
from dataclasses import replace

import numpy as np
import pytest

from tarl.errors import FormatError, InsufficientHistory
from tarl.executor import EpisodeRunner
from tarl.sarsa import (
    LearnParams, UtilityTable, apply_episode, converged, dumps, learn, loads, normalized_flow,
    td_update,
)


def _table(bins=3, lines=(10, 11, 12), **kw):
    return UtilityTable(bins, list(lines), LearnParams(**kw))


def test_terminal_update_with_flow():
    t = _table(alpha=0.1, kappa=0.5)
    t.observe_flow(0, 2.0)
    td_update(t, (0, 0, 0), 2.0, 100.0, None)
    assert t.q[t.index(0, 0, 0)] == pytest.approx(15.0)


def test_textbook_td0_step():
    t = _table(alpha=0.1, kappa=0.0, gamma=0.9)
    t.q[t.index(0, 1, 0)] = 10.0
    td_update(t, (0, 0, 0), 0.0, 0.0, (0, 1, 0))
    assert t.q[t.index(0, 0, 0)] == pytest.approx(0.9)


def test_chain_fixed_point():
    t = _table(bins=1, alpha=0.5, gamma=0.9, kappa=0.0)
    chain = [(0, 0, 0), (0, 0, 1), (0, 0, 2)]
    for _ in range(10_000):
        before = list(t.q)
        for k, s in enumerate(chain):
            last = k == len(chain) - 1
            td_update(t, s, 0.0, 100.0 if last else 0.0, None if last else chain[k + 1])
        if max(abs(a - b) for a, b in zip(t.q, before)) < 1e-12:
            break
    values = [t.q[t.index(*s)] for s in chain]
    assert values == pytest.approx([81.0, 90.0, 100.0], abs=1e-6)


def test_flow_term_uses_flow_reward():
    t = _table(alpha=1.0, kappa=0.5)
    t.observe_flow(0, 4.0)
    td_update(t, (0, 0, 0), 2.0, 0.0, None, flow_reward=-100.0)
    assert t.q[t.index(0, 0, 0)] == pytest.approx(0.5 * -100.0 * 0.5)


def test_normalized_flow_clamps():
    assert normalized_flow(3.0, 2.0) == 1.0
    assert normalized_flow(-3.0, 2.0) == -1.0
    assert normalized_flow(1.0, 2.0) == 0.5
    assert normalized_flow(1.0, 0.0) == 1.0


def _td0_reference(traces, bins, nlines, alpha, gamma):
    """Plain dictionary TD(0) over hook-event streams, written independently."""
    v = {}
    for trace in traces:
        rewards = trace.rewards()
        events = trace.events
        for k, e in enumerate(events):
            s = (e.m, e.p, e.stmt_index)
            target = rewards[k]
            if k + 1 < len(events):
                n = events[k + 1]
                target = target + gamma * v.get((n.m, n.p, n.stmt_index), 0.0)
            old = v.get(s, 0.0)
            v[s] = old + alpha * (target - old)
    return [v.get((m, p, n), 0.0) for m in (0, 1) for p in range(bins) for n in range(nlines)]


def test_kappa_zero_is_td0_bitwise(traveller_iprog, config):
    params = LearnParams(kappa=0.0, episodes=60, block=20, tail=0.0, seed=3)
    table, _ = learn(traveller_iprog, config, params)
    runner = EpisodeRunner(traveller_iprog, config)
    rng = np.random.default_rng(3)
    traces = [runner.run(rng) for _ in range(60)]
    ref = _td0_reference(traces, config.odometry_bins, len(traveller_iprog.lines),
                         params.alpha, params.gamma)
    assert table.q == ref


def test_bound_holds_after_every_update():
    rng = np.random.default_rng(11)
    for kappa, gamma in [(0.5, 0.9), (2.0, 0.5), (0.0, 0.99)]:
        t = _table(bins=4, lines=(1, 2, 3), alpha=float(rng.uniform(0.05, 1)), gamma=gamma, kappa=kappa)
        bound = t.bound(100.0)
        for _ in range(5000):
            s = (int(rng.integers(2)), int(rng.integers(4)), int(rng.integers(3)))
            nxt = None if rng.random() < 0.1 else \
                (int(rng.integers(2)), int(rng.integers(4)), int(rng.integers(3)))
            v = float(rng.normal(0, 50))
            t.observe_flow(s[2], v)
            r = float(rng.choice([0.0, 100.0, -100.0]))
            td_update(t, s, v, r, nxt, flow_reward=float(rng.choice([100.0, -100.0])))
            assert abs(t.q[t.index(*s)]) <= bound + 1e-9


def test_convergence_flag():
    assert converged([50, 4, 0.3], 0.01, 150)
    assert not converged([50, 4, 3.0], 0.01, 150)
    assert converged([0.0, 0.0], 0.05, 0.0)
    with pytest.raises(InsufficientHistory):
        converged([1.0], 0.05, 10)


def test_zero_episodes(traveller_iprog, config):
    table, stats = learn(traveller_iprog, config, LearnParams(episodes=0))
    assert not any(table.q) and stats.episodes == 0 and stats.block_deltas == []


def test_tail_average_is_mean_of_iterates(traveller_iprog, config):
    params = LearnParams(episodes=40, block=10, tail=0.25, seed=2)
    averaged, _ = learn(traveller_iprog, config, params)
    raw = UtilityTable(config.odometry_bins, traveller_iprog.lines, params)
    runner = EpisodeRunner(traveller_iprog, config)
    rng = np.random.default_rng(2)
    total = np.zeros_like(raw.array())
    for ep in range(40):
        trace = runner.run(rng)
        apply_episode(raw, trace, trace.verdict.reward_total)
        if ep >= 30:
            total += raw.array()
    assert np.allclose(averaged.array(), total / 10, rtol=0, atol=1e-9)


def test_stats_and_block_history(traveller_iprog, config):
    _, stats = learn(traveller_iprog, config.offline(), LearnParams(episodes=100, block=25))
    assert stats.success_rate == 1.0
    assert len(stats.block_deltas) == 4
    assert stats.to_dict()["atr"] == 100.0


def test_learn_params_validation():
    for bad in [{"alpha": 0}, {"gamma": 1.0}, {"kappa": -1}, {"block": 0}, {"tail": 1.0}]:
        with pytest.raises(ValueError):
            LearnParams(**bad)
    with pytest.raises(ValueError):
        LearnParams.from_dict({"beta": 1})


def test_csv_round_trip():
    t = _table(bins=2, lines=(22, 27, 31))
    rng = np.random.default_rng(0)
    t.q = [float(x) for x in rng.normal(0, 100, len(t.q))]
    text = dumps(t)
    assert text.splitlines()[0] == "terrain,odometry_bin,line,stmt_index,q"
    again = loads(text)
    assert again.q == t.q and again.lines == t.lines and again.bins == t.bins
    assert dumps(again) == text


def test_empty_table_is_header_only():
    t = UtilityTable(4, [], LearnParams())
    assert dumps(t) == "terrain,odometry_bin,line,stmt_index,q\n"
    assert loads(dumps(t)).lines == []


def test_nan_refused():
    t = _table()
    t.q[0] = math.nan
    with pytest.raises(FormatError):
        dumps(t)


@pytest.mark.parametrize("text", [
    "",
    "a,b\n",
    "terrain,odometry_bin,line,stmt_index,q\n0,0,1,0\n",
    "terrain,odometry_bin,line,stmt_index,q\n0,0,1,0,abc\n",
    "terrain,odometry_bin,line,stmt_index,q\n2,0,1,0,1.0\n",
    "terrain,odometry_bin,line,stmt_index,q\n0,0,1,0,1.0\n0,0,1,0,2.0\n",
    "terrain,odometry_bin,line,stmt_index,q\n0,0,1,0,1.0\n",
])
def test_malformed_csv(text):
    with pytest.raises(FormatError):
        loads(text)


def test_learn_determinism(traveller_iprog, config):
    params = LearnParams(episodes=50, block=25, seed=9)
    a, _ = learn(traveller_iprog, config, params)
    b, _ = learn(traveller_iprog, config, replace(params))
    assert dumps(a) == dumps(b)
