import json
import math
from dataclasses import replace

import numpy as np
import pytest

from tarl.errors import DivergenceFault, InstrumentError, NoVerdict, RuntimeFault
from tarl.executor import EpisodeRunner, instrument, run_episode
from tarl.lang import find_numeric_literals, find_statement, parse, parse_file, replace_literal, rewrite
from tarl.taintflow import taint_analyze
from conftest import CORPUS

HEADER = "def cb(d):\n    global pos\n    pos = d.pose.pose.position\n\npos = 0\n\n"


def _program(body: str):
    return parse(HEADER + body)


def test_nine_hook_sites(traveller_iprog):
    assert traveller_iprog.lines == [33, 36, 22, 38, 27, 28, 29, 30, 31]


def test_offline_episode(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    assert trace.verdict.success
    expected = math.log(10 / 0.05) / 5 / config.dt  # closed-form transit / dt
    assert trace.publish_count == pytest.approx(expected, rel=0.05)


def test_mud_episode_times_out(traveller_iprog, config):
    trace = run_episode(traveller_iprog, replace(config, mud_prob=1.0), seed=0)
    assert not trace.verdict.success and trace.verdict.reason == "timeout"
    assert any(e.m == 1 for e in trace.events)


def test_hook_order_of_one_iteration(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    lines = [e.line for e in trace.events]
    assert lines[:11] == [27, 28, 29, 30, 31, 22, 27, 28, 29, 30, 31]
    assert lines[-1] == 31


def test_trace_covers_monitored_leg_only(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    assert not {33, 36, 38} & {e.line for e in trace.events}
    # the leg starts at G1, so the first odometry bin is 0
    assert trace.events[0].p == 0


def test_flow_values(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    first = {e.line: e.v for e in trace.events[:5]}
    assert first[27] == 1.0
    assert first[28] == pytest.approx(10.0)
    assert first[29] == pytest.approx(10.0)
    assert first[30] == pytest.approx(50.0)
    assert first[31] == pytest.approx(50.0)


def test_terminal_reward_on_last_event(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    rewards = trace.rewards()
    assert rewards[-1] == config.reward_success
    assert all(r == 0 for r in rewards[:-1])
    assert trace.episode_return == config.reward_success


def test_step_penalty(traveller_iprog, config):
    cfg = replace(config.offline(), step_penalty=-1.0)
    trace = run_episode(traveller_iprog, cfg, seed=0)
    assert trace.episode_return == pytest.approx(100 - trace.publish_count)


def test_determinism(traveller_iprog, config):
    a = run_episode(traveller_iprog, config, seed=5)
    b = run_episode(traveller_iprog, config, seed=5)
    assert a.events == b.events and a.verdict == b.verdict


def test_runner_cache_matches_direct_runs(traveller_iprog, config):
    runner = EpisodeRunner(traveller_iprog, config)
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    for _ in range(6):
        cached = runner.run(rng_a)
        direct = run_episode(traveller_iprog, config, seed=rng_b)
        assert cached.events == direct.events


def test_jsonl_dump(traveller_iprog, config):
    trace = run_episode(traveller_iprog, config.offline(), seed=0)
    rows = [json.loads(x) for x in trace.to_jsonl().splitlines()]
    assert len(rows) == len(trace.events)
    assert set(rows[0]) == {"line", "stmt_index", "m", "p", "v"}


def test_uninstrumented_program_has_no_events(traveller, config):
    trace = run_episode(instrument(traveller, None), config.offline(), seed=0)
    assert trace.events == [] and trace.verdict.success


def test_stale_report(traveller, traveller_report):
    ref = find_numeric_literals(find_statement(traveller, 30))[0][0]
    edited = rewrite(traveller, lambda s: replace_literal(s, ref, 7) if s.line == 30 else s)
    with pytest.raises(InstrumentError):
        instrument(edited, traveller_report)


def test_episode_without_verdict(config):
    program = parse_file(CORPUS / "silent.mb")
    with pytest.raises(NoVerdict):
        run_episode(instrument(program, None), config, seed=0)


def test_undefined_variable_reports_line(config):
    program = _program(
        "def go(goal, out):\n    out.publish(missing)\n\n"
        "if __name__ == '__main__':\n"
        "    rospy.Subscriber(Odometry, cb)\n"
        "    p = rospy.Publisher(Velocity, Twist, 10)\n"
        "    go(G2, p)\n"
    )
    with pytest.raises(RuntimeFault) as info:
        run_episode(instrument(program, None), config, seed=0)
    assert info.value.line == 8


def test_non_numeric_arithmetic(config):
    program = _program(
        "def go(goal, out):\n    out.publish('a' * 2)\n\n"
        "if __name__ == '__main__':\n"
        "    rospy.Subscriber(Odometry, cb)\n"
        "    p = rospy.Publisher(Velocity, Twist, 10)\n"
        "    go(G2, p)\n"
    )
    with pytest.raises(RuntimeFault):
        run_episode(instrument(program, None), config, seed=0)


def test_divergence_before_monitored_leg(config):
    program = _program(
        "def go(goal, out):\n    while True:\n        out.publish(0)\n\n"
        "if __name__ == '__main__':\n"
        "    rospy.Subscriber(Odometry, cb)\n"
        "    p = rospy.Publisher(Velocity, Twist, 10)\n"
        "    go(G1, p)\n"
        "    go(G2, p)\n"
    )
    with pytest.raises(DivergenceFault):
        run_episode(instrument(program, None), config, seed=0)


def test_other_controller_runs(config):
    program = parse_file(CORPUS / "clamped.mb")
    iprog = instrument(program, taint_analyze(program, "Odometry", "Velocity"))
    trace = run_episode(iprog, config.offline(), seed=0)
    assert trace.verdict.success
