import difflib
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest

from conftest import SWAPPED
from test_world import closed_form_transit
from tarl import world as W
from tarl.errors import InsufficientDataError, NameCollisionError, NoConstantsError
from tarl.executor import EpisodeRunner, instrument, run_episode
from tarl.faultloc import Region
from tarl.lang import parse, parse_file, unparse
from tarl.mend import (
    MutantArm, RepairParams, SearchLog, atr, epsilon_greedy_search, evaluate, generate_mutants,
    inject_sensor_binding, select_and_validate, sensor_variable,
)
from tarl.sarsa import LearnParams, learn
from tarl.taintflow import find_sources, taint_analyze

REGION = Region(1, 7, 11)


@pytest.fixture(scope="module")
def arms(traveller, config):
    return generate_mutants(traveller, 30, REGION, RepairParams(), config)


def test_arm_set(arms):
    assert [a.value for a in arms[:-1]] == [1.25, 2.5, 10.0, 20.0, 40.0]
    assert [a.label for a in arms] == ["5->1.25", "5->2.5", "5->10", "5->20", "5->40", "identity"]
    assert arms[-1].constant_ref is None and arms[-1].factor == 1.0
    assert [a.arm_id for a in arms] == list(range(6))
    assert arms[0].guard == "__tarl_terrain == 1 and pos >= 3.5 and pos < 6"


def test_line_without_constants(traveller, config):
    with pytest.raises(NoConstantsError):
        generate_mutants(traveller, 29, REGION, RepairParams(), config)


def test_inject_adds_terrain_subscriber(traveller):
    out = inject_sensor_binding(traveller)
    topics = [t for t, _, _ in find_sources(out)]
    assert topics == ["Odometry", "Terrain"]
    assert sensor_variable(out, W.TERRAIN) == "__tarl_terrain"
    assert sensor_variable(out, W.ODOMETRY) == "pos"


def test_inject_is_noop_when_already_subscribed(traveller):
    once = inject_sensor_binding(traveller)
    assert inject_sensor_binding(once) is once
    assert inject_sensor_binding(traveller, W.ODOMETRY) is traveller


def test_inject_name_collision(traveller):
    text = unparse(traveller).text.replace("pos = 0", "pos = 0\n__tarl_terrain = 0", 1)
    with pytest.raises(NameCollisionError):
        inject_sensor_binding(parse(text))


def _signature(program, config, seed):
    """Hook trace keyed by statement text, since plumbing shifts line numbers."""
    iprog = instrument(program, taint_analyze(program, W.ODOMETRY, W.VELOCITY))
    trace = run_episode(iprog, config, seed=seed)
    texts = {e.line: e.text for e in iprog.report.instrumented}
    events = [(texts[e.line], e.stmt_index, e.m, e.p, e.v) for e in trace.events]
    return events, trace.verdict, trace.publish_count


def test_identity_arm_is_neutral(traveller, arms, config):
    identity = arms[-1].program
    for seed in range(6):
        assert _signature(identity, config, seed) == _signature(traveller, config, seed)


def test_guard_is_sound_without_mud(traveller, arms, config):
    dry = replace(config, mud_prob=0.0)
    base = run_episode(instrument(traveller, None), dry, seed=0)
    for arm in arms:
        trace = run_episode(instrument(arm.program, None), dry, seed=0)
        assert trace.verdict == base.verdict and trace.publish_count == base.publish_count


def test_patch_is_local(traveller, arms):
    before = unparse(inject_sensor_binding(traveller)).text.splitlines()
    after = unparse(arms[2].program).text.splitlines()
    changed = [l for l in difflib.unified_diff(before, after, lineterm="", n=0)
               if l[:1] in "+-" and not l.startswith(("+++", "---"))]
    assert sorted(changed) == sorted([
        "-        vel = 5 * delta",
        "+        if __tarl_terrain == 1 and pos >= 3.5 and pos < 6:",
        "+            vel = 10 * delta",
        "+        else:",
        "+            vel = 5 * delta",
    ])


def test_atr_examples():
    assert atr([100, -100, 100]) == pytest.approx([100, 0, 100 / 3])
    assert atr([]) == []
    rng = np.random.default_rng(1)
    xs = rng.normal(0, 100, 500)
    assert np.allclose(atr(xs), np.cumsum(xs) / np.arange(1, 501), rtol=0, atol=1e-12)


def test_single_identity_arm_matches_baseline(traveller, arms, config):
    params = RepairParams(search_episodes=300, seed=4)
    log = epsilon_greedy_search([arms[-1]], config, params)
    base = evaluate(traveller, config, 300, 99)
    se = statistics.pstdev(base) / math.sqrt(len(base))
    assert abs(log.final_atr - statistics.fmean(base)) <= 2 * math.sqrt(2) * se


def test_every_arm_is_explored(arms, config):
    runners = [EpisodeRunner(instrument(a.program, None), config) for a in arms]
    for seed in range(10):
        log = epsilon_greedy_search(arms, config, RepairParams(search_episodes=300, seed=seed), runners)
        assert all(p >= 1 for p in log.pulls), (seed, log.pulls)
        assert sum(log.pulls) == 300


def test_no_search_budget(arms, config):
    params = RepairParams(search_episodes=0)
    log = epsilon_greedy_search(arms, config, params)
    assert log.selected is None and log.final_atr == 0.0
    with pytest.raises(InsufficientDataError):
        select_and_validate(log, arms, config, params)


def test_ties_select_lowest_id(traveller, config):
    arms = [MutantArm(i, None, 1.0, None, "", traveller) for i in range(3)]
    log = epsilon_greedy_search(arms, config.offline(), RepairParams(search_episodes=60, seed=0))
    assert log.selected == 0


def test_selected_constant_meets_deadline(arms, config):
    params = RepairParams()
    for seed in range(3):
        log = epsilon_greedy_search(arms, config, replace(params, seed=seed))
        patch = select_and_validate(log, arms, config, replace(params, seed=seed))
        assert patch.arm.value in {10.0, 20.0, 40.0}
        assert closed_form_transit(config, True, mud_gain=patch.arm.value) < config.t_max
        assert patch.atr_eval == pytest.approx(100.0)


def test_oracle_separates_arms(config):
    for value in (1.25, 2.5, 5.0):
        assert closed_form_transit(config, True, mud_gain=value) > config.t_max
    for value in (10.0, 20.0, 40.0):
        assert closed_form_transit(config, True, mud_gain=value) < config.t_max


def test_repair_params_validation():
    for bad in [{"mutation_factors": ()}, {"mutation_factors": (0.0,)}, {"epsilon0": 0.01},
                {"epsilon_decay": 0.0}, {"search_episodes": -1}]:
        with pytest.raises(ValueError):
            RepairParams(**bad)
    with pytest.raises(ValueError):
        RepairParams.from_dict({"arms": 3})
    assert RepairParams(search_episodes=400).pull_floor(6) == pytest.approx(400 / 24)
    assert RepairParams(search_episodes=10).pull_floor(6) == 3


def test_search_log_csv():
    log = SearchLog([(1, 0, 100.0, 100.0), (2, 3, -100.0, 0.0)])
    assert log.to_csv() == "episode,arm,reward,atr\n1,0,100.0,100.0\n2,3,-100.0,0.0\n"


def test_mutants_go_through_the_pipeline(arms, config):
    for arm in arms:
        report = taint_analyze(arm.program, W.ODOMETRY, W.VELOCITY)
        table, stats = learn(instrument(arm.program, report), config,
                             LearnParams(episodes=20, block=10))
        assert stats.episodes == 20 and len(table.lines) == len(report.instrumented)


def test_swapped_program_mutates_its_own_culprit(config):
    arms = generate_mutants(parse_file(SWAPPED), 29, REGION, RepairParams(), config)
    assert arms[2].label == "5->10"
