"""Guarded constant mutation of the culprit line, searched with epsilon-greedy.

Each mutant multiplies one numeric literal of the culprit statement by a
factor and runs the mutated statement only while the localization region's
sensor predicate holds; elsewhere the original statement runs.  Arms are
compared by mean episode return, and the best arm that was pulled often
enough is re-run alone to confirm the average total reward it restores.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np

from tarl import world as W
from tarl.errors import InstrumentError, InsufficientDataError, NameCollisionError, NoConstantsError
from tarl.executor import EpisodeRunner, instrument
from tarl.faultloc import Region
from tarl.lang import (
    Assign, Attr, BoolOp, Call, Compare, ExprStmt, FuncDef, Global, If, LiteralRef, MultiAssign,
    Name, Num, Program, find_numeric_literals, find_statement, format_number, is_main_guard, parse,
    replace_literal, rewrite, unparse, unparse_expr, walk_statements,
)
from tarl.taintflow import find_sources

SEARCH_LOG_COLUMNS = ["episode", "arm", "reward", "atr"]

# fresh names for injected sensor plumbing, per topic: (global, callback, message path)
_PLUMBING = {
    W.TERRAIN: ("__tarl_terrain", "__tarl_cb", ()),
    W.ODOMETRY: ("__tarl_odometry", "__tarl_odometry_cb", ("pose", "pose", "position")),
}


@dataclass(frozen=True)
class RepairParams:
    mutation_factors: tuple[float, ...] = (0.25, 0.5, 2.0, 4.0, 8.0)
    epsilon0: float = 0.3
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.995
    search_episodes: int = 400
    eval_episodes: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mutation_factors", tuple(float(f) for f in self.mutation_factors))
        if not self.mutation_factors or any(f <= 0 for f in self.mutation_factors):
            raise ValueError("mutation_factors must be non-empty and positive")
        if not 0 <= self.epsilon_min <= self.epsilon0 <= 1:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ValueError("epsilon_decay must be in (0, 1]")
        if self.search_episodes < 0 or self.eval_episodes < 0:
            raise ValueError("episode counts must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "RepairParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown [repair] keys: {sorted(unknown)}")
        return cls(**data)

    def pull_floor(self, arms: int) -> float:
        return max(3.0, self.search_episodes / (4 * arms))


@dataclass(frozen=True)
class MutantArm:
    arm_id: int
    constant_ref: LiteralRef | None
    factor: float
    value: float | None
    guard: str
    program: Program = field(compare=False)

    @property
    def label(self) -> str:
        if self.constant_ref is None:
            return "identity"
        return f"{self.constant_ref.text}->{format_number(self.value)}"


# ---------------------------------------------------------------------------
# Sensor plumbing


def _subscribes(program: Program, topic: str) -> bool:
    return any(t == topic for t, _, _ in find_sources(program))


def _defined_names(program: Program) -> set[str]:
    names = set()
    for s in walk_statements(program.statements):
        if isinstance(s, FuncDef):
            names.add(s.name)
            names.update(s.params)
        elif isinstance(s, Global):
            names.update(s.names)
        elif isinstance(s, Assign) and isinstance(s.target, Name):
            names.add(s.target.id)
        elif isinstance(s, MultiAssign):
            names.update(t.id for t in s.targets if isinstance(t, Name))
    return names


def sensor_variable(program: Program, topic: str) -> str | None:
    """Global variable a subscriber callback for ``topic`` stores its reading in."""
    funcs = program.functions()
    for t, cb_name, param in find_sources(program):
        cb = funcs.get(cb_name)
        if t != topic or cb is None or param is None:
            continue
        declared = {n for s in cb.body if isinstance(s, Global) for n in s.names}
        for s in cb.body:
            if isinstance(s, Assign) and isinstance(s.target, Name) and s.target.id in declared:
                root = s.value.id if isinstance(s.value, Name) else \
                    s.value.root if isinstance(s.value, Attr) else None
                if root == param:
                    return s.target.id
    return None


def inject_sensor_binding(program: Program, topic: str = W.TERRAIN) -> Program:
    """Make ``topic`` readable through a global, subscribing if needed."""
    if _subscribes(program, topic):
        return program
    var, cb, path = _PLUMBING.get(topic, (f"__tarl_{topic.lower()}", f"__tarl_{topic.lower()}_cb", ()))
    clash = {var, cb} & _defined_names(program)
    if clash:
        raise NameCollisionError(f"program already defines {sorted(clash)}")
    entry = program.entry
    if entry is None:
        raise InstrumentError("program has no main guard to register the sensor in")
    value = Attr(("msg",) + path) if path else Name("msg")
    callback = FuncDef(cb, ("msg",), (Global((var,)), Assign(Name(var), value)))
    subscribe = ExprStmt(Call(Attr(("rospy", "Subscriber")), (Name(topic), Name(cb))))

    # register next to the program's first subscriber, else first thing in the entry block
    placed = []

    def place(s):
        if not placed and isinstance(s, ExprStmt) and isinstance(s.expr, Call) \
                and isinstance(s.expr.func, Attr) and s.expr.func.dotted == "rospy.Subscriber":
            placed.append(s)
            return [s, subscribe]
        return s

    statements = []
    for s in rewrite(program, place).statements:
        if is_main_guard(s):
            statements += [Assign(Name(var), Num("0", 0.0)), callback]
            if not placed:
                s = If(s.test, (subscribe,) + s.body, s.orelse)
        statements.append(s)
    return Program(tuple(statements), program.ignored_lines)


# ---------------------------------------------------------------------------
# Mutants


def guard_expr(region: Region, terrain_var: str, odometry_var: str, config: W.EnvConfig):
    lo, hi = config.bin_bounds(region.p_lo, region.p_hi)
    num = lambda x: Num(format_number(x), float(x))
    terrain = Compare("==", Name(terrain_var), num(region.terrain))
    lower = Compare(">=", Name(odometry_var), num(lo))
    upper = Compare("<", Name(odometry_var), num(hi))
    return BoolOp("and", BoolOp("and", terrain, lower), upper)


def _replace_line(program: Program, line: int, make):
    return rewrite(program, lambda s: make(s) if s.line == line else s)


def generate_mutants(program: Program, culprit_line: int, region: Region,
                     params: RepairParams, config: W.EnvConfig) -> list[MutantArm]:
    stmt = find_statement(program, culprit_line)
    if stmt is None:
        raise InstrumentError(f"no statement at line {culprit_line}")
    literals = find_numeric_literals(stmt)
    if not literals:
        raise NoConstantsError(f"line {culprit_line} has no numeric constants")

    plumbed = inject_sensor_binding(program, W.TERRAIN)
    terrain_var = sensor_variable(plumbed, W.TERRAIN)
    odometry_var = sensor_variable(plumbed, W.ODOMETRY)
    if odometry_var is None:
        plumbed = inject_sensor_binding(plumbed, W.ODOMETRY) if not _subscribes(plumbed, W.ODOMETRY) \
            else plumbed
        odometry_var = sensor_variable(plumbed, W.ODOMETRY)
    if terrain_var is None or odometry_var is None:
        raise InstrumentError("cannot read terrain and odometry from the program")
    guard = guard_expr(region, terrain_var, odometry_var, config)
    guard_text = unparse_expr(guard)

    def reparse(p: Program) -> Program:
        # renumber lines so the patched program reads like its own source
        return parse(unparse(p))

    arms = []
    for ref, value in literals:
        for factor in params.mutation_factors:
            new_value = value * factor
            mutated = replace_literal(stmt, ref, new_value)
            prog = _replace_line(plumbed, culprit_line,
                                 lambda s, m=mutated: If(guard, (m,), (s,)))
            arms.append(MutantArm(len(arms), ref, factor, new_value, guard_text, reparse(prog)))
    # identity arm: both branches would be equal, so the guard simplifies away
    arms.append(MutantArm(len(arms), None, 1.0, None, "", reparse(plumbed)))
    return arms


# ---------------------------------------------------------------------------
# Search


def atr(rewards) -> list[float]:
    """Running average total reward: element E is the mean of the first E rewards."""
    out, total = [], 0.0
    for e, r in enumerate(rewards, start=1):
        total += r
        out.append(total / e)
    return out


@dataclass
class SearchLog:
    records: list[tuple[int, int, float, float]] = field(default_factory=list)
    pulls: list[int] = field(default_factory=list)
    means: list[float] = field(default_factory=list)
    selected: int | None = None

    @property
    def rewards(self) -> list[float]:
        return [r[2] for r in self.records]

    @property
    def final_atr(self) -> float:
        return self.records[-1][3] if self.records else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SEARCH_LOG_COLUMNS)
        for t, arm, reward, running in self.records:
            w.writerow([t, arm, repr(float(reward)), repr(float(running))])
        return buf.getvalue()


def _greedy(means: list[float]) -> int:
    best = 0
    for i, m in enumerate(means):
        if m > means[best]:
            best = i
    return best


def _runners(arms, config):
    return [EpisodeRunner(instrument(a.program, None), config) for a in arms]


def epsilon_greedy_search(arms: list[MutantArm], config: W.EnvConfig, params: RepairParams,
                          runners=None) -> SearchLog:
    if not arms:
        raise ValueError("need at least one arm")
    runners = runners or _runners(arms, config)
    policy = np.random.default_rng([params.seed, 0])
    env = np.random.default_rng([params.seed, 1])
    log = SearchLog(pulls=[0] * len(arms), means=[0.0] * len(arms))
    eps, total = params.epsilon0, 0.0
    for t in range(1, params.search_episodes + 1):
        if policy.random() < eps:
            k = int(policy.integers(len(arms)))
        else:
            k = _greedy(log.means)
        try:
            reward = runners[k].run(env).episode_return
        except Exception as exc:
            exc.args = (f"arm {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        log.pulls[k] += 1
        log.means[k] += (reward - log.means[k]) / log.pulls[k]
        total += reward
        log.records.append((t, k, reward, total / t))
        eps = max(eps * params.epsilon_decay, params.epsilon_min)
    floor = params.pull_floor(len(arms))
    eligible = [i for i in range(len(arms)) if log.pulls[i] >= floor]
    if eligible:
        log.selected = max(eligible, key=lambda i: (log.means[i], -i))
    return log


@dataclass
class FinalPatch:
    arm: MutantArm
    source: str
    rewards: list[float]
    atr_series: list[float]

    @property
    def atr_eval(self) -> float:
        return self.atr_series[-1] if self.atr_series else 0.0

    def summary(self, log: SearchLog) -> dict:
        return {
            "selected_arm": self.arm.arm_id,
            "label": self.arm.label,
            "factor": self.arm.factor,
            "value": self.arm.value,
            "guard": self.arm.guard,
            "search_atr": log.final_atr,
            "eval_atr": self.atr_eval,
            "pulls": list(log.pulls),
            "means": list(log.means),
        }


def evaluate(program: Program, config: W.EnvConfig, episodes: int, seed) -> list[float]:
    runner = EpisodeRunner(instrument(program, None), config)
    rng = np.random.default_rng(seed)
    return [runner.run(rng).episode_return for _ in range(episodes)]


def select_and_validate(log: SearchLog, arms: list[MutantArm], config: W.EnvConfig,
                        params: RepairParams) -> FinalPatch:
    if log.selected is None:
        raise InsufficientDataError(
            f"no arm reached {params.pull_floor(len(arms)):g} pulls in {params.search_episodes} episodes"
        )
    arm = arms[log.selected]
    rewards = evaluate(arm.program, config, params.eval_episodes, [params.seed, 2])
    return FinalPatch(arm, unparse(arm.program).text, rewards, atr(rewards))

