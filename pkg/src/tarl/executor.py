"""Tree-walking interpreter for MiniBot bound to the simulated world.

Statements on the instrumented lines emit a :class:`HookEvent` each time they
execute.  The flow value carried by an event is what the statement computed:
the assigned value for assignments (first target for multi-assignment), the
truth of the condition for ``while``/``if``, the published value for a
``publish`` and 0 for any other call statement.

Simple statements emit their event after evaluating their operands and
before any side effect (a ``publish`` steps the world only after its event),
so the publish that ends an episode is always the final event of the trace.
Events fired before the monitored leg starts (setup code and the leg to the
start goal) are not part of the trace.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from tarl import world as W
from tarl.errors import DivergenceFault, InstrumentError, NoVerdict, RuntimeFault
from tarl.lang import (
    Assign, Attr, BinOp, Bool, BoolOp, Call, Compare, ExprStmt, FuncDef, Global,
    If, MultiAssign, Name, Num, Pass, Program, Str, TryExcept, Unary, While,
    stmt_text, walk_statements,
)
from tarl.taintflow import TaintReport

MAX_STATEMENTS = 2_000_000


class HookEvent(NamedTuple):
    line: int
    stmt_index: int
    m: int
    p: int
    v: float


@dataclass
class EpisodeTrace:
    events: list[HookEvent]
    verdict: W.MonitorVerdict
    publish_count: int
    step_rewards: list[float]

    @property
    def episode_return(self) -> float:
        return sum(self.step_rewards) + self.verdict.reward_total

    def rewards(self) -> list[float]:
        """Per-event rewards with the monitor's reward on the final event."""
        r = list(self.step_rewards)
        if r:
            r[-1] += self.verdict.reward_total
        return r

    def to_jsonl(self) -> str:
        lines = [json.dumps({"line": e.line, "stmt_index": e.stmt_index, "m": e.m, "p": e.p, "v": e.v})
                 for e in self.events]
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class InstrumentedProgram:
    program: Program
    report: TaintReport | None
    hooks: dict[int, int] = field(hash=False)  # line -> position in the instrumented sequence

    @property
    def lines(self) -> list[int]:
        return sorted(self.hooks, key=self.hooks.get)


def _is_subscriber_stmt(stmt) -> bool:
    return (isinstance(stmt, ExprStmt) and isinstance(stmt.expr, Call)
            and isinstance(stmt.expr.func, Attr) and stmt.expr.func.dotted == "rospy.Subscriber")


def instrument(program: Program, report: TaintReport | None) -> InstrumentedProgram:
    if report is None:
        return InstrumentedProgram(program, None, {})
    by_line = {s.line: s for s in walk_statements(program.statements)}
    hooks = {}
    for idx, entry in enumerate(report.instrumented):
        stmt = by_line.get(entry.line)
        if stmt is None:
            raise InstrumentError(f"line {entry.line} ({entry.text!r}) is not a statement")
        if entry == report.source_binding:
            if not _is_subscriber_stmt(stmt):
                raise InstrumentError(f"line {entry.line} is not a subscriber registration")
        elif stmt_text(stmt) != entry.text:
            raise InstrumentError(
                f"line {entry.line} reads {stmt_text(stmt)!r}, report expects {entry.text!r}"
            )
        hooks[entry.line] = idx
    return InstrumentedProgram(program, report, hooks)


# ---------------------------------------------------------------------------
# Runtime objects


class _EpisodeEnd(Exception):
    def __init__(self, verdict: W.MonitorVerdict | None):
        self.verdict = verdict


class ROSInterruptException(Exception):
    pass


@dataclass
class Publisher:
    topic: str
    runtime: "Runtime"

    def publish(self, value) -> None:
        self.runtime.publish(self.topic, value)


class _Rospy:
    ROSInterruptException = ROSInterruptException

    def __init__(self, runtime: "Runtime"):
        self._rt = runtime

    def init_node(self, *args, **kwargs):
        return None

    def Subscriber(self, topic, callback, *rest):
        self._rt.subscribe(topic, callback)

    def Publisher(self, topic, *rest, **kwargs):
        return Publisher(topic, self._rt)


@dataclass
class _Function:
    node: FuncDef


class _Frame:
    __slots__ = ("locals", "globals_decl", "func")

    def __init__(self, func: FuncDef | None):
        self.locals: dict = {}
        self.globals_decl: set = set()
        self.func = func


def _flow(value) -> float:
    if isinstance(value, bool):
        return 1.0 if value else 0.0
    if isinstance(value, (int, float)):
        v = float(value)
        return v if math.isfinite(v) else 0.0
    return 0.0


def _num(value, line: int):
    if isinstance(value, (int, float)):
        return value
    raise RuntimeFault(f"non-numeric operand {value!r}", line)


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
}
_CMP = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


class Runtime:
    """One episode's execution state: interpreter frames plus the world."""

    def __init__(self, iprog: InstrumentedProgram, config: W.EnvConfig, goal: float,
                 state: W.WorldState):
        self.iprog = iprog
        self.config = config
        self.goal = goal
        self.world = W.ShuttleWorld(config, state)
        self.globals: dict = {}
        self.builtins = {
            "__name__": "__main__",
            "G1": config.g1,
            "G2": config.g2,
            "Epsilon": config.epsilon_spec,
            W.ODOMETRY: W.ODOMETRY,
            W.VELOCITY: W.VELOCITY,
            W.TERRAIN: W.TERRAIN,
            "Twist": "Twist",
            "rospy": _Rospy(self),
            "abs": abs,
            "min": min,
            "max": max,
        }
        self.events: list[HookEvent] = []
        self.step_rewards: list[float] = []
        self.recording = True
        self.monitoring = False
        self.leg_start = 0.0
        self.publish_count = 0  # all publishes, for the divergence guard
        self.leg_publishes = 0
        self.statements = 0
        self.frames: list[_Frame] = [_Frame(None)]
        self.max_publishes = int(10 * config.t_max / config.dt)

    # -- bus ---------------------------------------------------------------

    def subscribe(self, topic, callback) -> None:
        if not isinstance(callback, _Function):
            raise RuntimeFault(f"Subscriber callback is not a function: {callback!r}")
        self.world.subscribe(topic, lambda msg: self.call(callback, [msg], line=callback.node.line))

    def publish(self, topic, value) -> None:
        self.publish_count += 1
        if self.publish_count > self.max_publishes:
            raise DivergenceFault(f"{self.publish_count} publishes without a verdict")
        if self.monitoring:
            self.leg_publishes += 1
        if topic == W.VELOCITY:
            self.world.command(float(_num(value, 0)))
            if self.monitoring:
                elapsed = replace(self.world.state, sim_time=self.world.state.sim_time - self.leg_start)
                verdict = W.judge(elapsed, self.goal, self.config)
                if verdict is not None:
                    raise _EpisodeEnd(verdict)
        self.world.deliver_sensors()

    # -- hooks -------------------------------------------------------------

    def hook(self, line: int, value) -> None:
        idx = self.iprog.hooks.get(line)
        if idx is None or not self.recording:
            return
        st = self.world.state
        self.events.append(HookEvent(line, idx, 1 if st.terrain else 0,
                                     W.odometry_bin(st.position, self.config), _flow(value)))
        self.step_rewards.append(0.0)

    # -- names -------------------------------------------------------------

    def lookup(self, name: str, line: int):
        frame = self.frames[-1]
        if frame.func is not None and name not in frame.globals_decl and name in frame.locals:
            return frame.locals[name]
        if name in self.globals:
            return self.globals[name]
        if name in self.builtins:
            return self.builtins[name]
        raise RuntimeFault(f"undefined variable {name!r}", line)

    def store(self, target, value, line: int) -> None:
        frame = self.frames[-1]
        if isinstance(target, Name):
            if frame.func is None or target.id in frame.globals_decl:
                self.globals[target.id] = value
            else:
                frame.locals[target.id] = value
            return
        obj = self.lookup(target.parts[0], line)
        for part in target.parts[1:-1]:
            obj = self._getattr(obj, part, line)
        try:
            setattr(obj, target.parts[-1], value)
        except AttributeError:
            raise RuntimeFault(f"cannot assign attribute {target.dotted}", line) from None

    @staticmethod
    def _getattr(obj, name: str, line: int):
        if name.startswith("_"):
            raise RuntimeFault(f"attribute {name!r} not accessible", line)
        try:
            return getattr(obj, name)
        except AttributeError:
            raise RuntimeFault(f"no attribute {name!r} on {type(obj).__name__}", line) from None

    # -- expressions ---------------------------------------------------------

    def eval(self, e):
        t = type(e)
        if t is Num:
            return e.value
        if t is Name:
            return self.lookup(e.id, e.line)
        if t is BinOp:
            a = _num(self.eval(e.left), e.line)
            b = _num(self.eval(e.right), e.line)
            if e.op == "/":
                if b == 0:
                    raise RuntimeFault("division by zero", e.line)
                return a / b
            return _ARITH[e.op](a, b)
        if t is Attr:
            obj = self.lookup(e.parts[0], e.line)
            for part in e.parts[1:]:
                obj = self._getattr(obj, part, e.line)
            return obj
        if t is Compare:
            a, b = self.eval(e.left), self.eval(e.right)
            if e.op == "==":
                return a == b
            if e.op == "!=":
                return a != b
            return _CMP[e.op](_num(a, e.line), _num(b, e.line))
        if t is BoolOp:
            left = self.eval(e.left)
            if e.op == "and":
                return self.eval(e.right) if left else left
            return left if left else self.eval(e.right)
        if t is Unary:
            v = self.eval(e.operand)
            return (not v) if e.op == "not" else -_num(v, e.line)
        if t is Bool:
            return e.value
        if t is Str:
            return e.value
        if t is Call:
            func, args, kwargs = self.eval_call_parts(e)
            return self.invoke(func, args, kwargs, e.line)
        raise RuntimeFault(f"cannot evaluate {type(e).__name__}", getattr(e, "line", None))

    def eval_call_parts(self, e: Call):
        func = self.eval(e.func)
        args = [self.eval(a) for a in e.args]
        kwargs = {k: self.eval(v) for k, v in e.keywords}
        return func, args, kwargs

    def invoke(self, func, args, kwargs, line: int):
        if isinstance(func, _Function):
            if kwargs:
                raise RuntimeFault("keyword arguments to user functions are not supported", line)
            return self.call(func, args, line)
        if callable(func):
            try:
                return func(*args, **kwargs)
            except (RuntimeFault, _EpisodeEnd):
                raise
            except TypeError as exc:
                raise RuntimeFault(str(exc), line) from None
        raise RuntimeFault(f"{func!r} is not callable", line)

    def call(self, func: _Function, args: list, line: int):
        node = func.node
        if len(args) != len(node.params):
            raise RuntimeFault(f"{node.name}() takes {len(node.params)} arguments, got {len(args)}", line)
        frame = _Frame(node)
        frame.locals.update(zip(node.params, args))
        if len(self.frames) > 200:
            raise RuntimeFault("call depth exceeded", line)
        self.frames.append(frame)
        try:
            self.exec_block(node.body)
        finally:
            self.frames.pop()
        return None

    # -- statements ----------------------------------------------------------

    def exec_block(self, stmts) -> None:
        for s in stmts:
            self.exec(s)

    def exec(self, s) -> None:
        self.statements += 1
        if self.statements > MAX_STATEMENTS:
            raise DivergenceFault("statement budget exhausted", s.line)
        t = type(s)
        if t is Assign:
            value = self.eval(s.value)
            self.store(s.target, value, s.line)
            self.hook(s.line, value)
        elif t is ExprStmt:
            self.exec_expr_stmt(s)
        elif t is While:
            while True:
                cond = self.eval(s.test)
                self.hook(s.line, bool(cond))
                if not cond:
                    break
                self.exec_block(s.body)
        elif t is If:
            cond = self.eval(s.test)
            self.hook(s.line, bool(cond))
            if cond:
                self.exec_block(s.body)
            else:
                self.exec_block(s.orelse)
        elif t is MultiAssign:
            values = [self.eval(v) for v in s.values]
            for target, value in zip(s.targets, values):
                self.store(target, value, s.line)
            self.hook(s.line, values[0])
        elif t is Global:
            frame = self.frames[-1]
            if frame.func is not None:
                frame.globals_decl.update(s.names)
        elif t is FuncDef:
            self.store(Name(s.name), _Function(s), s.line)
        elif t is TryExcept:
            try:
                self.exec_block(s.body)
            except ROSInterruptException:
                self.exec_block(s.handler)
        elif t is Pass:
            pass
        else:
            raise RuntimeFault(f"unsupported statement {t.__name__}", s.line)

    def exec_expr_stmt(self, s: ExprStmt) -> None:
        e = s.expr
        if type(e) is not Call:
            self.hook(s.line, self.eval(e))
            return
        func, args, kwargs = self.eval_call_parts(e)
        is_pub = isinstance(getattr(func, "__self__", None), Publisher)
        self.hook(s.line, args[0] if is_pub and args else 0.0)
        if is_pub:
            self.step_penalty_on_last()
        top_level_call = isinstance(func, _Function) and len(self.frames) == 1 and not self.monitoring
        if not top_level_call:
            self.invoke(func, args, kwargs, s.line)
            return
        if any(isinstance(a, (int, float)) and not isinstance(a, bool) and a == self.goal for a in args):
            self.monitoring = True
            self.recording = True
            # the trace covers the monitored leg only
            self.events.clear()
            self.step_rewards.clear()
            self.leg_start = self.world.state.sim_time
            self.invoke(func, args, kwargs, s.line)
            raise _EpisodeEnd(None)
        # an unmonitored leg (e.g. driving to the start goal): run it silently
        was = self.recording
        self.recording = False
        try:
            self.invoke(func, args, kwargs, s.line)
        finally:
            self.recording = was

    def step_penalty_on_last(self) -> None:
        if self.monitoring and self.recording and self.config.step_penalty and self.step_rewards:
            self.step_rewards[-1] += self.config.step_penalty

    def run(self) -> EpisodeTrace:
        try:
            self.exec_block(self.iprog.program.statements)
            verdict = None
        except _EpisodeEnd as end:
            verdict = end.verdict
        except RecursionError:
            raise RuntimeFault("recursion too deep") from None
        if verdict is None:
            raise NoVerdict(f"episode ended without a monitor verdict for goal {self.goal}")
        return EpisodeTrace(self.events, verdict, self.leg_publishes, self.step_rewards)


def run_from_state(iprog: InstrumentedProgram, config: W.EnvConfig, goal: float,
                   state: W.WorldState) -> EpisodeTrace:
    return Runtime(iprog, config, goal, state).run()


def run_episode(iprog: InstrumentedProgram, config: W.EnvConfig, goal: float | None = None,
                seed: int | np.random.Generator = 0) -> EpisodeTrace:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    goal = config.g2 if goal is None else goal
    return run_from_state(iprog, config, goal, W.reset(config, rng))


class EpisodeRunner:
    """Runs episodes of one program, memoizing on the drawn world realization.

    An episode is a pure function of the program, the configuration and the
    reset state, and the reset state is determined by whether the mud patch
    is active.  Repeated realizations therefore reuse the stored trace.
    """

    def __init__(self, iprog: InstrumentedProgram, config: W.EnvConfig, goal: float | None = None):
        self.iprog = iprog
        self.config = config
        self.goal = config.g2 if goal is None else goal
        self._cache: dict = {}

    def run(self, rng: np.random.Generator) -> EpisodeTrace:
        state = W.reset(self.config, rng)
        trace = self._cache.get(state)
        if trace is None:
            trace = run_from_state(self.iprog, self.config, self.goal, state)
            self._cache[state] = trace
        return trace

