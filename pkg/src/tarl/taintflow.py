"""Static taint analysis from a subscribed sensor topic to an actuator publish.

The analysis works on an inlined control-flow graph: each call to a user
function gets its own copy of the callee body, and every subscriber callback
is inlined both at its registration site and after every ``publish`` (the bus
re-delivers sensor data after each actuator command).  Node creation follows
lexical order along call edges, so node ids double as a static
first-execution order.

Two artifacts come out of :func:`taint_analyze`:

* ``chain`` - the display taint list: entry guard, source binding, the
  top-level loop driving the sink, the def-use chain into the sink argument,
  and the sink itself;
* ``instrumented`` - ``chain`` plus every other statement that defines or
  tests a tainted value on a source-to-sink path.  Hooks go on this set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from tarl.errors import AnalysisError, NoFlowError
from tarl.lang import (
    Assign, Attr, BinOp, BoolOp, Call, Compare, ExprStmt, FuncDef, Global, If,
    MultiAssign, Name, Program, Str, TryExcept, Unary, While, is_main_guard,
    stmt_text, walk_expr, walk_statements,
)

INTRINSIC_FUNCS = {"abs", "min", "max"}
ROSPY_CALLS = {"rospy.init_node", "rospy.Subscriber", "rospy.Publisher"}

VarKey = tuple  # (context, name); context () means global


def topic_name(expr) -> str | None:
    if isinstance(expr, Name):
        return expr.id
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Attr):
        return expr.dotted
    return None


def _calls(expr):
    return [e for e in walk_expr(expr) if isinstance(e, Call)]


def _stmt_calls(stmt) -> list[Call]:
    if isinstance(stmt, Assign):
        return _calls(stmt.value)
    if isinstance(stmt, MultiAssign):
        return [c for v in stmt.values for c in _calls(v)]
    if isinstance(stmt, (While, If)):
        return _calls(stmt.test)
    if isinstance(stmt, ExprStmt):
        return _calls(stmt.expr)
    return []


def _callee_name(call: Call) -> str:
    return call.func.id if isinstance(call.func, Name) else call.func.dotted


def is_publish(call: Call) -> bool:
    return isinstance(call.func, Attr) and call.func.parts[-1] == "publish"


def _read_names(expr) -> list[str]:
    """Variable roots read by an expression.

    Called function names are not reads; a publish handle (``vout`` in
    ``vout.publish(v)``) is.
    """
    if isinstance(expr, Name):
        return [expr.id]
    if isinstance(expr, Attr):
        return [expr.root]
    if isinstance(expr, Call):
        names = [expr.func.root] if is_publish(expr) else []
        for a in list(expr.args) + [v for _, v in expr.keywords]:
            names += _read_names(a)
        return names
    if isinstance(expr, (BinOp, Compare, BoolOp)):
        return _read_names(expr.left) + _read_names(expr.right)
    if isinstance(expr, Unary):
        return _read_names(expr.operand)
    return []


# ---------------------------------------------------------------------------
# Flow graph


@dataclass
class FlowNode:
    id: int
    kind: str  # "stmt" | "bind"
    stmt: object | None
    context: tuple
    defs: frozenset = frozenset()
    uses: frozenset = frozenset()
    # bind nodes: param key -> var keys read by the argument in the caller
    binds: dict = field(default_factory=dict)
    source_topic: str | None = None  # set on callback parameter bindings
    line: int = 0


@dataclass
class FlowGraph:
    nodes: list[FlowNode]
    edges: dict[int, list[int]]
    entry: int | None = None

    def successors(self, nid: int) -> list[int]:
        return self.edges.get(nid, [])

    def predecessors(self) -> dict[int, list[int]]:
        preds: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, succ in self.edges.items():
            for b in succ:
                preds[b].append(a)
        return preds

    def nodes_for_line(self, line: int) -> list[FlowNode]:
        return [n for n in self.nodes if n.line == line and n.kind == "stmt"]


class _Scope:
    """Name resolution for one function body (Python rules, simplified)."""

    def __init__(self, func: FuncDef | None, context: tuple):
        self.context = context
        self.globals: set[str] = set()
        self.locals: set[str] = set()
        if func is not None:
            self.locals.update(func.params)
            for s in walk_statements(func.body):
                if isinstance(s, Global):
                    self.globals.update(s.names)
                elif isinstance(s, Assign):
                    self.locals.add(_target_root(s.target))
                elif isinstance(s, MultiAssign):
                    self.locals.update(_target_root(t) for t in s.targets)
            self.locals -= self.globals

    def key(self, name: str) -> VarKey:
        if self.context and name in self.locals:
            return (self.context, name)
        return ((), name)


def _target_root(t) -> str:
    return t.id if isinstance(t, Name) else t.root


class _Builder:
    def __init__(self, program: Program):
        self.program = program
        self.funcs = program.functions()
        self.nodes: list[FlowNode] = []
        self.edges: dict[int, list[int]] = {}
        self.subscriptions = self._collect_subscriptions()
        self.inlined: set[str] = set()

    def _collect_subscriptions(self) -> list[tuple[str, str, int]]:
        subs = []
        for s in walk_statements(self.program.statements):
            for c in _stmt_calls(s):
                if _callee_name(c) == "rospy.Subscriber":
                    if len(c.args) < 2 or not isinstance(c.args[1], Name):
                        raise AnalysisError(f"line {s.line}: Subscriber needs (topic, callback)")
                    cb = c.args[1].id
                    if cb not in self.funcs:
                        raise AnalysisError(f"line {s.line}: undefined callback {cb!r}")
                    subs.append((topic_name(c.args[0]), cb, s.line))
        return subs

    def new_node(self, **kw) -> FlowNode:
        node = FlowNode(id=len(self.nodes), **kw)
        self.nodes.append(node)
        return node

    def link(self, preds: list[int], nid: int) -> None:
        for p in preds:
            succ = self.edges.setdefault(p, [])
            if nid not in succ:
                succ.append(nid)

    def block(self, stmts, scope: _Scope, preds: list[int]) -> list[int]:
        for s in stmts:
            preds = self.statement(s, scope, preds)
        return preds

    def statement(self, s, scope: _Scope, preds: list[int]) -> list[int]:
        defs, uses = self._defs_uses(s, scope)
        node = self.new_node(kind="stmt", stmt=s, context=scope.context, defs=defs, uses=uses,
                             line=s.line)
        self.link(preds, node.id)
        out = [node.id]
        if isinstance(s, While):
            out = self._calls_after(s, scope, out)
            body_exits = self.block(s.body, scope, out)
            self.link(body_exits, node.id)
            return out
        if isinstance(s, If):
            out = self._calls_after(s, scope, out)
            exits = self.block(s.body, scope, out)
            if s.orelse:
                exits = exits + self.block(s.orelse, scope, out)
            else:
                exits = exits + out
            return exits
        if isinstance(s, TryExcept):
            body_exits = self.block(s.body, scope, out)
            handler_exits = self.block(s.handler, scope, out + body_exits)
            return body_exits + handler_exits
        if isinstance(s, FuncDef):
            return out
        return self._calls_after(s, scope, out)

    def _defs_uses(self, s, scope: _Scope) -> tuple[frozenset, frozenset]:
        defs, uses = set(), set()
        if isinstance(s, Assign):
            defs.add(scope.key(_target_root(s.target)))
            uses.update(scope.key(n) for n in _read_names(s.value))
            if isinstance(s.target, Attr):
                uses.add(scope.key(s.target.root))
        elif isinstance(s, MultiAssign):
            defs.update(scope.key(_target_root(t)) for t in s.targets)
            for v in s.values:
                uses.update(scope.key(n) for n in _read_names(v))
        elif isinstance(s, (While, If)):
            uses.update(scope.key(n) for n in _read_names(s.test))
        elif isinstance(s, ExprStmt):
            uses.update(scope.key(n) for n in _read_names(s.expr))
        return frozenset(defs), frozenset(uses)

    def _calls_after(self, s, scope: _Scope, preds: list[int]) -> list[int]:
        for call in _stmt_calls(s):
            name = _callee_name(call)
            if name in self.funcs and isinstance(call.func, Name):
                preds = self.inline(self.funcs[name], call, scope, preds, s.line)
            elif name == "rospy.Subscriber":
                cb = call.args[1].id
                topic = topic_name(call.args[0])
                preds = self.deliver(cb, topic, scope, preds, s.line)
            elif is_publish(call):
                for topic, cb, _ in self.subscriptions:
                    preds = self.deliver(cb, topic, scope, preds, s.line)
            elif name in INTRINSIC_FUNCS or name in ROSPY_CALLS:
                continue
            else:
                raise AnalysisError(f"line {s.line}: call to undefined function {name!r}")
        return preds

    def _enter(self, func: FuncDef, scope: _Scope, site: int) -> _Scope:
        if any(f == func.name for _, f in scope.context):
            raise AnalysisError(f"line {site}: recursive call to {func.name!r} is not supported")
        self.inlined.add(func.name)
        return _Scope(func, scope.context + ((site, func.name),))

    def inline(self, func: FuncDef, call: Call, scope: _Scope, preds, site: int) -> list[int]:
        if len(call.args) != len(func.params):
            raise AnalysisError(
                f"line {site}: {func.name} takes {len(func.params)} arguments, got {len(call.args)}"
            )
        inner = self._enter(func, scope, site)
        binds = {}
        for param, arg in zip(func.params, call.args):
            binds[inner.key(param)] = frozenset(scope.key(n) for n in _read_names(arg))
        node = self.new_node(kind="bind", stmt=None, context=inner.context,
                             defs=frozenset(binds), uses=frozenset().union(*binds.values()),
                             binds=binds, line=site)
        self.link(preds, node.id)
        return self.block(func.body, inner, [node.id])

    def deliver(self, cb_name: str, topic: str, scope: _Scope, preds, site: int) -> list[int]:
        func = self.funcs[cb_name]
        if len(func.params) != 1:
            raise AnalysisError(f"callback {cb_name!r} must take exactly one parameter")
        # callbacks run in their own frame, not nested in the publisher's locals
        inner = self._enter(func, _Scope(None, scope.context), site)
        key = inner.key(func.params[0])
        node = self.new_node(kind="bind", stmt=None, context=inner.context, defs=frozenset([key]),
                             binds={key: frozenset()}, source_topic=topic, line=site)
        self.link(preds, node.id)
        return self.block(func.body, inner, [node.id])


def build_flow_graph(program: Program) -> FlowGraph:
    b = _Builder(program)
    top = _Scope(None, ())
    exits = b.block(program.statements, top, [])
    entry = 0 if b.nodes else None
    # bodies never reached through a call still get nodes (disconnected)
    for name, func in b.funcs.items():
        if name not in b.inlined:
            scope = _Scope(func, ((func.line, name),))
            b.block(func.body, scope, [])
    del exits
    return FlowGraph(b.nodes, b.edges, entry)


# ---------------------------------------------------------------------------
# Sources and sinks


def find_sources(program: Program) -> list[tuple[str, str, str]]:
    funcs = program.functions()
    out = []
    for s in walk_statements(program.statements):
        for c in _stmt_calls(s):
            if _callee_name(c) == "rospy.Subscriber" and len(c.args) >= 2 \
                    and isinstance(c.args[1], Name):
                cb = funcs.get(c.args[1].id)
                param = cb.params[0] if cb is not None and cb.params else None
                out.append((topic_name(c.args[0]), c.args[1].id, param))
    return out


def _enclosing_functions(program: Program) -> dict[int, FuncDef | None]:
    owner: dict[int, FuncDef | None] = {}

    def visit(stmts, func):
        for s in stmts:
            owner[id(s)] = func
            inner = s if isinstance(s, FuncDef) else func
            for block in (getattr(s, "body", ()), getattr(s, "orelse", ()), getattr(s, "handler", ())):
                visit(block, inner)

    visit(program.statements, None)
    return owner


def publisher_handles(program: Program) -> dict[tuple[str | None, str], str]:
    """Map (function or None, variable) to the Publisher topic it holds."""
    owner = _enclosing_functions(program)
    funcs = program.functions()
    handles: dict[tuple[str | None, str], str] = {}

    def resolve(func: FuncDef | None, name: str) -> str | None:
        if func is not None and name in func.params:
            return handles.get((func.name, name))
        return handles.get((None, name))

    for s in walk_statements(program.statements):
        if isinstance(s, Assign) and isinstance(s.value, Call) \
                and _callee_name(s.value) == "rospy.Publisher" and isinstance(s.target, Name):
            func = owner[id(s)]
            scope = None
            if func is not None and s.target.id in func.params:
                scope = func.name
            handles[(scope, s.target.id)] = topic_name(s.value.args[0])
    changed = True
    while changed:
        changed = False
        for s in walk_statements(program.statements):
            for c in _stmt_calls(s):
                if not isinstance(c.func, Name) or c.func.id not in funcs:
                    continue
                callee = funcs[c.func.id]
                for param, arg in zip(callee.params, c.args):
                    if isinstance(arg, Name):
                        topic = resolve(owner[id(s)], arg.id)
                        if topic is not None and handles.get((callee.name, param)) != topic:
                            handles[(callee.name, param)] = topic
                            changed = True
    return handles


def find_sinks(program: Program) -> list[tuple[str, object]]:
    owner = _enclosing_functions(program)
    handles = publisher_handles(program)
    out = []
    for s in walk_statements(program.statements):
        if not isinstance(s, ExprStmt):
            continue
        for c in _calls(s.expr):
            if is_publish(c) and len(c.func.parts) == 2:
                func = owner[id(s)]
                name = c.func.parts[0]
                topic = None
                if func is not None and name in func.params:
                    topic = handles.get((func.name, name))
                else:
                    topic = handles.get((None, name))
                if topic is not None:
                    out.append((topic, s))
    return out


# ---------------------------------------------------------------------------
# Dataflow


def _fixpoint(graph: FlowGraph, init, transfer, join):
    preds = graph.predecessors()
    state_in = {n.id: init for n in graph.nodes}
    state_out = {n.id: init for n in graph.nodes}
    work = [n.id for n in graph.nodes]
    queued = set(work)
    while work:
        work.sort(reverse=True)  # lowest id first keeps the walk in execution order
        nid = work.pop()
        queued.discard(nid)
        new_in = join([state_out[p] for p in preds[nid]]) if preds[nid] else init
        state_in[nid] = new_in
        new_out = transfer(graph.nodes[nid], new_in)
        if new_out != state_out[nid]:
            state_out[nid] = new_out
            for s in graph.successors(nid):
                if s not in queued:
                    work.append(s)
                    queued.add(s)
    return state_in, state_out


def _value_uses(node: FlowNode, scope_key) -> list[frozenset]:
    """Per-target read sets for an assignment node, in target order."""
    s = node.stmt
    if isinstance(s, Assign):
        return [frozenset(scope_key(n) for n in _read_names(s.value))]
    if isinstance(s, MultiAssign):
        return [frozenset(scope_key(n) for n in _read_names(v)) for v in s.values]
    return []


def _node_scope(program: Program, node: FlowNode) -> _Scope:
    if not node.context:
        return _Scope(None, ())
    fname = node.context[-1][1]
    return _Scope(program.functions()[fname], node.context)


def taint_states(program: Program, graph: FlowGraph, source_topic: str):
    scopes = {n.id: _node_scope(program, n) for n in graph.nodes}

    def transfer(node: FlowNode, tainted: frozenset) -> frozenset:
        if node.kind == "bind":
            out = set(tainted) - set(node.defs)
            for key, reads in node.binds.items():
                if node.source_topic is not None:
                    if node.source_topic == source_topic:
                        out.add(key)
                elif reads & tainted:
                    out.add(key)
            return frozenset(out)
        s = node.stmt
        if isinstance(s, (Assign, MultiAssign)):
            targets = [s.target] if isinstance(s, Assign) else list(s.targets)
            reads = _value_uses(node, scopes[node.id].key)
            out = set(tainted)
            for t, r in zip(targets, reads):
                key = scopes[node.id].key(_target_root(t))
                if r & tainted:
                    out.add(key)
                elif isinstance(t, Name):
                    out.discard(key)  # attribute stores are weak updates
            return frozenset(out)
        return tainted

    def join(states):
        return frozenset().union(*states)

    return _fixpoint(graph, frozenset(), transfer, join), scopes


def reaching_definitions(graph: FlowGraph):
    def transfer(node: FlowNode, reach: frozenset) -> frozenset:
        if not node.defs:
            return reach
        strong = set(node.defs)
        if node.kind == "stmt" and isinstance(node.stmt, Assign) and isinstance(node.stmt.target, Attr):
            strong = set()
        kept = {(var, nid) for var, nid in reach if var not in strong}
        return frozenset(kept | {(var, node.id) for var in node.defs})

    def join(states):
        return frozenset().union(*states)

    return _fixpoint(graph, frozenset(), transfer, join)


def _reachable(start: set[int], step) -> set[int]:
    seen = set(start)
    stack = list(start)
    while stack:
        n = stack.pop()
        for m in step(n):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class TaintEntry:
    text: str
    line: int


@dataclass
class TaintReport:
    source_topic: str
    sink_topic: str
    chain: list[TaintEntry]
    instrumented: list[TaintEntry]
    source_binding: TaintEntry

    def to_json(self) -> str:
        data = {
            "source_topic": self.source_topic,
            "sink_topic": self.sink_topic,
            "chain": [{"text": e.text, "line": e.line} for e in self.chain],
            "instrumented": [{"text": e.text, "line": e.line} for e in self.instrumented],
        }
        return json.dumps(data, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TaintReport":
        data = json.loads(text)
        chain = [TaintEntry(e["text"], int(e["line"])) for e in data["chain"]]
        instrumented = [TaintEntry(e["text"], int(e["line"])) for e in data["instrumented"]]
        binding = next((e for e in chain if "=" in e.text and e.text.endswith(data["source_topic"])),
                       chain[0] if chain else TaintEntry("", 0))
        return cls(data["source_topic"], data["sink_topic"], chain, instrumented, binding)

    @property
    def lines(self) -> list[int]:
        return [e.line for e in self.instrumented]

    def format_list(self) -> str:
        return "\n".join(f"({e.text!r}, {e.line})" for e in self.chain)


def taint_analyze(program: Program, source_topic: str, sink_topic: str) -> TaintReport:
    sources = [s for s in find_sources(program) if s[0] == source_topic]
    if not sources:
        raise NoFlowError(f"no subscriber for source topic {source_topic!r}")
    sinks = [stmt for topic, stmt in find_sinks(program) if topic == sink_topic]
    if not sinks:
        raise NoFlowError(f"no publish to sink topic {sink_topic!r}")
    if len(sinks) > 1:
        lines = ", ".join(str(s.line) for s in sinks)
        raise AnalysisError(f"multiple publishes to {sink_topic!r} (lines {lines})")
    sink_stmt = sinks[0]

    graph = build_flow_graph(program)
    (taint_in, _), scopes = taint_states(program, graph, source_topic)

    source_nodes = {n.id for n in graph.nodes if n.kind == "bind" and n.source_topic == source_topic}
    sink_nodes = {n.id for n in graph.nodes_for_line(sink_stmt.line)}
    preds = graph.predecessors()
    forward = _reachable(source_nodes, graph.successors)
    backward = _reachable(sink_nodes, lambda n: preds[n])
    on_path = forward & backward

    def sink_tainted(nid: int) -> bool:
        call = next(c for c in _calls(sink_stmt.expr) if is_publish(c))
        reads = {scopes[nid].key(n) for a in call.args for n in _read_names(a)}
        return bool(reads & taint_in[nid])

    live_sinks = [nid for nid in sink_nodes if nid in on_path and sink_tainted(nid)]
    if not live_sinks:
        raise NoFlowError(f"no tainted flow from {source_topic!r} to {sink_topic!r}")

    # statements that define or test a tainted value on a source->sink path
    first_seen: dict[int, int] = {}
    tainted_lines: set[int] = set()
    for node in graph.nodes:
        if node.kind != "stmt" or node.id not in on_path:
            continue
        s = node.stmt
        hit = False
        if isinstance(s, (Assign, MultiAssign)):
            hit = any(r & taint_in[node.id] for r in _value_uses(node, scopes[node.id].key))
        elif isinstance(s, (While, If)):
            hit = bool(node.uses & taint_in[node.id])
        elif node.id in live_sinks:
            hit = True
        if hit:
            tainted_lines.add(s.line)
    for node in graph.nodes:
        if node.kind == "stmt":
            first_seen.setdefault(node.line, node.id)

    # display chain: def-use slice back from the sink argument
    reach_in, _ = reaching_definitions(graph)
    slice_lines: set[int] = set()
    binding_node: int | None = None
    work = list(live_sinks)
    visited = set()
    while work:
        nid = work.pop()
        if nid in visited:
            continue
        visited.add(nid)
        node = graph.nodes[nid]
        if node.kind == "bind":
            if node.source_topic == source_topic:
                binding_node = nid if binding_node is None else min(binding_node, nid)
                continue
            wanted = set().union(*node.binds.values()) if node.binds else set()
            # argument reads are evaluated at the call site, i.e. this node's input
        elif nid in live_sinks:
            call = next(c for c in _calls(sink_stmt.expr) if is_publish(c))
            wanted = {scopes[nid].key(n) for a in call.args for n in _read_names(a)}
        else:
            wanted = set(node.uses)
        for var, def_id in reach_in[nid]:
            if var not in wanted:
                continue
            d = graph.nodes[def_id]
            if d.kind == "stmt":
                if d.stmt.line not in tainted_lines:
                    continue
                slice_lines.add(d.stmt.line)
                # only follow the reads feeding the defined target
                work.append(def_id)
            else:
                work.append(def_id)

    if binding_node is None:
        raise NoFlowError(f"sink value does not derive from {source_topic!r}")

    binding_line = graph.nodes[binding_node].line
    param = next(iter(graph.nodes[binding_node].binds))[1]
    source_binding = TaintEntry(f"{param}={source_topic}", binding_line)

    # top-level loops and the entry guard around the sink-driving call site
    top_sites = set()
    for nid in live_sinks:
        ctx = graph.nodes[nid].context
        top_sites.add(ctx[0][0] if ctx else sink_stmt.line)
    loop_lines, guard_lines = set(), set()

    def enclosing(stmts, outer_loops, guard):
        for s in stmts:
            if isinstance(s, FuncDef):
                continue
            if s.line in top_sites:
                loop_lines.update(outer_loops)
                if guard is not None:
                    guard_lines.add(guard)
            if s.line == binding_line and guard is not None:
                guard_lines.add(guard)
            if isinstance(s, While):
                enclosing(s.body, outer_loops + [s.line], guard)
            elif isinstance(s, If):
                g = s.line if guard is None and is_main_guard(s) else guard
                enclosing(s.body, outer_loops, g)
                enclosing(s.orelse, outer_loops, g)
            elif isinstance(s, TryExcept):
                enclosing(s.body, outer_loops, guard)
                enclosing(s.handler, outer_loops, guard)

    enclosing(program.statements, [], None)

    stmt_by_line = {s.line: s for s in walk_statements(program.statements)}
    order: dict[int, int] = dict(first_seen)

    def entry(line: int) -> TaintEntry:
        return TaintEntry(stmt_text(stmt_by_line[line]), line)

    chain_keys = []  # (order, entry)
    for line in guard_lines | loop_lines | slice_lines | {sink_stmt.line}:
        chain_keys.append((order[line], entry(line)))
    chain_keys.append((binding_node, source_binding))
    chain_keys.sort(key=lambda kv: kv[0])
    chain = [e for _, e in chain_keys]

    inst_keys = list(chain_keys)
    chain_lines = {e.line for e in chain if e is not source_binding}
    for line in sorted(tainted_lines - chain_lines):
        inst_keys.append((order[line], entry(line)))
    inst_keys.sort(key=lambda kv: kv[0])
    instrumented = [e for _, e in inst_keys]
    return TaintReport(source_topic, sink_topic, chain, instrumented, source_binding)

