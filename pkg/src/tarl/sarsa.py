"""Tabular utility of a running program, learned by flow-scaled TD(0).

States are ``(m, p, n)``: terrain bit, odometry bin, instrumented line.  The
program is a fixed policy, so learning is policy evaluation along the stream
of hook events.  The TD target carries an extra term proportional to the
normalized flow value at the line, scaled by the episode's monitor reward:

    target = r + kappa * rho * v_norm + gamma * q[s']

``rho`` defaults to the immediate reward ``r``; :func:`learn` passes the
monitor's episode reward so that every line on a failing or succeeding run is
credited according to the value it computed.  ``v_norm`` is the flow value
divided by the largest flow magnitude seen so far at any line, clamped to
``[-1, 1]``.

With a constant step size the last iterate keeps tracking the most recent
episodes, so :func:`learn` returns the mean of the iterates over the final
``tail`` fraction of episodes.  Convergence is judged on the raw iterates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from tarl.errors import FormatError, InsufficientHistory
from tarl.executor import EpisodeRunner, InstrumentedProgram
from tarl.world import EnvConfig

TINY = 1e-12
CSV_COLUMNS = ["terrain", "odometry_bin", "line", "stmt_index", "q"]


@dataclass(frozen=True)
class LearnParams:
    alpha: float = 0.1
    gamma: float = 0.9
    kappa: float = 0.5
    episodes: int = 3000
    block: int = 200
    tol: float = 0.05
    tail: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.episodes < 0 or self.block < 1:
            raise ValueError("episodes must be >= 0 and block >= 1")
        if not 0 <= self.tail < 1:
            raise ValueError("tail must be in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "LearnParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown [rl] keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def tail_episodes(self) -> int:
        return int(self.episodes * self.tail)


@dataclass
class UtilityTable:
    """Dense q(m, p, n) table.

    ``q`` is stored flat (terrain-major, then bin, then line position) so the
    learning loop can index it without numpy overhead.
    """

    bins: int
    lines: list[int]
    params: LearnParams = field(default_factory=LearnParams)
    q: list[float] = field(default=None)
    visits: list[int] = field(default=None)
    flow_norm: list[float] = field(default=None)

    def __post_init__(self):
        size = 2 * self.bins * len(self.lines)
        if self.q is None:
            self.q = [0.0] * size
        if self.visits is None:
            self.visits = [0] * size
        if self.flow_norm is None:
            self.flow_norm = [0.0] * len(self.lines)
        self.line_index = {line: i for i, line in enumerate(self.lines)}

    def index(self, m: int, p: int, n: int) -> int:
        """Flat index for terrain m, bin p and line *position* n."""
        return (m * self.bins + p) * len(self.lines) + n

    def array(self) -> np.ndarray:
        return np.asarray(self.q, dtype=float).reshape(2, self.bins, len(self.lines))

    def visited(self) -> np.ndarray:
        return np.asarray(self.visits, dtype=int).reshape(2, self.bins, len(self.lines)) > 0

    def value(self, m: int, p: int, line: int) -> float:
        return self.q[self.index(m, p, self.line_index[line])]

    def observe_flow(self, n: int, v: float) -> None:
        a = abs(v)
        if a > self.flow_norm[n]:
            self.flow_norm[n] = a

    @property
    def flow_scale(self) -> float:
        return max(self.flow_norm, default=0.0)

    def bound(self, reward_max: float) -> float:
        return (1 + self.params.kappa) * reward_max / (1 - self.params.gamma)


def normalized_flow(v: float, scale: float) -> float:
    x = v / max(scale, TINY)
    return -1.0 if x < -1.0 else 1.0 if x > 1.0 else x


def td_update(table: UtilityTable, s: tuple[int, int, int], v: float, r: float,
              s_next: tuple[int, int, int] | None, flow_reward: float | None = None) -> UtilityTable:
    """One flow-scaled TD(0) backup of q[s]; ``n`` in states is the line position."""
    prm = table.params
    rho = r if flow_reward is None else flow_reward
    i = table.index(*s)
    target = r + prm.kappa * rho * normalized_flow(v, table.flow_scale)
    if s_next is not None:
        target = target + prm.gamma * table.q[table.index(*s_next)]
    table.q[i] += prm.alpha * (target - table.q[i])
    table.visits[i] += 1
    return table


@dataclass
class LearnStats:
    episodes: int = 0
    successes: int = 0
    block_deltas: list[float] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    def to_dict(self, tol: float | None = None, q_max: float | None = None) -> dict:
        out = {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "block_max_dq": list(self.block_deltas),
            "atr": sum(self.returns) / len(self.returns) if self.returns else 0.0,
        }
        if tol is not None and q_max is not None and len(self.block_deltas) >= 2:
            out["converged"] = converged(self.block_deltas, tol, q_max)
        return out


def apply_episode(table: UtilityTable, trace, flow_reward: float | None) -> None:
    """Back up every hook event of one episode in execution order."""
    events = trace.events
    if not events:
        return
    rewards = trace.rewards()
    prm = table.params
    alpha, gamma, kappa = prm.alpha, prm.gamma, prm.kappa
    q, visits, norm = table.q, table.visits, table.flow_norm
    nlines, bins = len(table.lines), table.bins
    last = len(events) - 1
    # indices first so s' lookups are cheap
    idx = [(e.m * bins + e.p) * nlines + e.stmt_index for e in events]
    scale = max(norm, default=0.0)
    for k in range(len(events)):
        e = events[k]
        a = abs(e.v)
        if a > norm[e.stmt_index]:
            norm[e.stmt_index] = a
            if a > scale:
                scale = a
        r = rewards[k]
        rho = r if flow_reward is None else flow_reward
        x = e.v / (scale if scale > TINY else TINY)
        x = -1.0 if x < -1.0 else 1.0 if x > 1.0 else x
        i = idx[k]
        target = r + kappa * rho * x
        if k < last:
            target = target + gamma * q[idx[k + 1]]
        q[i] += alpha * (target - q[i])
        visits[i] += 1


def learn(iprog: InstrumentedProgram, config: EnvConfig, params: LearnParams,
          runner: EpisodeRunner | None = None) -> tuple[UtilityTable, LearnStats]:
    """Evaluate the program's utility; returns the tail-averaged table and stats."""
    table = UtilityTable(config.odometry_bins, iprog.lines, params)
    stats = LearnStats()
    if params.episodes == 0:
        return table, stats
    runner = runner or EpisodeRunner(iprog, config)
    rng = np.random.default_rng(params.seed)
    snapshot = table.array()
    tail_start = params.episodes - params.tail_episodes
    total = np.zeros_like(snapshot)
    for ep in range(params.episodes):
        try:
            trace = runner.run(rng)
        except Exception as exc:
            exc.args = (f"episode {ep}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        apply_episode(table, trace, trace.verdict.reward_total)
        stats.episodes += 1
        stats.successes += trace.verdict.success
        stats.returns.append(trace.episode_return)
        if ep >= tail_start and params.tail_episodes:
            total += table.array()
        if (ep + 1) % params.block == 0:
            now = table.array()
            mask = table.visited()
            delta = float(np.max(np.abs(now - snapshot)[mask])) if mask.any() else 0.0
            stats.block_deltas.append(delta)
            snapshot = now
    if params.tail_episodes:
        table.q = (total / params.tail_episodes).ravel().tolist()
    return table, stats


def converged(history: list[float], tol: float, q_max: float) -> bool:
    if len(history) < 2:
        raise InsufficientHistory("need at least two blocks to judge convergence")
    last = history[-1]
    return last == 0 or last < tol * q_max


def table_max(table: UtilityTable) -> float:
    mask = table.visited()
    a = np.abs(table.array())
    return float(a[mask].max()) if mask.any() else 0.0


# ---------------------------------------------------------------------------
# CSV


def dumps(table: UtilityTable) -> str:
    if any(not math.isfinite(x) for x in table.q):
        raise FormatError("refusing to save a table with non-finite entries")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in (0, 1):
        for p in range(table.bins):
            for n, line in enumerate(table.lines):
                w.writerow([m, p, line, n, repr(table.q[table.index(m, p, n)])])
    return buf.getvalue()


def save(table: UtilityTable, path) -> None:
    text = dumps(table)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def loads(text: str, params: LearnParams | None = None) -> UtilityTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty file (missing header)") from None
    if header != CSV_COLUMNS:
        raise FormatError(f"bad header {header!r}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"row {lineno}: expected 5 columns, got {len(row)}")
        try:
            m, p, line, n = (int(x) for x in row[:4])
            q = float(row[4])
        except ValueError:
            raise FormatError(f"row {lineno}: malformed value") from None
        if m not in (0, 1) or p < 0 or n < 0 or not math.isfinite(q):
            raise FormatError(f"row {lineno}: value out of range")
        rows.append((m, p, line, n, q))
    if not rows:
        return UtilityTable(1, [], params or LearnParams())
    lines_by_pos = {}
    for _, _, line, n, _ in rows:
        if lines_by_pos.setdefault(n, line) != line:
            raise FormatError(f"stmt_index {n} maps to two lines")
    if sorted(lines_by_pos) != list(range(len(lines_by_pos))):
        raise FormatError("stmt_index values are not contiguous")
    lines = [lines_by_pos[n] for n in range(len(lines_by_pos))]
    bins = max(r[1] for r in rows) + 1
    table = UtilityTable(bins, lines, params or LearnParams())
    if len(rows) != len(table.q):
        raise FormatError(f"expected {len(table.q)} rows, found {len(rows)}")
    seen = set()
    for m, p, line, n, q in rows:
        i = table.index(m, p, n)
        if i in seen:
            raise FormatError(f"duplicate row for ({m}, {p}, {line})")
        seen.add(i)
        table.q[i] = q
        table.visits[i] = 1 if q != 0 else 0
    return table


def load(path, params: LearnParams | None = None) -> UtilityTable:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), params)
