"""Localize the culprit line by comparing off-line and on-line utilities."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from tarl.errors import DegenerateError, ShapeError
from tarl.sarsa import UtilityTable


@dataclass(frozen=True)
class Region:
    terrain: int
    p_lo: int
    p_hi: int

    def to_dict(self) -> dict:
        return {"terrain": self.terrain, "p_lo": self.p_lo, "p_hi": self.p_hi}


@dataclass
class LocalizationReport:
    region: Region
    qs_offline: dict[int, float]
    qs_online: dict[int, float]
    culprit_line: int
    culprit_text: str
    margin: float

    def to_json(self) -> str:
        data = {
            "region": self.region.to_dict(),
            "qs_offline": {str(k): v for k, v in self.qs_offline.items()},
            "qs_online": {str(k): v for k, v in self.qs_online.items()},
            "culprit_line": self.culprit_line,
            "culprit_text": self.culprit_text,
            "margin": self.margin,
        }
        return json.dumps(data, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LocalizationReport":
        d = json.loads(text)
        r = d["region"]
        return cls(
            Region(int(r["terrain"]), int(r["p_lo"]), int(r["p_hi"])),
            {int(k): float(v) for k, v in d["qs_offline"].items()},
            {int(k): float(v) for k, v in d["qs_online"].items()},
            int(d["culprit_line"]),
            d["culprit_text"],
            float(d["margin"]),
        )


def diff_map(q_off: UtilityTable, q_on: UtilityTable) -> np.ndarray:
    """D[m, p] = sum over lines of |q_off - q_on|."""
    if q_off.lines != q_on.lines or q_off.bins != q_on.bins:
        raise ShapeError(
            f"tables index different states: lines {q_off.lines} x {q_off.bins} bins "
            f"vs {q_on.lines} x {q_on.bins} bins"
        )
    return np.abs(q_off.array() - q_on.array()).sum(axis=2)


def max_diff_region(D: np.ndarray, width: int) -> Region:
    bins = D.shape[1]
    width = max(1, min(width, bins))
    best, best_sum = None, -np.inf
    for m in range(D.shape[0]):
        for lo in range(bins - width + 1):
            total = D[m, lo:lo + width].sum()
            if total > best_sum:  # strict: ties keep smaller m, then smaller p_lo
                best, best_sum = Region(m, lo, lo + width - 1), total
    return best


def default_window(bins: int) -> int:
    return int(np.ceil(0.25 * bins))


def utility_slice(table: UtilityTable, region: Region) -> dict[int, float]:
    q = table.array()
    block = q[region.terrain, region.p_lo:region.p_hi + 1, :]
    sums = block.sum(axis=0)
    return {line: float(sums[n]) for n, line in enumerate(table.lines)}


def locate_culprit(qs_off: dict[int, float], qs_on: dict[int, float]) -> tuple[int, float]:
    """Return (culprit line, margin); ties go to the larger line number."""
    if set(qs_off) != set(qs_on):
        raise ShapeError("slices cover different lines")
    diffs = sorted(((abs(qs_off[n] - qs_on[n]), n) for n in qs_off), reverse=True)
    if not diffs or diffs[0][0] == 0:
        raise DegenerateError("off-line and on-line utilities agree on every line")
    margin = diffs[0][0] - diffs[1][0] if len(diffs) > 1 else diffs[0][0]
    return diffs[0][1], margin


def localize(q_off: UtilityTable, q_on: UtilityTable, width: int | None = None,
             texts: dict[int, str] | None = None) -> LocalizationReport:
    D = diff_map(q_off, q_on)
    region = max_diff_region(D, width or default_window(q_off.bins))
    qs_off = utility_slice(q_off, region)
    qs_on = utility_slice(q_on, region)
    line, margin = locate_culprit(qs_off, qs_on)
    text = (texts or {}).get(line, "")
    return LocalizationReport(region, qs_off, qs_on, line, text, margin)
