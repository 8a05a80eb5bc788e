"""Left-moving Toom dynamics and pathwise time reversal.

An executed right-moving ``eta`` jump ``x -> y`` turns
``eta, eta..eta, -eta`` on ``[x, y]`` into ``-eta, eta..eta, eta``.  Read
backwards in time this is the left-moving ``eta`` jump ``y -> x``: the clock
rings at the landing site ``y``, which now holds ``eta``, and the first
``-eta`` to its left is at ``x``.  Reversal therefore maps every executed
jump to one between the same pair of sites with the same sign.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, List, Optional

from .dynamics import Event, JumpRecord, SpinConfig, execute_jump, resolve_event

__all__ = [
    "ReplayError",
    "TrajectoryLog",
    "apply_event_adjoint",
    "find_target_left",
    "record_trajectory",
    "replay",
    "reverse_trajectory",
]

RIGHT, LEFT = "right", "left"


class ReplayError(RuntimeError):
    """A logged jump does not reproduce under its own dynamics."""


def find_target_left(config: SpinConfig, site: int, sign: int) -> Optional[int]:
    """First site cyclically left of ``site`` whose spin is ``-sign``."""
    s = config.spins
    L = s.size
    y = site - 1
    for _ in range(L - 1):
        if y < 0:
            y = L - 1
        if s[y] != sign:
            return y
        y -= 1
    return None


def resolve_event_adjoint(config: SpinConfig, event: Event) -> JumpRecord:
    site, sign = event.site, event.sign
    if config.spins[site] != sign:
        return JumpRecord(event.time, site, None, sign, 0, False)
    target = find_target_left(config, site, sign)
    if target is None:
        return JumpRecord(event.time, site, None, sign, 0, False)
    return JumpRecord(event.time, site, target, sign, (site - target) % config.ring_size - 1, True)


def apply_event_adjoint(config: SpinConfig, event: Event) -> JumpRecord:
    """Left-moving counterpart of :func:`toomsim.dynamics.apply_event`."""
    jump = resolve_event_adjoint(config, event)
    execute_jump(config, jump)
    return jump


@dataclass
class TrajectoryLog:
    """Initial state, executed jumps in time order and the horizon."""

    initial: SpinConfig
    jumps: List[JumpRecord]
    horizon: float
    direction: str = RIGHT
    final: Optional[SpinConfig] = field(default=None, compare=False)

    def write_jsonl(self, fh: IO[str]) -> None:
        for jump in self.jumps:
            fh.write(json.dumps(jump.to_json(self.direction)) + "\n")


def record_trajectory(config: SpinConfig, stream, horizon: float) -> TrajectoryLog:
    """Run the right-moving dynamics and log every executed jump."""
    initial = config.copy()
    jumps = []
    while stream.peek_time() <= horizon:
        event = stream.next_event()
        jump = resolve_event(config, event)
        if jump.executed:
            execute_jump(config, jump)
            jumps.append(jump)
    return TrajectoryLog(initial, jumps, float(horizon), RIGHT, config.copy())


def replay(log: TrajectoryLog) -> List[SpinConfig]:
    """Configurations visited by ``log``: the initial one, then one per jump.

    Each jump is re-derived from its clock ``(origin, sign)`` under the
    log's own dynamics; any disagreement with the logged target raises.
    """
    config = log.initial.copy()
    visited = [config.copy()]
    resolve = resolve_event if log.direction == RIGHT else resolve_event_adjoint
    for jump in log.jumps:
        got = resolve(config, Event(jump.time, jump.origin, jump.sign, 0.0))
        if not got.executed or got.target != jump.target:
            raise ReplayError(
                f"{log.direction}-moving clock ({jump.origin}, {jump.sign:+d}) at t={jump.time} "
                f"hits {got.target}, log says {jump.target}"
            )
        execute_jump(config, got)
        visited.append(config.copy())
    return visited


def reverse_trajectory(log: TrajectoryLog) -> TrajectoryLog:
    """Time reversal ``s -> horizon - s`` of a logged path.

    The reversed path starts from the final configuration and is driven by
    the opposite-direction dynamics.  No-op events never reach the log, so
    only executed jumps are mapped.  The result is checked by replay.
    """
    final = replay(log)[-1]
    reversed_jumps = [
        JumpRecord(log.horizon - j.time, j.target, j.origin, j.sign, j.block_len, True) for j in reversed(log.jumps)
    ]
    out = TrajectoryLog(final, reversed_jumps, log.horizon, LEFT if log.direction == RIGHT else RIGHT, log.initial.copy())
    visited = replay(out)
    if visited[-1] != log.initial:
        raise ReplayError("reversed path does not return to the original initial configuration")
    return out


def read_log(lines: Iterable[str], initial: SpinConfig, horizon: float) -> TrajectoryLog:
    """Rebuild a :class:`TrajectoryLog` from its JSON Lines form."""
    jumps, direction = [], RIGHT
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        direction = rec.get("direction", RIGHT)
        jumps.append(JumpRecord(float(rec["t"]), int(rec["origin"]), int(rec["target"]), int(rec["sign"]), int(rec["r"]), True))
    return TrajectoryLog(initial.copy(), jumps, float(horizon), direction)
