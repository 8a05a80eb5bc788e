"""Ring state and event-driven Toom exchange dynamics.

A configuration is a periodic ring of ``L`` spins in {+1, -1}.  Every site
carries a rate-one Poisson clock; at each ring the clock is thinned into a
``+`` clock (probability ``lambda_plus``) or a ``-`` clock.  When the
``eta`` clock at ``x`` rings and ``spin(x) == eta``, the spin at ``x`` is
exchanged with the first spin of sign ``-eta`` found scanning cyclically to
the right.  Otherwise the ring is a no-op.

The ``L`` independent clocks are generated as one global clock of rate ``L``
with a uniformly chosen site, which is equal in law.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "BLOCK_SIZE",
    "BoundaryIndex",
    "Event",
    "EventStream",
    "JumpLogWriter",
    "JumpRecord",
    "Observer",
    "Params",
    "RunSummary",
    "SpinConfig",
    "advance",
    "apply_event",
    "execute_jump",
    "find_target",
    "resolve_event",
    "run",
    "sample_initial",
    "trial_seed",
]

# Events are drawn in fixed-size blocks so the event sequence does not depend
# on how the stream is consumed (one at a time or in bulk by a kernel).
BLOCK_SIZE = 1 << 15


@dataclass(frozen=True)
class Params:
    """Model parameters.

    The clock rates are normalized so that ``lambda_plus + lambda_minus == 1``.
    """

    ring_size: int
    p: float
    lambda_plus: float
    lambda_minus: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.lambda_minus is None:
            if not 0.0 <= float(self.lambda_plus) <= 1.0:
                raise ValueError(f"lambda_plus must lie in [0, 1] when lambda_minus is omitted, got {self.lambda_plus!r}")
            object.__setattr__(self, "lambda_minus", 1.0 - float(self.lambda_plus))
        L = int(self.ring_size)
        if L != self.ring_size or L < 2:
            raise ValueError(f"ring_size must be an integer >= 2, got {self.ring_size!r}")
        p = float(self.p)
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie strictly between 0 and 1, got {self.p!r}")
        lp, lm = float(self.lambda_plus), float(self.lambda_minus)
        if lp < 0 or not np.isfinite(lp):
            raise ValueError(f"lambda_plus must be a finite nonnegative number, got {self.lambda_plus!r}")
        if lm < 0 or not np.isfinite(lm):
            raise ValueError(f"lambda_minus must be a finite nonnegative number, got {self.lambda_minus!r}")
        total = lp + lm
        if total == 0:
            raise ValueError("lambda_plus and lambda_minus must not both be zero")
        object.__setattr__(self, "ring_size", L)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "lambda_plus", lp / total)
        object.__setattr__(self, "lambda_minus", lm / total)

    def rate(self, sign: int) -> float:
        return self.lambda_plus if sign > 0 else self.lambda_minus

    def with_ring_size(self, ring_size: int) -> "Params":
        return Params(ring_size, self.p, self.lambda_plus, self.lambda_minus)

    def to_dict(self) -> dict:
        return {
            "ring_size": self.ring_size,
            "p": self.p,
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
        }


@dataclass
class SpinConfig:
    """Periodic spin configuration with a cached count of ``+`` spins."""

    spins: np.ndarray
    plus_count: int = -1

    def __post_init__(self):
        spins = np.asarray(self.spins)
        if spins.ndim != 1 or spins.size < 2:
            raise ValueError("spins must be a one-dimensional array of length >= 2")
        if not np.all((spins == 1) | (spins == -1)):
            raise ValueError("spins must take values in {+1, -1}")
        self.spins = np.ascontiguousarray(spins, dtype=np.int8)
        count = int(np.count_nonzero(self.spins == 1))
        if self.plus_count == -1:
            self.plus_count = count
        elif self.plus_count != count:
            raise ValueError(f"plus_count={self.plus_count} does not match spins ({count})")

    @classmethod
    def from_string(cls, text: str) -> "SpinConfig":
        """Build a configuration from a string such as ``"++-+"``."""
        try:
            values = [{"+": 1, "-": -1}[ch] for ch in text.strip()]
        except KeyError as exc:
            raise ValueError(f"unexpected character {exc.args[0]!r} in spin string") from None
        return cls(np.array(values, dtype=np.int8))

    def __str__(self) -> str:
        return "".join("+" if s > 0 else "-" for s in self.spins)

    def __len__(self) -> int:
        return int(self.spins.size)

    @property
    def ring_size(self) -> int:
        return int(self.spins.size)

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.spins.copy(), self.plus_count)

    def is_monochrome(self) -> bool:
        return self.plus_count == 0 or self.plus_count == self.ring_size

    def check(self) -> None:
        """Raise ``AssertionError`` if the cached count is stale."""
        count = int(np.count_nonzero(self.spins == 1))
        assert count == self.plus_count, f"plus_count {self.plus_count} != {count}"

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpinConfig):
            return NotImplemented
        return np.array_equal(self.spins, other.spins)


def sample_initial(params: Params, rng: np.random.Generator) -> SpinConfig:
    """Draw a configuration from the Bernoulli product measure ``Ber_p``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    plus = rng.random(params.ring_size) < params.p
    return SpinConfig(np.where(plus, 1, -1).astype(np.int8))


def trial_seed(master_seed: int, trial: int) -> int:
    """Derive the 64-bit seed of trial ``trial`` from ``master_seed``.

    The rule is ``SeedSequence(entropy=(master_seed, trial))`` and the first
    64-bit word of its generated state.
    """
    seq = np.random.SeedSequence(entropy=(int(master_seed), int(trial)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Event:
    """One clock ring: time, site, clock sign and the thinning uniform."""

    time: float
    site: int
    sign: int
    u: float


class EventStream:
    """Deterministic source of clock rings for a ring of ``ring_size`` sites.

    Waiting times are exponential with rate ``ring_size``, sites are uniform
    and the thinning uniform ``u`` decides the clock sign (``+`` iff
    ``u < lambda_plus``).  The sequence is a pure function of
    ``(seed, ring_size, lambda_plus)``.
    """

    def __init__(self, seed: int, ring_size: int, lambda_plus: float, block_size: int = BLOCK_SIZE):
        if ring_size < 1:
            raise ValueError("ring_size must be positive")
        self.seed = int(seed)
        self.ring_size = int(ring_size)
        self.lambda_plus = float(lambda_plus)
        self.block_size = int(block_size)
        self.current_time = 0.0
        self.n_consumed = 0
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._refill()

    @classmethod
    def for_params(cls, seed: int, params: Params) -> "EventStream":
        return cls(seed, params.ring_size, params.lambda_plus)

    def _refill(self) -> None:
        B = self.block_size
        self._dt = self._rng.standard_exponential(B) / self.ring_size
        self._site = self._rng.integers(0, self.ring_size, B, dtype=np.int64)
        self._u = self._rng.random(B)
        self._pos = 0

    def _ensure(self) -> None:
        if self._pos >= self.block_size:
            self._refill()

    def peek_time(self) -> float:
        self._ensure()
        return self.current_time + self._dt[self._pos]

    def next_event(self) -> Event:
        self._ensure()
        i = self._pos
        t = self.current_time + self._dt[i]
        u = float(self._u[i])
        event = Event(float(t), int(self._site[i]), 1 if u < self.lambda_plus else -1, u)
        self._pos = i + 1
        self.current_time = float(t)
        self.n_consumed += 1
        return event

    # Bulk access for compiled kernels: they read the current block from
    # ``pos`` on and report back how far they got.
    def block(self):
        self._ensure()
        return self._dt, self._site, self._u, self._pos

    def commit(self, pos: int, time: float) -> None:
        self.n_consumed += pos - self._pos
        self._pos = int(pos)
        self.current_time = float(time)


@dataclass(frozen=True)
class JumpRecord:
    """Outcome of one event.

    ``block_len`` is the number of sites strictly between ``origin`` and
    ``target`` (cyclically rightward for the right-moving dynamics).
    ``target`` is ``None`` for no-ops.
    """

    time: float
    origin: int
    target: Optional[int]
    sign: int
    block_len: int
    executed: bool

    @property
    def displacement(self) -> int:
        """Distance travelled by the exchanged ``sign`` spin, ``block_len + 1``."""
        return self.block_len + 1 if self.executed else 0

    def to_json(self, direction: Optional[str] = None) -> dict:
        rec = {"t": self.time, "origin": self.origin, "target": self.target, "sign": self.sign, "r": self.block_len}
        if direction is not None:
            rec["direction"] = direction
        return rec


class BoundaryIndex:
    """Sorted set of domain walls with successor queries.

    Position ``b`` is a wall when ``spins[b - 1] != spins[b]`` (cyclically).
    Useful for ``find_target`` when runs are long (``p`` close to 0 or 1).
    """

    def __init__(self, config: SpinConfig):
        s = config.spins
        self._config = config
        self._walls = [int(b) for b in np.flatnonzero(s != np.roll(s, 1))]

    def __len__(self) -> int:
        return len(self._walls)

    def successor(self, site: int) -> Optional[int]:
        """Smallest wall strictly cyclically after ``site``."""
        walls = self._walls
        if not walls:
            return None
        k = bisect.bisect_right(walls, site)
        return walls[k] if k < len(walls) else walls[0]

    def find_target(self, site: int, sign: int) -> Optional[int]:
        s = self._config.spins
        L = s.size
        nxt = (site + 1) % L
        if s[nxt] == -sign:
            return nxt
        b = self.successor(nxt)
        if b is None or b == nxt or b == site:
            return None
        return b

    def _refresh(self, b: int) -> None:
        s = self._config.spins
        wall = s[b - 1] != s[b]
        k = bisect.bisect_left(self._walls, b)
        present = k < len(self._walls) and self._walls[k] == b
        if wall and not present:
            self._walls.insert(k, b)
        elif present and not wall:
            del self._walls[k]

    def update(self, jump: JumpRecord) -> None:
        """Bring the index up to date after ``jump`` has been executed."""
        if not jump.executed:
            return
        L = self._config.ring_size
        for b in {jump.origin, (jump.origin + 1) % L, jump.target, (jump.target + 1) % L}:
            self._refresh(b)


def find_target(config: SpinConfig, site: int, sign: int, index: Optional[BoundaryIndex] = None) -> Optional[int]:
    """First site cyclically right of ``site`` whose spin is ``-sign``.

    Returns ``None`` iff no spin of sign ``-sign`` exists other than at
    ``site`` itself, i.e. the rest of the ring is monochrome in ``sign``.
    """
    if index is not None:
        return index.find_target(site, sign)
    s = config.spins
    L = s.size
    y = site + 1
    for _ in range(L - 1):
        if y == L:
            y = 0
        if s[y] != sign:
            return y
        y += 1
    return None


def resolve_event(config: SpinConfig, event: Event, index: Optional[BoundaryIndex] = None) -> JumpRecord:
    """Compute the jump an event would cause, without changing ``config``."""
    site, sign = event.site, event.sign
    if config.spins[site] != sign:
        return JumpRecord(event.time, site, None, sign, 0, False)
    target = find_target(config, site, sign, index)
    if target is None:
        return JumpRecord(event.time, site, None, sign, 0, False)
    block = (target - site) % config.ring_size - 1
    return JumpRecord(event.time, site, target, sign, block, True)


def execute_jump(config: SpinConfig, jump: JumpRecord) -> None:
    """Exchange the spins of an executed jump in place."""
    if jump.executed:
        s = config.spins
        s[jump.origin] = -jump.sign
        s[jump.target] = jump.sign


def apply_event(config: SpinConfig, event: Event, index: Optional[BoundaryIndex] = None) -> JumpRecord:
    """Apply one clock ring to ``config`` in place and return what happened."""
    jump = resolve_event(config, event, index)
    execute_jump(config, jump)
    if index is not None:
        index.update(jump)
    return jump


class Observer:
    """Hook called by :func:`run`.

    ``on_event`` receives the configuration *before* the event, the jump
    record and the time elapsed since the previous event, during which the
    configuration was constant.  ``finish`` receives the final configuration
    and the time from the last event to the horizon.
    """

    def on_event(self, config: SpinConfig, jump: JumpRecord, dt: float) -> None:
        pass

    def finish(self, config: SpinConfig, dt: float) -> None:
        pass


@dataclass
class RunSummary:
    n_events: int = 0
    n_executed: int = 0
    horizon: float = 0.0
    jumps: list = field(default_factory=list)


def run(
    config: SpinConfig,
    stream: EventStream,
    horizon: float,
    observers: Sequence[Observer] = (),
    keep_jumps: bool = False,
) -> RunSummary:
    """Drive the dynamics until the next event would occur after ``horizon``.

    The pending event past the horizon stays in the stream, so consecutive
    calls with increasing horizons continue one trajectory.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    summary = RunSummary(horizon=float(horizon))
    last = stream.current_time
    while stream.peek_time() <= horizon:
        event = stream.next_event()
        jump = resolve_event(config, event)
        dt = event.time - last
        for obs in observers:
            obs.on_event(config, jump, dt)
        execute_jump(config, jump)
        last = event.time
        summary.n_events += 1
        if jump.executed:
            summary.n_executed += 1
            if keep_jumps:
                summary.jumps.append(jump)
    for obs in observers:
        obs.finish(config, horizon - last)
    return summary


def advance(config: SpinConfig, stream: EventStream, horizon: float) -> RunSummary:
    """Compiled :func:`run` without observers; same trajectory, same stream position."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    summary = RunSummary(horizon=float(horizon))
    while True:
        dts, sites, us, pos = stream.block()
        new_pos, t, executed = _kernels.advance_plain(config.spins, dts, sites, us, pos, stream.current_time, float(horizon), stream.lambda_plus)
        summary.n_events += new_pos - pos
        summary.n_executed += executed
        stream.commit(new_pos, t)
        if new_pos < dts.shape[0]:
            return summary


class JumpLogWriter(Observer):
    """Write executed jumps as JSON Lines."""

    def __init__(self, fh: IO[str], direction: Optional[str] = None):
        self.fh = fh
        self.direction = direction

    def on_event(self, config, jump, dt):
        if jump.executed:
            self.fh.write(json.dumps(jump.to_json(self.direction)) + "\n")


def read_jump_log(lines: Iterable[str]) -> list:
    """Parse a JSON Lines jump log back into :class:`JumpRecord` objects."""
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        out.append(JumpRecord(float(rec["t"]), int(rec["origin"]), int(rec["target"]), int(rec["sign"]), int(rec["r"]), True))
    return out
