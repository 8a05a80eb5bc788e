"""Push-tagged particles.

Under the push description an executed ``eta`` jump from ``x`` to ``y``
moves every ``eta`` particle in ``[x, y)`` one site to the right and sends
the ``-eta`` particle found at ``y`` back to ``x``.  This gives the same
unlabeled dynamics as the exchange rule but keeps the cyclic order of
same-sign particles fixed, which is what makes a tagged particle well
behaved.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from . import _kernels
from .dynamics import EventStream, JumpRecord, Params, SpinConfig

__all__ = [
    "InvariantError",
    "LabelLedger",
    "TaggedRun",
    "TaggedState",
    "drift_formula",
    "drift_formula_literal",
    "environment_view",
    "init_tagged",
    "instantaneous_drift",
    "simulate_tagged",
    "track_all_labels",
    "update_tagged",
    "write_position_csv",
]


class InvariantError(AssertionError):
    """A dynamical invariant was violated (a bug, never a user error)."""


@dataclass(frozen=True)
class TaggedState:
    position: int  # unwrapped; changes by winding-aware increments only
    sign: int
    ring_size: int

    @property
    def ring_position(self) -> int:
        return self.position % self.ring_size


def init_tagged(config: SpinConfig, site: int, sign: int) -> TaggedState:
    """Tag the particle at ``site`` after forcing its spin to ``sign``.

    For a product measure this is exactly the law conditioned on
    ``spin(site) == sign``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    L = config.ring_size
    site = int(site) % L
    if config.spins[site] != sign:
        config.spins[site] = sign
        config.plus_count += 1 if sign > 0 else -1
    return TaggedState(site, sign, L)


def update_tagged(state: TaggedState, jump: JumpRecord, ring_size: int, config: Optional[SpinConfig] = None) -> TaggedState:
    """Move the tagged particle according to one jump.

    ``config``, when given, is the configuration *after* the jump and is
    used to check that the tagged site still carries the tagged sign.
    """
    if not jump.executed:
        return state
    L = ring_size
    ring = state.position % L
    span = (jump.target - jump.origin) % L
    delta = 0
    if jump.sign == state.sign:
        if (ring - jump.origin) % L < span:
            delta = 1
    elif jump.target == ring:
        delta = -span
    new = TaggedState(state.position + delta, state.sign, L) if delta else state
    if config is not None and config.spins[new.ring_position] != new.sign:
        raise InvariantError(
            f"tagged {'+' if state.sign > 0 else '-'} particle at ring site {new.ring_position} "
            f"sits on spin {config.spins[new.ring_position]:+d}"
        )
    return new


def environment_view(config: SpinConfig, state: TaggedState, K: int) -> np.ndarray:
    """Spins at offsets ``-K..-1, 1..K`` from the tagged particle."""
    L = config.ring_size
    if K < 1 or 2 * K >= L:
        raise ValueError(f"K={K} needs 1 <= K and 2K < ring size {L}")
    offsets = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)])
    return config.spins[(state.ring_position + offsets) % L].copy()


def instantaneous_drift(config: SpinConfig, state: TaggedState, params: Params) -> float:
    """Expected velocity of the tagged particle given the current configuration.

    Same-sign clocks in the run ending at the particle push it by one
    (``a`` of them); opposite-sign clocks in the run immediately to its left
    pull it back by their distance (``1..b``).
    """
    return float(_kernels.tagged_drift_rate(config.spins, state.ring_position, state.sign, params.lambda_plus))


def drift_formula(params: Params, sign: int = 1) -> float:
    """Infinite-volume drift of a push particle of the given sign.

    For ``+``: ``lambda_plus / (1 - p) - lambda_minus (1 - p) / p**2``.  The
    ``-`` value follows from exchanging the roles of the two signs
    (``p <-> 1 - p``, ``lambda_plus <-> lambda_minus``); exact enumeration
    on small rings supports this version (see :func:`drift_formula_literal`).
    """
    p, lp, lm = params.p, params.lambda_plus, params.lambda_minus
    if sign > 0:
        return lp / (1 - p) - lm * (1 - p) / p**2
    return lm / p - lp * p / (1 - p) ** 2


def drift_formula_literal(params: Params, sign: int = 1) -> float:
    """``lambda_s / (1 - p) - lambda_{-s} (1 - p) / p**2`` for sign ``s``.

    This is the single expression one gets by reading the sign index as
    applying to the rates only.  It agrees with :func:`drift_formula` for
    ``+`` and for ``p = 1/2``; kept to compare against exact enumeration.
    """
    p = params.p
    same, other = (params.lambda_plus, params.lambda_minus) if sign > 0 else (params.lambda_minus, params.lambda_plus)
    return same / (1 - p) - other * (1 - p) / p**2


class LabelLedger:
    """Labels for every particle, kept in push order.

    Label ``i`` of sign ``s`` is the ``i``-th ``s`` particle met scanning
    the initial ring from site 0.  ``positions[s][i]`` is its current ring
    site and ``site_label[x]`` the label of the particle at ``x``.
    """

    def __init__(self, config: SpinConfig):
        s = config.spins
        self.ring_size = config.ring_size
        self.site_label = np.empty(self.ring_size, dtype=np.int64)
        self.positions = {}
        for sign in (1, -1):
            sites = np.flatnonzero(s == sign)
            self.positions[sign] = sites.astype(np.int64)
            self.site_label[sites] = np.arange(sites.size)

    def update(self, jump: JumpRecord) -> None:
        if not jump.executed:
            return
        L = self.ring_size
        x, y, eta = jump.origin, jump.target, jump.sign
        span = (y - x) % L
        block = (x + np.arange(span)) % L
        moved = self.site_label[block].copy()
        back = self.site_label[y]
        dest = (block + 1) % L
        self.site_label[dest] = moved
        self.positions[eta][moved] = dest
        self.site_label[x] = back
        self.positions[-eta][back] = x

    def order_violations(self, sign: int) -> int:
        """Number of places where same-sign labels are out of cyclic order.

        Zero means that reading the ring from the position of label 0, the
        labels appear as ``0, 1, 2, ...``.
        """
        pos = self.positions[sign]
        if pos.size < 3:
            return 0
        L = self.ring_size
        rel = (pos - pos[0]) % L
        return int(np.count_nonzero(np.diff(rel) <= 0))

    def check(self, config: SpinConfig) -> None:
        for sign in (1, -1):
            pos = self.positions[sign]
            if not np.array_equal(np.sort(pos), np.flatnonzero(config.spins == sign)):
                raise InvariantError(f"label positions of sign {sign:+d} disagree with the spins")
            if self.order_violations(sign):
                raise InvariantError(f"cyclic order of {sign:+d} labels inverted")


def track_all_labels(config: SpinConfig):
    """Return a :class:`LabelLedger` and a per-event update callable."""
    if config.is_monochrome():
        raise ValueError("label tracking needs a ring with both signs present")
    ledger = LabelLedger(config)
    return ledger, ledger.update


@dataclass
class TaggedRun:
    """Grid samples from one tagged-particle trajectory."""

    params: Params
    seed: int
    sign: int
    horizon: float
    sample_dt: float
    positions: np.ndarray  # unwrapped position at times (k + 1) * sample_dt
    drift_samples: np.ndarray  # instantaneous drift at the same times
    bin_jumps: np.ndarray  # summed displacement of jumps in each sampling interval
    bin_sq_jumps: np.ndarray  # summed squared displacement, same intervals
    sum_sq_jumps: float
    n_jumps: int
    final_position: int
    env_offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    env_plus_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    config: Optional[SpinConfig] = None

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.positions.size) + 1) * self.sample_dt

    @property
    def velocity(self) -> float:
        return self.final_position / self.horizon


def simulate_tagged(
    params: Params,
    seed: int,
    horizon: float,
    sign: int = 1,
    sample_dt: float = 1.0,
    env_radius: int = 0,
    keep_config: bool = False,
) -> TaggedRun:
    """Run one stationary trajectory with a push particle tagged at site 0.

    The initial configuration is ``Ber_p`` conditioned on ``spin(0) == sign``;
    it is drawn from the stream's seed so a run is a function of
    ``(params, seed)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 1)))
    plus = rng.random(params.ring_size) < params.p
    config = SpinConfig(np.where(plus, 1, -1).astype(np.int8))
    state = init_tagged(config, 0, sign)
    stream = EventStream.for_params(seed, params)

    n_samples = int(np.floor(horizon / sample_dt + 1e-9))
    ys = np.zeros(n_samples, dtype=np.int64)
    hs = np.zeros(n_samples)
    gs = np.zeros(n_samples)
    gs2 = np.zeros(n_samples)
    if env_radius:
        offsets = np.concatenate([np.arange(-env_radius, 0), np.arange(1, env_radius + 1)]).astype(np.int64)
    else:
        offsets = np.zeros(0, dtype=np.int64)
    env = np.zeros(offsets.size, dtype=np.int64)
    tag = np.array([state.ring_position, state.position, sign], dtype=np.int64)
    acc = np.zeros(2)
    kstate = np.zeros(1, dtype=np.int64)
    spins = config.spins
    while True:
        dts, sites, us, pos = stream.block()
        new_pos, t = _kernels.advance_tagged(
            spins, dts, sites, us, pos, stream.current_time, float(horizon), params.lambda_plus,
            tag, acc, float(sample_dt), ys, hs, gs, gs2, offsets, env, kstate,
        )
        stream.commit(new_pos, t)
        if new_pos < dts.shape[0]:
            break
    return TaggedRun(
        params=params,
        seed=int(seed),
        sign=sign,
        horizon=float(horizon),
        sample_dt=float(sample_dt),
        positions=ys,
        drift_samples=hs,
        bin_jumps=gs,
        bin_sq_jumps=gs2,
        sum_sq_jumps=float(acc[0]),
        n_jumps=int(acc[1]),
        final_position=int(tag[1]),
        env_offsets=offsets,
        env_plus_counts=env,
        config=config if keep_config else None,
    )


def write_position_csv(fh: IO[str], run: TaggedRun) -> None:
    """CSV with columns ``t, Y_unwrapped`` at the run's sampling grid."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "Y_unwrapped"])
    for t, y in zip(run.times, run.positions):
        writer.writerow([repr(float(t)), int(y)])
