"""Two replicas driven by one event stream, and the motion of their discrepancies.

A discrepancy is a site where the replicas disagree; it has sign ``+``
when ``(sigma1, sigma2) = (+, -)`` and ``-`` otherwise.  On the infinite
line nothing can be created to the left of the leftmost discrepancy (the
front), so the front only moves right.  On the ring the only way to break
this is for a jump to reach around the ring, which the trackers detect and
flag as a wrapped run.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from . import _kernels
from ._kernels import COALESCED, COUNT, FRONT, FRONT_UNW, MIN_GAP, TAG_RING, TAG_SIGN, TAG_UNW, WRAPPED
from .dynamics import EventStream, Params, SpinConfig, execute_jump, resolve_event, trial_seed
from .tagged import TaggedState, update_tagged

__all__ = [
    "CoupledPair",
    "CoupledRun",
    "DiscrepancyView",
    "FrontSpeedResult",
    "MaxSpeedResult",
    "TaggedGapResult",
    "discrepancies",
    "front_speed_experiment",
    "max_speed_experiment",
    "run_coupled",
    "sample_mu_S",
    "step_coupled",
    "tagged_gap_experiment",
    "write_coupled_csv",
]


def discrepancies(sigma1: SpinConfig, sigma2: SpinConfig) -> dict:
    """Map ``site -> sign`` of every discrepancy, recomputed from scratch."""
    d = (sigma1.spins.astype(np.int64) - sigma2.spins) // 2
    sites = np.flatnonzero(d)
    return {int(x): int(d[x]) for x in sites}


@dataclass
class DiscrepancyView:
    """Incrementally maintained discrepancy set with an unwrapped front."""

    ring_size: int
    signs: dict
    origin: int
    front: Optional[int] = None
    front_unwrapped: Optional[int] = None
    wrapped: bool = False
    creation_limit: Optional[int] = None

    @classmethod
    def from_pair(cls, sigma1: SpinConfig, sigma2: SpinConfig, origin: int = 0, creation_limit: Optional[int] = None):
        L = sigma1.ring_size
        view = cls(L, discrepancies(sigma1, sigma2), int(origin) % L, creation_limit=creation_limit)
        if view.signs:
            dist = min((x - view.origin) % L for x in view.signs)
            view.front = (view.origin + dist) % L
            view.front_unwrapped = view.origin + dist
        return view

    @property
    def count(self) -> int:
        return len(self.signs)

    @property
    def displacement(self) -> Optional[int]:
        """Front position relative to the seeding site."""
        return None if self.front_unwrapped is None else self.front_unwrapped - self.origin

    def signed_total(self) -> int:
        return sum(self.signs.values())

    def refresh(self, sigma1: SpinConfig, sigma2: SpinConfig, sites: Iterable[int], limit: Optional[int] = None) -> None:
        L = self.ring_size
        if limit is None:
            limit = self.creation_limit if self.creation_limit is not None else L
        for z in sites:
            new = (int(sigma1.spins[z]) - int(sigma2.spins[z])) // 2
            old = self.signs.get(z, 0)
            if new == old:
                continue
            if new == 0:
                del self.signs[z]
            else:
                if old == 0 and self.front is not None and (z - self.front) % L >= limit:
                    self.wrapped = True
                self.signs[z] = new
        if not self.signs or self.front is None:
            return
        if self.front not in self.signs:
            dist = min((x - self.front) % L for x in self.signs)
            self.front = (self.front + dist) % L
            self.front_unwrapped += dist


@dataclass
class CoupledPair:
    sigma1: SpinConfig
    sigma2: SpinConfig
    stream: EventStream
    view: DiscrepancyView
    tagged: Optional[TaggedState] = None

    @classmethod
    def create(cls, sigma1, sigma2, stream, origin=0, tagged=None, creation_limit=None) -> "CoupledPair":
        if sigma1.ring_size != sigma2.ring_size:
            raise ValueError("replicas must live on rings of equal size")
        view = DiscrepancyView.from_pair(sigma1, sigma2, origin, creation_limit)
        return cls(sigma1, sigma2, stream, view, tagged)


def sample_mu_S(params: Params, S, rng, condition: bool = False):
    """Draw ``(sigma1, sigma2)`` from the coupling measure ``mu_S``.

    ``sigma1 ~ Ber_p``; ``sigma2`` copies it off ``S`` and is an independent
    ``Ber_p`` draw on ``S``.  With ``condition=True`` every site of ``S`` is
    forced to be a discrepancy (``sigma2 = -sigma1`` there), which is the
    conditioned law used for single-discrepancy experiments.
    """
    rng = np.random.default_rng(rng)
    L = params.ring_size
    s1 = np.where(rng.random(L) < params.p, 1, -1).astype(np.int8)
    s2 = s1.copy()
    S = np.asarray(sorted({int(x) % L for x in S}), dtype=np.int64)
    if S.size:
        if condition:
            s2[S] = -s1[S]
        else:
            s2[S] = np.where(rng.random(S.size) < params.p, 1, -1)
    return SpinConfig(s1), SpinConfig(s2)


def step_coupled(pair: CoupledPair):
    """Apply the next event of the shared stream to both replicas."""
    event = pair.stream.next_event()
    j1 = resolve_event(pair.sigma1, event)
    j2 = resolve_event(pair.sigma2, event)
    execute_jump(pair.sigma1, j1)
    execute_jump(pair.sigma2, j2)
    L = pair.sigma1.ring_size
    if pair.tagged is not None:
        pair.tagged = update_tagged(pair.tagged, j1, L)
    view = pair.view
    if view.signs and (j1.executed or j2.executed):
        limit = view.creation_limit if view.creation_limit is not None else L
        if pair.tagged is not None and view.front_unwrapped is not None:
            limit = min(limit, L - (view.front_unwrapped - pair.tagged.position))
        touched = {event.site}
        if j1.executed:
            touched.add(j1.target)
        if j2.executed:
            touched.add(j2.target)
        view.refresh(pair.sigma1, pair.sigma2, sorted(touched), limit)
    return j1, j2


@dataclass
class CoupledRun:
    """Outcome of one compiled coupled trajectory."""

    seed: int
    horizon: float
    origin: int
    front_displacement: Optional[int]
    count: int
    wrapped: bool
    coalesced: bool
    min_gap: Optional[int]
    tag_position: Optional[int]
    sample_dt: float
    samples_front: np.ndarray
    samples_y: np.ndarray
    samples_count: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.samples_front.size) + 1) * self.sample_dt


def run_coupled(
    params: Params,
    sigma1: SpinConfig,
    sigma2: SpinConfig,
    seed: int,
    horizon: float,
    origin: int = 0,
    tag_sign: int = 0,
    tag_site: int = 0,
    creation_limit: Optional[int] = None,
    sample_dt: Optional[float] = None,
) -> CoupledRun:
    """Compiled counterpart of repeated :func:`step_coupled` calls.

    ``sigma1`` and ``sigma2`` are advanced in place.
    """
    L = params.ring_size
    stream = EventStream.for_params(seed, params)
    view = DiscrepancyView.from_pair(sigma1, sigma2, origin)
    st = np.zeros(_kernels.N_COUPLED_STATE, dtype=np.int64)
    diff = ((sigma1.spins.astype(np.int64) - sigma2.spins) // 2).astype(np.int8)
    st[COUNT] = view.count
    if view.count:
        st[FRONT] = view.front
        st[FRONT_UNW] = view.front_unwrapped
    else:
        st[COALESCED] = 1
    if tag_sign:
        if sigma1.spins[tag_site] != tag_sign:
            raise ValueError("tagged site does not carry the tagged sign")
        st[TAG_RING] = tag_site
        st[TAG_UNW] = tag_site
        st[TAG_SIGN] = tag_sign
        st[MIN_GAP] = st[FRONT_UNW] - tag_site if view.count else np.iinfo(np.int64).max
    limit = L if creation_limit is None else int(creation_limit)
    if sample_dt is None:
        sample_dt = float(horizon)
    K = int(np.floor(horizon / sample_dt + 1e-9))
    sf = np.zeros(K, dtype=np.int64)
    sy = np.zeros(K, dtype=np.int64)
    sc = np.zeros(K, dtype=np.int64)
    s1, s2 = sigma1.spins, sigma2.spins
    while True:
        dts, sites, us, pos = stream.block()
        new_pos, t = _kernels.advance_coupled(
            s1, s2, diff, dts, sites, us, pos, stream.current_time, float(horizon), params.lambda_plus,
            st, limit, float(sample_dt), sf, sy, sc,
        )
        stream.commit(new_pos, t)
        if new_pos < dts.shape[0]:
            break
    coalesced = bool(st[COALESCED])
    return CoupledRun(
        seed=int(seed),
        horizon=float(horizon),
        origin=int(origin),
        front_displacement=None if coalesced else int(st[FRONT_UNW] - origin),
        count=int(st[COUNT]),
        wrapped=bool(st[WRAPPED]),
        coalesced=coalesced,
        min_gap=int(st[MIN_GAP]) if tag_sign else None,
        tag_position=int(st[TAG_UNW]) if tag_sign else None,
        sample_dt=float(sample_dt),
        samples_front=sf - origin,
        samples_y=sy,
        samples_count=sc,
    )


def _single_discrepancy_run(params, seed, horizon, origin, sample_dt=None, creation_limit=None):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 3)))
    s1, s2 = sample_mu_S(params, [origin], rng, condition=True)
    if creation_limit is None:
        creation_limit = params.ring_size // 2
    return run_coupled(params, s1, s2, seed, horizon, origin=origin, creation_limit=creation_limit, sample_dt=sample_dt)


@dataclass
class FrontSpeedResult:
    params: Params
    horizon: float
    speeds: np.ndarray
    fractions: np.ndarray  # P(front displacement < c t), over non-wrapped trials
    displacements: np.ndarray
    n_wrapped: int
    runs: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "horizon": self.horizon,
            "speeds": self.speeds.tolist(),
            "fractions": self.fractions.tolist(),
            "n_trials": int(self.displacements.size + self.n_wrapped),
            "n_wrapped": self.n_wrapped,
            "mean_speed": float(self.displacements.mean() / self.horizon) if self.displacements.size else None,
        }


def front_speed_experiment(params: Params, trials: int, horizon: float, speeds, master_seed: int = 0, origin: int = 0, sample_dt=None) -> FrontSpeedResult:
    """Empirical ``P(D_t - x < c t)`` for a single initial discrepancy at ``x``."""
    speeds = np.asarray(speeds, dtype=float)
    runs = [_single_discrepancy_run(params, trial_seed(master_seed, k), horizon, origin, sample_dt) for k in range(trials)]
    good = [r for r in runs if not r.wrapped]
    disp = np.array([r.front_displacement for r in good], dtype=float)
    fractions = np.array([np.mean(disp < c * horizon) if disp.size else np.nan for c in speeds])
    return FrontSpeedResult(params, float(horizon), speeds, fractions, disp, len(runs) - len(good), runs)


@dataclass
class MaxSpeedResult:
    params: Params
    horizon: float
    radii: np.ndarray
    tail: np.ndarray  # P(front displacement >= R)
    n_wrapped: int
    fit_slope: Optional[float] = None
    fit_r2: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "horizon": self.horizon,
            "radii": self.radii.tolist(),
            "tail": self.tail.tolist(),
            "n_wrapped": self.n_wrapped,
            "fit_slope_vs_sqrt_R_over_t": self.fit_slope,
            "fit_r2": self.fit_r2,
        }


def max_speed_experiment(params: Params, trials: int, horizon: float, radii, master_seed: int = 0, origin: int = 0, front: Optional[FrontSpeedResult] = None) -> MaxSpeedResult:
    """Tail probabilities ``P(D_t - x >= R)`` and a fit of ``log P`` against ``sqrt(R / t)``.

    ``front`` reuses the runs of an earlier :func:`front_speed_experiment`
    with the same settings instead of drawing new ones.
    """
    if front is None:
        front = front_speed_experiment(params, trials, horizon, [0.0], master_seed, origin)
    radii = np.asarray(radii, dtype=float)
    disp = front.displacements
    tail = np.array([np.mean(disp >= R) for R in radii])
    slope = r2 = None
    mask = tail > 0
    if np.count_nonzero(mask & (radii > 0)) >= 3:
        x = np.sqrt(radii[mask] / horizon)
        y = np.log(tail[mask])
        coef = np.polyfit(x, y, 1)
        resid = y - np.polyval(coef, x)
        ss = np.sum((y - y.mean()) ** 2)
        slope = float(coef[0])
        r2 = float(1 - np.sum(resid**2) / ss) if ss > 0 else 1.0
    return MaxSpeedResult(params, float(horizon), radii, tail, front.n_wrapped, slope, r2)


@dataclass
class TaggedGapResult:
    params: Params
    horizon: float
    min_gaps: np.ndarray
    relative_displacements: np.ndarray
    speeds: np.ndarray
    fractions: np.ndarray  # P(relative displacement < c t)
    n_wrapped: int
    n_coalesced: int

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "horizon": self.horizon,
            "min_gap_min": int(self.min_gaps.min()) if self.min_gaps.size else None,
            "fraction_positive_gap": float(np.mean(self.min_gaps > 0)) if self.min_gaps.size else None,
            "speeds": self.speeds.tolist(),
            "fractions": self.fractions.tolist(),
            "n_wrapped": self.n_wrapped,
            "n_coalesced": self.n_coalesced,
        }


def tagged_gap_experiment(params: Params, trials: int, horizon: float, speeds=(0.05, 0.1), master_seed: int = 0, start: int = 1, width: Optional[int] = None) -> TaggedGapResult:
    """Gap between the front and a push particle tagged to its left.

    The ring analogue of seeding discrepancies on ``[x, infinity)``: the
    replicas are independent on ``S = [start, start + width)`` (default
    width ``L // 2``), agree elsewhere, and a ``+`` particle is tagged at
    site 0 of both.
    """
    L = params.ring_size
    if width is None:
        width = L // 2
    if not 0 < start < L - width:
        raise ValueError("the seeded arc must leave site 0 outside")
    speeds = np.asarray(speeds, dtype=float)
    gaps, rel = [], []
    n_wrapped = n_coal = 0
    for k in range(trials):
        seed = trial_seed(master_seed, k)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 4)))
        s1, s2 = sample_mu_S(params, range(start, start + width), rng)
        s1.spins[0] = s2.spins[0] = 1
        s1, s2 = SpinConfig(s1.spins), SpinConfig(s2.spins)
        initial = DiscrepancyView.from_pair(s1, s2, start)
        r = run_coupled(params, s1, s2, seed, horizon, origin=start, tag_sign=1, tag_site=0)
        if r.wrapped:
            n_wrapped += 1
            continue
        if r.coalesced:
            n_coal += 1
            continue
        gaps.append(r.min_gap)
        # change of the gap D - Y since time 0
        rel.append((r.front_displacement + start - r.tag_position) - initial.front_unwrapped)
    gaps = np.asarray(gaps, dtype=np.int64)
    rel = np.asarray(rel, dtype=float)
    fractions = np.array([np.mean(rel < c * horizon) if rel.size else np.nan for c in speeds])
    return TaggedGapResult(params, float(horizon), gaps, rel, speeds, fractions, n_wrapped, n_coal)


def write_coupled_csv(fh: IO[str], run: CoupledRun) -> None:
    """CSV with columns ``t, front, Y, gap, discrepancyCount``."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "front", "Y", "gap", "discrepancyCount"])
    for t, f, y, c in zip(run.times, run.samples_front, run.samples_y, run.samples_count):
        gap = int(f + run.origin - y)
        writer.writerow([repr(float(t)), int(f), int(y), gap, int(c)])
