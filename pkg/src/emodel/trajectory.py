"""Sample histories of the piecewise-deterministic jump process.

One inter-event cycle:

1. draw ``r`` uniform in ``(0, 1]``;
2. propagate the state with the between-event generator until its
   squared norm falls to ``r`` (or the horizon is reached: no event);
3. pick a channel out of the current sector with probability
   ``||G psi||^2 / sum_c ||G_c psi||^2``;
4. jump to ``G psi / ||G psi||`` in the target sector and repeat.

Trajectories are simulated in batches.  Rows sharing a sector and a
constant generator are advanced together with :class:`ConstantFlow`;
every row still follows exactly the cycle above on its own grid, which
restarts at each of its events.  Each trajectory draws from its own
counter-based stream, so results do not depend on how trajectories are
batched or scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lindblad import DirectSumDensity
from .model import EventModel, JumpChannel, ModelError, effective_generator
from .propagator import (DEFAULT_STEP, RATE_FLOOR, ConstantFlow, FlowCache, NumericalDegeneracyError,
                         _generic_piece, grid_split_array, norm2)

DEFAULT_EVENT_BUDGET = 10**6
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Independent uniform stream ``(seed, stream)``.

    Backed by numpy's Philox4x64-10 counter-based generator keyed with
    ``seed + 2**64 * stream``; the same key gives the same draws on any
    platform.
    """

    seed: int
    stream: int = 0
    algorithm = "philox4x64-10"

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64) or not (0 <= self.stream <= _MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.stream << 64) | self.seed))


@dataclass
class EventRecord:
    index: int
    time: float
    source: int
    target: int
    label: str
    state: np.ndarray | None = None


@dataclass
class Trajectory:
    seed: int
    stream: int
    initial_sector: int
    initial_state: np.ndarray
    events: list[EventRecord]
    final_sector: int
    final_state: np.ndarray
    t_end: float
    terminated_by: str  # "horizon" or "event-budget"

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    def inter_event_times(self, t0: float = 0.0) -> np.ndarray:
        return np.diff(np.concatenate([[t0], self.times]))


# -- single-jump pieces -------------------------------------------------------------


def jump_distribution(m: EventModel, sector: int, psi, t: float = 0.0, history: Sequence = ()):
    """Channels leaving ``sector`` and their selection probabilities.

    Returns ``(channels, p)``; channels are ordered by target sector.
    """
    psi = np.asarray(psi, dtype=complex)
    chans = m.channels_from(sector)
    w = np.array([float(norm2(ch.op(t, history) @ psi)) for ch in chans])
    total = float(w.sum()) if w.size else 0.0
    if total <= RATE_FLOOR * float(norm2(psi)):
        raise NumericalDegeneracyError(f"zero total weight: no channel out of sector {sector} acts on the state")
    return chans, w / total


def sector_probabilities(m: EventModel, sector: int, psi, t: float = 0.0, history: Sequence = ()) -> dict:
    chans, p = jump_distribution(m, sector, psi, t, history)
    out: dict = {}
    for ch, pk in zip(chans, p):
        out[ch.target] = out.get(ch.target, 0.0) + float(pk)
    return out


def apply_jump(m: EventModel, channel: JumpChannel | tuple, psi, t: float = 0.0,
               history: Sequence = ()) -> np.ndarray:
    """``G psi / ||G psi||`` for the given channel (or ``(source, target[, label])``)."""
    if not isinstance(channel, JumpChannel):
        channel = m.channel(*channel)
    phi = channel.op(t, history) @ np.asarray(psi, dtype=complex)
    nrm = math.sqrt(float(norm2(phi)))
    if nrm <= 1e-14:
        raise NumericalDegeneracyError(f"jump {channel.name} annihilates the state")
    return phi / nrm


# -- batched engine -----------------------------------------------------------------


@dataclass
class _Run:
    """Results of one batch."""

    trajectories: list[Trajectory]
    probe_sums: list[dict]
    probe_counts: np.ndarray


class _Engine:
    def __init__(self, m: EventModel, t0: float, t_max: float, step: float, event_budget: int,
                 probes: Sequence[float], snapshots: bool):
        if not step > 0:
            raise ValueError("step must be positive")
        if not math.isfinite(t_max) or t_max < t0:
            raise ValueError("t_max must be finite and >= t0")
        if event_budget < 0:
            raise ValueError("event budget must be non-negative")
        self.m = m
        self.t0 = float(t0)
        self.t_max = float(t_max)
        self.h = float(step)
        self.budget = int(event_budget)
        self.probes = [float(p) for p in probes]
        if any(p < t0 or p > t_max for p in self.probes) or self.probes != sorted(self.probes):
            raise ValueError("probe times must be sorted and lie in [t0, t_max]")
        self.snapshots = snapshots
        self.flows = FlowCache(m, step)
        self.per_row = m.history_dependent
        self._bps = {s.id: m.breakpoints(s.id) for s in m.sectors}
        self._probe_arr = np.array(self.probes + [math.inf])
        # sectors whose generator never changes need no per-row key lookup
        self._fixed_key = {s.id: (s.id,) for s in m.sectors
                           if all(p.kind == "constant" for p in m.providers_of(s.id))}

    def _stop(self, sector: int, t: float) -> float:
        for b in self._bps[sector]:
            if b > t:
                return min(b, self.t_max)
        return self.t_max

    def run(self, sector0: int, psi0: np.ndarray, streams: Sequence[RngStream]) -> _Run:
        m = self.m
        n = len(streams)
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (m.dim(sector0),):
            raise ValueError(f"initial state must have length {m.dim(sector0)}")
        if abs(float(norm2(psi0)) - 1.0) > 1e-10:
            raise ValueError("initial state must be normalized")
        self.gens = [s.generator() for s in streams]
        self.sector = [sector0] * n
        self.psi = [psi0] * n
        self.t = [self.t0] * n
        self.r = [1.0 - g.random() for g in self.gens]
        self.events: list[list[EventRecord]] = [[] for _ in range(n)]
        self.pidx = [0] * n
        self.ended: list = [None] * n
        self.probe_sums = [DirectSumDensity.zeros(m).blocks for _ in self.probes]
        self.probe_counts = np.zeros(len(self.probes), dtype=np.int64)
        while self.pidx[0] < len(self.probes) and self.probes[self.pidx[0]] <= self.t0:
            self._record_probe(sector0, self.pidx[0], psi0[None, :] * np.ones((n, 1)))
            for i in range(n):
                self.pidx[i] += 1

        active = list(range(n))
        if self.budget == 0:
            for i in active:
                self._finish(i, "event-budget")
            active = []
        while active:
            if self.per_row:
                self.flows.trim()
            groups: dict = {}
            for i in active:
                key = self._fixed_key.get(self.sector[i])
                if key is None:
                    key = m.piece_key(self.sector[i], self.t[i], self.events[i])
                if key is None:
                    key = ("generic", i)
                elif self.per_row:
                    # histories differ between rows; rows with equal generators still share a flow
                    a = effective_generator(m, self.sector[i], self.t[i], self.events[i])
                    key = ("content", self.sector[i], a.tobytes())
                    self.flows.remember(key, a)
                groups.setdefault(key, []).append(i)
            jumped: list[int] = []
            for key, rows in groups.items():
                if key[0] == "generic":
                    jumped += self._advance_generic(rows[0])
                else:
                    jumped += self._advance_constant(rows, key if key[0] == "content" else None)
            self._jump(jumped)
            active = [i for i in active if self.ended[i] is None]
        trajs = []
        for i, s in enumerate(streams):
            sec, state, t_end, why = self.ended[i]
            trajs.append(Trajectory(s.seed, s.stream, sector0, psi0, self.events[i], sec, state, t_end, why))
        return _Run(trajs, self.probe_sums, self.probe_counts)

    # -- bookkeeping --------------------------------------------------------

    def _record_probe(self, sector, k, rows):
        rows = rows / np.sqrt(norm2(rows))[:, None]
        self.probe_sums[k][sector] += np.einsum("ni,nj->ij", rows, rows.conj())
        self.probe_counts[k] += rows.shape[0]

    def _finish(self, i, why):
        psi = self.psi[i]
        self.ended[i] = (self.sector[i], psi / np.linalg.norm(psi), self.t[i], why)

    def _pending_probe(self, i, t_end):
        k = self.pidx[i]
        if k < len(self.probes) and self.probes[k] <= t_end:
            return k
        return None

    # -- advancing ----------------------------------------------------------

    def _advance_constant(self, rows: list[int], content_key=None) -> list[int]:
        h = self.h
        i0 = rows[0]
        sec = self.sector[i0]
        if content_key is not None:
            flow: ConstantFlow = self.flows.remembered(content_key)
        else:
            flow = self.flows.get(sec, self.t[i0], self.events[i0])
        idx = np.array(rows)
        start = np.stack([self.psi[i] for i in rows])
        t_start = np.array([self.t[i] for i in rows])
        stops = np.array([self._stop(sec, self.t[i]) for i in rows])
        q, rem = grid_split_array(t_start, stops, h)
        r = np.array([self.r[i] for i in rows])

        j, cur = flow.lift(start, r, q)
        t_new = t_start + j * h
        jumped = np.zeros(len(rows), dtype=bool)
        # a crossing inside the next full step
        inner = np.nonzero(j < q)[0]
        # end of the grid: try the partial step up to the stop
        tail = np.nonzero((j == q) & (rem > 0))[0]
        if tail.size:
            coef = flow.coefficients(cur[tail])
            u = flow.substep(coef, rem[tail])
            cross = norm2(u) <= r[tail]
            keep = tail[~cross]
            cur[keep] = u[~cross]
            t_new[keep] = stops[keep]
            if cross.any():
                sub = tail[cross]
                s = flow.solve_crossing(coef[:, cross], r[sub], rem[sub])
                cur[sub] = flow.substep(coef[:, cross], s)
                t_new[sub] += s
                jumped[sub] = True
        if inner.size:
            coef = flow.coefficients(cur[inner])
            s = flow.solve_crossing(coef, r[inner], h)
            cur[inner] = flow.substep(coef, s)
            t_new[inner] += s
            jumped[inner] = True
        reached = ~jumped & ((j == q) & (rem == 0))
        t_new[reached] = stops[reached]

        # probes passed during this advance, from the start-of-advance state
        if self.probes:
            pidx = np.array([self.pidx[i] for i in rows])
            while True:
                pend = self._probe_arr[pidx] <= t_new
                if not pend.any():
                    break
                for k in np.unique(pidx[pend]):
                    sel = np.nonzero(pend & (pidx == k))[0]
                    qq, rr = grid_split_array(t_start[sel], np.full(sel.size, self.probes[k]), h)
                    st = flow.advance(start[sel], qq)
                    st = flow.substep(flow.coefficients(st), rr)
                    self._record_probe(sec, k, st)
                pidx[pend] += 1
            for a, i in enumerate(rows):
                self.pidx[i] = int(pidx[a])

        out = []
        for a, i in enumerate(rows):
            self.psi[i] = cur[a]
            self.t[i] = float(t_new[a])
            if jumped[a]:
                out.append(i)
            elif self.t[i] >= self.t_max:
                self._finish(i, "horizon")
        return out

    def _advance_generic(self, i: int) -> list[int]:
        sec, t, psi, hist = self.sector[i], self.t[i], self.psi[i], self.events[i]
        stop = self._stop(sec, t)
        t_new, cur, jumped = _generic_piece(self.m, sec, psi, t, stop, self.h, hist, self.r[i])
        while (k := self._pending_probe(i, t_new)) is not None:
            _, st, _ = _generic_piece(self.m, sec, psi, t, self.probes[k], self.h, hist)
            self._record_probe(sec, k, st[None, :])
            self.pidx[i] += 1
        self.psi[i], self.t[i] = cur, t_new
        if jumped:
            return [i]
        if t_new >= self.t_max:
            self._finish(i, "horizon")
        return []

    # -- jumps --------------------------------------------------------------

    def _jump(self, rows: list[int]) -> None:
        m = self.m
        groups: dict = {}
        for i in rows:
            key = self._fixed_key.get(self.sector[i])
            if key is None:
                key = m.piece_key(self.sector[i], self.t[i], self.events[i])
            if key is None or self.per_row:
                key = ("row", i)
            groups.setdefault(key, []).append(i)
        for rows in groups.values():
            i0 = rows[0]
            sec, t, hist = self.sector[i0], self.t[i0], self.events[i0]
            chans = m.channels_from(sec)
            cur = np.stack([self.psi[i] for i in rows])
            if not chans:
                raise NumericalDegeneracyError(
                    f"trajectory {i0}: survival crossed r at t={t} in sector {sec} without outgoing channels")
            ops = [ch.op(t, hist) for ch in chans]
            prods = [cur @ g.T for g in ops]
            w = np.stack([norm2(p) for p in prods], axis=1)
            total = w.sum(axis=1)
            bad = total <= RATE_FLOOR * norm2(cur)
            if bad.any():
                b = rows[int(np.nonzero(bad)[0][0])]
                raise NumericalDegeneracyError(
                    f"trajectory {b}: survival reached r={self.r[b]:.6g} at t={self.t[b]:.12g} in sector {sec} "
                    f"where the event rate vanishes")
            cum = np.cumsum(w / total[:, None], axis=1)
            u = np.array([self.gens[i].random() for i in rows])
            choice = np.minimum((u[:, None] >= cum).sum(axis=1), len(chans) - 1)
            for a, i in enumerate(rows):
                c = int(choice[a])
                ch = chans[c]
                phi = prods[c][a]
                phi = phi / math.sqrt(float(w[a, c]))
                ev = self.events[i]
                ev.append(EventRecord(len(ev) + 1, self.t[i], sec, ch.target, ch.name,
                                      phi.copy() if self.snapshots else None))
                self.psi[i] = phi
                self.sector[i] = ch.target
                self.r[i] = 1.0 - self.gens[i].random()
                if len(ev) >= self.budget:
                    self._finish(i, "event-budget")
                elif self.t[i] >= self.t_max:
                    self._finish(i, "horizon")


# -- public API ---------------------------------------------------------------------


def _init_state(m: EventModel, init) -> tuple[int, np.ndarray]:
    sector, psi = init
    psi = np.asarray(psi, dtype=complex)
    return int(sector), psi


def run_trajectory(m: EventModel, init, t0: float = 0.0, t_max: float = 1.0,
                   event_budget: int = DEFAULT_EVENT_BUDGET, rng: RngStream | int = 0,
                   step: float = DEFAULT_STEP, snapshots: bool = False) -> Trajectory:
    """One sample history from ``init = (sector, state)`` until ``t_max`` or the event budget."""
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    sector, psi = _init_state(m, init)
    eng = _Engine(m, t0, t_max, step, event_budget, (), snapshots)
    return eng.run(sector, psi, [rng]).trajectories[0]


@dataclass
class EnsembleSummary:
    """Merged output of :func:`run_ensemble`.

    ``densities[k]`` is the average of the sector-blocked projectors
    ``|psi><psi|`` at ``probe_times[k]`` over all trajectories.
    """

    seed: int
    n: int
    t0: float
    probe_times: list[float]
    densities: list[DirectSumDensity]
    trajectories: list[Trajectory] = field(repr=False)

    @property
    def event_counts(self) -> np.ndarray:
        return np.array([len(tr.events) for tr in self.trajectories])

    def event_count_histogram(self) -> np.ndarray:
        return np.bincount(self.event_counts)

    def inter_event_times(self) -> list[np.ndarray]:
        return [tr.inter_event_times(self.t0) for tr in self.trajectories]

    def first_event_times(self) -> np.ndarray:
        """First event time per trajectory, ``inf`` for event-free histories."""
        return np.array([tr.events[0].time if tr.events else np.inf for tr in self.trajectories])


def _run_chunk(args):
    m, sector, psi, t0, t_max, step, budget, probes, snapshots, seed, lo, hi = args
    eng = _Engine(m, t0, t_max, step, budget, probes, snapshots)
    return eng.run(sector, psi, [RngStream(seed, i) for i in range(lo, hi)])


def run_ensemble(m: EventModel, init, n: int, probe_times: Sequence[float] = (), t_max: float | None = None,
                 seed: int = 0, step: float = DEFAULT_STEP, t0: float = 0.0,
                 event_budget: int = DEFAULT_EVENT_BUDGET, snapshots: bool = False,
                 chunk: int = 2048, workers: int = 1) -> EnsembleSummary:
    """Run ``n`` trajectories, trajectory ``i`` on stream ``(seed, i)``.

    Trajectories are split into fixed chunks of ``chunk`` consecutive
    indices and merged in index order, so the output does not depend on
    ``workers``.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    probes = sorted(float(p) for p in probe_times)
    if t_max is None:
        if not probes:
            raise ValueError("give t_max or probe times")
        t_max = probes[-1]
    sector, psi = _init_state(m, init)
    jobs = [(m, sector, psi, t0, t_max, step, event_budget, probes, snapshots, seed, lo, min(lo + chunk, n))
            for lo in range(0, n, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    trajs: list[Trajectory] = []
    sums = [DirectSumDensity.zeros(m).blocks for _ in probes]
    for part in parts:
        trajs += part.trajectories
        for k, blocks in enumerate(part.probe_sums):
            for s, b in blocks.items():
                sums[k][s] = sums[k][s] + b
    dens = [DirectSumDensity({s: b / n for s, b in blocks.items()}) for blocks in sums]
    return EnsembleSummary(seed, n, float(t0), probes, dens, trajs)


def validate_chain(tr: Trajectory, sequence_reduced: bool = False) -> list[str]:
    """Structural checks on one trajectory: increasing times and chained sectors."""
    out = []
    prev_t, prev_s = -math.inf, tr.initial_sector
    for e in tr.events:
        if not e.time > prev_t:
            out.append(f"event {e.index}: time {e.time} not after {prev_t}")
        if e.source != prev_s:
            out.append(f"event {e.index}: source {e.source} != previous target {prev_s}")
        if e.source == e.target and not sequence_reduced:
            out.append(f"event {e.index}: source equals target")
        prev_t, prev_s = e.time, e.target
    if abs(float(norm2(tr.final_state)) - 1.0) > 1e-9:
        out.append("final state not normalized")
    return out


__all__ = [
    "RngStream", "EventRecord", "Trajectory", "EnsembleSummary", "jump_distribution", "sector_probabilities",
    "apply_jump", "run_trajectory", "run_ensemble", "validate_chain", "ModelError",
]
