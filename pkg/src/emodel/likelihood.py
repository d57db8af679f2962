"""Exact event-history densities.

For a history ``(a0, t0) -> (a1, t1) -> ... -> (an, tn)`` the joint
density of the first ``n`` events is ``||K_n psi0||^2`` with::

    K_n = G_{an,an-1}(tn) W_{an-1}(tn, tn-1) ... G_{a1,a0}(t1) W_{a0}(t1, t0)

Its units are ``1/time^n``.  :func:`windowed_event_probability`
integrates these densities over time bins so they can be compared with
histograms of simulated event logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .model import EventModel, ModelError
from .propagator import DEFAULT_STEP, FlowCache, evolve, norm2, propagator_matrix
from .trajectory import EventRecord


@dataclass(frozen=True)
class HistoryStep:
    sector: int
    t: float
    label: str | None = None


@dataclass
class EventHistory:
    """Start ``(sector, t0)``, ordered events, and an optional end time.

    ``t_end`` is only used by the survival-only case ``n = 0`` and by
    :func:`exclusive_density`.
    """

    sector: int
    t0: float
    steps: list[HistoryStep] = field(default_factory=list)
    t_end: float | None = None

    def __post_init__(self):
        self.steps = [s if isinstance(s, HistoryStep) else HistoryStep(*s) for s in self.steps]

    @property
    def n(self) -> int:
        return len(self.steps)

    def truncated(self, k: int) -> "EventHistory":
        return EventHistory(self.sector, self.t0, self.steps[:k], None)


def _check_history(m: EventModel, h: EventHistory):
    """Resolve the channel of each step; raise ``ValueError`` on a malformed history."""
    chans = []
    prev_s, prev_t = h.sector, h.t0
    for k, st in enumerate(h.steps, 1):
        if not st.t > prev_t:
            raise ValueError(f"event {k}: time {st.t} must be later than {prev_t}")
        if st.sector == prev_s and not m.sequence_reduced:
            raise ValueError(f"event {k}: repeated sector {st.sector}; a non-event cannot be recorded")
        try:
            chans.append(m.channel(prev_s, st.sector, st.label))
        except ModelError as exc:
            raise ValueError(f"event {k}: {exc}") from None
        prev_s, prev_t = st.sector, st.t
    if h.t_end is not None and h.t_end < prev_t:
        raise ValueError("t_end precedes the last event")
    return chans


def kn_apply(m: EventModel, h: EventHistory, psi0, step: float = DEFAULT_STEP) -> np.ndarray:
    """``K_n psi0``, or ``W(t_end, t0) psi0`` for an empty history."""
    chans = _check_history(m, h)
    psi = np.asarray(psi0, dtype=complex)
    if psi.shape != (m.dim(h.sector),):
        raise ValueError(f"psi0 must have length {m.dim(h.sector)}")
    flows = FlowCache(m, step)
    sec, t = h.sector, h.t0
    record: list[EventRecord] = []
    if not chans:
        if h.t_end is None:
            raise ValueError("an empty history needs t_end")
        return evolve(m, sec, psi, t, h.t_end, step, (), flows).state
    for k, (st, ch) in enumerate(zip(h.steps, chans), 1):
        psi = evolve(m, sec, psi, t, st.t, step, tuple(record), flows).state
        psi = ch.op(st.t, tuple(record)) @ psi
        record.append(EventRecord(k, st.t, sec, st.sector, ch.name))
        sec, t = st.sector, st.t
    return psi


def joint_density(m: EventModel, h: EventHistory, psi0, step: float = DEFAULT_STEP) -> float:
    """Joint density ``||K_n psi0||^2`` of the first ``n`` events."""
    if h.steps:
        h = EventHistory(h.sector, h.t0, h.steps)
    return float(norm2(kn_apply(m, h, psi0, step)))


def exclusive_density(m: EventModel, h: EventHistory, psi0, step: float = DEFAULT_STEP) -> float:
    """Density of exactly these events in ``[t0, t_end]``: ``||W(t_end, tn) K_n psi0||^2``."""
    if h.t_end is None:
        raise ValueError("exclusive_density needs t_end")
    phi = kn_apply(m, EventHistory(h.sector, h.t0, h.steps), psi0, step) if h.steps else np.asarray(psi0, complex)
    last = h.steps[-1] if h.steps else None
    sec = last.sector if last else h.sector
    t = last.t if last else h.t0
    record = _records(m, h)
    return float(norm2(evolve(m, sec, phi, t, h.t_end, step, record).state))


def _records(m, h):
    chans = _check_history(m, h)
    out, prev = [], h.sector
    for k, (st, ch) in enumerate(zip(h.steps, chans), 1):
        out.append(EventRecord(k, st.t, prev, st.sector, ch.name))
        prev = st.sector
    return tuple(out)


@dataclass(frozen=True)
class EventFactor:
    """Decomposition of one event's contribution to the joint density."""

    survival: float   # no event in (t_{k-1}, t_k)
    rate: float       # total event rate at t_k in the surviving state
    selection: float  # probability of this channel given an event at t_k

    @property
    def density(self) -> float:
        return self.survival * self.rate * self.selection


def event_factors(m: EventModel, h: EventHistory, psi0, step: float = DEFAULT_STEP) -> list[EventFactor]:
    """Per-event factors from restarting at each normalized post-jump state.

    Their product over the history equals :func:`joint_density`; this is
    the sequential (Markov) route to the same number.
    """
    chans = _check_history(m, h)
    psi = np.asarray(psi0, dtype=complex)
    sec, t = h.sector, h.t0
    record: list[EventRecord] = []
    out = []
    for k, (st, ch) in enumerate(zip(h.steps, chans), 1):
        hist = tuple(record)
        phi = evolve(m, sec, psi, t, st.t, step, hist).state
        surv = float(norm2(phi))
        lam = sum(float(norm2(c.op(st.t, hist) @ phi)) for c in m.channels_from(sec))
        g_phi = ch.op(st.t, hist) @ phi
        w = float(norm2(g_phi))
        rate = lam / surv if surv > 0 else 0.0
        out.append(EventFactor(surv, rate, w / lam if lam > 0 else 0.0))
        if w == 0.0:
            break
        psi = g_phi / math.sqrt(w)
        record.append(EventRecord(k, st.t, sec, st.sector, ch.name))
        sec, t = st.sector, st.t
    return out


def chained_density(m: EventModel, h: EventHistory, psi0, step: float = DEFAULT_STEP) -> float:
    f = event_factors(m, h, psi0, step)
    if len(f) < h.n:
        return 0.0
    return float(np.prod([x.density for x in f]))


def no_event_probability(m: EventModel, sector: int, psi0, t0: float, T: float,
                         step: float = DEFAULT_STEP) -> float:
    """Probability of no event in ``(t0, T]``: ``||W(T, t0) psi0||^2``."""
    if T < t0:
        raise ValueError("T must not precede t0")
    return float(evolve(m, sector, psi0, t0, T, step).survival)


# -- binned probabilities ---------------------------------------------------------


@dataclass
class WindowedTable:
    """Outcome probabilities over the window ``[edges[0], edges[-1]]``.

    ``outcomes`` maps ``(events, bins)`` to the probability of exactly
    those events in those bins and none other up to the window end;
    ``events`` is a tuple of ``(target sector, channel label)``.
    ``quiet`` is the probability of no event at all and ``overflow`` that
    of more than ``max_events`` events.  ``first_event`` is the marginal
    law of the first event, ``(event, bin) -> probability``.
    """

    edges: np.ndarray
    max_events: int
    quiet: float
    outcomes: dict
    first_event: dict
    overflow: float | None

    def total(self) -> float:
        return self.quiet + sum(self.outcomes.values()) + (self.overflow or 0.0)


def _nodes(edges, sub):
    pts = [np.linspace(a, b, sub + 1) for a, b in zip(edges[:-1], edges[1:])]
    t = np.concatenate([pts[0]] + [p[1:] for p in pts[1:]])
    bounds = [(i * sub, (i + 1) * sub) for i in range(len(pts))]
    return t, bounds


def _simpson_weights(x):
    """Weights ``w`` with ``w @ f(x) == simpson(f(x), x=x)``."""
    return simpson(np.eye(len(x)), x=x, axis=1)


def windowed_event_probability(m: EventModel, sector: int, psi0, t0: float, T: float, bins,
                               max_events: int = 1, subdivisions: int = 64,
                               step: float = DEFAULT_STEP) -> WindowedTable:
    """Integrate the joint event densities over time bins.

    ``bins`` is either a bin count (equal bins on ``[t0, T]``) or the bin
    edges.  Each bin uses composite Simpson with ``subdivisions``
    intervals.  Outcomes with up to ``max_events`` (at most 2) events are
    tabulated; for ``max_events <= 1`` the probability of more events is
    integrated as well, so the table accounts for all the mass.
    """
    if max_events > 2 or max_events < 0:
        raise ValueError("unsupported n > 2: windowed integration covers at most two events")
    if subdivisions < 2 or subdivisions % 2:
        raise ValueError("subdivisions must be a positive even number")
    if m.history_dependent:
        raise ValueError("windowed probabilities need history-independent providers")
    edges = np.linspace(t0, T, int(bins) + 1) if np.ndim(bins) == 0 else np.asarray(bins, dtype=float)
    if abs(edges[0] - t0) > 1e-12 or abs(edges[-1] - T) > 1e-12 or np.any(np.diff(edges) <= 0):
        raise ValueError("bins must partition [t0, T]")
    psi0 = np.asarray(psi0, dtype=complex)
    t, bounds = _nodes(edges, subdivisions)
    nn = len(t)
    flows = FlowCache(m, step)
    need = {sector} | {c.target for c in m.channels_from(sector)}
    if max_events >= 1:
        need |= {c2.target for c in m.channels_from(sector) for c2 in m.channels_from(c.target)}
    seg = {a: [propagator_matrix(m, a, t[j], t[j + 1], step, flows=flows) for j in range(nn - 1)] for a in need}

    def tail(a):
        """``W_a(T, t_j)`` for every node j."""
        out = [None] * nn
        out[-1] = np.eye(m.dim(a), dtype=complex)
        for j in range(nn - 2, -1, -1):
            out[j] = out[j + 1] @ seg[a][j]
        return np.stack(out)

    tails = {}

    def get_tail(a):
        if a not in tails:
            tails[a] = tail(a)
        return tails[a]

    psi = np.empty((nn, m.dim(sector)), dtype=complex)
    psi[0] = psi0
    for j in range(nn - 1):
        psi[j + 1] = seg[sector][j] @ psi[j]
    quiet = float(norm2(psi[-1]))
    wbin = [_simpson_weights(t[a:b + 1]) for a, b in bounds]

    first: dict = {}
    outcomes: dict = {}
    overflow = None
    chans1 = m.channels_from(sector)
    # phi1[c][j] = G_c(t_j) psi(t_j)
    phi1 = {c: np.stack([c.op(t[j]) @ psi[j] for j in range(nn)]) for c in chans1}
    for c in chans1:
        f = norm2(phi1[c])
        for i, (a, b) in enumerate(bounds):
            first[((c.target, c.name), i)] = float(wbin[i] @ f[a:b + 1])
    if max_events == 0:
        overflow = float(sum(_simpson_weights(t) @ norm2(phi1[c]) for c in chans1))
    if max_events >= 1:
        for c in chans1:
            tl = get_tail(c.target)
            g = norm2(np.einsum("jab,jb->ja", tl, phi1[c]))
            for i, (a, b) in enumerate(bounds):
                outcomes[(((c.target, c.name),), (i,))] = float(wbin[i] @ g[a:b + 1])
    if max_events >= 1:
        total2 = 0.0
        for c1 in chans1:
            b_sec = c1.target
            for c2 in m.channels_from(b_sec):
                ops2 = [c2.op(tt) for tt in t]
                # rows j: state after the first event at t_j, carried forward to t_k
                carry = phi1[c1].copy()
                f = np.zeros((nn, nn))
                ftail = np.zeros((nn, nn)) if max_events == 2 else None
                tl = get_tail(c2.target) if max_events == 2 else None
                for k in range(nn):
                    if k > 0:
                        carry[:k] = carry[:k] @ seg[b_sec][k - 1].T
                    x = carry[:k + 1] @ ops2[k].T
                    f[:k + 1, k] = norm2(x)
                    if ftail is not None:
                        ftail[:k + 1, k] = norm2(x @ tl[k].T)
                if max_events == 1:
                    total2 += _triangle(f, t, 0, nn - 1)
                else:
                    key_ev = ((c1.target, c1.name), (c2.target, c2.name))
                    for i1, (a1, b1) in enumerate(bounds):
                        for i2, (a2, b2) in enumerate(bounds):
                            if i2 < i1:
                                continue
                            if i1 == i2:
                                p = _triangle(ftail, t, a1, b1)
                            else:
                                p = float(wbin[i1] @ ftail[a1:b1 + 1, a2:b2 + 1] @ wbin[i2])
                            outcomes[(key_ev, (i1, i2))] = p
        if max_events == 1:
            overflow = total2
    return WindowedTable(edges, max_events, quiet, outcomes, first, overflow)


def _triangle(f, t, a, b):
    """``int_{t_a}^{t_b} dt1 int_{t1}^{t_b} dt2 f(t1, t2)`` on node indices."""
    inner = np.zeros(b - a + 1)
    for j in range(a, b):
        inner[j - a] = simpson(f[j, j:b + 1], x=t[j:b + 1]) if b - j >= 1 else 0.0
    return float(simpson(inner, x=t[a:b + 1]))


def empirical_first_event_table(trajectories, edges) -> dict:
    """Frequencies of ``(first event, bin)`` and of ``"quiet"`` (no event in the window)."""
    edges = np.asarray(edges, dtype=float)
    counts: dict = {}
    n = 0
    for tr in trajectories:
        n += 1
        ev = tr.events[0] if tr.events else None
        if ev is None or ev.time > edges[-1]:
            counts["quiet"] = counts.get("quiet", 0) + 1
            continue
        i = min(int(np.searchsorted(edges, ev.time, side="right")) - 1, len(edges) - 2)
        key = ((ev.target, ev.label), i)
        counts[key] = counts.get(key, 0) + 1
    return {k: v / n for k, v in counts.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
