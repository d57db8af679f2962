"""Between-event evolution ``psi' = (-iH - Lambda/2) psi`` and jump-time search.

Integration is classical fixed-step RK4 on the grid ``t0 + k*step``;
steps never straddle provider breakpoints, where the grid restarts.
While the generator ``A`` is constant one RK4 step is the matrix
``P = 1 + sA + (sA)^2/2 + (sA)^3/6 + (sA)^4/24``, so k steps are ``P^k``.
:class:`ConstantFlow` caches ``P^(2^m)`` and walks the grid by binary
lifting, which gives the same grid states as stepping one by one while
costing O(log k) products.  Generators that vary continuously in time
fall back to explicit stage-by-stage RK4.

The squared norm of the propagated state is the no-event survival
probability; a jump happens where it first reaches the threshold ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import as_vector, taylor4
from .model import EventModel, effective_generator, lambda_of

DEFAULT_STEP = 1e-3
#: normalized event rate below which a jump target cannot be sampled
RATE_FLOOR = 1e-14
# fraction of a step absorbed as round-off when counting grid steps
_GRID_SLACK = 1e-9
_ROOT_TOL = 1e-14


class NumericalDegeneracyError(RuntimeError):
    """Survival crossed the threshold where the event rate vanishes."""


@dataclass(frozen=True)
class PropagationResult:
    state: np.ndarray
    t_end: float
    survival: float


@dataclass(frozen=True)
class JumpSearch:
    """Outcome of :func:`find_jump_time`.

    ``jumped`` is false when the survival stayed above the threshold up to
    the horizon; then ``t`` is the horizon and ``state`` the surviving
    (unnormalized) state there.
    """

    jumped: bool
    t: float
    state: np.ndarray

    @property
    def survival(self) -> float:
        return float(np.vdot(self.state, self.state).real)


def norm2(rows: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", rows.real, rows.real) + np.einsum("...i,...i->...", rows.imag, rows.imag)


class ConstantFlow:
    """RK4 flow of a constant generator ``a`` with grid step ``h``.

    States are handled as rows, ``psi`` of shape ``(n, d)``.
    """

    def __init__(self, a: np.ndarray, h: float):
        if not h > 0:
            raise ValueError("step must be positive")
        self.a = np.asarray(a, dtype=complex)
        self.h = float(h)
        self._at = self.a.T.copy()
        self._powers = [taylor4(self.a, self.h).T.copy()]

    def power_t(self, m: int) -> np.ndarray:
        """Transpose of ``P^(2^m)``."""
        while len(self._powers) <= m:
            p = self._powers[-1]
            self._powers.append(p @ p)
        return self._powers[m]

    def advance(self, psi: np.ndarray, q) -> np.ndarray:
        """Rows moved forward by ``q`` (per-row integer) grid steps."""
        out = np.array(psi, dtype=complex, copy=True)
        q = np.broadcast_to(np.asarray(q, dtype=np.int64), out.shape[:1]).copy()
        m = 0
        while q.any():
            sel = np.nonzero(q & 1)[0]
            if sel.size:
                out[sel] = out[sel] @ self.power_t(m)
            q >>= 1
            m += 1
        return out

    def lift(self, psi: np.ndarray, r: np.ndarray, limit: np.ndarray):
        """Largest ``j <= limit`` with survival after ``j`` steps above ``r``.

        Survival is non-increasing along the grid, so binary lifting finds
        the last grid point before the threshold is reached.  Returns
        ``(j, rows at step j)``.
        """
        out = np.array(psi, dtype=complex, copy=True)
        limit = np.asarray(limit, dtype=np.int64)
        j = np.zeros(out.shape[0], dtype=np.int64)
        top = int(limit.max(initial=0)).bit_length()
        for m in range(top - 1, -1, -1):
            inc = 1 << m
            idx = np.nonzero(j + inc <= limit)[0]
            if not idx.size:
                continue
            cand = out[idx] @ self.power_t(m)
            ok = norm2(cand) > r[idx]
            acc = idx[ok]
            out[acc] = cand[ok]
            j[acc] += inc
        return j, out

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        """``v_k = a^k psi / k!`` for k = 0..4, so a sub-step of size s is ``sum s^k v_k``."""
        v = [np.asarray(psi, dtype=complex)]
        for k in range(1, 5):
            v.append(v[-1] @ self._at / k)
        return np.stack(v)

    @staticmethod
    def substep(coef: np.ndarray, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)[..., None]
        u = coef[4]
        for k in (3, 2, 1, 0):
            u = u * s + coef[k]
        return u

    @staticmethod
    def _substep_with_slope(coef, s):
        s = s[:, None]
        u = coef[4]
        du = 4 * coef[4]
        for k in (3, 2, 1, 0):
            u = u * s + coef[k]
            if k:
                du = du * s + k * coef[k]
        return u, du

    def solve_crossing(self, coef: np.ndarray, r: np.ndarray, hi) -> np.ndarray:
        """Sub-step ``s`` in ``(0, hi]`` where the squared norm equals ``r``.

        Requires survival above ``r`` at 0 and at most ``r`` at ``hi``.
        Safeguarded Newton: a Newton step leaving the bracket is replaced
        by bisection, so convergence is never worse than bisection.
        """
        n = coef.shape[1]
        lo = np.zeros(n)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        f_lo = norm2(coef[0]) - r
        f_hi = norm2(self.substep(coef, hi)) - r
        done = f_hi >= 0  # touches r exactly at hi
        s = hi.copy()
        denom = f_lo - f_hi
        guess = np.where(denom > 0, lo + (hi - lo) * f_lo / np.where(denom > 0, denom, 1.0), 0.5 * hi)
        s = np.where(done, hi, guess)
        active = ~done
        for _ in range(200):
            if not active.any():
                break
            ia = np.nonzero(active)[0]
            u, du = self._substep_with_slope(coef[:, ia], s[ia])
            f = norm2(u) - r[ia]
            fp = 2.0 * np.einsum("ij,ij->i", u.conj(), du).real
            pos = f > 0
            lo[ia] = np.where(pos, s[ia], lo[ia])
            hi[ia] = np.where(pos, hi[ia], s[ia])
            with np.errstate(divide="ignore", invalid="ignore"):
                s_new = s[ia] - f / fp
            bad = ~np.isfinite(s_new) | (s_new <= lo[ia]) | (s_new >= hi[ia])
            s_new = np.where(bad, 0.5 * (lo[ia] + hi[ia]), s_new)
            conv = (np.abs(s_new - s[ia]) <= _ROOT_TOL) | (hi[ia] - lo[ia] <= _ROOT_TOL) | (f == 0)
            s[ia] = np.where(f == 0, s[ia], s_new)
            active[ia[conv]] = False
        return s


class FlowCache:
    """Per-model cache of :class:`ConstantFlow` objects keyed by generator piece."""

    def __init__(self, model: EventModel, step: float):
        self.model = model
        self.step = float(step)
        self._flows: dict = {}
        self.max_entries = 4096

    def get(self, sector: int, t: float, history: Sequence = ()):
        key = self.model.piece_key(sector, t, history)
        if key is None:
            return None
        flow = self._flows.get(key)
        if flow is None:
            flow = ConstantFlow(effective_generator(self.model, sector, t, history), self.step)
            self._flows[key] = flow
        return flow

    def remember(self, key, a: np.ndarray) -> None:
        """Register generator ``a`` under an arbitrary key (e.g. its bytes)."""
        if key not in self._flows:
            self._flows[key] = a

    def trim(self) -> None:
        """Drop everything once the cache has grown past ``max_entries``."""
        if len(self._flows) > self.max_entries:
            self._flows.clear()

    def remembered(self, key) -> ConstantFlow:
        flow = self._flows[key]
        if not isinstance(flow, ConstantFlow):
            flow = self._flows[key] = ConstantFlow(flow, self.step)
        return flow


def stops_between(model: EventModel, sector: int, t0: float, t1: float) -> list[float]:
    """Breakpoints of ``sector`` strictly inside ``(t0, t1)`` followed by ``t1``."""
    return [b for b in model.breakpoints(sector) if t0 < b < t1] + [t1]


def grid_split(t: float, stop: float, h: float) -> tuple[int, float]:
    """Number of full steps from ``t`` towards ``stop`` and the partial remainder."""
    span = stop - t
    if span <= 0:
        return 0, 0.0
    q = int(math.floor(span / h + _GRID_SLACK))
    rem = span - q * h
    if rem < h * _GRID_SLACK:
        rem = 0.0
    return q, rem


def grid_split_array(t: np.ndarray, stop: np.ndarray, h: float):
    """Vectorized :func:`grid_split`."""
    span = np.maximum(stop - t, 0.0)
    q = np.floor(span / h + _GRID_SLACK).astype(np.int64)
    rem = span - q * h
    rem[rem < h * _GRID_SLACK] = 0.0
    return q, rem


# -- continuously time-dependent generators -----------------------------------


def rk4_step(model: EventModel, sector: int, t: float, psi: np.ndarray, s: float, history: Sequence = ()):
    def gen(tt):
        return effective_generator(model, sector, tt, history)

    a0, am, a1 = gen(t), gen(t + 0.5 * s), gen(t + s)
    k1 = a0 @ psi
    k2 = am @ (psi + 0.5 * s * k1)
    k3 = am @ (psi + 0.5 * s * k2)
    k4 = a1 @ (psi + s * k3)
    return psi + (s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _generic_piece(model, sector, psi, t, stop, h, history, r=None):
    """RK4 from ``t`` to ``stop``; with ``r`` stop at the first crossing.

    Returns ``(t_reached, state, jumped)``.
    """
    while t < stop:
        q, rem = grid_split(t, stop, h)
        s = h if q >= 1 else rem
        if s <= 0:
            break
        nxt = rk4_step(model, sector, t, psi, s, history)
        if r is not None and float(np.vdot(nxt, nxt).real) <= r:
            lo, hi = 0.0, s
            for _ in range(200):
                if hi - lo <= 1e-13:
                    break
                mid = 0.5 * (lo + hi)
                u = rk4_step(model, sector, t, psi, mid, history)
                if float(np.vdot(u, u).real) > r:
                    lo = mid
                else:
                    hi = mid
            return t + hi, rk4_step(model, sector, t, psi, hi, history), True
        psi = nxt
        t = stop if q == 0 or (q == 1 and rem == 0.0) else t + h
    return stop, psi, False


# -- single-state API -----------------------------------------------------------


def _constant_piece(flow: ConstantFlow, psi, t, stop, r=None):
    q, rem = grid_split(t, stop, flow.h)
    rows = psi[None, :]
    if r is None:
        rows = flow.advance(rows, q)
        if rem > 0:
            rows = flow.substep(flow.coefficients(rows), np.array([rem]))
        return stop, rows[0], False
    rr = np.array([r])
    j, rows = flow.lift(rows, rr, np.array([q]))
    j = int(j[0])
    t_grid = t + j * flow.h
    if j < q:
        coef = flow.coefficients(rows)
        s = flow.solve_crossing(coef, rr, flow.h)
        return t_grid + float(s[0]), flow.substep(coef, s)[0], True
    if rem > 0:
        coef = flow.coefficients(rows)
        u = flow.substep(coef, np.array([rem]))
        if norm2(u)[0] <= r:
            s = flow.solve_crossing(coef, rr, rem)
            return t_grid + float(s[0]), flow.substep(coef, s)[0], True
        return stop, u[0], False
    return stop, rows[0], False


def _run(model, sector, psi0, t0, t1, step, history, r=None, flows=None):
    if not step > 0:
        raise ValueError("step must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    flows = flows or FlowCache(model, step)
    psi = np.asarray(psi0, dtype=complex)
    t = float(t0)
    for stop in stops_between(model, sector, t0, t1):
        flow = flows.get(sector, t, history)
        if flow is None:
            t, psi, jumped = _generic_piece(model, sector, psi, t, stop, step, history, r)
        else:
            t, psi, jumped = _constant_piece(flow, psi, t, stop, r)
        if jumped:
            return t, psi, True
    return float(t1), psi, False


def evolve(model: EventModel, sector: int, psi0, t0: float, t1: float, step: float = DEFAULT_STEP,
           history: Sequence = (), flows: FlowCache | None = None) -> PropagationResult:
    """Integrate the between-event equation from ``t0`` to ``t1``.

    Returns the unnormalized state ``W(t1, t0) psi0`` and its squared norm.
    """
    psi0 = as_vector(psi0)
    if psi0.shape[0] != model.dim(sector):
        raise ValueError(f"state has length {psi0.shape[0]}, sector {sector} has dimension {model.dim(sector)}")
    t, psi, _ = _run(model, sector, psi0, t0, t1, step, history, None, flows)
    return PropagationResult(psi, t, float(np.vdot(psi, psi).real))


def find_jump_time(model: EventModel, sector: int, psi0, t0: float, r: float, t_max: float,
                   step: float = DEFAULT_STEP, history: Sequence = (),
                   flows: FlowCache | None = None) -> JumpSearch:
    """First time the survival ``||W(t, t0) psi0||^2`` reaches ``r``.

    The crossing step is located on the RK4 grid and refined inside that
    step by re-integrating from the step start.  If the survival stays
    above ``r`` until ``t_max`` no jump is reported.
    """
    if not (0.0 < r <= 1.0):
        raise ValueError(f"threshold r must lie in (0, 1], got {r}")
    psi0 = as_vector(psi0)
    nrm = float(np.vdot(psi0, psi0).real)
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError(f"initial state must be normalized (norm^2 = {nrm})")
    if not math.isfinite(t_max):
        raise ValueError("t_max must be finite")
    t, psi, jumped = _run(model, sector, psi0, t0, t_max, step, history, r, flows)
    if jumped:
        rate = float(np.vdot(psi, lambda_of(model, sector, t, history) @ psi).real)
        if rate <= RATE_FLOOR * float(np.vdot(psi, psi).real):
            raise NumericalDegeneracyError(
                f"survival reached r={r} at t={t} in sector {sector} where the event rate is {rate:.3e}")
    return JumpSearch(jumped, t, psi)


def survival_curve(model: EventModel, sector: int, psi0, t0: float, t1: float,
                   step: float = DEFAULT_STEP, history: Sequence = ()):
    """Grid times and survivals from stepping one RK4 step at a time.

    Slow; meant for inspecting monotonicity and convergence order.
    """
    psi = as_vector(psi0)
    times, surv = [float(t0)], [float(np.vdot(psi, psi).real)]
    t = float(t0)
    for stop in stops_between(model, sector, t0, t1):
        flow = FlowCache(model, step).get(sector, t, history)
        while t < stop:
            q, rem = grid_split(t, stop, step)
            s = step if q >= 1 else rem
            if s <= 0:
                t = stop
                break
            if flow is None:
                psi = rk4_step(model, sector, t, psi, s, history)
            else:
                psi = flow.substep(flow.coefficients(psi[None, :]), np.array([s]))[0]
            t = stop if q == 0 or (q == 1 and rem == 0.0) else t + step
            times.append(t)
            surv.append(float(np.vdot(psi, psi).real))
    return np.array(times), np.array(surv)


def propagator_matrix(model: EventModel, sector: int, t0: float, t1: float, step: float = DEFAULT_STEP,
                      history: Sequence = (), flows: FlowCache | None = None) -> np.ndarray:
    """The operator ``W(t1, t0)`` on the same RK4 grid that :func:`evolve` uses."""
    flows = flows or FlowCache(model, step)
    d = model.dim(sector)
    rows = np.eye(d, dtype=complex)  # row k evolves basis vector k
    t = float(t0)
    for stop in stops_between(model, sector, t0, t1):
        flow = flows.get(sector, t, history)
        if flow is None:
            rows = np.stack([_generic_piece(model, sector, v, t, stop, step, history)[1] for v in rows])
        else:
            q, rem = grid_split(t, stop, step)
            rows = flow.advance(rows, q)
            if rem > 0:
                rows = flow.substep(flow.coefficients(rows), np.full(d, rem))
        t = stop
    return rows.T
