"""Master equation for the direct-sum density ``{rho_a}``.

Block ``a`` evolves as::

    d rho_a/dt = -i[H_a, rho_a] + sum_b G_ab rho_b G_ab^dagger - {Lambda_a, rho_a}/2

where ``G_ab`` is the operator of the channel ``b -> a``.  Summed over
sectors the trace is conserved, and the equation is of Lindblad form so
each block stays positive.  This is the ensemble-level oracle for the
trajectory simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .linalg import dagger
from .model import EventModel, gram

TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
HERMITICITY_TOL = 1e-10


class IntegrationError(RuntimeError):
    """Master-equation integration left the set of valid densities."""


@dataclass
class DirectSumDensity:
    """Per-sector density blocks; missing sectors are treated as zero."""

    blocks: dict

    @classmethod
    def zeros(cls, model: EventModel) -> "DirectSumDensity":
        return cls({s.id: np.zeros((s.dim, s.dim), dtype=complex) for s in model.sectors})

    @classmethod
    def pure(cls, model: EventModel, sector: int, psi) -> "DirectSumDensity":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        rho = cls.zeros(model)
        rho.blocks[sector] = np.outer(psi, psi.conj())
        return rho

    def copy(self) -> "DirectSumDensity":
        return DirectSumDensity({k: v.copy() for k, v in self.blocks.items()})

    def trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks.values()))

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(0.5 * (b + dagger(b)))[0]) for b in self.blocks.values())

    def hermiticity_error(self) -> float:
        return max(float(np.max(np.abs(b - dagger(b)), initial=0.0)) for b in self.blocks.values())

    def expectation(self, ops: dict) -> float:
        """``sum_a tr(O_a rho_a)`` for per-sector operators ``ops``."""
        return float(sum(np.trace(ops[k] @ b).real for k, b in self.blocks.items() if k in ops))

    def __add__(self, other: "DirectSumDensity") -> "DirectSumDensity":
        keys = set(self.blocks) | set(other.blocks)
        return DirectSumDensity({k: self.blocks.get(k, 0) + other.blocks.get(k, 0) for k in sorted(keys)})

    def __sub__(self, other: "DirectSumDensity") -> "DirectSumDensity":
        return self + other * -1.0

    def __mul__(self, c: float) -> "DirectSumDensity":
        return DirectSumDensity({k: v * c for k, v in self.blocks.items()})

    __rmul__ = __mul__

    def frobenius(self) -> float:
        return float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in self.blocks.values())))

    def distance(self, other: "DirectSumDensity") -> float:
        """Frobenius distance of the block-diagonal matrices."""
        return (self - other).frobenius()

    def violations(self) -> list[str]:
        if not all(np.all(np.isfinite(b)) for b in self.blocks.values()):
            return ["non-finite entries (trace and positivity undefined)"]
        out = []
        tr = self.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            out.append(f"total trace {tr!r} differs from 1 by {abs(tr - 1.0):.3e}")
        herm = self.hermiticity_error()
        if herm > HERMITICITY_TOL:
            out.append(f"block non-Hermitian by {herm:.3e}")
        lo = self.min_eigenvalue()
        if lo < -POSITIVITY_TOL:
            out.append(f"negative eigenvalue {lo:.3e}")
        return out


def _as_blocks(rho) -> DirectSumDensity:
    return rho if isinstance(rho, DirectSumDensity) else DirectSumDensity(dict(rho))


class _Parts:
    """Operators of the master equation at one time, grouped for fast evaluation."""

    def __init__(self, m: EventModel, t: float, history: Sequence):
        self.h = {}
        self.lam = {}
        for s in m.sectors:
            self.h[s.id] = m.hamiltonian(s.id, t, history)
            self.lam[s.id] = np.zeros((s.dim, s.dim), dtype=complex)
        pairs: dict[tuple[int, int], list] = {}
        for ch in m.jumps:
            g = ch.op(t, history)
            self.lam[ch.source] += gram(g)
            pairs.setdefault((ch.source, ch.target), []).append(g)
        self.channels = [(src, tgt, np.stack(gs), dagger(np.stack(gs))) for (src, tgt), gs in pairs.items()]
        self.eff = {k: -1j * self.h[k] - 0.5 * self.lam[k] for k in self.h}
        self.eff_d = {k: dagger(v) for k, v in self.eff.items()}

    def rhs(self, blocks: dict) -> dict:
        out = {}
        for k, rho in blocks.items():
            # the shortcut a + a^dagger would drive round-off anti-Hermitian parts unstably
            out[k] = self.eff[k] @ rho + rho @ self.eff_d[k]
        for src, tgt, g, gd in self.channels:
            out[tgt] = out[tgt] + np.sum(g @ blocks[src] @ gd, axis=0)
        return out


def _model_piece(m: EventModel, t: float, history: Sequence):
    provs = list(m.hamiltonians.values()) + [j.op for j in m.jumps]
    keys = []
    for p in provs:
        k = p.piece(t, history)
        if k is None:
            return None
        keys.append(k)
    return tuple(keys)


def lindblad_rhs(m: EventModel, rho, t: float = 0.0, history: Sequence = ()) -> DirectSumDensity:
    """Time derivative of the direct-sum density."""
    rho = _as_blocks(rho)
    for s in m.sectors:
        b = rho.blocks.get(s.id)
        if b is None or b.shape != (s.dim, s.dim):
            raise ValueError(f"block for sector {s.id} must have shape ({s.dim}, {s.dim})")
    full = {s.id: rho.blocks[s.id] for s in m.sectors}
    parts = _Parts(m, t, history)
    out = {}
    for k, b in full.items():
        out[k] = -1j * (parts.h[k] @ b - b @ parts.h[k]) - 0.5 * (parts.lam[k] @ b + b @ parts.lam[k])
    for src, tgt, g, gd in parts.channels:
        out[tgt] = out[tgt] + np.sum(g @ full[src] @ gd, axis=0)
    return DirectSumDensity(out)


def _stops(m: EventModel, t0: float, t1: float, extra: Iterable[float]) -> list[float]:
    pts = {b for b in m.breakpoints() if t0 < b < t1} | {p for p in extra if t0 < p < t1}
    return sorted(pts) + [t1]


def integrate_master(m: EventModel, rho0, t0: float, t1: float, step: float = 1e-3,
                     probes: Sequence[float] | None = None, history: Sequence = (),
                     check: bool = True):
    """RK4-integrate the master equation from ``t0`` to ``t1``.

    Without ``probes`` the density at ``t1`` is returned; with ``probes``
    a list of densities at those times (each in ``[t0, t1]``).  With
    ``check`` the invariants (trace, Hermiticity, positivity) are
    verified at every probe and at ``t1``; a violation raises
    :class:`IntegrationError`.  The trace is never renormalized.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    rho = _as_blocks(rho0)
    blocks = {s.id: np.asarray(rho.blocks.get(s.id, np.zeros((s.dim, s.dim))), dtype=complex).copy()
              for s in m.sectors}
    probe_list = sorted(set(float(p) for p in (probes or [])))
    if probe_list and (probe_list[0] < t0 or probe_list[-1] > t1):
        raise ValueError("probe times must lie in [t0, t1]")
    out: dict[float, DirectSumDensity] = {}

    def record(t, blocks):
        d = DirectSumDensity({k: v.copy() for k, v in blocks.items()})
        if check:
            bad = d.violations()
            if bad:
                raise IntegrationError(f"at t={t}: " + "; ".join(bad))
        out[t] = d

    cache: dict = {}

    def parts_at(t):
        key = _model_piece(m, t, history)
        if key is None:
            return _Parts(m, t, history)
        p = cache.get(key)
        if p is None:
            p = cache[key] = _Parts(m, t, history)
        return p

    t = float(t0)
    if t0 in probe_list:
        record(t, blocks)
    for stop in _stops(m, t0, t1, probe_list):
        n = max(1, int(np.ceil((stop - t) / step - 1e-9))) if stop > t else 0
        h = (stop - t) / n if n else 0.0
        pa = parts_at(t) if n else None
        piecewise = pa is not None and _model_piece(m, t, history) is not None
        for i in range(n):
            ts = t + i * h
            if piecewise:
                p0 = pm = p1 = pa
            else:
                p0, pm, p1 = parts_at(ts), parts_at(ts + 0.5 * h), parts_at(ts + h)
            k1 = p0.rhs(blocks)
            k2 = pm.rhs({k: blocks[k] + 0.5 * h * k1[k] for k in blocks})
            k3 = pm.rhs({k: blocks[k] + 0.5 * h * k2[k] for k in blocks})
            k4 = p1.rhs({k: blocks[k] + h * k3[k] for k in blocks})
            blocks = {k: blocks[k] + (h / 6.0) * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]) for k in blocks}
        t = stop
        if t in probe_list:
            record(t, blocks)
    if probes is None:
        record(float(t1), blocks)
        return out[float(t1)]
    return [out[float(p)] for p in probes]


def sum_sectors(rho) -> np.ndarray:
    """Sum of all blocks; requires equal block dimensions."""
    rho = _as_blocks(rho)
    shapes = {b.shape for b in rho.blocks.values()}
    if len(shapes) != 1:
        raise ValueError(f"cannot sum blocks of unequal dimensions {sorted(shapes)}")
    return sum(rho.blocks.values())


def observable_rate(m: EventModel, rho, observables: dict, t: float = 0.0, history: Sequence = ()) -> float:
    """``sum_a tr(O_a * d rho_a/dt)``, the predicted rate of change of an observable."""
    return lindblad_rhs(m, rho, t, history).expectation(observables)
