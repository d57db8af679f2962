"""Event models: sectors, Hamiltonians and jump (transition) operators.

A model is a finite set of sectors, each carrying its own Hilbert space
of dimension ``dim``.  Each sector has a Hamiltonian provider and there
is a list of jump channels ``source -> target`` each with an operator
provider of shape ``(dim_target, dim_source)``.  The total-rate operator
of a sector is the sum of ``G^dagger G`` over its outgoing channels.

Operators are given through providers so that they may depend on time
and on the history of recorded events.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import HERMITIAN_TOL, as_matrix, dagger, gram, is_hermitian


class ModelError(ValueError):
    """Raised when a model is used in a way its structure forbids."""


# ---------------------------------------------------------------------------
# operator providers
# ---------------------------------------------------------------------------


class Constant:
    """Time- and history-independent operator."""

    kind = "constant"
    breakpoints: tuple[float, ...] = ()

    def __init__(self, matrix):
        self.matrix = as_matrix(matrix)
        self.matrix.setflags(write=False)
        self.shape = self.matrix.shape

    def __call__(self, t: float, history: Sequence = ()) -> np.ndarray:
        return self.matrix

    def piece(self, t: float, history: Sequence = ()):
        return 0


class PiecewiseConstant:
    """Operator that switches value at fixed breakpoints.

    ``matrices[0]`` is active before ``breakpoints[0]``, ``matrices[k]`` on
    ``[breakpoints[k-1], breakpoints[k])``.
    """

    kind = "piecewise-constant"

    def __init__(self, breakpoints, matrices):
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.matrices = [as_matrix(m) for m in matrices]
        if len(self.matrices) != len(self.breakpoints) + 1:
            raise ModelError("piecewise provider needs len(matrices) == len(breakpoints) + 1")
        if any(b1 <= b0 for b0, b1 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ModelError("piecewise breakpoints must be strictly increasing")
        shapes = {m.shape for m in self.matrices}
        if len(shapes) != 1:
            raise ModelError(f"piecewise provider matrices have differing shapes {sorted(shapes)}")
        for m in self.matrices:
            m.setflags(write=False)
        self.shape = self.matrices[0].shape

    def piece(self, t: float, history: Sequence = ()) -> int:
        return bisect.bisect_right(self.breakpoints, t)

    def __call__(self, t: float, history: Sequence = ()) -> np.ndarray:
        return self.matrices[self.piece(t)]


class HistoryDependent:
    """Operator computed by a callback ``fn(t, history) -> matrix``.

    ``history`` is the ordered tuple of event records observed so far.
    The callback must be pure.  If ``time_dependent`` is false the value
    may only change when the history does, which lets the integrators
    treat it as constant between events.
    """

    kind = "history-dependent"

    def __init__(self, fn: Callable, shape: tuple[int, int], time_dependent: bool = True,
                 breakpoints: Sequence[float] = ()):
        self.fn = fn
        self.shape = tuple(shape)
        self.time_dependent = time_dependent
        self.breakpoints = tuple(float(b) for b in breakpoints)

    def __call__(self, t: float, history: Sequence = ()) -> np.ndarray:
        m = np.asarray(self.fn(t, tuple(history)), dtype=complex)
        if m.shape != self.shape:
            raise ModelError(f"provider returned shape {m.shape}, declared {self.shape}")
        return m

    def piece(self, t: float, history: Sequence = ()):
        if self.time_dependent:
            return None
        return ("history", len(history), bisect.bisect_right(self.breakpoints, t))


def as_provider(x):
    if isinstance(x, (Constant, PiecewiseConstant, HistoryDependent)):
        return x
    if callable(x):
        raise ModelError("wrap callbacks in HistoryDependent(fn, shape) to declare their shape")
    return Constant(x)


# ---------------------------------------------------------------------------
# model structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorSpec:
    id: int
    dim: int
    label: str = ""


@dataclass(frozen=True)
class JumpChannel:
    """An event channel ``source -> target`` with operator provider ``op``."""

    source: int
    target: int
    op: object
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label if self.label is not None else f"{self.source}->{self.target}"


@dataclass
class EventModel:
    """Sectors, Hamiltonians and jump channels.

    ``hamiltonians`` maps sector id to a provider (a missing entry means
    ``H = 0``).  ``jumps`` is a list of :class:`JumpChannel`.

    ``sequence_reduced`` marks models whose sectors stand for classes of
    event records (see :mod:`emodel.zoo`): there a channel with
    ``source == target`` is a genuine event that appends its label to the
    suppressed record, so the no-diagonal rule is checked on labels
    instead.
    """

    sectors: list[SectorSpec]
    hamiltonians: dict = field(default_factory=dict)
    jumps: list[JumpChannel] = field(default_factory=list)
    name: str = ""
    sequence_reduced: bool = False

    def __post_init__(self):
        self.sectors = [s if isinstance(s, SectorSpec) else SectorSpec(*s) for s in self.sectors]
        self.hamiltonians = {int(k): as_provider(v) for k, v in self.hamiltonians.items()}
        self.jumps = [
            JumpChannel(j.source, j.target, as_provider(j.op), j.label) if isinstance(j, JumpChannel)
            else JumpChannel(int(j[0]), int(j[1]), as_provider(j[2]), j[3] if len(j) > 3 else None)
            for j in self.jumps
        ]
        self._out: dict[int, list[JumpChannel]] = {}
        self._in: dict[int, list[JumpChannel]] = {}
        for j in self.jumps:
            self._out.setdefault(j.source, []).append(j)
            self._in.setdefault(j.target, []).append(j)
        # ties between targets are resolved in ascending sector order
        for chans in self._out.values():
            chans.sort(key=lambda j: j.target)

    # -- structure -----------------------------------------------------------

    def dim(self, sector: int) -> int:
        return self.sectors[sector].dim

    @property
    def sector_ids(self) -> list[int]:
        return [s.id for s in self.sectors]

    def channels_from(self, sector: int) -> list[JumpChannel]:
        return self._out.get(sector, [])

    def channels_into(self, sector: int) -> list[JumpChannel]:
        return self._in.get(sector, [])

    def channel(self, source: int, target: int, label: str | None = None) -> JumpChannel:
        cands = [j for j in self.channels_from(source) if j.target == target]
        if label is not None:
            cands = [j for j in cands if j.name == label]
        if not cands:
            raise ModelError(f"no jump channel {source}->{target}" + (f" labelled {label!r}" if label else ""))
        if len(cands) > 1:
            raise ModelError(f"jump {source}->{target} is ambiguous; give a label")
        return cands[0]

    def providers_of(self, sector: int) -> list:
        """Providers entering the between-event generator of ``sector``."""
        out = [j.op for j in self.channels_from(sector)]
        if sector in self.hamiltonians:
            out.append(self.hamiltonians[sector])
        return out

    def breakpoints(self, sector: int | None = None) -> tuple[float, ...]:
        if sector is None:
            provs = list(self.hamiltonians.values()) + [j.op for j in self.jumps]
        else:
            provs = self.providers_of(sector)
        return tuple(sorted({b for p in provs for b in p.breakpoints}))

    def piece_key(self, sector: int, t: float, history: Sequence = ()):
        """Hashable key constant while the generator of ``sector`` is constant.

        ``None`` if some provider varies continuously in time.
        """
        keys = []
        for p in self.providers_of(sector):
            k = p.piece(t, history)
            if k is None:
                return None
            keys.append(k)
        return (sector, tuple(keys))

    @property
    def history_dependent(self) -> bool:
        provs = list(self.hamiltonians.values()) + [j.op for j in self.jumps]
        return any(isinstance(p, HistoryDependent) for p in provs)

    # -- operators -----------------------------------------------------------

    def hamiltonian(self, sector: int, t: float, history: Sequence = ()) -> np.ndarray:
        p = self.hamiltonians.get(sector)
        d = self.dim(sector)
        if p is None:
            return np.zeros((d, d), dtype=complex)
        return p(t, history)

    def jump_operator(self, ch: JumpChannel, t: float, history: Sequence = ()) -> np.ndarray:
        return ch.op(t, history)


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    def __str__(self) -> str:
        return "valid" if self.valid else "; ".join(self.violations)


def _sample_times(p) -> list[float]:
    bps = list(p.breakpoints)
    if not bps:
        return [0.0]
    return [bps[0] - 1.0] + bps


def validate_model(m: EventModel) -> ValidationReport:
    """Check the structural rules of ``m`` and list every violation.

    Providers are sampled at one time per constant piece (callbacks at
    ``t = 0`` with an empty history).
    """
    v: list[str] = []
    if not m.sectors:
        v.append("empty sector set")
    ids = [s.id for s in m.sectors]
    if ids != list(range(len(ids))):
        v.append(f"sector ids must be 0..{len(ids) - 1} in order, got {ids}")
    for s in m.sectors:
        if s.dim < 1:
            v.append(f"sector {s.id}: dimension must be >= 1")
    known = set(ids)
    dims = {s.id: s.dim for s in m.sectors}

    for sid, p in m.hamiltonians.items():
        if sid not in known:
            v.append(f"Hamiltonian given for unknown sector {sid}")
            continue
        d = dims[sid]
        if tuple(p.shape) != (d, d):
            v.append(f"sector {sid}: Hamiltonian shape {tuple(p.shape)} != ({d}, {d})")
            continue
        for t in _sample_times(p):
            try:
                h = p(t, ())
            except Exception as exc:  # report, never partial
                v.append(f"sector {sid}: Hamiltonian provider failed: {exc}")
                break
            if not np.all(np.isfinite(h)):
                v.append(f"sector {sid}: Hamiltonian has non-finite entries")
                break
            if not is_hermitian(h, HERMITIAN_TOL):
                v.append(f"sector {sid}: non-Hermitian Hamiltonian")
                break

    seen_labels: dict[tuple[int, int], set] = {}
    for j in m.jumps:
        tag = f"jump {j.source}->{j.target}" + (f" [{j.label}]" if j.label is not None else "")
        if j.source not in known or j.target not in known:
            v.append(f"{tag}: unknown sector")
            continue
        if j.source == j.target and not m.sequence_reduced:
            v.append(f"{tag}: diagonal jump (G_aa is fixed to 0; a non-event cannot be a jump)")
        pair = (j.source, j.target)
        names = seen_labels.setdefault(pair, set())
        if j.name in names:
            v.append(f"{tag}: duplicate channel label")
        names.add(j.name)
        if m.sequence_reduced and j.source == j.target and j.label is None:
            v.append(f"{tag}: reduced self-channels must carry an event label")
        shape = (dims[j.target], dims[j.source])
        if tuple(j.op.shape) != shape:
            v.append(f"{tag}: operator shape {tuple(j.op.shape)} != {shape}")
            continue
        for t in _sample_times(j.op):
            try:
                g = j.op(t, ())
            except Exception as exc:
                v.append(f"{tag}: provider failed: {exc}")
                break
            if not np.all(np.isfinite(g)):
                v.append(f"{tag}: non-finite entries")
                break
    return ValidationReport(v)


def check_model(m: EventModel) -> EventModel:
    rep = validate_model(m)
    if not rep.valid:
        raise ModelError(str(rep))
    return m


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def lambda_of(m: EventModel, sector: int, t: float = 0.0, history: Sequence = ()) -> np.ndarray:
    """Total-rate operator: sum of ``G^dagger G`` over channels leaving ``sector``."""
    d = m.dim(sector)
    out = np.zeros((d, d), dtype=complex)
    for ch in m.channels_from(sector):
        out += gram(ch.op(t, history))
    return out


def effective_generator(m: EventModel, sector: int, t: float = 0.0, history: Sequence = ()) -> np.ndarray:
    """``-i H - Lambda / 2``, the between-event generator of ``sector``."""
    return -1j * m.hamiltonian(sector, t, history) - 0.5 * lambda_of(m, sector, t, history)


def total_rate(m: EventModel, sector: int, psi, t: float = 0.0, history: Sequence = ()) -> float:
    """Instantaneous event rate ``<psi|Lambda|psi> / <psi|psi>``."""
    psi = np.asarray(psi, dtype=complex)
    nrm = float(np.vdot(psi, psi).real)
    if nrm == 0.0:
        raise ValueError("total_rate of the zero vector is undefined")
    lam = lambda_of(m, sector, t, history)
    return max(float(np.vdot(psi, lam @ psi).real) / nrm, 0.0)
